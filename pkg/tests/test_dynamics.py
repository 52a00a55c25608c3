"""Integration and residual-channel tests.

Oracles: closed-form motions (free particle, harmonic oscillator), an
independently coded RK4 on the textbook Duffing ODE, and the generic
momentum-side evolution equations applied to the induced Hamiltonian.
"""

import json
import math

import numpy as np
import pytest

from cocontact.mechanics import LagrangianSystem, cocontact_hamiltonian_field
from cocontact.pontryagin import AlgorithmOptions, run_constraint_algorithm
from cocontact.dynamics import (
    EquivalenceReport,
    IntegratorConfig,
    LadderLost,
    NonInvertibleLegendre,
    StepFailure,
    Trajectory,
    cross_check_equivalence,
    hamiltonian_field,
    hamiltonian_from_lagrangian,
    integrate,
    lagrangian_field,
    legendre_invert,
    project_to_hamiltonian,
    project_to_lagrangian,
    residual_channels,
    residual_report,
    trajectory_to_csv,
    trajectory_to_json,
    unified_field,
)
from cocontact.systems import preset_by_name

OPTS = AlgorithmOptions()


def lift_initial(pre):
    ic = pre.initial
    return np.concatenate(([ic.t], ic.q, ic.v, np.zeros(pre.n), [ic.s]))


def closed_ladder(L, w0):
    ladder, Z = run_constraint_algorithm(L, w0, OPTS)
    assert ladder.status == "Closed"
    return ladder


def lag_state(w, n):
    return np.concatenate((w[: 1 + 2 * n], w[-1:]))


def ham_state(w, n):
    return np.concatenate((w[: 1 + n], w[1 + 2 * n : 1 + 3 * n], w[-1:]))


# -- config validation --------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(method="euler")
    with pytest.raises(ValueError):
        IntegratorConfig(step=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig(abs_tol=-1e-9)
    cfg = IntegratorConfig()
    assert cfg.method == "rk4" and cfg.step == 1e-3 and not cfg.reproject


# -- closed-form motions ------------------------------------------------


def test_free_particle_exact():
    # L = v^2/2: q(t) = q0 + v0 t, s(t) = s0 + t v0^2/2
    free = LagrangianSystem(1, lambda t, q, v, s, P: 0.5 * v[0] * v[0])
    ladder = closed_ladder(free, np.array([0.0, 0.0, 1.0, 0.0, 0.0]))
    cfg = IntegratorConfig(method="rk4", step=1e-3, t_end=1.0)
    traj = integrate(unified_field(free, ladder, OPTS), ladder.probe, cfg)
    t, q, v, p, s = traj.states[-1]
    assert abs(q - 1.0) < 1e-10
    assert abs(s - 0.5) < 1e-10
    assert abs(v - 1.0) < 1e-12 and abs(p - 1.0) < 1e-12


def test_harmonic_oscillator_closed_form():
    # L = v^2/2 - alpha q^2/2 started at rest: q(t) = q0 cos(sqrt(alpha) t)
    alpha = 2.0
    q0 = 0.7
    osc = LagrangianSystem(1, lambda t, q, v, s, P: 0.5 * v[0] * v[0] - 0.5 * alpha * q[0] * q[0])
    ladder = closed_ladder(osc, np.array([0.0, q0, 0.0, 0.0, 0.0]))
    T = 1.3
    cfg = IntegratorConfig(method="rk4", step=1e-3, t_end=T)
    traj = integrate(unified_field(osc, ladder, OPTS), ladder.probe, cfg)
    want = q0 * math.cos(math.sqrt(alpha) * T)
    assert abs(traj.states[-1][1] - want) < 1e-9


def test_duffing_velocity_run_vs_reference_ode():
    # independently coded RK4 on the textbook equation
    #   qdd + delta qd + alpha q + beta q^3 = gamma cos(omega t)
    # with the action rate sdot = L
    pre = preset_by_name("duffing")
    L = pre.system
    P = pre.params
    al, be, ga, de, om = (P[k] for k in ("alpha", "beta", "gamma", "delta", "omega"))

    def rhs(y):
        t, q, v, s = y
        lag = 0.5 * v * v - 0.5 * al * q * q - 0.25 * be * q ** 4 + ga * math.cos(om * t) * q - de * s
        return np.array([1.0, v, -al * q - be * q ** 3 + ga * math.cos(om * t) - de * v, lag])

    def step(y, h):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    ladder = closed_ladder(L, lift_initial(pre))
    x0 = lag_state(ladder.probe, 1)
    cfg = IntegratorConfig(method="rk4", step=1e-3, t_end=2.0)
    traj = integrate(lagrangian_field(L, ladder, OPTS), x0, cfg)
    y = x0.copy()
    dev = 0.0
    for k in range(len(traj) - 1):
        y = step(y, traj.times[k + 1] - traj.times[k])
        dev = max(dev, float(np.max(np.abs(y - traj.states[k + 1]))))
    assert dev < 1e-11


# -- induced momentum-side description ----------------------------------


def test_momentum_field_matches_generic_evolution_equations():
    # the field's (tdot, qdot, pdot, sdot) must agree with the generic
    # momentum-side equations applied to the induced Hamiltonian
    pre = preset_by_name("duffing")
    L = pre.system
    ladder = closed_ladder(L, lift_initial(pre))
    fld = hamiltonian_field(L, ladder, OPTS)
    H = hamiltonian_from_lagrangian(L)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        y = np.array([
            rng.uniform(-1, 1), rng.uniform(-1.5, 1.5),
            rng.uniform(-2, 2), rng.uniform(-1, 1),
        ])
        deriv, coeffs, lifted = fld.eval(y)
        ref = cocontact_hamiltonian_field(H, y)
        worst = max(worst, float(np.max(np.abs(deriv - ref))))
    assert worst < 1e-10


def test_envelope_hamiltonian_value_and_gradient():
    # H = p v - L at the recovered velocity; dH/dp = v
    pre = preset_by_name("drag")
    L = pre.system
    H = hamiltonian_from_lagrangian(L)
    y = np.array([0.4, 1.1, 0.9, 0.2])
    v = legendre_invert(L, y)
    lag = np.array([y[0], y[1], v[0], y[3]])
    assert abs(H.value(y) - (y[2] * v[0] - L.value(lag))) < 1e-12
    jet = H.jet(y, 1)
    assert abs(jet.grad[2] - v[0]) < 1e-12
    lj = L.jet(lag, 1)
    assert abs(jet.grad[0] + lj.grad[0]) < 1e-12
    assert abs(jet.grad[-1] + lj.grad[-1]) < 1e-12
    with pytest.raises(ValueError):
        H.jet(y, 2)


def test_legendre_invert_recovers_velocities():
    # drag: p = m(t) v exactly, one Newton step since the map is affine
    pre = preset_by_name("drag")
    L = pre.system
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = np.array([rng.uniform(0, 2), rng.uniform(-2, 2), rng.uniform(-3, 3), rng.uniform(-1, 1)])
        p = L.jet(x, 1).grad[2:3]
        y = np.array([x[0], x[1], p[0], x[3]])
        v = legendre_invert(L, y)
        assert abs(v[0] - x[2]) < 1e-10


def test_legendre_invert_rejects_singular_fibre_map():
    # L = v1 s has dL/dv = s, independent of v
    degen = LagrangianSystem(1, lambda t, q, v, s, P: v[0] * s)
    with pytest.raises(NonInvertibleLegendre):
        legendre_invert(degen, np.array([0.0, 0.0, 0.5, 1.0]))


def test_momentum_description_unavailable_for_singular_system():
    pre = preset_by_name("charged")
    L = pre.system
    ladder = closed_ladder(L, lift_initial(pre))
    y0 = ham_state(ladder.probe, 4)
    with pytest.raises(NonInvertibleLegendre):
        hamiltonian_field(L, ladder, OPTS).prepare(y0)


# -- trajectory structure ----------------------------------------------


def test_fixed_step_times_are_exact():
    free = LagrangianSystem(1, lambda t, q, v, s, P: 0.5 * v[0] * v[0])
    ladder = closed_ladder(free, np.array([0.0, 0.0, 1.0, 0.0, 0.0]))
    h = 1.0 / 1024.0
    cfg = IntegratorConfig(method="rk4", step=h, t_end=1.0)
    traj = integrate(unified_field(free, ladder, OPTS), ladder.probe, cfg)
    assert len(traj) == 1025
    for k in range(len(traj)):
        assert traj.times[k] == k * h  # bit-exact
    # a decimal step still lands every full step on t0 + k h exactly
    cfg = IntegratorConfig(method="rk4", step=1e-3, t_end=0.25)
    traj = integrate(unified_field(free, ladder, OPTS), ladder.probe, cfg)
    for k in range(len(traj) - 1):
        assert traj.times[k] == k * 1e-3
    assert abs(traj.times[-1] - 0.25) < 1e-12


def test_trajectory_shape_and_samples():
    pre = preset_by_name("duffing")
    L = pre.system
    ladder = closed_ladder(L, lift_initial(pre))
    cfg = IntegratorConfig(method="rk4", step=1e-2, t_end=0.1)
    traj = integrate(unified_field(L, ladder, OPTS), ladder.probe, cfg)
    assert traj.kind == "unified"
    assert traj.n == 1
    assert np.array_equal(traj.states[0], ladder.probe)
    assert np.all(np.diff(traj.times) > 0)
    assert traj.states.shape == (len(traj), 5)
    assert traj.lifted.shape == (len(traj), 5)
    assert traj.coeffs.shape == (len(traj), 5)
    pt, Z = traj.samples[3]
    assert pt.t == traj.times[3]
    assert Z.A == 1.0
    np.testing.assert_allclose(Z.B, traj.lifted[3][2:3], atol=1e-14)
    for name in ("holonomy", "sdot", "herglotz", "constraint"):
        assert traj.residuals[name].shape == (len(traj),)
        assert traj.channel_max(name) >= 0.0
    with pytest.raises(ValueError):
        Trajectory("unified", 1, np.array([0.0, 0.0]), traj.states[:2],
                   traj.lifted[:2], traj.coeffs[:2], traj.residuals)


def test_projection_helpers_drop_the_right_block():
    pre = preset_by_name("duffing")
    L = pre.system
    ladder = closed_ladder(L, lift_initial(pre))
    from cocontact.pontryagin import assemble_Z

    w = ladder.probe
    Z = assemble_Z(L, w, ladder, OPTS)
    lag = project_to_lagrangian(Z, w)
    ham = project_to_hamiltonian(Z, w)
    np.testing.assert_array_equal(lag, np.concatenate(([Z.A], Z.B, Z.C, [Z.E])))
    np.testing.assert_array_equal(ham, np.concatenate(([Z.A], Z.B, Z.D, [Z.E])))


# -- residual channels --------------------------------------------------


def test_channels_flag_injected_faults():
    pre = preset_by_name("duffing")
    L = pre.system
    ladder = closed_ladder(L, lift_initial(pre))
    cfg = IntegratorConfig(method="rk4", step=1e-2, t_end=0.3)
    traj = integrate(unified_field(L, ladder, OPTS), ladder.probe, cfg)

    # momentum bump shows up in the constraint channel at the bumped sample
    bad = traj.lifted.copy()
    bad[10, 3] += 0.1
    ch = residual_channels(L, traj.times, bad, ladder)
    assert ch["constraint"][10] > 0.09
    assert ch["constraint"][0] < 1e-6

    # velocity bump shows up in holonomy (and pollutes the whole window)
    bad = traj.lifted.copy()
    bad[10, 2] += 0.1
    ch = residual_channels(L, traj.times, bad, ladder)
    assert ch["holonomy"][10] > 0.05
    assert np.max(ch["holonomy"][:5]) < 1e-6

    # action bump shows up in the sdot channel near the bumped sample
    bad = traj.lifted.copy()
    bad[10, 4] += 0.1
    ch = residual_channels(L, traj.times, bad, ladder)
    assert np.max(ch["sdot"][8:13]) > 1.0
    assert np.max(ch["sdot"][:5]) < 1e-4


def test_channels_shrink_at_fourth_order():
    # halving the step must cut every nonvacuous channel by about 2^4
    pre = preset_by_name("drag")
    L = pre.system
    ladder = closed_ladder(L, lift_initial(pre))
    maxima = {}
    for h in (1e-2, 5e-3):
        cfg = IntegratorConfig(method="rk4", step=h, t_end=2.5)
        traj = integrate(unified_field(L, ladder, OPTS), ladder.probe, cfg)
        maxima[h] = {k: traj.channel_max(k) for k in traj.residuals}
    for name in ("holonomy", "sdot", "herglotz", "constraint"):
        ratio = maxima[1e-2][name] / maxima[5e-3][name]
        assert 10.0 < ratio < 24.0, (name, ratio)


def test_residual_report_structure():
    pre = preset_by_name("duffing")
    L = pre.system
    ladder = closed_ladder(L, lift_initial(pre))
    cfg = IntegratorConfig(method="rk4", step=1e-2, t_end=0.2)
    traj = integrate(unified_field(L, ladder, OPTS), ladder.probe, cfg)
    rep = residual_report(L, traj)
    assert set(rep) == {"holonomy", "sdot", "herglotz", "constraint"}
    for d in rep.values():
        assert 0.0 <= d["rms"] <= d["max"] < 1e-5


# -- drift handling -----------------------------------------------------


def test_monitor_mode_raises_when_ladder_lost():
    pre = preset_by_name("drag")
    L = pre.system
    ladder = closed_ladder(L, lift_initial(pre))
    cfg = IntegratorConfig(method="rk4", step=0.25, t_end=6.0)
    with pytest.raises(LadderLost):
        integrate(unified_field(L, ladder, OPTS), ladder.probe, cfg)


def test_reprojection_keeps_the_same_coarse_run_alive():
    pre = preset_by_name("drag")
    L = pre.system
    ladder = closed_ladder(L, lift_initial(pre))
    cfg = IntegratorConfig(method="rk4", step=0.25, t_end=6.0, reproject=True)
    traj = integrate(unified_field(L, ladder, OPTS), ladder.probe, cfg)
    assert traj.channel_max("constraint") < 1e-9


def test_adaptive_step_failure_at_finite_time_blowup():
    # qdd = 2 q^3 from q = v = 1 follows q(t) = 1/(1 - t); no step size
    # survives the t -> 1 singularity
    blow = LagrangianSystem(1, lambda t, q, v, s, P: 0.5 * v[0] * v[0] + 0.5 * q[0] ** 4)
    ladder = closed_ladder(blow, np.array([0.0, 1.0, 1.0, 0.0, 0.0]))
    cfg = IntegratorConfig(method="rk45", step=1e-2, t_end=1.5,
                           abs_tol=1e-6, rel_tol=1e-6, reproject=True)
    with pytest.raises(StepFailure):
        integrate(unified_field(blow, ladder, OPTS), ladder.probe, cfg)


def test_adaptive_run_matches_fixed_step():
    pre = preset_by_name("duffing")
    L = pre.system
    ladder = closed_ladder(L, lift_initial(pre))
    fixed = integrate(unified_field(L, ladder, OPTS), ladder.probe,
                      IntegratorConfig(method="rk4", step=1e-3, t_end=2.0))
    adaptive = integrate(unified_field(L, ladder, OPTS), ladder.probe,
                         IntegratorConfig(method="rk45", step=1e-2, t_end=2.0,
                                          abs_tol=1e-10, rel_tol=1e-10))
    assert len(adaptive) < len(fixed)
    assert abs(adaptive.times[-1] - 2.0) < 1e-12
    assert np.max(np.abs(adaptive.states[-1] - fixed.states[-1])) < 1e-7


# -- cross-description equivalence --------------------------------------


def test_cross_check_requires_fixed_step():
    pre = preset_by_name("duffing")
    with pytest.raises(ValueError):
        cross_check_equivalence(pre.system, lift_initial(pre),
                                IntegratorConfig(method="rk45"))


def test_cross_check_exponential_mass_drag():
    # m(t) = m0 exp(-r t): all three descriptions agree on one grid
    pre = preset_by_name("drag", {"m_expr": "0.8*exp(-0.25*t)"})
    L = pre.system
    cfg = IntegratorConfig(method="rk4", step=1e-3, t_end=1.0)
    eq = cross_check_equivalence(L, lift_initial(pre), cfg)
    assert isinstance(eq, EquivalenceReport)
    assert eq.dev_lagrangian < 1e-10
    assert eq.dev_hamiltonian < 1e-10
    assert eq.dev_legendre < 1e-10
    assert eq.max_deviation == max(eq.as_dict().values())
    assert len(eq.unified) == len(eq.lagrangian) == len(eq.hamiltonian)


# -- export -------------------------------------------------------------


def test_csv_round_trip(tmp_path):
    pre = preset_by_name("duffing")
    L = pre.system
    ladder = closed_ladder(L, lift_initial(pre))
    cfg = IntegratorConfig(method="rk4", step=1e-2, t_end=0.2)
    traj = integrate(unified_field(L, ladder, OPTS), ladder.probe, cfg)
    path = tmp_path / "run.csv"
    trajectory_to_csv(traj, path)
    text = path.read_text().strip().split("\n")
    assert text[0] == "t,q1,v1,p1,s,res_holonomy,res_sdot,res_herglotz,res_constraint"
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (len(traj), 9)
    # %.17g round-trips doubles bit-exactly
    np.testing.assert_array_equal(data[:, 0], traj.times)
    np.testing.assert_array_equal(data[:, 1:5], traj.lifted[:, 1:])
    np.testing.assert_array_equal(data[:, 5], traj.residuals["holonomy"])
    np.testing.assert_array_equal(data[:, 8], traj.residuals["constraint"])


def test_json_export(tmp_path):
    pre = preset_by_name("duffing")
    L = pre.system
    ladder = closed_ladder(L, lift_initial(pre))
    cfg = IntegratorConfig(method="rk4", step=1e-2, t_end=0.1)
    traj = integrate(lagrangian_field(L, ladder, OPTS), lag_state(ladder.probe, 1), cfg)
    path = tmp_path / "run.json"
    doc = trajectory_to_json(traj, path)
    loaded = json.loads(path.read_text())
    assert loaded == doc
    assert doc["kind"] == "lagrangian"
    assert len(doc["times"]) == len(traj)
    assert len(doc["states"][0]) == 4
    assert len(doc["lifted"][0]) == 5
    assert set(doc["residuals"]) == {"holonomy", "sdot", "herglotz", "constraint"}
