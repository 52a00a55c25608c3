"""Constraint algorithm tests.

Oracles: the presets' closed-form coefficient and closure functions
(themselves independently verified in test_systems) plus direct finite
differences on the discovered constraint functions.
"""

import json
import math

import numpy as np
import pytest

from cocontact.mechanics import LagrangianSystem
from cocontact.pontryagin import (
    AlgorithmOptions,
    InfeasiblePoint,
    LadderNotClosed,
    NumericalBreakdown,
    PontryaginPoint,
    ZCoefficients,
    assemble_Z,
    coupling,
    hamiltonian,
    primary_constraints,
    project_onto,
    run_constraint_algorithm,
    tangency_solve,
)
from cocontact.systems import SOURCE_CHARGE, charged_particle, duffing, variable_mass_drag


def lift_initial(pre):
    """Unified-space vector over a preset's initial data, momenta zeroed."""
    ic = pre.initial
    return np.concatenate(([ic.t], ic.q, ic.v, np.zeros(pre.n), [ic.s]))


def coulomb_hess(x):
    r = math.sqrt(x @ x)
    return SOURCE_CHARGE * (3 * np.outer(x, x) / r**5 - np.eye(3) / r**3)


# -- points and simple observables --------------------------------------

def test_point_roundtrip():
    w = PontryaginPoint(0.5, [1.0, 2.0], [3.0, 4.0], [5.0, 6.0], 7.0)
    assert w.n == 2
    vec = w.as_vector()
    np.testing.assert_array_equal(vec, [0.5, 1, 2, 3, 4, 5, 6, 7])
    again = PontryaginPoint.from_vector(2, vec)
    np.testing.assert_array_equal(again.as_vector(), vec)
    assert again.t == w.t and again.s == w.s


def test_point_validation():
    with pytest.raises(ValueError):
        PontryaginPoint(0.0, [1.0], [1.0, 2.0], [0.0], 0.0)
    with pytest.raises(ValueError):
        PontryaginPoint(math.nan, [1.0], [1.0], [0.0], 0.0)
    with pytest.raises(ValueError):
        PontryaginPoint.from_vector(2, np.zeros(5))


def test_coupling_and_hamiltonian():
    pre = duffing()
    rng = np.random.default_rng(0)
    for _ in range(20):
        w = rng.uniform(-2, 2, 5)
        t, x, v, p, s = w
        assert abs(coupling(w) - p * v) < 1e-15
        Lval = pre.system.value(np.array([t, x, v, s]))
        assert abs(hamiltonian(pre.system, w) - (p * v - Lval)) < 1e-12


def test_primary_constraint_values():
    pre = duffing()
    w = np.array([0.2, 1.1, -0.7, 0.4, 0.9])
    # p - dL/dv = p - v for this kinetic term
    assert abs(primary_constraints(pre.system, w)[0] - (0.4 - (-0.7))) < 1e-14

    ch = charged_particle()
    w = lift_initial(ch)
    vals = primary_constraints(ch.system, w)
    np.testing.assert_allclose(vals, [0.0, -10.0, 0.0, 0.0], atol=1e-14)


def test_z_coefficients_vector_layout():
    Z = ZCoefficients(1.0, np.array([2.0]), np.array([3.0]), np.array([4.0]), 5.0,
                      np.zeros((1, 0)))
    np.testing.assert_array_equal(Z.as_vector(), [1, 2, 3, 4, 5])


# -- regular systems: one-generation closure ----------------------------

def test_duffing_closes_in_one_generation():
    pre = duffing()
    ladder, Z = run_constraint_algorithm(pre.system, lift_initial(pre))
    assert ladder.status == "Closed"
    assert ladder.n_generations == 1
    assert ladder.rank == 1
    assert ladder.undetermined_dim == 0
    w = ladder.probe
    assert Z.A == 1.0
    np.testing.assert_array_equal(Z.B, w[2:3])  # B is literally v
    np.testing.assert_allclose(Z.C, pre.expected_C(w), rtol=0, atol=1e-12)
    np.testing.assert_allclose(Z.D, pre.expected_D(w), rtol=0, atol=1e-12)
    assert abs(Z.E - pre.system.value(np.array([w[0], w[1], w[2], w[4]]))) < 1e-14


def test_regular_closure_at_random_feasible_points():
    rng = np.random.default_rng(1)
    for pre in (duffing(), variable_mass_drag()):
        opts = AlgorithmOptions(project=False)
        for _ in range(30):
            w = pre.sample_feasible(rng)
            ladder, Z = run_constraint_algorithm(pre.system, w, opts)
            assert ladder.status == "Closed" and ladder.n_generations == 1
            np.testing.assert_allclose(Z.C, pre.expected_C(w), rtol=0, atol=1e-10)
            np.testing.assert_allclose(Z.D, pre.expected_D(w), rtol=0, atol=1e-10)


def test_duffing_C_equals_D_on_constraint_set():
    # with p = dL/dv = v the two formulas coincide pointwise
    pre = duffing()
    rng = np.random.default_rng(2)
    ladder, _ = run_constraint_algorithm(pre.system, lift_initial(pre))
    for _ in range(20):
        w = pre.sample_feasible(rng)
        Z = assemble_Z(pre.system, w, ladder)
        np.testing.assert_allclose(Z.C, Z.D, rtol=0, atol=1e-12)


def test_tangency_solve_public_api():
    pre = duffing()
    rng = np.random.default_rng(3)
    ladder, _ = run_constraint_algorithm(pre.system, lift_initial(pre))
    w = pre.sample_feasible(rng)
    C, new, kernel = tangency_solve(pre.system, w, ladder.active())
    assert new == []
    assert kernel.shape == (1, 0)
    np.testing.assert_allclose(C, pre.expected_C(w), rtol=0, atol=1e-10)

    off = w.copy()
    off[3] += 1.0  # break the momentum constraint
    with pytest.raises(InfeasiblePoint):
        tangency_solve(pre.system, off, ladder.active())


# -- the singular ladder ------------------------------------------------

def test_charged_ladder_from_reference_start():
    # the reference initial condition sits on the moving plane already
    # (z = t = 0), so several obstructions vanish there by accident; the
    # transversality clause must still find all five generations
    pre = charged_particle()
    ladder, Z = run_constraint_algorithm(pre.system, lift_initial(pre))
    assert ladder.status == "Closed"
    assert ladder.n_generations == 5
    assert [len(g) for g in ladder.generations] == [4, 1, 1, 1, 1]
    assert ladder.rank == 4
    assert ladder.undetermined_dim == 0

    w = ladder.probe
    t, q, v, p = w[0], w[1:5], w[5:9], w[9:13]
    assert abs(q[2] - t) < 1e-11  # on the plane
    assert abs(v[2] - 1.0) < 1e-11  # moving with it
    assert abs(p[3]) < 1e-11
    # multiplier balances field and friction at the projected state
    r = math.sqrt(q[:3] @ q[:3])
    phi_z = -SOURCE_CHARGE * q[2] / r**3
    assert abs(q[3] - (2e-4 * phi_z + 0.3)) < 1e-10
    # coupled-velocity relation
    H = coulomb_hess(q[:3])
    want_vlam = 2e-4 * (H[0, 2] * v[0] + H[1, 2] * v[1] + H[2, 2] * v[2])
    assert abs(v[3] - want_vlam) < 1e-10

    np.testing.assert_allclose(Z.C, pre.expected_C(w), rtol=0, atol=1e-10)
    np.testing.assert_allclose(Z.D, pre.expected_D(w), rtol=0, atol=1e-10)


def test_charged_ladder_at_generic_feasible_points():
    pre = charged_particle()
    rng = np.random.default_rng(4)
    opts = AlgorithmOptions(project=False)
    for _ in range(15):
        w = pre.sample_feasible(rng)
        ladder, Z = run_constraint_algorithm(pre.system, w, opts)
        assert ladder.status == "Closed"
        assert ladder.n_generations == 5
        np.testing.assert_allclose(Z.C, pre.expected_C(w), rtol=0, atol=1e-10)
        for gen in ladder.generations:
            for c in gen:
                assert abs(c(w)) < 1e-10


def test_discovered_constraints_equal_hand_closures_everywhere():
    # the recipes built by the algorithm agree with the hand-derived
    # closed forms at arbitrary points, not only feasible ones
    pre = charged_particle()
    ladder, _ = run_constraint_algorithm(pre.system, lift_initial(pre))
    derived = [gen[0] for gen in ladder.generations[1:]]
    rng = np.random.default_rng(5)
    for _ in range(20):
        w = rng.uniform(-1.5, 1.5, 14)
        w[1] = rng.uniform(1.0, 2.0)
        for got, want in zip(derived, pre.ladder_closures):
            assert abs(got(w) - want(w)) < 1e-10


def test_derived_constraint_jets_match_finite_differences():
    pre = charged_particle()
    ladder, _ = run_constraint_algorithm(pre.system, lift_initial(pre))
    rng = np.random.default_rng(6)
    w = rng.uniform(-1.2, 1.2, 14)
    w[1] = 1.7
    h = 1e-6
    for gen in ladder.generations[1:]:
        c = gen[0]
        grad = c.jet(w, 1).grad
        for i in range(14):
            e = np.zeros(14)
            e[i] = h
            fd = (c(w + e) - c(w - e)) / (2 * h)
            assert abs(grad[i] - fd) < 2e-5, (c.label, i)


def test_field_is_tangent_to_every_constraint():
    # grad(xi) . Z = 0 at feasible points, for the whole ladder
    pre = charged_particle()
    ladder, _ = run_constraint_algorithm(pre.system, lift_initial(pre))
    rng = np.random.default_rng(7)
    for _ in range(10):
        w = pre.sample_feasible(rng)
        Z = assemble_Z(pre.system, w, ladder)
        zvec = Z.as_vector()
        for c in ladder.active():
            assert abs(c.jet(w, 1).grad @ zvec) < 1e-9, c.label


def test_ladder_report_serializes():
    pre = charged_particle()
    ladder, _ = run_constraint_algorithm(pre.system, lift_initial(pre))
    rep = ladder.report()
    blob = json.dumps(rep)
    back = json.loads(blob)
    assert back["status"] == "Closed"
    assert back["rank"] == 4
    assert len(back["generations"]) == 5
    assert back["generations"][0][0]["generation"] == 1
    assert all(
        abs(entry["value_at_probe"]) < 1e-9
        for gen in back["generations"]
        for entry in gen
    )


# -- degenerate but closing, and failure modes --------------------------

def test_degenerate_lagrangian_keeps_free_direction():
    # L = v s: the momentum constraint p = s has no v-row, and its
    # obstruction v (p - s) already vanishes on the constraint set, so the
    # ladder closes immediately with one undetermined C-direction
    L = LagrangianSystem(1, lambda t, q, v, s, par: v[0] * s, {}, label="vs")
    ladder, Z = run_constraint_algorithm(L, np.array([0.3, 0.7, 1.2, 0.0, 0.4]))
    assert ladder.status == "Closed"
    assert ladder.n_generations == 1
    assert ladder.rank == 0
    assert ladder.undetermined_dim == 1
    np.testing.assert_array_equal(Z.C, [0.0])  # minimum-norm pick
    assert abs(ladder.probe[3] - ladder.probe[4]) < 1e-15  # p = s


def test_gauge_hook_moves_along_kernel_only():
    L = LagrangianSystem(1, lambda t, q, v, s, par: v[0] * s, {}, label="vs")
    ladder, _ = run_constraint_algorithm(L, np.array([0.3, 0.7, 1.2, 0.0, 0.4]))
    w = ladder.probe
    Z0 = assemble_Z(L, w, ladder)
    Z1 = assemble_Z(L, w, ladder, gauge=lambda wv, K: np.array([2.5]))
    np.testing.assert_allclose(Z1.C - Z0.C, 2.5 * Z0.undetermined[:, 0], atol=1e-14)
    np.testing.assert_array_equal(Z0.D, Z1.D)


def test_incompatible_system_detected():
    # L = q: the obstruction is the constant 1, nowhere zero
    L = LagrangianSystem(1, lambda t, q, v, s, par: q[0], {}, label="q")
    ladder, Z = run_constraint_algorithm(L, np.array([0.0, 0.5, 0.2, 0.0, 0.0]))
    assert ladder.status == "Incompatible"
    assert Z is None
    assert ladder.n_generations == 2
    with pytest.raises(LadderNotClosed):
        assemble_Z(L, ladder.probe, ladder)


def test_max_iterations_status():
    pre = charged_particle()
    opts = AlgorithmOptions(max_generations=2)
    ladder, Z = run_constraint_algorithm(pre.system, lift_initial(pre), opts)
    assert ladder.status == "MaxIterations"
    assert Z is None


def test_infeasible_start_off_the_surface():
    # starting with z != t: no adjustment of v, p or the multiplier can
    # reach the moving plane, since z and t are frozen
    pre = charged_particle()
    w = lift_initial(pre)
    w[3] = 0.5  # z
    with pytest.raises(InfeasiblePoint):
        run_constraint_algorithm(pre.system, w)


def test_projectless_run_rejects_raw_momenta():
    pre = charged_particle()
    with pytest.raises(InfeasiblePoint):
        run_constraint_algorithm(
            pre.system, lift_initial(pre), AlgorithmOptions(project=False)
        )


def test_projection_solves_momenta_exactly():
    pre = duffing()
    w = np.array([0.4, 1.3, -0.6, 9.9, 0.2])
    out = project_onto(pre.system, w, [])
    assert out[3] == out[2]  # p := dL/dv = v, bit-exact
    np.testing.assert_array_equal(out[[0, 1, 2, 4]], w[[0, 1, 2, 4]])


def test_condition_cap_raises():
    # nearly parallel momentum rows: sigma ratio ~ 8e12 exceeds the cap
    # once rank_tol is tightened enough to keep both rows active
    L = LagrangianSystem(
        2,
        lambda t, q, v, s, par: 0.5 * (v[0] + v[1]) ** 2 + 0.25e-12 * v[1] ** 2,
        {},
        label="illconditioned",
    )
    w = np.zeros(8)
    opts = AlgorithmOptions(rank_tol=1e-15, cond_cap=1e10)
    with pytest.raises(NumericalBreakdown):
        run_constraint_algorithm(L, w, opts)
