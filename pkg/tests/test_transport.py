import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conekit.diagnostics import EQ5_TOL
from conekit.errors import DomainError, IncompatibleGrid, ShapeMismatch
from conekit.kinetic_models import KernelSpec, build_model, gain, loss
from conekit.monotone_solver import TimeGrid, solve
from conekit.ordered_space import StateVec, cone_norm
from conekit.transport import (
    ConjugatedModel,
    TransportSpec,
    conjugated_gain,
    conjugated_loss,
    shift_apply,
    solve_mild,
)

states = arrays(float, (4, 5), elements=st.floats(0, 10, allow_subnormal=False))


def ramp_datum(K, L, total=1.0):
    arr = np.zeros((K, L))
    w = 1.0 + np.arange(L)
    arr[0] = total * w / w.sum()
    return StateVec(arr)


class TestShift:
    @given(states)
    def test_identity_and_period(self, a):
        g = StateVec(a)
        np.testing.assert_array_equal(shift_apply(g, 0).entries, a)
        np.testing.assert_array_equal(shift_apply(g, 5).entries, a)

    @given(states, st.integers(-12, 12), st.integers(-12, 12))
    def test_group_law(self, a, p, q):
        g = StateVec(a)
        np.testing.assert_array_equal(shift_apply(shift_apply(g, p), q).entries, shift_apply(g, p + q).entries)

    @given(states, st.integers(-7, 7))
    def test_isometry(self, a, s):
        g = StateVec(a)
        assert cone_norm(shift_apply(g, s)) == cone_norm(g)

    def test_direction(self):
        g = StateVec(np.array([[1.0, 0.0, 0.0]]))
        assert shift_apply(g, 1).entries.tolist() == [[0.0, 1.0, 0.0]]


class TestTransportSpec:
    def test_needs_two_cells(self):
        with pytest.raises(DomainError):
            TransportSpec(1, 1.0)

    def test_shift_per_step(self):
        assert TransportSpec(8, 64.0).shift_per_step(1 / 64) == 1
        assert TransportSpec(8, 0.0).shift_per_step(0.3) == 0
        assert TransportSpec(8, -3.0).shift_per_step(1.0) == -3

    def test_incompatible(self):
        with pytest.raises(IncompatibleGrid):
            TransportSpec(8, 1.0).shift_per_step(1 / 64)


class TestConjugation:
    def test_node_zero_is_plain(self, rng):
        m = build_model(KernelSpec("constant", modulation=[0.5, 1.5, 1.0]), 6)
        tr = TransportSpec(3, 1.0)
        g = StateVec(rng.random((6, 3)))
        np.testing.assert_array_equal(conjugated_gain(m, tr, 0, g).entries, gain(m, g).entries)
        np.testing.assert_array_equal(conjugated_loss(m, tr, 0, g).entries, loss(m, g).entries)

    @pytest.mark.parametrize("node", [1, 2, 5])
    def test_homogeneous_kernel_commutes(self, node, rng):
        m = build_model(KernelSpec("additive"), 6)
        tr = TransportSpec(4, 1.0)
        g = StateVec(rng.random((6, 4)))
        np.testing.assert_array_equal(conjugated_gain(m, tr, node, g).entries, gain(m, g).entries)
        np.testing.assert_array_equal(conjugated_loss(m, tr, node, g).entries, loss(m, g).entries)

    def test_two_cell_rotation(self, rng):
        mod = np.array([0.5, 1.5])
        m = build_model(KernelSpec("constant", modulation=mod), 5)
        rotated = build_model(KernelSpec("constant", modulation=np.roll(mod, 1)), 5)
        g = StateVec(rng.random((5, 2)))
        out = conjugated_gain(m, TransportSpec(2, 1.0), 1, g)
        np.testing.assert_allclose(out.entries, gain(rotated, g).entries, rtol=1e-15)

    def test_batched_model_matches_single_node(self, rng):
        mod = [0.5, 1.5, 1.0, 2.0]
        m = build_model(KernelSpec("constant", modulation=mod), 5)
        tr = TransportSpec(4, 3.0)
        cm = ConjugatedModel(m, 3)
        arr = rng.random((6, 5, 4))
        ga, lo = cm.rates(arr, np.arange(6))
        for node in range(6):
            g = StateVec(arr[node])
            np.testing.assert_allclose(ga[node], conjugated_gain(m, tr, node, g).entries, rtol=1e-14)
            np.testing.assert_allclose(lo[node], conjugated_loss(m, tr, node, g).entries, rtol=1e-14)

    def test_delegates_model_attributes(self):
        m = build_model(KernelSpec("constant"), 5)
        cm = ConjugatedModel(m, 2)
        assert cm.lam is m.lam and cm.sizes == 5 and cm.base is m


class TestSolveMild:
    def test_zero_speed_matches_homogeneous_solve(self):
        m = build_model(KernelSpec("constant", modulation=[0.5, 1.5, 1.0, 1.0]), 12)
        f0 = ramp_datum(12, 4)
        grid = TimeGrid(1.0, 32)
        a = solve_mild(m, TransportSpec(4, 0.0), f0, grid)
        b = solve(m, f0, grid)
        np.testing.assert_allclose(np.asarray(a.trajectory.states), np.asarray(b.trajectory.states),
                                   rtol=1e-13, atol=1e-300)

    def test_homogeneous_kernel_is_shifted_solve(self):
        m = build_model(KernelSpec("constant"), 12)
        f0 = ramp_datum(12, 5)
        grid = TimeGrid(1.0, 32)
        tr = TransportSpec(5, 64.0)
        mild = np.asarray(solve_mild(m, tr, f0, grid).trajectory.states)
        hom = np.asarray(solve(m, f0, grid).trajectory.states)
        for node in range(grid.M + 1):
            np.testing.assert_allclose(mild[node], np.roll(hom[node], 2 * node, axis=1), rtol=1e-12, atol=1e-300)

    def test_ledger_of_mild_solution(self):
        m = build_model(KernelSpec("constant", modulation=[0.5, 1.5] * 3), 12)
        grid = TimeGrid(1.0, 48)
        res = solve_mild(m, TransportSpec(6, 48.0), ramp_datum(12, 6, 2.0), grid)
        led = res.diagnostics
        assert np.max(np.abs(led.nodes["eq5_residual"])) <= EQ5_TOL * led.lam_norm0
        assert led.passed

    def test_incompatible_grid(self):
        m = build_model(KernelSpec("constant"), 4)
        with pytest.raises(IncompatibleGrid):
            solve_mild(m, TransportSpec(4, 1.0), ramp_datum(4, 4), TimeGrid(1.0, 3))

    def test_cell_count_mismatch(self):
        m = build_model(KernelSpec("constant"), 4)
        with pytest.raises(ShapeMismatch):
            solve_mild(m, TransportSpec(3, 1.0), ramp_datum(4, 4), TimeGrid(1.0, 4))
