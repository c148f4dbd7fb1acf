from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from saas.data import AugmentationSpec, epoch_batches, make_two_moons, split
from saas.nn_core import OptimizerState, forward, grads, init_params, one_hot, sgd_step
from saas.saas_core import (
    HalvingSchedule,
    LearningCurve,
    Phase2Config,
    SaasConfig,
    cumulative_loss,
    initial_posterior,
    inner_simulation,
    outer_epoch,
    pseudo_labels,
    run_baseline,
    run_phase1,
    run_phase2,
)
from saas.seeding import derive_seed
from saas.simplex import project_floor

SMALL = SaasConfig(arch=[2, 8, 2], outer_epochs=3, inner_epochs=1, batch_u=20, batch_l=6,
                   phase2=Phase2Config(lr0=0.1, halve_after_epochs=3, lr_stop=0.02))


@pytest.fixture(scope="module")
def moons_split():
    return split(make_two_moons(300, 0.1, seed=0), 6, 60, 40, balanced=True, seed=1)


class TestCumulativeLoss:
    def test_constant(self):
        assert cumulative_loss(LearningCurve(np.full(7, 0.3), [0])) == pytest.approx(0.3)

    def test_hand_value(self):
        assert cumulative_loss(LearningCurve(np.array([2.0, 1.0, 0.0]), [0])) == 1.0

    def test_empty(self):
        with pytest.raises(ValueError):
            cumulative_loss(LearningCurve(np.array([]), []))


class TestInnerSimulation:
    def test_zero_rate_freezes_weights(self, moons_split):
        cfg = replace(SMALL, eta_w=0.0, momentum=0.0, langevin_variance=0.0)
        w0 = init_params(cfg.arch, 5)
        res = inner_simulation(moons_split, initial_posterior(60, 2, cfg), cfg, 3, w0=w0)
        assert res.final_params.equals(w0)

    def test_unvisited_rows_untouched(self, moons_split):
        cfg = replace(SMALL, T_inner=1)
        res = inner_simulation(moons_split, initial_posterior(60, 2, cfg), cfg, 11)
        visited = np.any(res.deltaP != 0, axis=1)
        assert visited.sum() == cfg.batch_u
        assert np.all(res.deltaP >= 0)

    def test_curve_length(self, moons_split):
        cfg = replace(SMALL, inner_epochs=2)
        res = inner_simulation(moons_split, initial_posterior(60, 2, cfg), cfg, 0)
        assert len(res.curve.step_losses) == cfg.inner_steps(60) == 6
        assert res.curve.epoch_boundaries == [0, 3]

    def test_one_step_audit(self, moons_split):
        cfg = replace(SMALL, T_inner=1, langevin_variance=0.0,
                      augmentation=AugmentationSpec())
        P = initial_posterior(60, 2, cfg).P
        outer_seed = 42
        res = inner_simulation(moons_split, P, cfg, outer_seed)
        # rebuild w_1 step by step
        b = epoch_batches(60, cfg.batch_u, derive_seed(outer_seed, "unlabeled", 0)).batches[0]
        w = init_params(cfg.arch, derive_seed(outer_seed, "init"))
        state = OptimizerState.fresh(w, cfg.eta_w, cfg.momentum)
        _, g = grads(w, moons_split.unlabeled_X[b], P[b], cfg.beta, include_entropy=True)
        w, state = sgd_step(w, g, state)
        lb = epoch_batches(6, cfg.batch_l, derive_seed(derive_seed(outer_seed, "labeled"), 0)).batches[0]
        _, g = grads(w, moons_split.labeled.X[lb], one_hot(moons_split.labeled.y[lb], 2))
        w, state = sgd_step(w, g, state)
        assert w.equals(res.final_params)
        expected = np.zeros_like(P)
        expected[b] = -np.log(forward(w, moons_split.unlabeled_X[b])) / len(b)
        assert np.max(np.abs(res.deltaP - expected)) <= 1e-12

    def test_shape_mismatch(self, moons_split):
        with pytest.raises(ValueError):
            inner_simulation(moons_split, np.full((10, 2), 0.5), SMALL, 0)


class TestOuterEpoch:
    def test_hand_examples(self):
        out = outer_epoch(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]]), 1.0, 0.0)
        np.testing.assert_allclose(out.P, [[0.0, 1.0]])
        out = outer_epoch(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]]), 1.0, 0.05)
        np.testing.assert_allclose(out.P, [[0.05, 0.95]])
        out = outer_epoch(np.array([[0.5, 0.5]]), np.array([[0.2, 0.0]]), 1.0, 0.0)
        np.testing.assert_allclose(out.P, [[0.4, 0.6]])

    def test_zero_rate(self):
        P = project_floor(np.random.default_rng(0).random((5, 3)), 0.1)
        out = outer_epoch(P, np.ones((5, 3)) * 7, 0.0, 0.1)
        np.testing.assert_array_equal(out.P, P)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, (6, 4), elements=st.floats(0, 10)), st.floats(0, 5), st.floats(0, 0.25))
    def test_feasible_after_update(self, dP, eta, alpha):
        P = project_floor(np.random.default_rng(1).normal(size=(6, 4)), alpha)
        assert outer_epoch(P, dP, eta, alpha).is_feasible()

    def test_row_order(self):
        # a uniform shift of one row's losses leaves that row unchanged
        P = np.array([[0.3, 0.7]])
        np.testing.assert_allclose(outer_epoch(P, np.array([[2.0, 2.0]]), 1.0, 0.0).P, P)


class TestPhase1:
    def test_no_outer_epochs(self, moons_split):
        cfg = replace(SMALL, outer_epochs=0)
        rep = run_phase1(moons_split, cfg)
        np.testing.assert_array_equal(rep.posterior.P, initial_posterior(60, 2, cfg).P)
        assert rep.epochs == []

    def test_frozen_posterior(self, moons_split):
        cfg = replace(SMALL, eta_Pu=0.0)
        rep = run_phase1(moons_split, cfg)
        np.testing.assert_array_equal(rep.posterior.P, initial_posterior(60, 2, cfg).P)

    def test_deterministic(self, moons_split):
        a = run_phase1(moons_split, SMALL)
        b = run_phase1(moons_split, SMALL)
        np.testing.assert_array_equal(a.posterior.P, b.posterior.P)
        assert a.epochs == b.epochs

    def test_feasible_every_epoch(self, moons_split):
        rep = run_phase1(moons_split, SMALL, snapshot_at=range(4))
        assert sorted(rep.snapshots) == [0, 1, 2, 3]
        for P in rep.snapshots.values():
            assert np.all(np.abs(P.sum(axis=1) - 1) <= 1e-9) and P.min() >= SMALL.alpha_floor - 1e-12

    def test_reset_mode_runs(self, moons_split):
        rep = run_phase1(moons_split, replace(SMALL, resample_mode="reset_to_w0"))
        assert rep.posterior.is_feasible()

    def test_early_stop(self, moons_split):
        rep = run_phase1(moons_split, replace(SMALL, outer_epochs=10, early_stop_tv=10.0))
        assert len(rep.epochs) == 1

    def test_invalid_config(self, moons_split):
        with pytest.raises(ValueError, match="alpha_floor"):
            run_phase1(moons_split, replace(SMALL, alpha_floor=0.6))


class TestPseudoLabels:
    def test_tie_goes_low(self):
        assert pseudo_labels(np.array([[0.5, 0.5], [0.2, 0.8]])).tolist() == [0, 1]

    @settings(max_examples=100)
    @given(arrays(np.float64, (5, 3), elements=st.floats(0.01, 1)), st.floats(0.1, 100))
    def test_positive_row_scaling(self, P, c):
        np.testing.assert_array_equal(pseudo_labels(P * c), pseudo_labels(P))


class TestHalving:
    def test_history_without_improvement(self):
        s = HalvingSchedule(0.1, 50, 0.001)
        while not s.done:
            s.end_window(False)
        np.testing.assert_allclose(s.history, [0.1 / 2**k for k in range(7)])
        assert s.history[-1] == 0.0015625

    def test_improvement_holds_rate(self):
        s = HalvingSchedule(0.1, 5, 0.001)
        s.end_window(True)
        assert s.lr == 0.1 and not s.done


class TestPhase2:
    def test_true_labels_score_zero(self, moons_split):
        _, m = run_phase2(moons_split, moons_split.unlabeled_true_y, SMALL)
        assert m["unlabeled_error"] == 0.0
        assert 0 <= m["test_error"] <= 1

    def test_baseline_schema_and_determinism(self, moons_split):
        a, b = run_baseline(moons_split, SMALL), run_baseline(moons_split, SMALL)
        assert a == b
        assert set(a) == {"test_error", "validation_error"}

    def test_no_unlabeled_equals_baseline(self, moons_split):
        empty = moons_split.with_unlabeled_subset(0)
        _, m = run_phase2(empty, np.array([], dtype=int), SMALL)
        base = run_baseline(empty, SMALL)
        assert m["test_error"] == base["test_error"]
        assert np.isnan(m["unlabeled_error"])

    def test_more_labels_help(self):
        ds = make_two_moons(600, 0.1, seed=9)
        cfg = replace(SMALL, arch=[2, 32, 32, 2], batch_l=50,
                      phase2=Phase2Config(0.1, halve_after_epochs=20, lr_stop=0.02))
        few, many = [], []
        for s in range(3):
            few.append(run_baseline(split(ds, 6, 0, 100, balanced=True, seed=s), cfg)["test_error"])
            many.append(run_baseline(split(ds, 300, 0, 100, balanced=True, seed=s), cfg)["test_error"])
        assert np.median(many) < np.median(few)

    def test_wrong_length(self, moons_split):
        with pytest.raises(ValueError):
            run_phase2(moons_split, np.zeros(3, dtype=int), SMALL)
