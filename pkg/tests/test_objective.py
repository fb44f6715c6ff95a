"""Discrete-time likelihood, loss weighting, AdamW, scheduling, early stop."""

import numpy as np
import pytest

from trajsurv import autodiff as ad
from trajsurv.heads import TimeBins, annual_bins
from trajsurv.objective import (AdamHyper, LossWeights, OptimizerState, SurvivalLabel,
                                adamw_step, batch_mean, clamp01, combined_loss,
                                discrete_nll, early_stop, label_to_bin,
                                plateau_schedule)

BINS = annual_bins(12)


class TestLabels:
    def test_valid_label(self):
        lab = SurvivalLabel(2.5, 1)
        assert lab.time == 2.5 and lab.event == 1

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            SurvivalLabel(-0.1, 0)

    def test_bad_event_flag_rejected(self):
        with pytest.raises(ValueError):
            SurvivalLabel(1.0, 2)

    def test_loss_weights_validation(self):
        with pytest.raises(ValueError):
            LossWeights(-1.0, 1.0)
        with pytest.raises(ValueError):
            LossWeights(0.0, 0.0)


class TestLabelToBin:
    def test_interior(self):
        assert label_to_bin(0.5, BINS) == 0

    def test_left_closed_edges(self):
        assert label_to_bin(1.0, BINS) == 1
        assert label_to_bin(0.0, BINS) == 0

    def test_clamps_past_horizon(self):
        assert label_to_bin(99.0, BINS) == 11
        assert label_to_bin(12.0, BINS) == 11

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            label_to_bin(-1.0, BINS)

    def test_irregular_edges(self):
        bins = TimeBins(np.array([0.0, 0.5, 2.0, 10.0]))
        assert label_to_bin(0.49, bins) == 0
        assert label_to_bin(0.5, bins) == 1
        assert label_to_bin(1.99, bins) == 1
        assert label_to_bin(2.0, bins) == 2


class TestClamp:
    def test_values_pulled_inside(self):
        h = ad.constant([[0.0, 0.5, 1.0]])
        out = clamp01(h, eps=0.1)
        assert np.allclose(out.data, [[0.1, 0.5, 0.9]])

    def test_interior_untouched_and_differentiable(self):
        h = ad.parameter([[0.3, 0.7]])
        out = clamp01(h)
        assert np.allclose(out.data, h.data)
        grads = ad.backward(ad.sum_all(out), params=[h])
        assert np.allclose(grads[h].data, 1.0)


def numpy_nll(h, time, event, bins):
    """Direct-summation oracle for the discrete likelihood."""
    k = label_to_bin(time, bins)
    h = np.clip(h, 1e-12, 1 - 1e-12)
    if event == 1:
        return -(np.log(h[k]) + np.log(1 - h[:k]).sum())
    return -np.log(1 - h[:k + 1]).sum()


class TestDiscreteNll:
    def hazards(self, values):
        h = np.full((1, BINS.count), 0.5)
        h[0, :len(values)] = values
        return ad.constant(h)

    def test_event_first_bin_closed_form(self):
        loss = discrete_nll(self.hazards([0.5]), SurvivalLabel(0.2, 1), BINS)
        assert loss.item() == pytest.approx(0.6931, abs=1e-4)

    def test_censored_first_bin_closed_form(self):
        loss = discrete_nll(self.hazards([0.5]), SurvivalLabel(0.2, 0), BINS)
        assert loss.item() == pytest.approx(0.6931, abs=1e-4)

    def test_event_second_bin_closed_form(self):
        loss = discrete_nll(self.hazards([0.2, 0.5]), SurvivalLabel(1.5, 1), BINS)
        assert loss.item() == pytest.approx(0.9163, abs=1e-4)

    def test_matches_direct_summation_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            h = rng.uniform(0.01, 0.99, size=BINS.count)
            time = rng.uniform(0, 14)
            event = int(rng.integers(0, 2))
            loss = discrete_nll(ad.constant(h.reshape(1, -1)),
                                SurvivalLabel(time, event), BINS)
            assert loss.item() == pytest.approx(numpy_nll(h, time, event, BINS),
                                                abs=1e-12)

    def test_boundary_hazards_stay_finite(self):
        h = np.zeros((1, BINS.count))
        h[0, 0] = 1.0
        loss = discrete_nll(ad.constant(h), SurvivalLabel(1.5, 0), BINS)
        assert np.isfinite(loss.item())
        assert loss.item() == pytest.approx(-np.log(1e-12), rel=1e-6)

    def test_wrong_shape_rejected(self):
        with pytest.raises(ad.ShapeMismatchError):
            discrete_nll(ad.constant(np.zeros((1, 3))), SurvivalLabel(1.0, 1), BINS)

    def test_gradient_signs_push_toward_event_bin(self):
        h = ad.parameter(np.full((1, BINS.count), 0.4))
        loss = discrete_nll(h, SurvivalLabel(2.5, 1), BINS)  # event in bin 2
        g = ad.backward(loss, params=[h])[h].data[0]
        assert g[2] < 0.0              # raising the event-bin hazard helps
        assert np.all(g[:2] > 0.0)     # earlier hazards are penalized
        assert np.allclose(g[3:], 0.0)  # later bins never enter the likelihood

    def test_gradient_matches_finite_differences(self):
        h = ad.parameter(np.random.default_rng(1).uniform(0.1, 0.9,
                                                          size=(1, BINS.count)))
        err = ad.grad_check(lambda: discrete_nll(h, SurvivalLabel(3.5, 1), BINS), [h])
        assert err <= 1e-4


class TestCombinedLoss:
    def scalar(self, v):
        return ad.constant([[v]])

    def test_os_only(self):
        out = combined_loss(self.scalar(0.5), self.scalar(0.3), LossWeights(1.0, 0.0))
        assert out.item() == pytest.approx(0.5)

    def test_equal_weights(self):
        out = combined_loss(self.scalar(0.5), self.scalar(0.3), LossWeights(1.0, 1.0))
        assert out.item() == pytest.approx(0.8)

    def test_weighted(self):
        out = combined_loss(self.scalar(0.5), self.scalar(0.3), LossWeights(2.0, 1.0))
        assert out.item() == pytest.approx(1.3)


class TestBatchMean:
    def test_mean_of_scalars(self):
        losses = [ad.constant([[v]]) for v in (1.0, 2.0, 6.0)]
        assert batch_mean(losses).item() == pytest.approx(3.0, abs=1e-12)

    def test_equals_mean_of_per_patient_losses(self):
        rng = np.random.default_rng(2)
        vals = rng.uniform(0, 5, size=16)
        out = batch_mean([ad.constant([[v]]) for v in vals])
        assert out.item() == pytest.approx(vals.mean(), abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            batch_mean([])


class TestAdamW:
    def leaf(self, v):
        return [("p", ad.parameter([[v]]))]

    def grads_for(self, params, value):
        return {p: ad.Tensor(np.full_like(p.data, value)) for _, p in params}

    def test_zero_grad_zero_decay_is_identity(self):
        params = self.leaf(1.5)
        state = OptimizerState(lr=0.1)
        adamw_step(params, self.grads_for(params, 0.0), state,
                   AdamHyper(lr=0.1, weight_decay=0.0))
        assert params[0][1].item() == pytest.approx(1.5)

    def test_first_step_hand_example(self):
        params = self.leaf(1.0)
        state = OptimizerState(lr=0.1)
        adamw_step(params, self.grads_for(params, 1.0), state,
                   AdamHyper(lr=0.1, weight_decay=0.0))
        # Bias correction makes m-hat = v-hat = 1, so the step is the full lr.
        assert params[0][1].item() == pytest.approx(0.9, abs=1e-6)

    def test_decoupled_decay_scales_parameter(self):
        params = self.leaf(4.0)
        state = OptimizerState(lr=0.1)
        adamw_step(params, self.grads_for(params, 0.0), state,
                   AdamHyper(lr=0.1, weight_decay=0.1))
        assert params[0][1].item() == pytest.approx(4.0 * 0.99, abs=1e-12)

    def test_nonfinite_gradient_names_parameter(self):
        params = [("op.w_out", ad.parameter([[1.0]]))]
        state = OptimizerState(lr=0.1)
        bad = {params[0][1]: ad.Tensor([[np.nan]])}
        with pytest.raises(ad.NonFiniteError, match="op.w_out"):
            adamw_step(params, bad, state, AdamHyper())

    def test_steps_are_deterministic_bitwise(self):
        def run():
            rng = np.random.default_rng(3)
            params = [(f"p{i}", ad.parameter(rng.normal(size=(2, 2))))
                      for i in range(3)]
            state = OptimizerState(lr=0.05)
            for step in range(5):
                grads = {p: ad.Tensor(rng.normal(size=p.shape)) for _, p in params}
                adamw_step(params, grads, state, AdamHyper(lr=0.05))
            return np.concatenate([p.data.ravel() for _, p in params])

        assert np.array_equal(run(), run())

    def test_moments_accumulate_across_steps(self):
        params = self.leaf(0.0)
        state = OptimizerState(lr=0.1)
        for _ in range(3):
            adamw_step(params, self.grads_for(params, 1.0), state,
                       AdamHyper(lr=0.1, weight_decay=0.0))
        assert state.step_count == 3
        assert params[0][1].item() < 0.0


class TestPlateauSchedule:
    def test_improving_losses_keep_lr(self):
        state = OptimizerState(lr=1.0)
        for loss in (1.0, 0.9, 0.8, 0.7):
            plateau_schedule(state, loss, 0.5, patience=2)
        assert state.lr == 1.0

    def test_six_stalls_patience_five_halves_once(self):
        state = OptimizerState(lr=1.0)
        plateau_schedule(state, 1.0, 0.5, patience=5)
        for _ in range(6):
            plateau_schedule(state, 1.0, 0.5, patience=5)
        assert state.lr == 0.5
        assert state.plateau_counter == 0

    def test_improvement_after_five_stalls_resets(self):
        state = OptimizerState(lr=1.0)
        plateau_schedule(state, 1.0, 0.5, patience=5)
        for _ in range(5):
            plateau_schedule(state, 1.0, 0.5, patience=5)
        plateau_schedule(state, 0.5, 0.5, patience=5)
        assert state.lr == 1.0
        assert state.plateau_counter == 0

    def test_parameter_validation(self):
        state = OptimizerState(lr=1.0)
        with pytest.raises(ValueError):
            plateau_schedule(state, 1.0, 1.5, patience=5)
        with pytest.raises(ValueError):
            plateau_schedule(state, 1.0, 0.5, patience=0)


class TestEarlyStop:
    def test_improving_never_stops(self):
        state = OptimizerState(lr=1.0)
        assert not any(early_stop(state, 1.0 - 0.01 * i, patience=3)
                       for i in range(50))

    def test_flat_losses_stop_at_patience_plus_one(self):
        state = OptimizerState(lr=1.0)
        stops = [early_stop(state, 1.0, patience=10) for _ in range(11)]
        assert stops == [False] * 10 + [True]

    def test_tolerance_treats_tiny_gains_as_stalls(self):
        state = OptimizerState(lr=1.0)
        early_stop(state, 1.0, patience=2)
        assert not early_stop(state, 1.0 - 1e-12, patience=2)
        assert early_stop(state, 1.0 - 1e-12, patience=2)

    def test_best_val_tracks_minimum(self):
        state = OptimizerState(lr=1.0)
        for loss in (1.0, 0.4, 0.7, 0.6):
            early_stop(state, loss, patience=10)
        assert state.best_val == 0.4
        assert state.would_improve(0.3)
        assert not state.would_improve(0.4)

    def test_schedule_and_stop_counters_are_independent(self):
        state = OptimizerState(lr=1.0)
        plateau_schedule(state, 1.0, 0.5, patience=5)
        plateau_schedule(state, 0.9, 0.5, patience=5)
        assert state.plateau_counter == 0
        assert state.stop_counter == 0
        early_stop(state, 2.0, patience=5)   # first value the stop tracker sees
        early_stop(state, 2.5, patience=5)
        assert state.stop_counter == 1
        assert state.plateau_counter == 0
