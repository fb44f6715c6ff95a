"""LSTM integrator: cell equations, summary mean, and the mean ablation."""

import numpy as np
import pytest

from trajsurv import autodiff as ad
from trajsurv.evolution import TrajectorySnapshots
from trajsurv.trajectory import (init_lstm, integrate, integrate_mean,
                                 lstm_step)

DIM = 3


def zero_params(input_dim=DIM, hidden_dim=DIM):
    p = init_lstm(input_dim, hidden_dim, np.random.default_rng(0))
    for _, leaf in p.named_leaves():
        leaf.data[:] = 0.0
    return p


def numpy_lstm(z_seq, params):
    """Independent recomputation of the cell recurrence in plain numpy."""
    def sig(x):
        return 1.0 / (1.0 + np.exp(-x))

    h = np.zeros((1, params.hidden_dim))
    c = np.zeros((1, params.hidden_dim))
    hidden = []
    for z in z_seq:
        zh = np.hstack([z, h])
        i = sig(zh @ params.w_i.data + params.b_i.data)
        f = sig(zh @ params.w_f.data + params.b_f.data)
        g = np.tanh(zh @ params.w_g.data + params.b_g.data)
        o = sig(zh @ params.w_o.data + params.b_o.data)
        c = f * c + i * g
        h = o * np.tanh(c)
        hidden.append(h)
    return np.mean(hidden, axis=0)


class TestLstmStep:
    def test_zero_params_zero_cell(self):
        p = zero_params()
        z = ad.constant(np.ones((1, DIM)))
        h = ad.constant(np.zeros((1, DIM)))
        c = ad.constant(np.zeros((1, DIM)))
        h2, c2 = lstm_step(z, h, c, p)
        # All gates sit at sigmoid(0)=0.5 and the candidate at tanh(0)=0.
        assert np.array_equal(c2.data, np.zeros((1, DIM)))
        assert np.array_equal(h2.data, np.zeros((1, DIM)))

    def test_zero_params_unit_cell_memory(self):
        p = zero_params()
        z = ad.constant(np.zeros((1, DIM)))
        h = ad.constant(np.zeros((1, DIM)))
        c = ad.constant(np.ones((1, DIM)))
        h2, c2 = lstm_step(z, h, c, p)
        assert np.allclose(c2.data, 0.5)
        assert np.allclose(h2.data, 0.5 * np.tanh(0.5))
        assert np.allclose(h2.data, 0.2311, atol=5e-5)

    def test_saturated_forget_gate_preserves_cell(self):
        p = zero_params()
        p.b_f.data[:] = 100.0
        p.b_i.data[:] = -100.0
        c0 = np.array([[0.3, -1.2, 2.0]])
        _, c2 = lstm_step(ad.constant(np.zeros((1, DIM))),
                          ad.constant(np.zeros((1, DIM))), ad.constant(c0), p)
        assert np.allclose(c2.data, c0, atol=1e-12)

    def test_width_mismatch_rejected(self):
        p = init_lstm(DIM, DIM, np.random.default_rng(0))
        with pytest.raises(ad.ShapeMismatchError):
            lstm_step(ad.constant(np.zeros((1, DIM + 1))),
                      ad.constant(np.zeros((1, DIM))),
                      ad.constant(np.zeros((1, DIM))), p)

    def test_multi_row_step_matches_per_row(self):
        p = init_lstm(DIM, DIM, np.random.default_rng(1))
        rng = np.random.default_rng(2)
        z = rng.normal(size=(4, DIM))
        h = rng.normal(size=(4, DIM))
        c = rng.normal(size=(4, DIM))
        h2, c2 = lstm_step(ad.constant(z), ad.constant(h), ad.constant(c), p)
        for r in range(4):
            hr, cr = lstm_step(ad.constant(z[r:r + 1]), ad.constant(h[r:r + 1]),
                               ad.constant(c[r:r + 1]), p)
            assert np.allclose(h2.data[r], hr.data[0])
            assert np.allclose(c2.data[r], cr.data[0])


class TestIntegrate:
    def snaps(self, arrays):
        return TrajectorySnapshots(z=[ad.constant(a) for a in arrays])

    def test_zero_params_zero_summary(self):
        p = zero_params()
        rng = np.random.default_rng(3)
        out = integrate(self.snaps([rng.normal(size=(1, DIM)) for _ in range(5)]), p)
        assert np.array_equal(out.data, np.zeros((1, DIM)))

    def test_single_snapshot_equals_single_hidden_state(self):
        p = init_lstm(DIM, DIM, np.random.default_rng(4))
        z = np.random.default_rng(5).normal(size=(1, DIM))
        out = integrate(self.snaps([z]), p)
        h1, _ = lstm_step(ad.constant(z), ad.constant(np.zeros((1, DIM))),
                          ad.constant(np.zeros((1, DIM))), p)
        assert np.allclose(out.data, h1.data)

    def test_matches_numpy_recurrence_oracle(self):
        p = init_lstm(DIM, 5, np.random.default_rng(6))
        z_const = np.random.default_rng(7).normal(size=(1, DIM))
        seq = [z_const.copy() for _ in range(8)]
        out = integrate(self.snaps(seq), p)
        assert np.allclose(out.data, numpy_lstm(seq, p), atol=1e-12)

    def test_varying_sequence_matches_oracle(self):
        p = init_lstm(DIM, 4, np.random.default_rng(8))
        rng = np.random.default_rng(9)
        seq = [rng.normal(size=(1, DIM)) for _ in range(6)]
        out = integrate(self.snaps(seq), p)
        assert np.allclose(out.data, numpy_lstm(seq, p), atol=1e-12)

    def test_empty_sequence_rejected(self):
        p = init_lstm(DIM, DIM, np.random.default_rng(0))
        with pytest.raises(ValueError):
            integrate(TrajectorySnapshots(z=[]), p)

    def test_gradients_through_recurrence(self):
        p = init_lstm(DIM, DIM, np.random.default_rng(10))
        rng = np.random.default_rng(11)
        seq = [ad.constant(rng.normal(size=(1, DIM))) for _ in range(3)]

        def f():
            return ad.mean_all(integrate(TrajectorySnapshots(z=list(seq)), p))

        assert ad.grad_check(f, dict(p.named_leaves())) <= 1e-4


class TestIntegrateMean:
    def test_mean_of_snapshots(self):
        snaps = TrajectorySnapshots(z=[ad.constant([[1.0, 2.0]]),
                                       ad.constant([[3.0, 6.0]])])
        assert np.allclose(integrate_mean(snaps).data, [[2.0, 4.0]])

    def test_single_is_identity_value(self):
        z = np.array([[1.5, -2.0]])
        out = integrate_mean(TrajectorySnapshots(z=[ad.constant(z)]))
        assert np.array_equal(out.data, z)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            integrate_mean(TrajectorySnapshots(z=[]))


def test_init_lstm_zero_biases_and_fan_in_bound():
    p = init_lstm(6, 4, np.random.default_rng(12))
    bound = 1.0 / np.sqrt(10)
    for name, leaf in p.named_leaves():
        if ".b_" in name:
            assert np.array_equal(leaf.data, np.zeros((1, 4)))
        else:
            assert leaf.shape == (10, 4)
            assert np.abs(leaf.data).max() <= bound
    assert p.input_dim == 6
    assert p.hidden_dim == 4
