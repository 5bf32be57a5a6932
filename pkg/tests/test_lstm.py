import math

import numpy as np
import numpy.testing as npt
import pytest

from selrcn import autodiff as ad
from selrcn import se
from selrcn.autodiff import DimensionError, Tape, Tensor, backward
from selrcn.gradcheck import grad_check
from selrcn.lstm import (ClassifierHead, LSTMLayerParams, PredictionResult, SELSTM,
                         SELSTMConfig, classify_frames, late_fuse, lstm_cell_step,
                         predict_sequence)


def lstm_step_oracle(x, h, c, wx, wh, b):
    """Scalar-by-scalar LSTM step with explicit loops and math.* functions."""
    hid = h.size
    gates = [0.0] * (4 * hid)
    for r in range(4 * hid):
        acc = b[r]
        for j in range(x.size):
            acc += wx[r, j] * x[j]
        for j in range(hid):
            acc += wh[r, j] * h[j]
        gates[r] = acc
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    h_new = np.zeros(hid)
    c_new = np.zeros(hid)
    for k in range(hid):
        i = sig(gates[k])
        f = sig(gates[hid + k])
        g = math.tanh(gates[2 * hid + k])
        o = sig(gates[3 * hid + k])
        c_new[k] = f * c[k] + i * g
        h_new[k] = o * math.tanh(c_new[k])
    return h_new, c_new


@pytest.fixture
def rng():
    return np.random.default_rng(0)


class TestCellStep:
    def test_zero_weights_fixed_point(self, rng):
        p = LSTMLayerParams(3, 4, rng, dtype=np.float64)
        p.w_x.data[:] = 0
        p.w_h.data[:] = 0
        p.b.data[:] = 0
        h, c = lstm_cell_step(Tensor(np.ones(3)), Tensor(np.zeros(4)), Tensor(np.zeros(4)), p)
        npt.assert_array_equal(h.data, np.zeros(4))
        npt.assert_array_equal(c.data, np.zeros(4))

    def test_saturated_forget_gate_retains_memory(self, rng):
        p = LSTMLayerParams(2, 3, rng, dtype=np.float64)
        p.w_x.data[:] = 0
        p.w_h.data[:] = 0
        p.b.data[:] = 0
        p.b.data[3:6] = 40.0  # forget-gate slice saturates sigmoid to 1
        c_prev = np.array([0.3, -0.7, 1.1])
        h, c = lstm_cell_step(Tensor(np.zeros(2)), Tensor(np.zeros(3)),
                              Tensor(c_prev, dtype=np.float64), p)
        npt.assert_allclose(c.data, c_prev, rtol=1e-12)

    def test_forget_bias_initialized_to_one(self, rng):
        p = LSTMLayerParams(5, 4, rng)
        npt.assert_array_equal(p.b.data[4:8], np.ones(4))
        npt.assert_array_equal(p.b.data[:4], np.zeros(4))
        npt.assert_array_equal(p.b.data[8:], np.zeros(8))

    def test_matches_scalar_oracle(self, rng):
        p = LSTMLayerParams(3, 4, rng, dtype=np.float64)
        x = rng.standard_normal(3)
        h0 = rng.standard_normal(4)
        c0 = rng.standard_normal(4)
        h, c = lstm_cell_step(Tensor(x, dtype=np.float64), Tensor(h0, dtype=np.float64),
                              Tensor(c0, dtype=np.float64), p)
        h_ref, c_ref = lstm_step_oracle(x, h0, c0, p.w_x.data, p.w_h.data, p.b.data)
        npt.assert_allclose(h.data, h_ref, atol=1e-6)
        npt.assert_allclose(c.data, c_ref, atol=1e-6)

    def test_batched_matches_per_row(self, rng):
        p = LSTMLayerParams(3, 4, rng, dtype=np.float64)
        x = rng.standard_normal((5, 3))
        h0 = rng.standard_normal((5, 4))
        c0 = rng.standard_normal((5, 4))
        h, c = lstm_cell_step(Tensor(x, dtype=np.float64), Tensor(h0, dtype=np.float64),
                              Tensor(c0, dtype=np.float64), p)
        for i in range(5):
            hi, ci = lstm_cell_step(Tensor(x[i], dtype=np.float64),
                                    Tensor(h0[i], dtype=np.float64),
                                    Tensor(c0[i], dtype=np.float64), p)
            npt.assert_allclose(h.data[i], hi.data, rtol=1e-12)
            npt.assert_allclose(c.data[i], ci.data, rtol=1e-12)

    def test_dimension_mismatch(self, rng):
        p = LSTMLayerParams(3, 4, rng)
        with pytest.raises(DimensionError):
            lstm_cell_step(Tensor(np.zeros(5)), Tensor(np.zeros(4)), Tensor(np.zeros(4)), p)


class TestSELSTMForward:
    def test_zero_network_outputs_zero(self, rng):
        cfg = SELSTMConfig(layers=1, hidden=4, se_enabled=False, input_dim=3, dropout=0.0)
        model = SELSTM(cfg, rng, dtype=np.float64)
        for p in model.layers[0].named_params("l").values():
            p.data[:] = 0
        out = model.forward(Tensor(rng.standard_normal((6, 3)), dtype=np.float64))
        npt.assert_array_equal(out.data, np.zeros((6, 4)))

    def test_se_disabled_is_bit_identical_to_plain_stack(self, rng):
        cfg_off = SELSTMConfig(layers=2, hidden=5, se_enabled=False, input_dim=4, dropout=0.0)
        model = SELSTM(cfg_off, np.random.default_rng(3), dtype=np.float64)
        u = rng.standard_normal((7, 4))
        out = model.forward(Tensor(u, dtype=np.float64)).data

        # hand-rolled plain stack over the same weights
        x = Tensor(u, dtype=np.float64)
        seq = x
        for layer in model.layers:
            h = Tensor(np.zeros((1, 5), dtype=np.float64))
            c = Tensor(np.zeros((1, 5), dtype=np.float64))
            rows = []
            seq3 = ad.reshape(seq, (1, 7, seq.shape[-1]))
            for t in range(7):
                h, c = lstm_cell_step(ad.take(seq3, t, axis=1), h, c, layer)
                rows.append(h)
            seq = ad.reshape(ad.stack(rows, axis=1), (7, 5))
        assert np.array_equal(out, seq.data)

    def test_saturated_gate_residual_equals_doubled_input(self, rng):
        cfg = SELSTMConfig(layers=1, hidden=4, se_enabled=True, input_dim=3, dropout=0.0,
                           se_cfg=se.SEConfig(reduction_ratio=2, squeeze_axis="channel",
                                              reweight_mode="residual"))
        model = SELSTM(cfg, np.random.default_rng(5), dtype=np.float64)
        model.init_gate(t_len=6, c_len=3, rng=np.random.default_rng(6))
        model.se_w1.data[0, :] = 60.0
        model.se_w1.data[1, :] = -60.0
        model.se_w2.data[:] = 60.0
        u = rng.standard_normal((6, 3)) + 0.1
        out = model.forward(Tensor(u, dtype=np.float64)).data

        cfg_off = SELSTMConfig(layers=1, hidden=4, se_enabled=False, input_dim=3, dropout=0.0)
        plain = SELSTM(cfg_off, np.random.default_rng(5), dtype=np.float64)
        ref = plain.forward(Tensor(2.0 * u, dtype=np.float64)).data
        npt.assert_allclose(out, ref, atol=1e-7)

    def test_paper_scale_shapes(self):
        cfg = SELSTMConfig(layers=3, hidden=1024, se_enabled=True, input_dim=512, dropout=0.0)
        model = SELSTM(cfg, np.random.default_rng(1))
        model.init_gate(t_len=30, c_len=512, rng=np.random.default_rng(2))
        u = Tensor(np.random.default_rng(3).standard_normal((30, 512)).astype(np.float32))
        out = model.forward(u)
        assert out.shape == (30, 1024)
        assert model.se_w1.shape == (1, 30)  # T=30 with r=16 floors to hidden 1

    def test_eq4_gate_has_length_t_and_scales_rows(self, rng):
        cfg = SELSTMConfig(layers=1, hidden=3, se_enabled=True, input_dim=4, dropout=0.0,
                           se_cfg=se.SEConfig(reduction_ratio=2, squeeze_axis="channel",
                                              reweight_mode="scale_only"))
        model = SELSTM(cfg, np.random.default_rng(8), dtype=np.float64)
        model.init_gate(t_len=5, c_len=4, rng=np.random.default_rng(9))
        u = rng.standard_normal((5, 4))
        gate = model.gate_values(Tensor(u, dtype=np.float64)).data
        assert gate.shape == (5,)

        const = 3.0
        scaled = u.copy()
        scaled[2] *= const
        gate_scaled = model.gate_values(Tensor(scaled, dtype=np.float64)).data
        reweighted = se.reweight_sequence(Tensor(scaled, dtype=np.float64),
                                          Tensor(gate_scaled, dtype=np.float64),
                                          cfg.se_cfg).data
        npt.assert_allclose(reweighted[2], const * gate_scaled[2] * u[2], rtol=1e-12)

    def test_dropout_only_between_layers_in_training(self, rng):
        cfg = SELSTMConfig(layers=2, hidden=4, se_enabled=False, input_dim=3, dropout=0.5)
        model = SELSTM(cfg, np.random.default_rng(11), dtype=np.float64)
        u = Tensor(rng.standard_normal((4, 3)), dtype=np.float64)
        eval_a = model.forward(u, training=False).data
        eval_b = model.forward(u, training=False).data
        assert np.array_equal(eval_a, eval_b)
        train_a = model.forward(u, training=True, rng=np.random.default_rng(1)).data
        train_b = model.forward(u, training=True, rng=np.random.default_rng(2)).data
        assert not np.array_equal(train_a, train_b)


class TestHeadAndFusion:
    def test_zero_head_gives_uniform_rows(self, rng):
        head = ClassifierHead(6, 4, rng)
        head.weight.data[:] = 0
        head.bias.data[:] = 0
        probs = classify_frames(Tensor(rng.standard_normal((5, 6))), head)
        npt.assert_allclose(probs.data, np.full((5, 4), 0.25), atol=1e-7)

    def test_known_logits_quarter_three_quarters(self, rng):
        head = ClassifierHead(2, 2, rng, dtype=np.float64)
        head.weight.data[:] = np.array([[1.0, 0.0], [0.0, 1.0]])
        head.bias.data[:] = 0
        h = Tensor(np.array([[0.0, math.log(3.0)]]), dtype=np.float64)
        probs = classify_frames(h, head)
        npt.assert_allclose(probs.data, [[0.25, 0.75]], rtol=1e-12)

    def test_rows_sum_to_one(self, rng):
        head = ClassifierHead(8, 5, rng)
        probs = classify_frames(Tensor(rng.standard_normal((12, 8))), head).data
        npt.assert_allclose(probs.sum(axis=1), np.ones(12), atol=1e-6)

    def test_mean_fusion_arithmetic(self):
        fused = late_fuse(np.array([[0.2, 0.8], [0.6, 0.4]]), mode="mean")
        npt.assert_allclose(fused, [0.4, 0.6], rtol=1e-12)
        assert int(np.argmax(fused)) == 1

    def test_identical_rows_idempotent_both_modes(self):
        row = np.array([0.1, 0.6, 0.3])
        per_frame = np.tile(row, (7, 1))
        npt.assert_allclose(late_fuse(per_frame, "mean"), row, rtol=1e-12)
        npt.assert_allclose(late_fuse(per_frame, "max"), row, rtol=1e-12)

    def test_mean_fusion_permutation_bit_identical(self, rng):
        probs = rng.random((30, 5)).astype(np.float32)
        probs /= probs.sum(axis=1, keepdims=True)
        perm = rng.permutation(30)
        assert np.array_equal(late_fuse(probs, "mean"), late_fuse(probs[perm], "mean"))

    def test_max_fusion_renormalizes(self, rng):
        probs = rng.random((4, 3))
        probs /= probs.sum(axis=1, keepdims=True)
        fused = late_fuse(probs, "max")
        npt.assert_allclose(fused.sum(), 1.0, rtol=1e-12)

    def test_prediction_result_contract(self, rng):
        head = ClassifierHead(6, 3, rng)
        res = predict_sequence(Tensor(rng.standard_normal((9, 6))), head)
        assert isinstance(res, PredictionResult)
        npt.assert_allclose(res.per_frame.sum(axis=1), np.ones(9), atol=1e-6)
        npt.assert_allclose(res.fused.sum(), 1.0, atol=1e-6)
        assert res.predicted_class == int(np.argmax(res.fused))


class TestEndToEndGradients:
    def test_se_lstm_head_loss_gradcheck(self):
        """SE gate -> 2-layer LSTM (H=8, T=5, C=6) -> head -> cross-entropy."""
        cfg = SELSTMConfig(layers=2, hidden=8, se_enabled=True, input_dim=6, dropout=0.0,
                           se_cfg=se.SEConfig(reduction_ratio=2, squeeze_axis="channel",
                                              reweight_mode="residual"))
        model = SELSTM(cfg, np.random.default_rng(21), dtype=np.float64)
        model.init_gate(t_len=5, c_len=6, rng=np.random.default_rng(22))
        head = ClassifierHead(8, 3, np.random.default_rng(23), dtype=np.float64)
        u = Tensor(np.random.default_rng(24).standard_normal((5, 6)), dtype=np.float64)
        labels = np.array([0, 1, 2, 1, 0])

        def loss_fn():
            h = model.forward(u, training=False)
            return ad.cross_entropy(head.logits(h), labels)

        params = dict(model.named_params())
        params.update(head.named_params())
        params["input"] = u
        worst = 0.0
        for name, p in params.items():
            worst = max(worst, grad_check(lambda t, fn=loss_fn: fn(), p, sample=6,
                                          rng=np.random.default_rng(31)))
        assert worst < 1e-4
