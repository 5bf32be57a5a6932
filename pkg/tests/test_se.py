import numpy as np
import numpy.testing as npt
import pytest

from selrcn import autodiff as ad
from selrcn import se
from selrcn.autodiff import DimensionError, Tape, Tensor, backward
from selrcn.gradcheck import grad_check
from selrcn.se import SEConfig


def naive_mean_over_plane(u):
    """Summation oracle for the spatial squeeze: explicit loops, no vectorization."""
    c, h, w = u.shape
    out = np.zeros(c, dtype=np.float64)
    for ci in range(c):
        acc = 0.0
        for i in range(h):
            for j in range(w):
                acc += u[ci, i, j]
        out[ci] = acc / (h * w)
    return out


def sigmoid_oracle(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


class TestSEConfig:
    def test_hidden_rule_floors_and_clamps(self):
        cfg = SEConfig(reduction_ratio=16)
        assert cfg.hidden_dim(512) == 32
        assert cfg.hidden_dim(30) == 1
        assert cfg.hidden_dim(8) == 1

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            SEConfig(reduction_ratio=0)
        with pytest.raises(ValueError):
            SEConfig(squeeze_axis="diagonal")
        with pytest.raises(ValueError):
            SEConfig(reweight_mode="double")


class TestSqueezeSpatial:
    def test_constant_plane(self):
        u = Tensor(np.full((5, 7, 7), 3.0))
        npt.assert_allclose(se.squeeze_spatial(u).data, np.full(5, 3.0), rtol=1e-6)

    def test_paper_scale_shape(self):
        u = Tensor(np.zeros((512, 7, 7)))
        assert se.squeeze_spatial(u).shape == (512,)

    def test_small_plane_oracle(self):
        u = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        assert se.squeeze_spatial(u).data[0] == 2.5

    def test_matches_naive_summation_on_random_input(self):
        rng = np.random.default_rng(0)
        u = rng.standard_normal((6, 5, 4))
        npt.assert_allclose(se.squeeze_spatial(Tensor(u, dtype=np.float64)).data,
                            naive_mean_over_plane(u), rtol=1e-12)


class TestExcitation:
    def test_zero_everything_gives_half(self):
        cfg = SEConfig(reduction_ratio=2)
        w1 = Tensor(np.zeros((2, 4)))
        w2 = Tensor(np.zeros((4, 2)))
        s = se.excitation(Tensor(np.zeros(4)), w1, w2, cfg)
        npt.assert_array_equal(s.data, np.full(4, 0.5))

    def test_identity_weights_apply_sigmoid(self):
        cfg = SEConfig(reduction_ratio=1)
        eye = Tensor(np.eye(2))
        s = se.excitation(Tensor([0.0, 1.0]), eye, eye, cfg)
        npt.assert_allclose(s.data, sigmoid_oracle([0.0, 1.0]), rtol=1e-6)
        assert abs(s.data[1] - 0.731059) < 1e-5

    def test_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(1)
        cfg = SEConfig(reduction_ratio=4)
        w1, w2 = se.init_excitation_weights(16, cfg, rng, dtype=np.float64)
        for _ in range(1000):
            z = Tensor(rng.standard_normal(16) * 5, dtype=np.float64)
            s = se.excitation(z, w1, w2, cfg).data
            assert np.all(s > 0.0) and np.all(s < 1.0)

    def test_batched_matches_per_row(self):
        rng = np.random.default_rng(2)
        cfg = SEConfig(reduction_ratio=2)
        w1, w2 = se.init_excitation_weights(6, cfg, rng, dtype=np.float64)
        z = rng.standard_normal((3, 6))
        batched = se.excitation(Tensor(z, dtype=np.float64), w1, w2, cfg).data
        for i in range(3):
            row = se.excitation(Tensor(z[i], dtype=np.float64), w1, w2, cfg).data
            npt.assert_allclose(batched[i], row, rtol=1e-12)

    def test_weight_shape_validation(self):
        cfg = SEConfig(reduction_ratio=2)
        with pytest.raises(DimensionError):
            se.excitation(Tensor(np.zeros(4)), Tensor(np.zeros((2, 4))),
                          Tensor(np.zeros((3, 2))), cfg)
        with pytest.raises(DimensionError):
            se.excitation(Tensor(np.zeros(5)), Tensor(np.zeros((2, 4))),
                          Tensor(np.zeros((4, 2))), cfg)


class TestReweightResidual:
    def test_zero_gate_passes_shortcut_exactly(self):
        rng = np.random.default_rng(3)
        prev = rng.standard_normal((4, 3, 3))
        cur = rng.standard_normal((4, 3, 3))
        out = se.reweight_residual(Tensor(prev, dtype=np.float64),
                                   Tensor(cur, dtype=np.float64),
                                   Tensor(np.zeros(4), dtype=np.float64))
        assert np.array_equal(out.data, prev)

    def test_unit_gate_is_plain_residual_sum(self):
        rng = np.random.default_rng(4)
        prev = rng.standard_normal((4, 3, 3))
        cur = rng.standard_normal((4, 3, 3))
        out = se.reweight_residual(Tensor(prev, dtype=np.float64),
                                   Tensor(cur, dtype=np.float64),
                                   Tensor(np.ones(4), dtype=np.float64))
        assert np.array_equal(out.data, prev + cur)

    def test_matches_elementwise_loop_oracle(self):
        rng = np.random.default_rng(5)
        prev = rng.standard_normal((3, 2, 2))
        cur = rng.standard_normal((3, 2, 2))
        s = rng.random(3)
        out = se.reweight_residual(Tensor(prev, dtype=np.float64),
                                   Tensor(cur, dtype=np.float64),
                                   Tensor(s, dtype=np.float64)).data
        for c in range(3):
            for i in range(2):
                for j in range(2):
                    assert out[c, i, j] == prev[c, i, j] + s[c] * cur[c, i, j]

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            se.reweight_residual(Tensor(np.zeros((2, 3, 3))), Tensor(np.zeros((2, 3, 3))),
                                 Tensor(np.zeros(3)))


class TestSequenceSqueezes:
    def test_squeeze_frames_row_mean(self):
        u = Tensor(np.array([[1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 0.0, 4.0]]))
        npt.assert_allclose(se.squeeze_frames(u).data, [2.5, 1.0], rtol=1e-6)

    def test_squeeze_frames_constant(self):
        u = Tensor(np.full((6, 9), -1.25))
        npt.assert_allclose(se.squeeze_frames(u).data, np.full(6, -1.25), rtol=1e-6)

    def test_squeeze_frames_paper_scale_shape(self):
        u = Tensor(np.zeros((30, 512)))
        assert se.squeeze_frames(u).shape == (30,)

    def test_squeeze_channels_column_mean(self):
        u = Tensor(np.array([[2.0, 1.0], [4.0, 5.0]]))
        npt.assert_allclose(se.squeeze_channels(u).data, [3.0, 3.0], rtol=1e-6)

    def test_squeeze_channels_constant(self):
        u = Tensor(np.full((4, 7), 0.75))
        npt.assert_allclose(se.squeeze_channels(u).data, np.full(7, 0.75), rtol=1e-6)

    def test_transpose_duality(self):
        rng = np.random.default_rng(6)
        u = rng.standard_normal((5, 8))
        a = se.squeeze_channels(Tensor(u, dtype=np.float64)).data
        b = se.squeeze_frames(Tensor(u.T, dtype=np.float64)).data
        npt.assert_array_equal(a, b)

    def test_matches_naive_summation_up_to_sequence_scale(self):
        rng = np.random.default_rng(7)
        u = rng.standard_normal((30, 512))
        by_frame = np.array([sum(u[t, c] for c in range(512)) / 512 for t in range(30)])
        by_chan = np.array([sum(u[t, c] for t in range(30)) / 30 for c in range(512)])
        npt.assert_allclose(se.squeeze_frames(Tensor(u, dtype=np.float64)).data, by_frame,
                            atol=1e-6)
        npt.assert_allclose(se.squeeze_channels(Tensor(u, dtype=np.float64)).data, by_chan,
                            atol=1e-6)


class TestReweightSequence:
    def test_scale_only_unit_gate_is_identity(self):
        rng = np.random.default_rng(8)
        u = rng.standard_normal((4, 6))
        cfg = SEConfig(squeeze_axis="channel", reweight_mode="scale_only")
        out = se.reweight_sequence(Tensor(u, dtype=np.float64),
                                   Tensor(np.ones(4), dtype=np.float64), cfg)
        npt.assert_array_equal(out.data, u)

    def test_residual_zero_gate_is_identity(self):
        rng = np.random.default_rng(9)
        u = rng.standard_normal((4, 6))
        cfg = SEConfig(squeeze_axis="channel", reweight_mode="residual")
        out = se.reweight_sequence(Tensor(u, dtype=np.float64),
                                   Tensor(np.zeros(4), dtype=np.float64), cfg)
        npt.assert_array_equal(out.data, u)

    def test_residual_per_frame_gate_scales_rows(self):
        rng = np.random.default_rng(10)
        u = rng.standard_normal((5, 3))
        s = rng.random(5)
        cfg = SEConfig(squeeze_axis="channel", reweight_mode="residual")
        out = se.reweight_sequence(Tensor(u, dtype=np.float64),
                                   Tensor(s, dtype=np.float64), cfg).data
        for t in range(5):
            for c in range(3):
                npt.assert_allclose(out[t, c], (1.0 + s[t]) * u[t, c], rtol=1e-12)

    def test_per_channel_gate_scales_columns(self):
        rng = np.random.default_rng(11)
        u = rng.standard_normal((5, 3))
        s = rng.random(3)
        cfg = SEConfig(squeeze_axis="time", reweight_mode="scale_only")
        out = se.reweight_sequence(Tensor(u, dtype=np.float64),
                                   Tensor(s, dtype=np.float64), cfg).data
        npt.assert_allclose(out, u * s[None, :], rtol=1e-12)

    def test_gate_length_must_match_an_axis(self):
        cfg = SEConfig(squeeze_axis="channel")
        with pytest.raises(DimensionError):
            se.reweight_sequence(Tensor(np.zeros((4, 6))), Tensor(np.zeros(6)), cfg)


class TestComposite:
    def test_spatial_se_chain_gradient(self):
        """squeeze -> excitation -> reweight, checked against finite differences."""
        rng = np.random.default_rng(12)
        cfg = SEConfig(reduction_ratio=2)
        w1, w2 = se.init_excitation_weights(4, cfg, rng, dtype=np.float64)
        prev = Tensor(rng.standard_normal((4, 3, 3)), dtype=np.float64)

        def f(u):
            z = se.squeeze_spatial(u)
            s = se.excitation(z, w1, w2, cfg)
            y = se.reweight_residual(prev, u, s)
            return ad.sum_(ad.mul(y, y))

        u = Tensor(rng.standard_normal((4, 3, 3)), dtype=np.float64)
        assert grad_check(f, u) < 1e-4
        assert grad_check(lambda t: f_with_weight(t, u, w2, prev, cfg), w1) < 1e-4

    def test_temporal_se_chain_gradient(self):
        rng = np.random.default_rng(13)
        cfg = SEConfig(reduction_ratio=2, squeeze_axis="channel", reweight_mode="residual")
        w1, w2 = se.init_excitation_weights(5, cfg, rng, dtype=np.float64)

        def f(u):
            z = se.squeeze_frames(u)
            s = se.excitation(z, w1, w2, cfg)
            y = se.reweight_sequence(u, s, cfg)
            return ad.sum_(ad.mul(y, y))

        u = Tensor(rng.standard_normal((5, 7)), dtype=np.float64)
        assert grad_check(f, u) < 1e-4


def f_with_weight(w1, u, w2, prev, cfg):
    z = se.squeeze_spatial(u)
    s = se.excitation(z, w1, w2, cfg)
    y = se.reweight_residual(prev, u, s)
    return ad.sum_(ad.mul(y, y))
