import numpy as np
import pytest
from hypothesis import given, strategies as st

from focusdepth import tensor as T
from focusdepth.baselines import PlainGruParams, plain_gru_step
from focusdepth.scpm import (FocalStack, GateParams, PyramidGruParams, SliceEncoderParams, aspp_gate,
                             encode_slice, gru_step, run_scpm)
from focusdepth.tensor import ShapeError, Tensor
from oracles import conv2d_loop, sigmoid


def _gru(rng, c=2, scale=1.0):
    p = PyramidGruParams.init(rng, c)
    for gate in (p.reset, p.update):
        for d in gate.kernels:
            gate.kernels[d] = Tensor(gate.kernels[d].data * scale)
    return p


def _with_gate_bias(gate, value):
    return GateParams(dict(gate.kernels), Tensor(np.full(gate.bias.shape, value)))


class TestFocalStack:
    def test_rejects_non_increasing_focus(self):
        s = [Tensor(np.zeros((3, 4, 4)))] * 2
        with pytest.raises(ValueError):
            FocalStack(s, [2.0, 1.0])

    def test_rejects_mismatched_shapes(self):
        with pytest.raises(ShapeError):
            FocalStack([Tensor(np.zeros((3, 4, 4))), Tensor(np.zeros((3, 5, 4)))], [1.0, 2.0])

    def test_rejects_length_mismatch(self):
        with pytest.raises(ShapeError):
            FocalStack([Tensor(np.zeros((3, 4, 4)))], [1.0, 2.0])


class TestEncoder:
    def test_shape_and_range(self, rng):
        enc = SliceEncoderParams.init(rng, 5, (3, 4, 4))
        out = encode_slice(Tensor(rng.uniform(size=(3, 8, 8))), enc)
        assert out.shape == (5, 8, 8)
        assert np.all(np.abs(out.data) <= 1.0)

    def test_wrong_channels(self, rng):
        enc = SliceEncoderParams.init(rng, 4, (4, 4, 4))
        with pytest.raises(ShapeError):
            encode_slice(Tensor(np.zeros((2, 8, 8))), enc)

    def test_four_stages_of_5x5(self, rng):
        enc = SliceEncoderParams.init(rng, 4, (2, 3, 4))
        assert [k.shape for k in enc.kernels] == [(2, 3, 5, 5), (3, 2, 5, 5), (4, 3, 5, 5), (4, 4, 5, 5)]


class TestAsppGate:
    def test_matches_sum_of_dilated_loops(self, rng):
        gate = GateParams.init(rng, 2)
        gate = GateParams(gate.kernels, Tensor(rng.normal(size=2)))
        x, h = rng.normal(size=(2, 2, 6, 6))
        xh = np.concatenate([x, h])
        pre = sum(conv2d_loop(xh, gate.kernels[d].data, dilation=d) for d in (1, 3, 5))
        pre += gate.bias.data[:, None, None]
        expected = np.vectorize(sigmoid)(pre)
        got = aspp_gate(Tensor(x), Tensor(h), gate).data
        np.testing.assert_allclose(got, expected, atol=1e-14)

    def test_mismatched_inputs(self, rng):
        gate = GateParams.init(rng, 2)
        with pytest.raises(ShapeError):
            aspp_gate(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((2, 5, 4))), gate)


class TestGruInvariants:
    @given(st.integers(0, 2 ** 31 - 1), st.floats(0.1, 4.0))
    def test_gates_strictly_inside_unit_interval(self, seed, scale):
        # encoder outputs and states are tanh-bounded; fp64 sigmoid only rounds
        # to exactly 0 or 1 for pre-activations beyond ~37
        r = np.random.default_rng(seed)
        p = _gru(r, 2, scale)
        x, h = r.uniform(-1.0, 1.0, size=(2, 2, 6, 6))
        for gate in (p.reset, p.update):
            g = aspp_gate(Tensor(x), Tensor(h), gate).data
            assert np.all((g > 0.0) & (g < 1.0))

    @given(st.integers(0, 2 ** 31 - 1), st.integers(1, 5))
    def test_states_bounded_from_zero_start(self, seed, steps):
        r = np.random.default_rng(seed)
        p = _gru(r, 2, 3.0)
        h = Tensor(np.zeros((2, 5, 5)))
        for _ in range(steps):
            h = gru_step(Tensor(r.normal(scale=4.0, size=(2, 5, 5))), h, p)
            assert np.all(np.abs(h.data) <= 1.0)

    def test_closed_update_gate_keeps_state(self, rng):
        p = _gru(rng)
        p.update = _with_gate_bias(p.update, -40.0)  # z ~ 4e-18
        x, h = rng.normal(size=(2, 2, 6, 6))
        h = np.tanh(h)
        out = gru_step(Tensor(x), Tensor(h), p).data
        np.testing.assert_allclose(out, h, atol=1e-6)

    def test_open_update_gate_takes_candidate(self, rng):
        p = _gru(rng)
        p.update = _with_gate_bias(p.update, 40.0)  # z ~ 1 - 4e-18
        x, h = rng.normal(size=(2, 2, 6, 6))
        r = aspp_gate(Tensor(x), Tensor(h), p.reset).data
        cand = np.tanh(conv2d_loop(x, p.w_xn.data, p.b_n.data) + conv2d_loop(r * h, p.w_hn.data))
        out = gru_step(Tensor(x), Tensor(h), p).data
        np.testing.assert_allclose(out, cand, atol=1e-6)

    def test_zeroed_wide_branches_equal_plain_gru(self, rng):
        p = _gru(rng, 3)
        for gate in (p.reset, p.update):
            for d in (3, 5):
                gate.kernels[d] = Tensor(np.zeros_like(gate.kernels[d].data))
        plain = PlainGruParams(w_r=p.reset.kernels[1], b_r=p.reset.bias, w_z=p.update.kernels[1],
                               b_z=p.update.bias, w_xn=p.w_xn, w_hn=p.w_hn, b_n=p.b_n)
        h_a = h_b = Tensor(np.zeros((3, 7, 7)))
        for _ in range(3):
            x = Tensor(rng.normal(size=(3, 7, 7)))
            h_a = gru_step(x, h_a, p)
            h_b = plain_gru_step(x, h_b, plain)
        np.testing.assert_array_equal(h_a.data, h_b.data)

    def test_invalid_kernel_shapes_rejected(self, rng):
        p = PyramidGruParams.init(rng, 2)
        with pytest.raises(ShapeError):
            PyramidGruParams(p.reset, p.update, Tensor(np.zeros((2, 2, 5, 5))), p.w_hn, p.b_n)


class TestRunScpm:
    def test_output_shape_and_order_dependence(self, rng):
        enc = SliceEncoderParams.init(rng, 3, (2, 2, 2))
        gru = PyramidGruParams.init(rng, 3)
        slices = [Tensor(rng.uniform(size=(3, 8, 8))) for _ in range(3)]
        h = run_scpm(FocalStack(slices, [1.0, 2.0, 3.0]), enc, gru)
        assert h.shape == (3, 8, 8)
        h_rev = run_scpm(FocalStack(slices[::-1], [1.0, 2.0, 3.0]), enc, gru)
        assert not np.allclose(h.data, h_rev.data)

    def test_single_slice_equals_one_step_from_zero(self, rng):
        enc = SliceEncoderParams.init(rng, 2, (2, 2, 2))
        gru = PyramidGruParams.init(rng, 2)
        s = Tensor(rng.uniform(size=(3, 6, 6)))
        expected = gru_step(encode_slice(s, enc), Tensor(np.zeros((2, 6, 6))), gru)
        np.testing.assert_array_equal(run_scpm(FocalStack([s], [1.0]), enc, gru).data, expected.data)

    def test_differentiable_end_to_end(self, rng):
        enc = SliceEncoderParams.init(rng, 2, (2, 2, 2))
        gru = PyramidGruParams.init(rng, 2)
        for k in enc.kernels:
            k.requires_grad = True
            k.grad = np.zeros_like(k.data)
        stack = FocalStack([Tensor(rng.uniform(size=(3, 5, 5))) for _ in range(2)], [1.0, 2.0])
        with T.GradTape():
            T.backward(T.reduce_mean(run_scpm(stack, enc, gru)))
        assert all(np.any(k.grad != 0) for k in enc.kernels)
