"""Tensor substrate tests: op semantics, stability, and gradient checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bevbeam import nd
from bevbeam.errors import ContractError, DimensionError, NumericError

from gradcheck import assert_gradients_match, primitive_gradient_suite


class TestMatmul:
    def test_identity(self):
        a = nd.tensor(np.eye(2))
        b = nd.tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.allclose(nd.matmul(a, b).data, [[1, 2], [3, 4]])

    def test_hand_product(self):
        out = nd.matmul(nd.tensor([[1.0, 2.0]]), nd.tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_grad_of_sum(self):
        a = nd.parameter(np.eye(2), dtype=np.float64)
        b = nd.parameter([[2.0, 3.0], [4.0, 5.0]], dtype=np.float64)
        assert_gradients_match(lambda: nd.matmul(a, b).sum(), [a, b])
        a.zero_grad(), b.zero_grad()
        with nd.Tape() as tape:
            tape.backward(nd.matmul(a, b).sum())
        assert np.allclose(a.grad, [[5.0, 9.0], [5.0, 9.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            nd.matmul(nd.tensor(np.zeros((2, 3))), nd.tensor(np.zeros((2, 2))))


class TestConv2d:
    def test_zero_input(self):
        x = nd.tensor(np.zeros((1, 2, 5, 5), dtype=np.float32))
        w = nd.tensor(np.random.default_rng(0).standard_normal((3, 2, 3, 3)).astype(np.float32))
        out = nd.conv2d(x, w, nd.tensor(np.zeros(3, dtype=np.float32)))
        assert not out.data.any()

    def test_ones_kernel_counts_neighbourhood(self):
        x = nd.tensor(np.ones((1, 1, 3, 3)))
        w = nd.tensor(np.ones((1, 1, 3, 3)))
        out = nd.conv2d(x, w).data[0, 0]
        assert out[1, 1] == 9.0
        assert out[0, 0] == out[0, 2] == out[2, 0] == out[2, 2] == 4.0

    def test_preserves_spatial_size(self):
        x = nd.tensor(np.random.default_rng(1).standard_normal((2, 3, 7, 9)).astype(np.float32))
        w = nd.tensor(np.random.default_rng(2).standard_normal((4, 3, 3, 3)).astype(np.float32))
        assert nd.conv2d(x, w).shape == (2, 4, 7, 9)

    def test_gradcheck(self):
        rng = np.random.default_rng(3)
        x = nd.parameter(rng.standard_normal((1, 2, 4, 4)), dtype=np.float64)
        w = nd.parameter(rng.standard_normal((2, 2, 3, 3)), dtype=np.float64)
        b = nd.parameter(rng.standard_normal(2), dtype=np.float64)
        assert_gradients_match(lambda: nd.pow_const(nd.conv2d(x, w, b), 2.0).sum(), [x, w, b])

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError, match="channels"):
            nd.conv2d(nd.tensor(np.zeros((1, 2, 4, 4))), nd.tensor(np.zeros((1, 3, 3, 3))))


class TestSoftmax:
    def test_uniform(self):
        assert np.allclose(nd.softmax(nd.tensor([0.0, 0.0, 0.0])).data, 1 / 3)

    def test_overflow_stability(self):
        out = nd.softmax(nd.tensor([1000.0, 0.0], dtype=np.float64)).data
        assert abs(out[0] - 1.0) < 1e-12 and abs(out[1]) < 1e-12

    def test_closed_form(self):
        out = nd.softmax(nd.tensor(np.log([1.0, 2.0, 3.0]), dtype=np.float64)).data
        assert np.allclose(out, [1 / 6, 2 / 6, 3 / 6], atol=1e-12)

    def test_nan_rejected(self):
        with pytest.raises(NumericError):
            nd.softmax(nd.tensor([np.nan, 0.0]))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(min_value=-1e4, max_value=1e4), min_size=2, max_size=8))
    def test_rows_sum_to_one(self, values):
        out = nd.softmax(nd.tensor(values, dtype=np.float64)).data
        assert abs(out.sum() - 1.0) < 1e-6
        assert (out >= 0).all() and (out <= 1).all()


class TestLayerNorm:
    def test_constant_slice_zeroed_by_eps(self):
        out = nd.layer_norm(nd.tensor([5.0, 5.0, 5.0]), nd.tensor(np.ones(3)),
                            nd.tensor(np.zeros(3)))
        assert np.allclose(out.data, 0.0)

    def test_two_point_normalization(self):
        out = nd.layer_norm(nd.tensor([1.0, 3.0], dtype=np.float64),
                            nd.tensor(np.ones(2), dtype=np.float64),
                            nd.tensor(np.zeros(2), dtype=np.float64), eps=1e-12)
        assert np.allclose(out.data, [-1.0, 1.0], atol=1e-6)

    def test_gamma_zero_beta_wins(self):
        out = nd.layer_norm(nd.tensor([1.0, 2.0, 4.0]), nd.tensor(np.zeros(3)),
                            nd.tensor(np.full(3, 7.0)))
        assert np.allclose(out.data, 7.0)


class TestBatchNorm:
    def test_constant_channel_train(self):
        x = nd.tensor(np.full((2, 1, 2, 2), 3.5))
        state = nd.BatchNormState(1)
        out = nd.batch_norm(x, nd.tensor(np.ones(1)), nd.tensor(np.zeros(1)), state, True)
        assert np.allclose(out.data, 0.0)

    def test_eval_identity_with_fresh_stats(self, caplog):
        x = nd.tensor(np.random.default_rng(0).standard_normal((1, 2, 3, 3)).astype(np.float32))
        state = nd.BatchNormState(2)
        with caplog.at_level("WARNING"):
            out = nd.batch_norm(x, nd.tensor(np.ones(2)), nd.tensor(np.zeros(2)), state, False)
        assert "initialized stats" in caplog.text
        assert np.allclose(out.data, x.data / np.sqrt(1 + state.eps), atol=1e-6)

    def test_two_value_channel(self):
        x = nd.tensor(np.array([1.0, 3.0]).reshape(1, 1, 1, 2), dtype=np.float64)
        state = nd.BatchNormState(1, dtype=np.float64)
        out = nd.batch_norm(x, nd.tensor(np.ones(1), dtype=np.float64),
                            nd.tensor(np.zeros(1), dtype=np.float64), state, True)
        expected = 1.0 / np.sqrt(1 + state.eps)
        assert np.allclose(out.data.ravel(), [-expected, expected])

    def test_running_stats_update(self):
        x = nd.tensor(np.full((1, 1, 1, 2), 10.0))
        state = nd.BatchNormState(1)
        nd.batch_norm(x, nd.tensor(np.ones(1)), nd.tensor(np.zeros(1)), state, True)
        assert np.isclose(state.running_mean[0], 0.9 * 0 + 0.1 * 10.0)
        assert state.batches_tracked == 1

    def test_train_rejects_singleton(self):
        x = nd.tensor(np.zeros((1, 1, 1, 1)))
        with pytest.raises(ContractError):
            nd.batch_norm(x, nd.tensor(np.ones(1)), nd.tensor(np.zeros(1)),
                          nd.BatchNormState(1), True)


class TestBilinearResize:
    def test_same_size_is_exact_identity(self):
        x = nd.tensor(np.random.default_rng(0).standard_normal((2, 3, 5, 7)).astype(np.float32))
        out = nd.bilinear_resize(x, 5, 7)
        assert (out.data == x.data).all()

    def test_two_by_two_center(self):
        x = nd.tensor(np.array([[[[0.0, 1.0], [2.0, 3.0]]]]))
        out = nd.bilinear_resize(x, 3, 3)
        assert out.data[0, 0, 1, 1] == pytest.approx(1.5)
        # align-corners: corners preserved
        assert out.data[0, 0, 0, 0] == 0.0 and out.data[0, 0, 2, 2] == 3.0

    def test_constant_stays_constant(self):
        x = nd.tensor(np.full((1, 2, 4, 4), 2.5))
        for h, w in ((1, 1), (3, 9), (8, 2)):
            assert np.allclose(nd.bilinear_resize(x, h, w).data, 2.5)


class TestFft:
    def test_constant_vector(self):
        p = nd.fft_power(np.ones(8, dtype=np.complex64)).data
        assert p[0] == pytest.approx(64.0)
        assert np.allclose(p[1:], 0.0, atol=1e-9)

    def test_tone_lands_in_bin(self):
        k = np.arange(8)
        p = nd.fft_power(np.exp(2j * np.pi * 3 * k / 8)).data
        assert p[3] == pytest.approx(64.0)
        assert np.allclose(np.delete(p, 3), 0.0, atol=1e-9)

    def test_parseval(self):
        rng = np.random.default_rng(4)
        for n in (8, 16):
            x = (rng.standard_normal(n) + 1j * rng.standard_normal(n)).astype(np.complex64)
            p = nd.fft_power(x).data
            assert abs(p.sum() - n * (np.abs(x.astype(np.complex128)) ** 2).sum()) < 1e-9

    def test_non_power_of_two_matches_naive_dft(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        naive = np.array([
            sum(x[n] * np.exp(-2j * np.pi * k * n / 6) for n in range(6))
            for k in range(6)
        ])
        assert np.allclose(nd.fft_power(x).data, np.abs(naive) ** 2, atol=1e-9)

    def test_axis_argument(self):
        rng = np.random.default_rng(6)
        cube = (rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4)))
        per_row = np.stack([nd.fft_power(cube[i]).data for i in range(3)])
        assert np.allclose(nd.fft_power(cube, axis=1).data, per_row)


class TestBackward:
    def test_sum_gives_ones(self):
        x = nd.parameter(np.random.default_rng(0).standard_normal((3, 4)))
        with nd.Tape() as tape:
            tape.backward(x.sum())
        assert (x.grad == 1.0).all()

    def test_square_sum(self):
        x = nd.parameter([1.0, 2.0], dtype=np.float64)
        with nd.Tape() as tape:
            tape.backward(nd.pow_const(x, 2.0).sum())
        assert np.allclose(x.grad, [2.0, 4.0])

    def test_grad_accumulates_on_shared_input(self):
        x = nd.parameter([1.0, 2.0], dtype=np.float64)
        with nd.Tape() as tape:
            tape.backward(nd.add(x, x).sum())
        assert np.allclose(x.grad, [2.0, 2.0])

    def test_non_scalar_rejected(self):
        x = nd.parameter(np.ones(3))
        with nd.Tape() as tape:
            y = nd.scale(x, 2.0)
            with pytest.raises(ContractError):
                tape.backward(y)

    def test_empty_tape_rejected(self):
        with nd.Tape() as tape:
            with pytest.raises(ContractError):
                tape.backward(nd.tensor(1.0))

    def test_deterministic_gradients(self):
        def run():
            rng = np.random.default_rng(11)
            x = nd.parameter(rng.standard_normal((4, 4)), dtype=np.float64)
            w = nd.parameter(rng.standard_normal((4, 4)), dtype=np.float64)
            with nd.Tape() as tape:
                y = nd.relu(nd.matmul(x, w))
                tape.backward(nd.pow_const(nd.softmax(y, axis=-1), 2.0).sum())
            return x.grad.tobytes(), w.grad.tobytes()

        assert run() == run()

    def test_no_tape_records_nothing(self):
        x = nd.parameter(np.ones(3))
        y = nd.scale(x, 2.0)
        assert not y.requires_grad

    def test_complex_never_tracked(self):
        c = nd.tensor(np.ones(4, dtype=np.complex64))
        with pytest.raises(ContractError):
            nd.add(c, c)
        with pytest.raises(ContractError):
            nd.Tensor(np.ones(2, dtype=np.complex64), requires_grad=True)


class TestDropout:
    def test_eval_passthrough(self):
        x = nd.tensor(np.ones((2, 3)))
        assert nd.dropout(x, 0.5, np.random.default_rng(0), training=False) is x

    def test_train_scales_kept_units(self):
        x = nd.tensor(np.ones((100, 100)))
        out = nd.dropout(x, 0.1, np.random.default_rng(0), training=True).data
        kept = out[out != 0]
        assert np.allclose(kept, 1.0 / 0.9)
        assert 0.85 < (out != 0).mean() < 0.95


def test_primitive_gradient_suite_runs():
    # single-seed sanity here; the full >=5-seed sweep runs in acceptance
    assert primitive_gradient_suite(seeds=[0]) > 20


class TestParallelTapes:
    def test_independent_tapes_on_threads(self):
        import threading

        results = {}

        def worker(seed):
            rng = np.random.default_rng(seed)
            x = nd.parameter(rng.standard_normal((8, 8)), dtype=np.float64)
            w = nd.parameter(rng.standard_normal((8, 8)), dtype=np.float64)
            with nd.Tape() as tape:
                tape.backward(nd.pow_const(nd.relu(nd.matmul(x, w)), 2.0).sum())
            results[seed] = (x.grad.copy(), w.grad.copy())

        threads = [threading.Thread(target=worker, args=(s,)) for s in (1, 2, 3)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        # recompute serially; thread-local tapes must not interfere
        for seed in (1, 2, 3):
            rng = np.random.default_rng(seed)
            x = nd.parameter(rng.standard_normal((8, 8)), dtype=np.float64)
            w = nd.parameter(rng.standard_normal((8, 8)), dtype=np.float64)
            with nd.Tape() as tape:
                tape.backward(nd.pow_const(nd.relu(nd.matmul(x, w)), 2.0).sum())
            assert np.array_equal(results[seed][0], x.grad)
            assert np.array_equal(results[seed][1], w.grad)
