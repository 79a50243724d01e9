"""Central finite-difference gradient oracle used throughout the test suite.

The oracle re-evaluates the forward function with per-coordinate +/- step
perturbations and never touches the analytic backward path it is checking.
"""

import numpy as np

from bevbeam import nd


def numeric_gradient(fn, leaf: "nd.Tensor", step: float = 1e-5) -> np.ndarray:
    """d fn() / d leaf by central differences; perturbs leaf.data in place."""
    grad = np.zeros_like(leaf.data)
    flat = leaf.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = float(fn().data)
        flat[i] = orig - step
        f_minus = float(fn().data)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                       atol: float = 1e-8) -> float:
    """Worst-case relative error, ignoring coordinates where both are ~0."""
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    mask = diff > atol
    if not mask.any():
        return 0.0
    return float((diff[mask] / denom[mask]).max())


def assert_gradients_match(fn, leaves, step: float = 1e-5, rtol: float = 1e-4):
    """Check analytic gradients of scalar fn() against central differences.

    ``fn`` must build the loss from the given f64 leaf tensors and be safe to
    call repeatedly (any rng it uses must be re-seeded per call).
    """
    for leaf in leaves:
        assert leaf.dtype == np.float64, "gradient checks run in f64"
        leaf.zero_grad()
    with nd.Tape() as tape:
        tape.backward(fn())
    for leaf in leaves:
        assert leaf.grad is not None, "leaf did not receive a gradient"
        numeric = numeric_gradient(fn, leaf, step=step)
        err = max_relative_error(leaf.grad, numeric)
        assert err < rtol, f"gradient mismatch: rel err {err:.3e} >= {rtol}"


def primitive_gradient_suite(seeds=range(5), rtol: float = 1e-4) -> int:
    """Finite-difference check of every differentiable primitive.

    Returns the number of (op, seed) cases checked; raises on any mismatch.
    """
    checked = 0
    for seed in seeds:
        rng = np.random.default_rng(1000 + seed)

        def p(*shape):
            return nd.parameter(rng.standard_normal(shape), dtype=np.float64)

        a, b = p(3, 4), p(3, 4)
        cases = {
            "add": (lambda: nd.add(a, b).sum(), [a, b]),
            "sub": (lambda: nd.sub(a, b).sum(), [a, b]),
            "mul": (lambda: nd.mul(a, b).sum(), [a, b]),
            "neg": (lambda: nd.neg(a).sum(), [a]),
            "scale": (lambda: nd.scale(a, 1.7).sum(), [a]),
        }
        m1, m2 = p(2, 3, 4), p(4, 5)
        cases["matmul"] = (lambda: nd.matmul(m1, m2).sum(), [m1, m2])
        sq = p(2, 5)
        cases["pow2"] = (lambda: nd.pow_const(sq, 2.0).sum(), [sq])
        pos = nd.parameter(rng.uniform(0.2, 2.0, (2, 5)), dtype=np.float64)
        cases["log"] = (lambda: nd.log(pos).sum(), [pos])
        cases["relu"] = (lambda: nd.relu(a).sum(), [a])
        cases["tanh"] = (lambda: nd.tanh(a).sum(), [a])
        cases["gelu"] = (lambda: nd.gelu(a).sum(), [a])
        sm = p(3, 6)
        w = rng.standard_normal((3, 6))
        cases["softmax"] = (
            lambda: nd.mul(nd.softmax(sm, axis=-1),
                           nd.tensor(w, dtype=np.float64)).sum(), [sm])
        lx, lg, lb = p(4, 6), p(6), p(6)
        cases["layer_norm"] = (lambda: nd.layer_norm(lx, lg, lb).sum(), [lx, lg, lb])
        bx, bg, bb = p(2, 3, 4, 4), p(3), p(3)
        w4 = rng.standard_normal((2, 3, 4, 4))
        state = nd.BatchNormState(3, dtype=np.float64)
        cases["batch_norm_train"] = (
            lambda: nd.mul(nd.batch_norm(bx, bg, bb, state, training=True),
                           nd.tensor(w4, dtype=np.float64)).sum(), [bx, bg, bb])
        estate = nd.BatchNormState(3, dtype=np.float64)
        estate.running_mean = rng.standard_normal(3)
        estate.running_var = rng.uniform(0.5, 2.0, 3)
        estate.batches_tracked = 1
        cases["batch_norm_eval"] = (
            lambda: nd.mul(nd.batch_norm(bx, bg, bb, estate, training=False),
                           nd.tensor(w4, dtype=np.float64)).sum(), [bx, bg, bb])
        cx = p(1, 2, 4, 4)
        cw = p(3, 2, 3, 3)
        cb = p(3)
        cases["conv2d"] = (lambda: nd.conv2d(cx, cw, cb).sum(), [cx, cw, cb])
        cs = p(1, 2, 6, 6)
        cases["conv2d_stride2"] = (
            lambda: nd.conv2d(cs, cw, cb, stride=2, padding=1).sum(), [cs, cw, cb])
        rx = p(1, 2, 3, 4)
        wr = rng.standard_normal((1, 2, 5, 7))
        cases["bilinear_resize"] = (
            lambda: nd.mul(nd.bilinear_resize(rx, 5, 7),
                           nd.tensor(wr, dtype=np.float64)).sum(), [rx])
        gz, gh = p(2, 5), p(2, 5)
        gs = nd.parameter(np.asarray(0.37), dtype=np.float64)
        cases["gated_add"] = (lambda: nd.gated_add(gz, gh, gs).sum(), [gz, gh, gs])
        gs0 = nd.parameter(np.asarray(0.0), dtype=np.float64)
        cases["gated_add_zero"] = (lambda: nd.gated_add(gz, gh, gs0).sum(), [gz, gh, gs0])
        tr = p(2, 3, 4)
        wt = nd.tensor(rng.standard_normal((4, 2, 3)), dtype=np.float64)
        cases["transpose"] = (lambda: nd.mul(nd.transpose(tr, (2, 0, 1)), wt).sum(), [tr])
        c1, c2 = p(2, 3), p(2, 2)
        cases["concat"] = (lambda: nd.pow_const(nd.concat([c1, c2], axis=1), 2.0).sum(),
                           [c1, c2])
        s1, s2 = p(3, 4), p(3, 4)
        cases["stack"] = (lambda: nd.pow_const(nd.stack([s1, s2], axis=1), 2.0).sum(),
                          [s1, s2])
        tk = p(5, 3)
        cases["take_rows"] = (
            lambda: nd.pow_const(nd.take_rows(tk, [0, 2, 2, 4]), 2.0).sum(), [tk])
        gl = p(4, 6)
        cases["gather_labels"] = (
            lambda: nd.pow_const(nd.gather_labels(gl, [1, 0, 5, 3]), 2.0).sum(), [gl])
        rm = p(3, 4)
        cases["reduce_mean"] = (lambda: nd.pow_const(nd.reduce_mean(rm, axis=1), 2.0).sum(),
                                [rm])
        dr = p(3, 4)
        cases["dropout"] = (
            lambda: nd.dropout(dr, 0.4, np.random.default_rng(77), training=True).sum(),
            [dr])

        for name, (fn, leaves) in cases.items():
            assert_gradients_match(fn, leaves, rtol=rtol)
            checked += 1
    return checked
