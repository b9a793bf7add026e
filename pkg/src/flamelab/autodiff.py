"""Minimal reverse-mode differentiation over the primitives the models use.

Values are numpy arrays (real activations, complex spectra). Every primitive
appends one node to a Tape, so the node list is topologically ordered by
construction and one reverse sweep of `backward` visits each node exactly
once. Complex-valued nodes store gradients with the convention
g = dL/d(Re) + 1j * dL/d(Im), which makes the adjoint of a complex-linear map
its conjugate transpose.

The real-FFT pair needs care because the Hermitian half-spectrum stores
interior modes once: the adjoint of `fft_forward` is the inverse transform of
the gradient with interior modes halved (times p^d), and the adjoint of
`fft_inverse` is the forward transform with interior modes doubled (over p^d).
"""

from __future__ import annotations

import math

import numpy as np
import scipy.fft as sfft

from .errors import GraphError

__all__ = [
    "Tape",
    "Var",
    "backward",
    "gradient_check",
    "add",
    "scale",
    "affine_pointwise",
    "activation",
    "fft_forward",
    "fft_inverse",
    "spectral_multiply",
    "conv_periodic",
    "maxpool2",
    "upsample2",
    "concat_channels",
    "layer_norm",
    "steps_to_axis",
    "axis_to_steps",
    "concat_batch",
    "relative_l2_mean",
]

_GELU_C = math.sqrt(2.0 / math.pi)


class Var:
    """One tape node: a value plus what backward needs to reach its parents."""

    __slots__ = ("tape", "index", "value", "op", "parents", "ctx", "requires_grad")

    def __init__(self, tape, value, op, parents, ctx, requires_grad):
        self.tape = tape
        self.index = len(tape.nodes)
        self.value = value
        self.op = op
        self.parents = parents
        self.ctx = ctx
        self.requires_grad = requires_grad
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Recorded computation graph; nodes are appended in evaluation order."""

    def __init__(self):
        self.nodes: list[Var] = []

    def leaf(self, value, requires_grad: bool = False) -> Var:
        return Var(self, np.asarray(value), "leaf", (), None, requires_grad)

    def decision_signature(self):
        """Snapshot of every non-smooth branch taken (relu signs, pool argmax).

        Comparing signatures of two forward passes detects whether a kink of a
        piecewise-linear primitive was crossed, which invalidates a central
        finite-difference probe.
        """
        sig = []
        for n in self.nodes:
            if n.op == "relu":
                sig.append(n.value > 0)
            elif n.op == "maxpool2":
                sig.append(n.ctx)
        return sig


def _node(inputs, value, op, ctx=None) -> Var:
    tape = None
    req = False
    for v in inputs:
        if isinstance(v, Var):
            if tape is None:
                tape = v.tape
            elif v.tape is not tape:
                raise GraphError(f"{op}: inputs come from different tapes")
            req = req or v.requires_grad
    if tape is None:
        raise GraphError(f"{op}: at least one input must be a Var")
    parents = tuple(v for v in inputs if isinstance(v, Var))
    return Var(tape, value, op, parents, ctx, req)


def _check_same_shape(op, a, b):
    if a.value.shape != b.value.shape:
        raise GraphError(
            f"{op}: shape mismatch between node {a.index} {a.value.shape} "
            f"and node {b.index} {b.value.shape}"
        )


# ---------------------------------------------------------------------------
# pointwise / arithmetic

def add(a: Var, b: Var) -> Var:
    _check_same_shape("add", a, b)
    return _node((a, b), a.value + b.value, "add")


def scale(a: Var, s: float) -> Var:
    return _node((a,), a.value * s, "scale", ctx=s)


def affine_pointwise(x: Var, w: Var, b: Var | None) -> Var:
    """Channel-mixing affine map applied at every grid point.

    x: (B, c_in, *spatial); w: (c_out, c_in); b: (c_out,) or None.
    """
    xv = x.value
    flat = xv.reshape(xv.shape[0], xv.shape[1], -1)
    out = np.matmul(w.value, flat)
    if b is not None:
        out = out + b.value[:, None]
    out = out.reshape(xv.shape[0], w.value.shape[0], *xv.shape[2:])
    inputs = (x, w) if b is None else (x, w, b)
    return _node(inputs, out, "affine", ctx=None)


def activation(x: Var, kind: str) -> Var:
    if kind == "relu":
        return _node((x,), np.maximum(x.value, 0), "relu")
    if kind == "gelu":
        xv = x.value
        t = np.tanh(_GELU_C * (xv + 0.044715 * xv**3))
        return _node((x,), 0.5 * xv * (1.0 + t), "gelu", ctx=t)
    if kind == "identity":
        return x
    raise GraphError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# transforms and the truncated spectral multiply

def _half_weights(half_len: int, full_len: int, ndim_pad: int):
    """Per-mode multiplicity of the Hermitian storage along the rfft axis."""
    w = np.full(half_len, 2.0)
    w[0] = 1.0
    if full_len % 2 == 0:
        w[-1] = 1.0
    return w.reshape((half_len,) + (1,) * ndim_pad) if ndim_pad else w


def fft_forward(x: Var, d: int) -> Var:
    """Real-to-complex transform over the last d axes (unnormalized)."""
    axes = tuple(range(-d, 0))
    ctx = (axes, x.value.shape[-d:])
    return _node((x,), sfft.rfftn(x.value, axes=axes), "rfft", ctx=ctx)


def fft_inverse(X: Var, d: int, spatial: tuple[int, ...]) -> Var:
    """Complex-to-real inverse transform (1/p^d normalization)."""
    axes = tuple(range(-d, 0))
    return _node((X,), sfft.irfftn(X.value, s=spatial, axes=axes), "irfft", ctx=(axes, spatial))


def retained_indices(axis_len: int, kmax: int, is_rfft_axis: bool) -> np.ndarray:
    """Stored-array indices of modes with |kappa| < kmax along one axis."""
    if is_rfft_axis:
        return np.arange(min(kmax, axis_len))
    if 2 * kmax - 1 >= axis_len:
        return np.arange(axis_len)
    return np.concatenate([np.arange(kmax), np.arange(axis_len - kmax + 1, axis_len)])


def _gather(X: np.ndarray, idxs: list[np.ndarray]) -> np.ndarray:
    if len(idxs) == 1:
        n = idxs[0].shape[0]
        if np.array_equal(idxs[0], np.arange(n)):
            return np.ascontiguousarray(X[..., :n])
        return X[..., idxs[0]]
    return X[..., idxs[0][:, None], idxs[1][None, :]]


def spectral_multiply(X: Var, R: Var, idxs: list[np.ndarray]) -> Var:
    """Per-mode channel mixing on retained modes, zero elsewhere.

    X: (B, c_in, *half_spatial) complex; R: (*modes, c_out, c_in) complex where
    modes matches the retained index grid. The adjoint w.r.t. X multiplies by
    the conjugate transpose of R on the retained modes and is zero elsewhere.
    """
    Xt = _gather(X.value, idxs)
    nm = len(idxs)
    # (B, c, *m) -> (*m, B, c) so the per-mode matmul batches over modes
    perm = tuple(range(2, 2 + nm)) + (0, 1)
    Zt = np.transpose(Xt, perm)
    out_t = np.matmul(Zt, np.swapaxes(R.value, -1, -2))
    inv = tuple(range(nm, nm + 2)) + tuple(range(nm))
    out_gathered = np.transpose(out_t, inv)
    out = np.zeros(X.value.shape[:1] + (R.value.shape[-2],) + X.value.shape[2:], dtype=X.value.dtype)
    if nm == 1:
        out[..., idxs[0]] = out_gathered
    else:
        out[..., idxs[0][:, None], idxs[1][None, :]] = out_gathered
    return _node((X, R), out, "specmul", ctx=(idxs, Zt))


# ---------------------------------------------------------------------------
# convolutional primitives (1D spatial)

def _im2col(xv: np.ndarray, k: int) -> np.ndarray:
    """Circularly padded sliding windows: (B, c, p) -> (B, p, c*k)."""
    B, c, p = xv.shape
    half = k // 2
    pad = np.concatenate([xv[..., -half:], xv, xv[..., :half]], axis=-1) if half else xv
    s0, s1, s2 = pad.strides
    win = np.lib.stride_tricks.as_strided(pad, (B, c, p, k), (s0, s1, s2, s2))
    return win.transpose(0, 2, 1, 3).reshape(B, p, c * k)


def conv_periodic(x: Var, w: Var, b: Var | None) -> Var:
    """1D convolution with circular padding, stride 1, odd kernel.

    x: (B, c_in, p); w: (c_out, c_in, k); b: (c_out,) or None.
    """
    c_out, c_in, k = w.value.shape
    if k % 2 != 1:
        raise GraphError(f"conv_periodic: kernel size must be odd, got {k}")
    col = _im2col(x.value, k)
    out = np.matmul(col, w.value.reshape(c_out, c_in * k).T)
    if b is not None:
        out = out + b.value
    out = out.transpose(0, 2, 1)
    inputs = (x, w) if b is None else (x, w, b)
    return _node(inputs, np.ascontiguousarray(out), "conv", ctx=col)


def maxpool2(x: Var) -> Var:
    B, c, p = x.value.shape
    pairs = x.value.reshape(B, c, p // 2, 2)
    idx = pairs.argmax(axis=-1).astype(np.int8)
    return _node((x,), pairs.max(axis=-1), "maxpool2", ctx=idx)


def upsample2(x: Var) -> Var:
    return _node((x,), np.repeat(x.value, 2, axis=-1), "upsample2")


def concat_channels(a: Var, b: Var) -> Var:
    return _node((a, b), np.concatenate([a.value, b.value], axis=1), "concat",
                 ctx=a.value.shape[1])


def layer_norm(x: Var, g: Var, b: Var, eps: float = 1e-5) -> Var:
    """Normalize over the channel axis per grid point, learnable affine."""
    xv = x.value
    mu = xv.mean(axis=1, keepdims=True)
    var = xv.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mu) * inv
    gs = g.value.reshape(1, -1, *([1] * (xv.ndim - 2)))
    bs = b.value.reshape(1, -1, *([1] * (xv.ndim - 2)))
    return _node((x, g, b), gs * xhat + bs, "layernorm", ctx=(xhat, inv))


# ---------------------------------------------------------------------------
# sequence plumbing

def concat_batch(parts: list[Var]) -> Var:
    """Stack step outputs along the batch axis (step-major order)."""
    sizes = [v.value.shape[0] for v in parts]
    return _node(tuple(parts), np.concatenate([v.value for v in parts], axis=0),
                 "concat_batch", ctx=sizes)


def steps_to_axis(x: Var, n: int) -> Var:
    """(n*B, c, *sp) step-major -> (B, c, n, *sp) with step as a leading spatial axis."""
    v = x.value
    B = v.shape[0] // n
    out = v.reshape(n, B, *v.shape[1:])
    out = np.ascontiguousarray(np.moveaxis(out, 0, 2))
    return _node((x,), out, "steps_to_axis", ctx=n)


def axis_to_steps(x: Var) -> Var:
    """Inverse of steps_to_axis."""
    v = x.value
    out = np.moveaxis(v, 2, 0)
    return _node((x,), np.ascontiguousarray(out).reshape(-1, *v.shape[1:2], *v.shape[3:]),
                 "axis_to_steps", ctx=v.shape[2])


# ---------------------------------------------------------------------------
# loss

def relative_l2_mean(pred: Var, target: np.ndarray) -> Var:
    """Mean over samples of ||a_i - b_i|| / ||b_i||, reducing all but axis 0.

    The target is a constant. Norm accumulation happens in float64 regardless
    of the activation precision.
    """
    a = pred.value
    if a.shape != target.shape:
        raise GraphError(f"relative_l2_mean: {a.shape} vs target {target.shape}")
    diff = (a - target).reshape(a.shape[0], -1)
    flat_b = target.reshape(target.shape[0], -1)
    dnorm = np.sqrt(np.einsum("ij,ij->i", diff, diff, dtype=np.float64))
    bnorm = np.sqrt(np.einsum("ij,ij->i", flat_b, flat_b, dtype=np.float64))
    if np.any(bnorm == 0):
        raise ValueError("relative_l2_mean: target has zero norm")
    value = np.float64((dnorm / bnorm).mean())
    return _node((pred,), value, "rel_l2", ctx=(diff, dnorm, bnorm))


# ---------------------------------------------------------------------------
# backward rules

def _bw_add(node, g):
    return g, g


def _bw_scale(node, g):
    return (g * node.ctx,)


def _bw_affine(node, g):
    x, w = node.parents[0], node.parents[1]
    B = g.shape[0]
    gf = g.reshape(B, g.shape[1], -1)
    xf = x.value.reshape(B, x.value.shape[1], -1)
    gx = np.matmul(w.value.T, gf).reshape(x.value.shape)
    gw = np.tensordot(gf, xf, axes=([0, 2], [0, 2]))
    if len(node.parents) == 3:
        return gx, gw, gf.sum(axis=(0, 2))
    return gx, gw


def _bw_relu(node, g):
    return (g * (node.value > 0),)


def _bw_gelu(node, g):
    x = node.parents[0].value
    t = node.ctx
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)


def _bw_rfft(node, g):
    axes, spatial = node.ctx
    real_dtype = node.parents[0].value.dtype
    w_inv = (1.0 / _half_weights(g.shape[-1], spatial[-1], 0)).astype(real_dtype)
    scale_ = real_dtype.type(np.prod(spatial))
    return (sfft.irfftn(g * w_inv, s=spatial, axes=axes) * scale_,)


def _bw_irfft(node, g):
    axes, spatial = node.ctx
    G = sfft.rfftn(g, axes=axes)
    w = (_half_weights(G.shape[-1], spatial[-1], 0) / np.prod(spatial)).astype(g.dtype)
    G *= w
    return (G,)


def _bw_specmul(node, g):
    idxs, Zt = node.ctx
    X, R = node.parents
    nm = len(idxs)
    gt = _gather(g, idxs)
    perm = tuple(range(2, 2 + nm)) + (0, 1)
    Gt = np.transpose(gt, perm)  # (*m, B, c_out)
    # dX on retained modes: conj(R)^T applied per mode
    gZt = np.matmul(Gt, np.conj(R.value))  # (*m, B, c_in)
    inv = tuple(range(nm, nm + 2)) + tuple(range(nm))
    gX = np.zeros_like(X.value)
    gXt = np.transpose(gZt, inv)
    if nm == 1:
        gX[..., idxs[0]] = gXt
    else:
        gX[..., idxs[0][:, None], idxs[1][None, :]] = gXt
    gR = np.matmul(np.swapaxes(Gt, -1, -2), np.conj(Zt))
    return gX, gR


def _bw_conv(node, g):
    x, w = node.parents[0], node.parents[1]
    c_out, c_in, k = w.value.shape
    col = node.ctx  # (B, p, c_in*k)
    gf = g.transpose(0, 2, 1)  # (B, p, c_out)
    gw = np.tensordot(gf, col, axes=([0, 1], [0, 1])).reshape(c_out, c_in, k)
    # dX: correlate g with the kernel flipped and transposed, also circular
    w_t = np.ascontiguousarray(w.value[:, :, ::-1].transpose(1, 0, 2))
    gcol = _im2col(np.ascontiguousarray(g), k)
    gx = np.matmul(gcol, w_t.reshape(c_in, c_out * k).T).transpose(0, 2, 1)
    out = [np.ascontiguousarray(gx), gw]
    if len(node.parents) == 3:
        out.append(gf.sum(axis=(0, 1)))
    return tuple(out)


def _bw_maxpool2(node, g):
    idx = node.ctx
    B, c, q = g.shape
    gx = np.zeros((B, c, q, 2), dtype=g.dtype)
    np.put_along_axis(gx, idx[..., None].astype(np.intp), g[..., None], axis=-1)
    return (gx.reshape(B, c, 2 * q),)


def _bw_upsample2(node, g):
    B, c, p2 = g.shape
    return (g.reshape(B, c, p2 // 2, 2).sum(axis=-1),)


def _bw_concat(node, g):
    c0 = node.ctx
    return g[:, :c0], g[:, c0:]


def _bw_layernorm(node, g):
    x, gam, _ = node.parents
    xhat, inv = node.ctx
    c = x.value.shape[1]
    gs = gam.value.reshape(1, -1, *([1] * (x.value.ndim - 2)))
    gxhat = g * gs
    m1 = gxhat.mean(axis=1, keepdims=True)
    m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
    gx = inv * (gxhat - m1 - xhat * m2)
    red = (0,) + tuple(range(2, x.value.ndim))
    return gx, (g * xhat).sum(axis=red), g.sum(axis=red)


def _bw_concat_batch(node, g):
    sizes = node.ctx
    out = []
    off = 0
    for s in sizes:
        out.append(g[off:off + s])
        off += s
    return tuple(out)


def _bw_steps_to_axis(node, g):
    v = np.moveaxis(g, 2, 0)
    return (np.ascontiguousarray(v).reshape(node.parents[0].value.shape),)


def _bw_axis_to_steps(node, g):
    n = node.ctx
    B = g.shape[0] // n
    v = g.reshape(n, B, *g.shape[1:])
    return (np.ascontiguousarray(np.moveaxis(v, 0, 2)),)


def _bw_rel_l2(node, g):
    diff, dnorm, bnorm = node.ctx
    x = node.parents[0].value
    denom = np.where(dnorm > 0, dnorm, 1.0) * bnorm * diff.shape[0]
    gx = diff * (g / denom)[:, None]
    return (gx.reshape(x.shape).astype(x.dtype, copy=False),)


_BACKWARD = {
    "add": _bw_add,
    "scale": _bw_scale,
    "affine": _bw_affine,
    "relu": _bw_relu,
    "gelu": _bw_gelu,
    "rfft": _bw_rfft,
    "irfft": _bw_irfft,
    "specmul": _bw_specmul,
    "conv": _bw_conv,
    "maxpool2": _bw_maxpool2,
    "upsample2": _bw_upsample2,
    "concat": _bw_concat,
    "layernorm": _bw_layernorm,
    "concat_batch": _bw_concat_batch,
    "steps_to_axis": _bw_steps_to_axis,
    "axis_to_steps": _bw_axis_to_steps,
    "rel_l2": _bw_rel_l2,
}


def gradient_check(fn, theta: np.ndarray, eps: float = 1e-6, n_probes: int = 200,
                   seed: int = 0, max_attempts: int | None = None):
    """Compare analytic directional derivatives against central differences.

    `fn(theta, need_grad)` evaluates the scalar loss at the given flat
    parameters and returns (loss, grad_or_None, decision_signature). Probes
    whose +/- eps evaluations cross a kink of a piecewise-linear primitive
    (relu sign or pooling argmax change) are excluded and counted separately.
    Returns (max_rel_err, n_valid, n_excluded).
    """
    rng = np.random.default_rng(seed)
    _, grad, _ = fn(theta, True)
    max_attempts = max_attempts or 2 * n_probes
    worst = 0.0
    n_valid = n_excluded = attempts = 0
    while n_valid < n_probes and attempts < max_attempts:
        attempts += 1
        v = rng.standard_normal(theta.shape)
        v /= np.linalg.norm(v)
        lp, _, sig_p = fn(theta + eps * v, False)
        lm, _, sig_m = fn(theta - eps * v, False)
        if any(not np.array_equal(a, b) for a, b in zip(sig_p, sig_m)):
            n_excluded += 1
            continue
        numeric = (lp - lm) / (2.0 * eps)
        analytic = float(grad @ v)
        denom = max(abs(numeric), abs(analytic), 1e-10)
        worst = max(worst, abs(numeric - analytic) / denom)
        n_valid += 1
    return worst, n_valid, n_excluded


def backward(loss: Var, free_tape: bool = True) -> list[np.ndarray | None]:
    """Single reverse sweep; returns per-node gradients (None where unused).

    Gradients are accumulated additively when a node feeds several consumers,
    and only nodes on a path from a requires_grad leaf to the loss get storage.
    With free_tape (the default) intermediate activations, saved contexts and
    consumed gradients are released as the sweep passes them, so peak memory
    stays near the forward pass; the tape cannot be replayed afterwards.
    """
    if loss.value.ndim != 0 and loss.value.size != 1:
        raise GraphError("backward: loss node must be scalar-valued")
    tape = loss.tape
    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[loss.index] = np.ones_like(loss.value)
    for node in reversed(tape.nodes[: loss.index + 1]):
        g = grads[node.index]
        if g is None or node.op == "leaf":
            continue
        pgrads = _BACKWARD[node.op](node, g)
        for parent, pg in zip(node.parents, pgrads):
            if not parent.requires_grad or pg is None:
                continue
            if grads[parent.index] is None:
                grads[parent.index] = pg
            else:
                grads[parent.index] = grads[parent.index] + pg
        if free_tape:
            grads[node.index] = None
            node.ctx = None
            node.value = None
    return grads
