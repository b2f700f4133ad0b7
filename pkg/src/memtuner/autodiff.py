"""Dense float64 tensors on a reverse-mode tape, plus the Adam optimizer.

Every op runs in float64, supports the batched shapes the sequence model
needs (leading batch/head axes where noted), and appends a backward rule to
a process-global tape. The tape is append-only during the forward pass and
freed by ``backward``. Evaluation is single-threaded and the recording
order is the evaluation order, so equal seeds give bit-identical runs.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "AutodiffError",
    "Tensor",
    "no_grad",
    "backward",
    "reset_tape",
    "tape_length",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "affine",
    "sigmoid",
    "tanh",
    "relu",
    "log",
    "clip",
    "sum_all",
    "mean_all",
    "layer_norm",
    "dropout",
    "causal_softmax_rows",
    "conv2d",
    "reshape",
    "transpose",
    "narrow",
    "even_rows",
    "interleave_rows",
    "softmax_cross_entropy",
    "Adam",
]


class AutodiffError(Exception):
    """Contract violation: bad shapes, non-scalar backward roots, NaN grads."""


_TAPE: list = []
_GRAD_DEPTH = 0  # >0 means gradient recording is suspended


class Tensor:
    """A dense float64 array with an optional same-shape gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad) and _GRAD_DEPTH == 0
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.item())

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, delta: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(delta)  # owned copy; delta may be a view
        else:
            self.grad += delta

    def accumulate_grad_owned(self, delta: np.ndarray) -> None:
        """Like accumulate_grad for rules whose delta is a fresh array."""
        if self.grad is None:
            self.grad = delta
        else:
            self.grad += delta

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class no_grad:
    """Context manager that suspends tape recording (nests safely)."""

    def __enter__(self):
        global _GRAD_DEPTH
        _GRAD_DEPTH += 1
        return self

    def __exit__(self, *exc):
        global _GRAD_DEPTH
        _GRAD_DEPTH -= 1
        return False


def tape_length() -> int:
    return len(_TAPE)


def reset_tape() -> None:
    _TAPE.clear()


def backward(loss: Tensor) -> None:
    """Populate .grad for every requires_grad tensor reachable from ``loss``.

    The loss must be scalar and recorded on the tape. Grads accumulate into
    existing buffers; callers zero them between optimization steps. The tape
    is freed afterwards.
    """
    if loss.data.size != 1:
        reset_tape()
        raise AutodiffError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        reset_tape()
        raise AutodiffError("loss is not connected to the tape (requires_grad=False)")
    loss.accumulate_grad(np.ones_like(loss.data))
    for out, rule in reversed(_TAPE):
        g = out.grad
        if g is not None:
            rule(g)
    reset_tape()


def _record(out: Tensor, rule) -> None:
    if out.requires_grad:
        _TAPE.append((out, rule))


def _coerce(x) -> tuple[np.ndarray, Tensor | None]:
    """Split an operand into (array, grad-receiving tensor or None)."""
    if isinstance(x, Tensor):
        return x.data, (x if x.requires_grad and _GRAD_DEPTH == 0 else None)
    return np.asarray(x, dtype=np.float64), None


def _needs_grad(*tensors) -> bool:
    return _GRAD_DEPTH == 0 and any(t is not None for t in tensors)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic


def matmul(a, b) -> Tensor:
    """Matrix product; operands are (..., m, k) @ (..., k, n) with broadcasting.

    The common stacked-times-shared-weight case (a batched, b 2-d) collapses
    the leading axes into a single GEMM in both directions.
    """
    A, at = _coerce(a)
    B, bt = _coerce(b)
    if A.ndim < 2 or B.ndim < 2:
        raise AutodiffError("matmul operands must have at least 2 dimensions")
    if A.shape[-1] != B.shape[-2]:
        raise AutodiffError(f"matmul inner extents differ: {A.shape} @ {B.shape}")
    stacked = A.ndim > 2 and B.ndim == 2
    if stacked:
        k, n = B.shape
        out_data = (A.reshape(-1, k) @ B).reshape(A.shape[:-1] + (n,))
    else:
        out_data = A @ B
    out = Tensor(out_data, requires_grad=_needs_grad(at, bt))

    def rule(g):
        if stacked:
            k, n = B.shape
            g2 = g.reshape(-1, n)
            if at is not None:
                at.accumulate_grad_owned((g2 @ B.T).reshape(A.shape))
            if bt is not None:
                bt.accumulate_grad_owned(A.reshape(-1, k).T @ g2)
            return
        if at is not None:
            at.accumulate_grad_owned(_unbroadcast(g @ np.swapaxes(B, -1, -2), A.shape))
        if bt is not None:
            bt.accumulate_grad_owned(_unbroadcast(np.swapaxes(A, -1, -2) @ g, B.shape))

    _record(out, rule)
    return out


def add(a, b) -> Tensor:
    A, at = _coerce(a)
    B, bt = _coerce(b)
    out = Tensor(A + B, requires_grad=_needs_grad(at, bt))

    def rule(g):
        if at is not None:
            at.accumulate_grad(_unbroadcast(g, A.shape))
        if bt is not None:
            bt.accumulate_grad(_unbroadcast(g, B.shape))

    _record(out, rule)
    return out


def sub(a, b) -> Tensor:
    A, at = _coerce(a)
    B, bt = _coerce(b)
    out = Tensor(A - B, requires_grad=_needs_grad(at, bt))

    def rule(g):
        if at is not None:
            at.accumulate_grad(_unbroadcast(g, A.shape))
        if bt is not None:
            bt.accumulate_grad(_unbroadcast(-g, B.shape))

    _record(out, rule)
    return out


def mul(a, b) -> Tensor:
    """Elementwise product with broadcasting; either side may be a constant."""
    A, at = _coerce(a)
    B, bt = _coerce(b)
    out = Tensor(A * B, requires_grad=_needs_grad(at, bt))

    def rule(g):
        if at is not None:
            at.accumulate_grad_owned(_unbroadcast(g * B, A.shape))
        if bt is not None:
            bt.accumulate_grad_owned(_unbroadcast(g * A, B.shape))

    _record(out, rule)
    return out


def affine(x, alpha: float, beta: float) -> Tensor:
    """alpha * x + beta, elementwise with scalar constants."""
    X, xt = _coerce(x)
    out = Tensor(alpha * X + beta, requires_grad=_needs_grad(xt))

    def rule(g):
        xt.accumulate_grad_owned(alpha * g)

    _record(out, rule)
    return out


def scale(x, c: float) -> Tensor:
    return affine(x, c, 0.0)


# ---------------------------------------------------------------------------
# activations and pointwise functions


def sigmoid(x) -> Tensor:
    X, xt = _coerce(x)
    z = np.exp(-np.abs(X))
    s = np.where(X >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    out = Tensor(s, requires_grad=_needs_grad(xt))

    def rule(g):
        xt.accumulate_grad_owned(g * s * (1.0 - s))

    _record(out, rule)
    return out


def tanh(x) -> Tensor:
    X, xt = _coerce(x)
    t = np.tanh(X)
    out = Tensor(t, requires_grad=_needs_grad(xt))

    def rule(g):
        xt.accumulate_grad_owned(g * (1.0 - t * t))

    _record(out, rule)
    return out


def relu(x) -> Tensor:
    X, xt = _coerce(x)
    out = Tensor(np.maximum(X, 0.0), requires_grad=_needs_grad(xt))

    def rule(g):
        xt.accumulate_grad_owned(g * (X > 0))

    _record(out, rule)
    return out


def log(x) -> Tensor:
    X, xt = _coerce(x)
    out = Tensor(np.log(X), requires_grad=_needs_grad(xt))

    def rule(g):
        xt.accumulate_grad_owned(g / X)

    _record(out, rule)
    return out


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient is passed through strictly inside the range."""
    X, xt = _coerce(x)
    out = Tensor(np.clip(X, lo, hi), requires_grad=_needs_grad(xt))

    def rule(g):
        xt.accumulate_grad_owned(g * ((X > lo) & (X < hi)))

    _record(out, rule)
    return out


def sum_all(x) -> Tensor:
    X, xt = _coerce(x)
    out = Tensor(X.sum(), requires_grad=_needs_grad(xt))

    def rule(g):
        xt.accumulate_grad(np.broadcast_to(g, X.shape))

    _record(out, rule)
    return out


def mean_all(x) -> Tensor:
    X, _ = _coerce(x)
    return scale(sum_all(x), 1.0 / X.size)


# ---------------------------------------------------------------------------
# normalization, dropout


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    X, xt = _coerce(x)
    G, gt = _coerce(gamma)
    B, bt = _coerce(beta)
    mu = X.mean(axis=-1, keepdims=True)
    var = X.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (X - mu) * inv
    out = Tensor(G * xhat + B, requires_grad=_needs_grad(xt, gt, bt))

    def rule(g):
        if gt is not None:
            gt.accumulate_grad(_unbroadcast(g * xhat, G.shape))
        if bt is not None:
            bt.accumulate_grad(_unbroadcast(g, B.shape))
        if xt is not None:
            gh = g * G
            m1 = gh.mean(axis=-1, keepdims=True)
            m2 = (gh * xhat).mean(axis=-1, keepdims=True)
            xt.accumulate_grad_owned((gh - m1 - xhat * m2) * inv)

    _record(out, rule)
    return out


def dropout(x, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Zero each element with probability p and rescale survivors by 1/(1-p).

    Eval mode (train=False) and p=0 are exact identities and do not consume
    the rng stream.
    """
    if not 0.0 <= p < 1.0:
        raise AutodiffError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x if isinstance(x, Tensor) else Tensor(x)
    if rng is None:
        raise AutodiffError("dropout in train mode requires an rng")
    X, xt = _coerce(x)
    keep = (rng.random(X.shape) >= p) / (1.0 - p)
    out = Tensor(X * keep, requires_grad=_needs_grad(xt))

    def rule(g):
        xt.accumulate_grad_owned(g * keep)

    _record(out, rule)
    return out


# ---------------------------------------------------------------------------
# attention softmax


def causal_softmax_rows(logits) -> Tensor:
    """Row softmax of square (..., n, n) logits with a strict upper-triangle mask.

    Entries with column > row are exactly zero; each row sums to 1 over the
    surviving columns. Stable via per-row max subtraction.
    """
    X, xt = _coerce(logits)
    n = X.shape[-1]
    if X.ndim < 2 or X.shape[-2] != n:
        raise AutodiffError(f"causal softmax expects square trailing dims, got {X.shape}")
    allowed = np.tril(np.ones((n, n), dtype=bool))
    masked = np.where(allowed, X, -np.inf)
    m = masked.max(axis=-1, keepdims=True)
    e = np.exp(masked - m)
    e[..., ~allowed] = 0.0
    A = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(A, requires_grad=_needs_grad(xt))

    def rule(g):
        dot = (g * A).sum(axis=-1, keepdims=True)
        xt.accumulate_grad_owned(A * (g - dot))

    _record(out, rule)
    return out


# ---------------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c, _, _ = xp.shape
    s0, s1, s2, s3 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, oh, ow, kh, kw),
        strides=(s0, s1, s2 * stride, s3 * stride, s2, s3),
        writeable=False,
    )
    # (n, oh, ow, c, kh, kw) contiguous copy for the GEMM
    return np.ascontiguousarray(view.transpose(0, 2, 3, 1, 4, 5))


def conv2d(x, w, b, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (N, Cin, H, W) (or unbatched (Cin, H, W)) inputs.

    Kernel w is (Cout, Cin, K, K); output spatial extent is
    floor((H + 2*padding - K) / stride) + 1 and must be positive.
    """
    X, xt = _coerce(x)
    W, wt = _coerce(w)
    B, bt = _coerce(b)
    unbatched = X.ndim == 3
    if unbatched:
        X = X[None]
    if X.ndim != 4 or W.ndim != 4:
        raise AutodiffError(f"conv2d expects 4-d input/kernel, got {X.shape} / {W.shape}")
    n, cin, h, wdt = X.shape
    cout, cin_w, kh, kw = W.shape
    if cin != cin_w:
        raise AutodiffError(f"conv2d channel mismatch: input {cin}, kernel {cin_w}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wdt + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise AutodiffError(f"conv2d output extent is non-positive: ({oh}, {ow})")

    xp = np.pad(X, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else X
    cols = _im2col(xp, kh, kw, stride, oh, ow).reshape(n * oh * ow, cin * kh * kw)
    wmat = W.reshape(cout, -1)
    y = (cols @ wmat.T + B).reshape(n, oh, ow, cout).transpose(0, 3, 1, 2)
    y = np.ascontiguousarray(y)
    out = Tensor(y[0] if unbatched else y, requires_grad=_needs_grad(xt, wt, bt))

    def rule(g):
        if unbatched:
            g = g[None]
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, cout)
        if bt is not None:
            bt.accumulate_grad_owned(g2.sum(axis=0))
        if wt is not None:
            wt.accumulate_grad_owned((g2.T @ cols).reshape(W.shape))
        if xt is not None:
            dcols = (g2 @ wmat).reshape(n, oh, ow, cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
            ph, pw = h + 2 * padding, wdt + 2 * padding
            dxp = np.zeros((n, cin, ph, pw))
            for ki in range(kh):
                for kj in range(kw):
                    dxp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += dcols[:, :, ki, kj]
            dx = dxp[:, :, padding : ph - padding, padding : pw - padding] if padding else dxp
            xt.accumulate_grad_owned(dx[0] if unbatched else dx)

    _record(out, rule)
    return out


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x, shape) -> Tensor:
    X, xt = _coerce(x)
    out = Tensor(X.reshape(shape), requires_grad=_needs_grad(xt))

    def rule(g):
        xt.accumulate_grad(g.reshape(X.shape))

    _record(out, rule)
    return out


def transpose(x, axes) -> Tensor:
    X, xt = _coerce(x)
    out = Tensor(np.ascontiguousarray(X.transpose(axes)), requires_grad=_needs_grad(xt))
    inverse = np.argsort(axes)

    def rule(g):
        xt.accumulate_grad(g.transpose(inverse))

    _record(out, rule)
    return out


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    X, xt = _coerce(x)
    index = [slice(None)] * X.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = Tensor(np.ascontiguousarray(X[index]), requires_grad=_needs_grad(xt))

    def rule(g):
        full = np.zeros_like(X)
        full[index] = g
        xt.accumulate_grad_owned(full)

    _record(out, rule)
    return out


def even_rows(x) -> Tensor:
    """Rows 0, 2, 4, ... along the second-to-last axis."""
    X, xt = _coerce(x)
    out = Tensor(np.ascontiguousarray(X[..., 0::2, :]), requires_grad=_needs_grad(xt))

    def rule(g):
        full = np.zeros_like(X)
        full[..., 0::2, :] = g
        xt.accumulate_grad_owned(full)

    _record(out, rule)
    return out


def interleave_rows(a, b) -> Tensor:
    """Alternate rows of a and b along the second-to-last axis: a0,b0,a1,b1,...

    b may have one row fewer than a, yielding an odd-length result that ends
    on a's final row.
    """
    A, at = _coerce(a)
    B, bt = _coerce(b)
    ta, tb = A.shape[-2], B.shape[-2]
    if tb not in (ta, ta - 1):
        raise AutodiffError(f"interleave_rows needs {ta} or {ta - 1} rows in b, got {tb}")
    shape = A.shape[:-2] + (ta + tb, A.shape[-1])
    y = np.empty(shape)
    y[..., 0::2, :] = A
    y[..., 1::2, :] = B
    out = Tensor(y, requires_grad=_needs_grad(at, bt))

    def rule(g):
        if at is not None:
            at.accumulate_grad(g[..., 0::2, :])
        if bt is not None:
            bt.accumulate_grad(g[..., 1::2, :])

    _record(out, rule)
    return out


# ---------------------------------------------------------------------------
# fused classification loss


def softmax_cross_entropy(logits, labels: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean negative log softmax probability of the labels.

    logits are (..., A); labels are integer (...). With a boolean mask the
    mean runs over masked-true positions only.
    """
    X, xt = _coerce(logits)
    labels = np.asarray(labels)
    m = X.max(axis=-1, keepdims=True)
    e = np.exp(X - m)
    z = e.sum(axis=-1, keepdims=True)
    logp = X - m - np.log(z)
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    if mask is None:
        count = picked.size
        total = -picked.sum()
    else:
        mask = np.asarray(mask, dtype=bool)
        count = int(mask.sum())
        if count == 0:
            raise AutodiffError("softmax_cross_entropy mask selects no positions")
        total = -picked[mask].sum()
    out = Tensor(total / count, requires_grad=_needs_grad(xt))

    def rule(g):
        p = e / z
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
        d = (p - onehot) * (float(g) / count)
        if mask is not None:
            d *= mask[..., None]
        xt.accumulate_grad_owned(d)

    _record(out, rule)
    return out


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with bias correction over an ordered set of named parameters.

    Defaults follow the training recipe: lr 1e-4, betas (0.9, 0.999),
    eps 1e-8, weight decay 0. A non-finite gradient aborts the step (no
    parameter or state mutation) with a diagnostic naming the parameter.
    """

    def __init__(self, params, lr: float = 1e-4, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        if isinstance(params, dict):
            self._params = list(params.items())
        else:
            self._params = [(f"param{i}", p) for i, p in enumerate(params)]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self._params}
        self.v = {name: np.zeros_like(p.data) for name, p in self._params}

    def step(self) -> None:
        for name, p in self._params:
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise AutodiffError(f"non-finite gradient for parameter {name!r}; step {self.t + 1} aborted")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self._params:
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self._params:
            p.grad = None
