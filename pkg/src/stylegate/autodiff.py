"""Dense NCHW tensors with reverse-mode automatic differentiation.

The engine is deliberately small: a Tensor wraps a numpy array, and every
differentiable operation that runs while a Tape is active appends one node
(op name, inputs, saved activations inside the backward closure) to that
tape. Nodes are appended in execution order, so the node list is already a
topological order and the backward pass is a single reverse sweep that
visits each node exactly once.

Conventions
-----------
* Activations and images are rank-4 ``(batch, channel, height, width)``.
* Convolution kernels are ``(out_ch, in_ch, kh, kw)``; transposed-convolution
  kernels are ``(in_ch, out_ch, kh, kw)``.
* Tensors are immutable values. Parameter updates overwrite ``.data`` only
  between tape lifetimes.
* float32 is the training precision, float64 the verification precision.
  Operations never mix the two.
* Reductions use numpy's fixed summation order, so identical inputs produce
  bit-identical outputs across runs.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GateIndexError, NonFiniteError, ShapeError, TapeError

_FLOAT_DTYPES = (np.float32, np.float64)

# Module-level switch: validate that every op result is finite. Cheap at desk
# scale; can be disabled for large inference runs.
_finite_checks = True


def set_finite_checks(enabled: bool) -> None:
    global _finite_checks
    _finite_checks = bool(enabled)


def finite_checks_enabled() -> bool:
    return _finite_checks


class Tensor:
    """Immutable dense array participating in differentiation when taped."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.array(data, dtype=dtype, copy=True)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if _finite_checks and not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor constructed with non-finite values")
        self.data = arr
        self.requires_grad = requires_grad

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal fast path: take ownership of a freshly computed array.
        t = object.__new__(cls)
        t.data = arr
        t.requires_grad = False
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.ndim != 0:
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def parameter(data, dtype=np.float32) -> Tensor:
    """A tensor that accumulates gradients whenever a tape is active."""
    return Tensor(data, dtype=dtype, requires_grad=True)


class _Node:
    # Holds a strong reference to the output tensor so ids stay unique for
    # the lifetime of the tape.
    __slots__ = ("op", "inputs", "out", "needs", "backward")

    def __init__(self, op, inputs, out, needs, backward):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.needs = needs
        self.backward = backward


class Tape:
    """Ordered record of executed ops; usable as a context manager."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        if popped is not self:
            raise TapeError("tape stack corrupted")
        return False


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _tracked(tape: Tape, t: Tensor) -> bool:
    return t.requires_grad or id(t) in tape._produced


def _finish(op: str, out_data: np.ndarray, inputs: tuple, backward) -> Tensor:
    """Wrap an op result and record it on the active tape if it needs grad.

    ``backward(dy) -> list[ndarray | None]`` returns one gradient per input;
    entries whose ``needs`` flag is False may be None and are skipped.
    """
    if _finite_checks and not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"op '{op}' produced non-finite values")
    out = Tensor._wrap(out_data)
    tape = _active_tape()
    if tape is not None:
        needs = tuple(_tracked(tape, t) for t in inputs)
        if any(needs):
            tape._produced.add(id(out))
            tape.nodes.append(_Node(op, inputs, out, needs, backward))
    return out


class Gradients:
    """Gradient map produced by backward(); keyed by tensor identity."""

    def __init__(self, grads: dict):
        self._grads = grads

    def get(self, t: Tensor):
        return self._grads.get(id(t))

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self.get(t)
        if g is None:
            raise KeyError("tensor has no gradient on this tape")
        return g

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads

    def __len__(self) -> int:
        return len(self._grads)


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Reverse sweep: gradients of a scalar loss w.r.t. tracked tensors."""
    if loss.data.ndim != 0:
        raise TapeError(f"loss must be scalar, got shape {loss.shape}")
    if id(loss) not in tape._produced:
        raise TapeError("loss is not on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    for node in reversed(tape.nodes):
        dy = grads.pop(id(node.out), None)
        if dy is None:
            continue
        contribs = node.backward(dy)
        dy_reused = False
        for inp, need, g in zip(node.inputs, node.needs, contribs):
            if not need or g is None:
                continue
            if g is dy:
                # A node may pass its upstream gradient through unchanged;
                # copy on the second use so accumulators never alias.
                if dy_reused:
                    g = dy.copy()
                dy_reused = True
            key = id(inp)
            acc = grads.get(key)
            if acc is None:
                grads[key] = g
            else:
                acc += g
    # What remains are leaves: parameters and other tracked inputs that were
    # never produced by a node on this tape.
    return Gradients(grads)


def _check_same_dtype(op: str, *tensors: Tensor) -> None:
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ShapeError(f"op '{op}' got mixed dtypes {dt} and {t.data.dtype}")


# ---------------------------------------------------------------------------
# element-wise arithmetic and reductions
# ---------------------------------------------------------------------------


def _check_equal_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"op '{op}' needs equal shapes, got {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise sum of equal-shape tensors."""
    _check_equal_shapes("add", a, b)
    _check_same_dtype("add", a, b)
    return _finish("add", a.data + b.data, (a, b), lambda dy: [dy, dy])


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise difference of equal-shape tensors."""
    _check_equal_shapes("sub", a, b)
    _check_same_dtype("sub", a, b)
    return _finish("sub", a.data - b.data, (a, b), lambda dy: [dy, -dy])


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise product of equal-shape tensors."""
    _check_equal_shapes("mul", a, b)
    _check_same_dtype("mul", a, b)
    ad, bd = a.data, b.data
    return _finish("mul", ad * bd, (a, b), lambda dy: [dy * bd, dy * ad])


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply every element by the python scalar ``c``."""
    c = float(c)
    out = x.data * x.data.dtype.type(c)
    return _finish("scale", out, (x,), lambda dy: [dy * x.data.dtype.type(c)])


def add_scalar(x: Tensor, c: float) -> Tensor:
    """Add the python scalar ``c`` to every element."""
    c = float(c)
    out = x.data + x.data.dtype.type(c)
    return _finish("add_scalar", out, (x,), lambda dy: [dy])


def absolute(x: Tensor) -> Tensor:
    """|x| with subgradient sign(x), 0 at ties."""
    xd = x.data
    return _finish("abs", np.abs(xd), (x,), lambda dy: [dy * np.sign(xd)])


def sqrt(x: Tensor) -> Tensor:
    """Element-wise square root; caller keeps inputs strictly positive."""
    r = np.sqrt(x.data)
    return _finish("sqrt", r, (x,), lambda dy: [dy * (0.5 / r)])


def reduce(x: Tensor, kind: str) -> Tensor:
    """Reduce all elements to a scalar tensor; kind is 'mean' or 'sum'."""
    if kind == "mean":
        return mean(x)
    if kind == "sum":
        return tensor_sum(x)
    raise ShapeError(f"unknown reduce kind '{kind}'")


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = x.data.mean(dtype=x.data.dtype)

    def bwd(dy):
        return [np.full_like(x.data, dy / n)]

    return _finish("mean", np.asarray(out), (x,), bwd)


def tensor_sum(x: Tensor) -> Tensor:
    out = x.data.sum(dtype=x.data.dtype)

    def bwd(dy):
        return [np.full_like(x.data, dy)]

    return _finish("sum", np.asarray(out), (x,), bwd)


def spatial_mean(x: Tensor) -> Tensor:
    """Global average pool: (N, C, H, W) -> (N, C)."""
    if x.data.ndim != 4:
        raise ShapeError(f"spatial_mean needs rank 4, got shape {x.shape}")
    n_sp = x.shape[2] * x.shape[3]
    out = x.data.mean(axis=(2, 3), dtype=x.data.dtype)

    def bwd(dy):
        g = np.broadcast_to((dy / n_sp)[:, :, None, None], x.shape)
        return [np.ascontiguousarray(g)]

    return _finish("spatial_mean", out, (x,), bwd)


def crop2d(x: Tensor, rows: tuple[int, int], cols: tuple[int, int]) -> Tensor:
    """Slice the two spatial axes of a rank-4 tensor; scatter-add backward."""
    if x.data.ndim != 4:
        raise ShapeError(f"crop2d needs rank 4, got shape {x.shape}")
    r0, r1 = rows
    c0, c1 = cols
    out = x.data[:, :, r0:r1, c0:c1].copy()

    def bwd(dy):
        g = np.zeros_like(x.data)
        g[:, :, r0:r1, c0:c1] = dy
        return [g]

    return _finish("crop2d", out, (x,), bwd)


def detach(x: Tensor) -> Tensor:
    """Copy of x that no tape will follow backwards."""
    return Tensor._wrap(x.data.copy())


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0  # subgradient 0 at the kink
    return _finish("relu", np.where(mask, x.data, x.data.dtype.type(0)), (x,), lambda dy: [dy * mask])


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    s = x.data.dtype.type(slope)
    mask = x.data > 0
    factor = np.where(mask, x.data.dtype.type(1), s)
    return _finish("leaky_relu", x.data * factor, (x,), lambda dy: [dy * factor])


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _finish("tanh", t, (x,), lambda dy: [dy * (1 - t * t)])


def activation(x: Tensor, kind: str) -> Tensor:
    """Dispatch on kind: 'relu', 'leaky_relu' (slope 0.2), or 'tanh'."""
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, 0.2)
    if kind == "tanh":
        return tanh(x)
    raise ShapeError(f"unknown activation kind '{kind}'")


# ---------------------------------------------------------------------------
# padding helpers (numpy level)
# ---------------------------------------------------------------------------


def _reflect_index(n: int, p: int) -> np.ndarray:
    # Mirror without repeating the edge sample; valid for p <= n - 1.
    idx = np.abs(np.arange(-p, n + p))
    return (n - 1) - np.abs((n - 1) - idx)


def _pad_forward(x: np.ndarray, mode: str, p: int) -> np.ndarray:
    if p == 0:
        return x
    if mode == "zero":
        return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    if mode == "reflect":
        h, w = x.shape[2], x.shape[3]
        if p > h - 1 or p > w - 1:
            raise ShapeError(f"reflect padding {p} too large for spatial extent {h}x{w}")
        iy = _reflect_index(h, p)
        ix = _reflect_index(w, p)
        return np.ascontiguousarray(x[:, :, iy[:, None], ix[None, :]])
    raise ShapeError(f"unknown padding mode '{mode}'")


def _pad_backward(dxp: np.ndarray, mode: str, p: int, hw: tuple[int, int]) -> np.ndarray:
    if p == 0:
        return dxp
    h, w = hw
    if mode == "zero":
        return np.ascontiguousarray(dxp[:, :, p:p + h, p:p + w])
    # reflect: fold each padded row/col back onto its source index
    iy = _reflect_index(h, p)
    ix = _reflect_index(w, p)
    t = dxp.transpose(2, 0, 1, 3)
    acc = np.zeros((h,) + t.shape[1:], dtype=dxp.dtype)
    np.add.at(acc, iy, t)
    t2 = acc.transpose(3, 1, 2, 0)
    acc2 = np.zeros((w,) + t2.shape[1:], dtype=dxp.dtype)
    np.add.at(acc2, ix, t2)
    return np.ascontiguousarray(acc2.transpose(1, 2, 3, 0))


# ---------------------------------------------------------------------------
# convolution kernels (numpy level)
# ---------------------------------------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int):
    # xp: padded input (N, C, Hp, Wp) -> cols (N*Ho*Wo, C*kh*kw)
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    n, c, ho, wo = windows.shape[:4]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(n * ho * wo, c * kh * kw), (ho, wo)


def _col2im(dcols: np.ndarray, xp_shape, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c, hp, wp = xp_shape
    d = dcols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    dxp = np.zeros(xp_shape, dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride] += d[:, :, i, j]
    return dxp


def _corr_forward(cols: np.ndarray, w: np.ndarray, shape4):
    # cols (M, C*kh*kw) x kernel (O, C, kh, kw) -> (N, O, Ho, Wo)
    n, o, ho, wo = shape4
    wmat = w.reshape(o, -1)
    y = cols @ wmat.T
    return np.ascontiguousarray(y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))


def _out_extent(n_in: int, k: int, p: int, s: int) -> int:
    return (n_in + 2 * p - k) // s + 1


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1,
           padding: tuple[str, int] = ("zero", 0)) -> Tensor:
    """2-D cross-correlation plus bias.

    Args:
        x: input (N, C, H, W).
        kernel: (O, C, kh, kw).
        bias: (O,).
        stride: 1 or 2.
        padding: (mode, amount) with mode 'zero' or 'reflect'.

    Output spatial extents follow ``(H + 2p - k) // s + 1``; a non-positive
    extent (padding insufficient for the kernel) is an error, never clipped.
    """
    mode, p = padding
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be rank 4, got shape {x.shape}")
    if kernel.data.ndim != 4:
        raise ShapeError(f"conv2d kernel must be rank 4, got shape {kernel.shape}")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d stride must be 1 or 2, got {stride}")
    n, c, h, w_in = x.shape
    o, ck, kh, kw = kernel.shape
    if ck != c:
        raise ShapeError(f"conv2d kernel expects {ck} input channels, input has {c}")
    if bias.shape != (o,):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match {o} output channels")
    _check_same_dtype("conv2d", x, kernel, bias)
    ho = _out_extent(h, kh, p, stride)
    wo = _out_extent(w_in, kw, p, stride)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d output extent {ho}x{wo} invalid: kernel {kh}x{kw} stride {stride} "
            f"padding {p} on input {h}x{w_in}")

    xp = _pad_forward(x.data, mode, p)
    cols, _ = _im2col(xp, kh, kw, stride)
    y = _corr_forward(cols, kernel.data, (n, o, ho, wo))
    y += bias.data[None, :, None, None]

    kd = kernel.data
    xp_shape = xp.shape

    def bwd(dy):
        dy_mat = dy.transpose(0, 2, 3, 1).reshape(-1, o)
        dw = (dy_mat.T @ cols).reshape(kd.shape)
        db = dy.sum(axis=(0, 2, 3))
        dcols = dy_mat @ kd.reshape(o, -1)
        dxp = _col2im(dcols, xp_shape, kh, kw, stride, ho, wo)
        dx = _pad_backward(dxp, mode, p, (h, w_in))
        return [dx, dw, db]

    return _finish("conv2d", y, (x, kernel, bias), bwd)


def conv2d_transpose(x: Tensor, kernel: Tensor, bias: Tensor, up_factor: int = 2) -> Tensor:
    """Fractionally-strided convolution doubling the spatial extents.

    The exact adjoint of ``conv2d(stride=2, padding=('zero', 1))`` with a 3x3
    kernel, with geometry pinned so the output is exactly (2H, 2W). Kernel
    layout is (in_ch, out_ch, 3, 3).
    """
    if up_factor != 2:
        raise ShapeError(f"conv2d_transpose supports up_factor 2 only, got {up_factor}")
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d_transpose input must be rank 4, got shape {x.shape}")
    n, c, h, w_in = x.shape
    ck, o, kh, kw = kernel.shape
    if (kh, kw) != (3, 3):
        raise ShapeError(f"conv2d_transpose kernel must be 3x3, got {kh}x{kw}")
    if ck != c:
        raise ShapeError(f"conv2d_transpose kernel expects {ck} input channels, input has {c}")
    if bias.shape != (o,):
        raise ShapeError(f"conv2d_transpose bias shape {bias.shape} does not match {o} output channels")
    _check_same_dtype("conv2d_transpose", x, kernel, bias)

    # Adjoint of: z (N, O, 2H, 2W) --pad 1--> valid corr stride 2 --> (N, C, H, W)
    ho, wo = 2 * h, 2 * w_in
    padded_shape = (n, o, ho + 2, wo + 2)
    kd = kernel.data

    x_mat = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
    dcols = x_mat @ kd.reshape(c, -1)
    yp = _col2im(dcols, padded_shape, 3, 3, 2, h, w_in)
    y = np.ascontiguousarray(yp[:, :, 1:1 + ho, 1:1 + wo])
    y += bias.data[None, :, None, None]

    def bwd(dy):
        gp = _pad_forward(dy, "zero", 1)
        gcols, _ = _im2col(gp, 3, 3, 2)
        dx = _corr_forward(gcols, kd, (n, c, h, w_in))
        dy_mat = x_mat  # input plays the adjoint role of the upstream grad
        dw = (dy_mat.T @ gcols).reshape(kd.shape)
        db = dy.sum(axis=(0, 2, 3))
        return [dx, dw, db]

    return _finish("conv2d_transpose", y, (x, kernel, bias), bwd)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-(sample, channel) spatial standardization with affine terms."""
    if x.data.ndim != 4:
        raise ShapeError(f"instance_norm input must be rank 4, got shape {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"instance_norm affine shapes {gamma.shape}/{beta.shape} do not match {c} channels")
    if eps <= 0:
        raise ShapeError("instance_norm eps must be positive")
    _check_same_dtype("instance_norm", x, gamma, beta)
    dt = x.data.dtype
    mu = x.data.mean(axis=(2, 3), keepdims=True, dtype=dt)
    var = x.data.var(axis=(2, 3), keepdims=True, dtype=dt)
    inv = 1.0 / np.sqrt(var + dt.type(eps))
    xhat = (x.data - mu) * inv
    y = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    gd = gamma.data

    def bwd(dy):
        dbeta = dy.sum(axis=(0, 2, 3))
        dgamma = (dy * xhat).sum(axis=(0, 2, 3))
        dxhat = dy * gd[None, :, None, None]
        m1 = dxhat.mean(axis=(2, 3), keepdims=True)
        m2 = (dxhat * xhat).mean(axis=(2, 3), keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return [dx, dgamma, dbeta]

    return _finish("instance_norm", y, (x, gamma, beta), bwd)


def softmax_cross_entropy(logits: Tensor, target_class: int) -> Tensor:
    """-log softmax(logits)[target], stabilized by max subtraction.

    Accepts a (K,) vector or an (N, K) batch (same target per row, batch
    mean). K must be at least 2.
    """
    ld = logits.data
    if ld.ndim == 1:
        ld2 = ld[None, :]
    elif ld.ndim == 2:
        ld2 = ld
    else:
        raise ShapeError(f"softmax_cross_entropy needs (K,) or (N, K) logits, got {logits.shape}")
    n, k = ld2.shape
    if k < 2:
        raise ShapeError(f"softmax_cross_entropy needs K >= 2 classes, got {k}")
    if not (0 <= target_class < k):
        raise GateIndexError(f"target class {target_class} out of range [0, {k})")
    z = ld2 - ld2.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True, dtype=ld.dtype))
    logp = z - lse
    loss = np.asarray(-logp[:, target_class].mean(dtype=ld.dtype))

    def bwd(dy):
        p = np.exp(logp)
        p[:, target_class] -= 1
        g = p * (dy / n)
        return [g[0] if ld.ndim == 1 else g]

    return _finish("softmax_cross_entropy", loss, (logits,), bwd)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


class GradCheckReport:
    """Comparison of tape gradients against central finite differences.

    Relative error per element is |a - b| / max(|a|, |b|, 1).
    """

    def __init__(self, max_rel_error: float, n_elements: int, tol: float):
        self.max_rel_error = max_rel_error
        self.n_elements = n_elements
        self.tol = tol

    @property
    def ok(self) -> bool:
        return self.max_rel_error < self.tol

    def __repr__(self):
        verdict = "ok" if self.ok else "FAIL"
        return (f"GradCheckReport(max_rel_error={self.max_rel_error:.3e}, "
                f"tol={self.tol:.1e}, n={self.n_elements}, {verdict})")


def grad_check(f: Callable[..., Tensor], inputs: Sequence[np.ndarray],
               tol: float = 1e-4, step: float = 1e-3) -> GradCheckReport:
    """Check d f / d inputs against central differences at 64-bit precision.

    ``f`` maps parameter tensors to a scalar Tensor; ``inputs`` are the
    numpy starting points (cast to float64).
    """
    arrs = [np.array(a, dtype=np.float64) for a in inputs]
    params = [parameter(a, dtype=np.float64) for a in arrs]
    with Tape() as tape:
        out = f(*params)
    if out.data.ndim != 0:
        raise TapeError("grad_check requires a scalar-valued function")
    grads = backward(tape, out)

    max_err = 0.0
    n_elem = 0
    for pi, p in enumerate(params):
        analytic = grads.get(p)
        if analytic is None:
            analytic = np.zeros_like(arrs[pi])
        flat = arrs[pi].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            f_plus = f(*[Tensor(a, dtype=np.float64) for a in arrs]).item()
            flat[j] = orig - step
            f_minus = f(*[Tensor(a, dtype=np.float64) for a in arrs]).item()
            flat[j] = orig
            numeric = (f_plus - f_minus) / (2 * step)
            a = float(analytic.reshape(-1)[j])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            if err > max_err:
                max_err = err
            n_elem += 1
    return GradCheckReport(max_err, n_elem, tol)


def inner(a: Tensor | np.ndarray, b: Tensor | np.ndarray) -> float:
    """Flat inner product of two equal-shape arrays (test utility)."""
    ad = a.data if isinstance(a, Tensor) else a
    bd = b.data if isinstance(b, Tensor) else b
    if ad.shape != bd.shape:
        raise ShapeError(f"inner needs equal shapes, got {ad.shape} vs {bd.shape}")
    return float(np.dot(ad.reshape(-1), bd.reshape(-1)))


def gaussian_init(rng: np.random.Generator, shape, std: float = 0.02,
                  dtype=np.float32) -> np.ndarray:
    """Zero-mean Gaussian draw used for every convolution kernel."""
    return (rng.standard_normal(shape) * std).astype(dtype)
