"""Reverse-mode automatic differentiation over numpy arrays.

Small tape-based engine in the micrograd style: each op builds a Tensor
holding its value, its parents, and a closure that routes the incoming
cotangent to the parents.  backward() walks the graph once in reverse
topological order.  Activations are (batch, channels, height, width)
arrays; parameters are float32 in production, but every op is dtype
generic so gradient checks can rebuild the whole graph in float64.

Layer set: 'same'/'valid' cross-correlation, stride-2 2x2 transposed
convolution, 2x2 max pooling, nearest upsampling, channel concat, relu,
sigmoid, additive attention gating, and a blended BCE + soft-Dice loss.
"""

import numpy as np

from .errors import NumericalError

CHECK_FINITE = False  # flip on to validate every op output (slow, debug aid)


def _as_float(data):
    arr = np.asarray(data)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = _as_float(data)
        if CHECK_FINITE and not np.isfinite(self.data).all():
            raise NumericalError("non-finite values entered the graph")
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar output")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # convenience arithmetic (constants auto-wrapped, no grad)
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.grad is not None})"


def _wrap(x, like=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=like.data.dtype if like is not None else None)
    return Tensor(arr)


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / reduction primitives
# ---------------------------------------------------------------------------

def add(a, b):
    a = _wrap(a)
    b = _wrap(b, like=a)
    out = Tensor(a.data + b.data, parents=(a, b))

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    out._backward = backward
    return out


def mul(a, b):
    a = _wrap(a)
    b = _wrap(b, like=a)
    out = Tensor(a.data * b.data, parents=(a, b))

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    out._backward = backward
    return out


def div(a, b):
    a = _wrap(a)
    b = _wrap(b, like=a)
    out = Tensor(a.data / b.data, parents=(a, b))

    def backward(g):
        a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    out._backward = backward
    return out


def log(a):
    out = Tensor(np.log(a.data), parents=(a,))

    def backward(g):
        a._accumulate(g / a.data)

    out._backward = backward
    return out


def clip(a, lo, hi):
    """Clamp values; gradient passes only through the unclamped region."""
    out = Tensor(np.clip(a.data, lo, hi), parents=(a,))
    inside = ((a.data > lo) & (a.data < hi)).astype(a.data.dtype)

    def backward(g):
        a._accumulate(g * inside)

    out._backward = backward
    return out


def tsum(a):
    out = Tensor(np.asarray(a.data.sum(dtype=np.float64), dtype=a.data.dtype), parents=(a,))

    def backward(g):
        a._accumulate(np.broadcast_to(g, a.data.shape).astype(a.data.dtype))

    out._backward = backward
    return out


def tmean(a):
    return mul(tsum(a), 1.0 / a.data.size)


def relu(a):
    out = Tensor(np.maximum(a.data, 0.0), parents=(a,))
    gate = (a.data > 0.0).astype(a.data.dtype)  # subgradient 0 at the kink

    def backward(g):
        a._accumulate(g * gate)

    out._backward = backward
    return out


def sigmoid(a):
    # numerically stable split by sign
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    out = Tensor(s, parents=(a,))

    def backward(g):
        a._accumulate(g * s * (1.0 - s))

    out._backward = backward
    return out


def concat_channels(a, b):
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2:] != b.data.shape[2:]:
        raise ValueError(f"concat shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(np.concatenate([a.data, b.data], axis=1), parents=(a, b))
    ca = a.data.shape[1]

    def backward(g):
        a._accumulate(g[:, :ca])
        b._accumulate(g[:, ca:])

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# spatial ops
# ---------------------------------------------------------------------------

def _corr2d(x, w, pad):
    """Cross-correlation of (N,C,H,W) with (O,C,kh,kw), unit stride.

    Returns the output and the im2col matrix for reuse in backward.
    """
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    oh, ow = windows.shape[2], windows.shape[3]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, c * kh * kw)
    y = cols @ w.reshape(o, c * kh * kw).T
    return y.reshape(n, oh, ow, o).transpose(0, 3, 1, 2), cols


def conv2d(x, w, b, padding="same"):
    """2D cross-correlation, stride 1, square odd kernel.

    x: (N,C,H,W) Tensor;  w: (O,C,kh,kw);  b: (O,) or None.
    padding 'same' keeps spatial dims, 'valid' shrinks by kernel-1.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError("conv2d expects 4D input and kernel")
    if x.data.shape[1] != w.data.shape[1]:
        raise ValueError(f"channel mismatch: input {x.data.shape[1]}, kernel {w.data.shape[1]}")
    kh = w.data.shape[2]
    if padding == "same":
        pad = (kh - 1) // 2
    elif padding == "valid":
        pad = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")

    y, cols = _corr2d(x.data, w.data, pad)
    parents = (x, w) if b is None else (x, w, b)
    if b is not None:
        y = y + b.data[None, :, None, None]
    out = Tensor(y, parents=parents)
    n, c, h, wd = x.data.shape
    o = w.data.shape[0]
    kw = w.data.shape[3]

    def backward(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
        gw = (gmat.T @ cols).reshape(w.data.shape)
        w._accumulate(gw)
        if b is not None:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        # input gradient: full correlation with the flipped, transposed kernel
        wt = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        gx, _ = _corr2d(g, wt, kh - 1 - pad)
        x._accumulate(gx)

    out._backward = backward
    return out


def conv_transpose2(x, w, b):
    """Stride-2 2x2 transposed convolution, doubling H and W.

    w: (C_in, C_out, 2, 2).  Stride equals kernel so outputs never overlap.
    """
    if x.data.shape[1] != w.data.shape[0]:
        raise ValueError(f"channel mismatch: input {x.data.shape[1]}, kernel {w.data.shape[0]}")
    n, c, h, wd = x.data.shape
    o = w.data.shape[1]
    t = np.tensordot(x.data, w.data, axes=([1], [0]))  # (N,H,W,O,2,2)
    y = np.ascontiguousarray(t.transpose(0, 3, 1, 4, 2, 5)).reshape(n, o, 2 * h, 2 * wd)
    if b is not None:
        y = y + b.data[None, :, None, None]
    out = Tensor(y, parents=(x, w) if b is None else (x, w, b))

    def backward(g):
        gt = g.reshape(n, o, h, 2, wd, 2).transpose(0, 2, 4, 1, 3, 5)  # (N,H,W,O,2,2)
        x._accumulate(np.tensordot(gt, w.data, axes=([3, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2))
        w._accumulate(np.tensordot(x.data, gt, axes=([0, 2, 3], [0, 1, 2])))
        if b is not None:
            b._accumulate(g.sum(axis=(0, 2, 3)))

    out._backward = backward
    return out


def maxpool2(x):
    """2x2 stride-2 max pool; gradient goes to the first max per window."""
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    win = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, h // 2, w // 2, 4
    )
    idx = win.argmax(axis=-1)  # argmax takes the first maximum: the tie rule
    out = Tensor(np.take_along_axis(win, idx[..., None], axis=-1)[..., 0], parents=(x,))

    def backward(g):
        gwin = np.zeros_like(win)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        gx = gwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(x.data.shape)
        x._accumulate(gx)

    out._backward = backward
    return out


def upsample2_nearest(x):
    """Repeat every pixel into a 2x2 block."""
    n, c, h, w = x.data.shape
    out = Tensor(np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3), parents=(x,))

    def backward(g):
        x._accumulate(g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    out._backward = backward
    return out


def attention_gate(skip, gate, weights, prefix):
    """Additive soft attention: rescale skip features by a learned map.

    The skip is subsampled to the gate's resolution, both are projected by
    1x1 convs, and sigmoid(psi(relu(sum))) gives a one-channel map in
    (0,1) that is nearest-upsampled back and multiplied into the skip.
    Uses weights {prefix}.ws/{prefix}.wg/{prefix}.psi (each .w and .b).
    """
    sh, gh = skip.data.shape[2], gate.data.shape[2]
    if sh != 2 * gh or skip.data.shape[3] != 2 * gate.data.shape[3]:
        raise ValueError(
            f"gate must be half the skip resolution, got skip {skip.data.shape} gate {gate.data.shape}"
        )
    down = subsample2(skip)
    s = conv2d(down, weights[f"{prefix}.ws.w"], weights[f"{prefix}.ws.b"], padding="valid")
    g = conv2d(gate, weights[f"{prefix}.wg.w"], weights[f"{prefix}.wg.b"], padding="valid")
    alpha = sigmoid(conv2d(relu(add(s, g)), weights[f"{prefix}.psi.w"], weights[f"{prefix}.psi.b"], padding="valid"))
    return mul(skip, upsample2_nearest(alpha))


def subsample2(x):
    """Take every second pixel (top-left of each 2x2 block)."""
    out = Tensor(x.data[:, :, ::2, ::2].copy(), parents=(x,))

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, :, ::2, ::2] = g
        x._accumulate(gx)

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def loss_bce_dice(pred, target, lam=0.5, eps=1e-6, clamp=1e-7):
    """lam * BCE + (1 - lam) * (1 - soft Dice) on probabilities in (0,1).

    target is a constant {0,1} array of pred's shape; predictions are
    clamped to [clamp, 1-clamp] inside the log terms.
    """
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.data.dtype)
    if t.shape != pred.data.shape:
        raise ValueError(f"shape mismatch: pred {pred.data.shape}, target {t.shape}")
    p = clip(pred, clamp, 1.0 - clamp)
    bce = mul(tmean(add(mul(log(p), t), mul(log(1.0 - p), 1.0 - t))), -1.0)
    inter = tsum(mul(pred, t))
    dice = div(2.0 * inter + eps, tsum(pred) + float(t.sum(dtype=np.float64)) + eps)
    return add(mul(bce, lam), mul(1.0 - dice, 1.0 - lam))


def loss_mse(pred, target):
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.data.dtype)
    if t.shape != pred.data.shape:
        raise ValueError(f"shape mismatch: pred {pred.data.shape}, target {t.shape}")
    d = add(pred, -t)
    return tmean(mul(d, d))


# ---------------------------------------------------------------------------
# parameters and optimization
# ---------------------------------------------------------------------------

def he_uniform(shape, fan_in, rng, dtype=np.float32):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Adam:
    """Bias-corrected Adam over a dict of named parameter Tensors."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data, dtype=np.float64) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data, dtype=np.float64) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise NumericalError(f"non-finite gradient for parameter {name!r}")
            g = g.astype(np.float64)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            mhat = self.m[name] / (1.0 - self.beta1 ** self.t)
            vhat = self.v[name] / (1.0 - self.beta2 ** self.t)
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)


def adam_step(weights, grads, state=None, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
    """One functional Adam update on dicts of arrays; returns (weights, state).

    state is (m, v, t); pass the returned state back in for the next step.
    """
    if state is None:
        state = ({k: np.zeros_like(w, dtype=np.float64) for k, w in weights.items()},
                 {k: np.zeros_like(w, dtype=np.float64) for k, w in weights.items()}, 0)
    m, v, t = state
    t += 1
    beta1, beta2 = betas
    new = {}
    for name, w in weights.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
        m[name] = beta1 * m[name] + (1.0 - beta1) * g
        v[name] = beta2 * v[name] + (1.0 - beta2) * g * g
        mhat = m[name] / (1.0 - beta1 ** t)
        vhat = v[name] / (1.0 - beta2 ** t)
        new[name] = w - (lr * mhat / (np.sqrt(vhat) + eps)).astype(w.dtype)
    return new, (m, v, t)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def grad_check(build_loss, params, eps=1e-3, tol=1e-4, max_entries=None, rng=None):
    """Compare analytic gradients against central finite differences.

    build_loss(params) must rebuild the scalar loss graph from the given
    dict of parameter Tensors.  All parameter data is promoted to float64
    so the whole graph runs in double precision.  For each parameter the
    relative error is ||analytic - fd||_2 / max(||analytic||_2, ||fd||_2,
    1e-12) over the checked entries (all entries, or max_entries sampled
    ones for large tensors).  Returns a report dict with per-parameter
    errors and an overall pass flag.
    """
    params64 = {k: Tensor(p.data.astype(np.float64), requires_grad=True) for k, p in params.items()}
    loss = build_loss(params64)
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params64.items()}

    rng = np.random.default_rng(0) if rng is None else rng
    errors = {}
    for name, p in params64.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            idx = rng.choice(n, size=max_entries, replace=False)
        else:
            idx = np.arange(n)
        fd = np.empty(len(idx))
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(build_loss(params64).data)
            flat[i] = orig - eps
            lo = float(build_loss(params64).data)
            flat[i] = orig
            fd[k] = (hi - lo) / (2.0 * eps)
        ana = analytic[name].reshape(-1)[idx]
        denom = max(np.linalg.norm(ana), np.linalg.norm(fd), 1e-12)
        errors[name] = float(np.linalg.norm(ana - fd) / denom)
    worst = max(errors.values()) if errors else 0.0
    return {"per_param": errors, "worst": worst, "passed": worst < tol, "tolerance": tol}
