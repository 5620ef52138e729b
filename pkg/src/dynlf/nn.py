"""Dense-network substrate: layers, residual MLP stacks, reverse-mode gradients, Adam.

Everything here is plain numpy. The autodiff is a small recorded-graph design:
ops accept either `Var` nodes or raw arrays and return a `Var` only when at
least one input is a `Var`, so the same forward code serves both fast
inference (arrays in, arrays out) and training (leaf Vars in, graph out).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionMismatch(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class StaleTape(RuntimeError):
    """Raised when a backward pass uses a tape recorded before a parameter update."""


# ---------------------------------------------------------------------------
# recorded-graph reverse mode
# ---------------------------------------------------------------------------


class Var:
    """One node of a recorded forward pass.

    `value` is a numpy array (any shape). After `backward(root)`, `grad`
    holds d(root)/d(node) for every node reachable from the root.
    """

    __slots__ = ("value", "grad", "_parents", "_back")

    def __init__(self, value, parents=(), back=None):
        self.value = np.asarray(value)
        self.grad = None
        self._parents = parents
        self._back = back

    @property
    def shape(self):
        return self.value.shape


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _is_var(*xs):
    return any(isinstance(x, Var) for x in xs)


def _unbroadcast(grad, shape):
    """Reduce `grad` back to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accumulate(node, grad):
    if isinstance(node, Var):
        node.grad = grad if node.grad is None else node.grad + grad


def add(a, b):
    out = value_of(a) + value_of(b)
    if not _is_var(a, b):
        return out

    def back(g):
        if isinstance(a, Var):
            _accumulate(a, _unbroadcast(g, a.value.shape))
        if isinstance(b, Var):
            _accumulate(b, _unbroadcast(g, b.value.shape))

    return Var(out, (a, b), back)


def sub(a, b):
    out = value_of(a) - value_of(b)
    if not _is_var(a, b):
        return out

    def back(g):
        if isinstance(a, Var):
            _accumulate(a, _unbroadcast(g, a.value.shape))
        if isinstance(b, Var):
            _accumulate(b, _unbroadcast(-g, b.value.shape))

    return Var(out, (a, b), back)


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    if not _is_var(a, b):
        return out

    def back(g):
        if isinstance(a, Var):
            _accumulate(a, _unbroadcast(g * bv, av.shape))
        if isinstance(b, Var):
            _accumulate(b, _unbroadcast(g * av, bv.shape))

    return Var(out, (a, b), back)


def div(a, b):
    av, bv = value_of(a), value_of(b)
    out = av / bv
    if not _is_var(a, b):
        return out

    def back(g):
        if isinstance(a, Var):
            _accumulate(a, _unbroadcast(g / bv, av.shape))
        if isinstance(b, Var):
            _accumulate(b, _unbroadcast(-g * av / (bv * bv), bv.shape))

    return Var(out, (a, b), back)


def neg(a):
    if not _is_var(a):
        return -a

    def back(g):
        _accumulate(a, -g)

    return Var(-a.value, (a,), back)


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av @ bv
    if not _is_var(a, b):
        return out

    def back(g):
        if isinstance(a, Var):
            _accumulate(a, g @ bv.T)
        if isinstance(b, Var):
            _accumulate(b, av.T @ g)

    return Var(out, (a, b), back)


def transpose(a):
    if not _is_var(a):
        return a.T

    def back(g):
        _accumulate(a, g.T)

    return Var(a.value.T, (a,), back)


def relu(a):
    av = value_of(a)
    out = np.maximum(av, 0)
    if not _is_var(a):
        return out

    def back(g):
        _accumulate(a, g * (av > 0))

    return Var(out, (a,), back)


def sigmoid(a):
    av = value_of(a)
    # stable both directions: exp of a non-positive argument only
    pos = av >= 0
    e = np.exp(np.where(pos, -av, av))
    out = np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e))
    if not _is_var(a):
        return out

    def back(g):
        _accumulate(a, g * out * (1.0 - out))

    return Var(out, (a,), back)


def softplus(a):
    av = value_of(a)
    # stable log(1 + e^x)
    out = np.logaddexp(0.0, av)
    if not _is_var(a):
        return out

    def back(g):
        _accumulate(a, g / (1.0 + np.exp(-av)))

    return Var(out, (a,), back)


def exp(a):
    av = value_of(a)
    out = np.exp(av)
    if not _is_var(a):
        return out

    def back(g):
        _accumulate(a, g * out)

    return Var(out, (a,), back)


def sqrt(a):
    av = value_of(a)
    out = np.sqrt(av)
    if not _is_var(a):
        return out

    def back(g):
        _accumulate(a, g * 0.5 / out)

    return Var(out, (a,), back)


def sin(a):
    av = value_of(a)
    out = np.sin(av)
    if not _is_var(a):
        return out

    def back(g):
        _accumulate(a, g * np.cos(av))

    return Var(out, (a,), back)


def cos(a):
    av = value_of(a)
    out = np.cos(av)
    if not _is_var(a):
        return out

    def back(g):
        _accumulate(a, g * -np.sin(av))

    return Var(out, (a,), back)


def concat(parts, axis=-1):
    vals = [value_of(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    if not _is_var(*parts):
        return out

    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for p, gp in zip(parts, np.split(g, splits, axis=axis)):
            if isinstance(p, Var):
                _accumulate(p, gp)

    return Var(out, tuple(parts), back)


def reshape(a, shape):
    av = value_of(a)
    if not _is_var(a):
        return av.reshape(shape)

    def back(g):
        _accumulate(a, g.reshape(av.shape))

    return Var(av.reshape(shape), (a,), back)


def sum_(a, axis=None, keepdims=False):
    av = value_of(a)
    out = av.sum(axis=axis, keepdims=keepdims)
    if not _is_var(a):
        return out

    def back(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, av.shape).copy())

    return Var(out, (a,), back)


def mean(a):
    av = value_of(a)
    out = av.mean()
    if not _is_var(a):
        return out

    def back(g):
        _accumulate(a, np.full(av.shape, g / av.size, dtype=av.dtype))

    return Var(np.asarray(out), (a,), back)


def cumsum_exclusive(a, axis=-1):
    """[x0, x1, x2] -> [0, x0, x0+x1] along `axis`."""
    av = value_of(a)
    inc = np.cumsum(av, axis=axis)
    out = np.zeros_like(inc)
    sl_dst = [slice(None)] * av.ndim
    sl_src = [slice(None)] * av.ndim
    sl_dst[axis] = slice(1, None)
    sl_src[axis] = slice(None, -1)
    out[tuple(sl_dst)] = inc[tuple(sl_src)]
    if not _is_var(a):
        return out

    def back(g):
        # d(out_j)/d(x_i) = 1 for i < j: reversed exclusive cumsum of g
        rev = np.flip(g, axis=axis)
        inc_g = np.cumsum(rev, axis=axis)
        shifted = np.zeros_like(inc_g)
        shifted[tuple(sl_dst)] = inc_g[tuple(sl_src)]
        _accumulate(a, np.flip(shifted, axis=axis))

    return Var(out, (a,), back)


def normalize_rows(a, eps=0.0):
    """Scale each row of (..., D) to unit Euclidean norm."""
    av = value_of(a)
    n = np.sqrt((av * av).sum(axis=-1, keepdims=True)) + eps
    out = av / n
    if not _is_var(a):
        return out

    def back(g):
        # d(u/|u|)/du = (I - out out^T) / |u|
        dot = (g * out).sum(axis=-1, keepdims=True)
        _accumulate(a, (g - out * dot) / n)

    return Var(out, (a,), back)


def fourier_features(a, n_freq):
    """[v, sin(2^j pi v), cos(2^j pi v)]_j on the last axis, as one graph node.

    Equivalent to interleaving `sin`/`cos`/`concat` calls but vectorized over
    frequencies, which matters on the training hot path.
    """
    av = value_of(a)
    d = av.shape[-1]
    freqs = (np.pi * (2.0 ** np.arange(n_freq))).astype(av.dtype)
    scaled = av[..., None, :] * freqs[:, None]          # (..., n_freq, d)
    sins = np.sin(scaled)
    coss = np.cos(scaled)
    out = np.empty(av.shape[:-1] + ((1 + 2 * n_freq) * d,), dtype=av.dtype)
    out[..., :d] = av
    pairs = np.stack([sins, coss], axis=-2)             # (..., n_freq, 2, d)
    out[..., d:] = pairs.reshape(*av.shape[:-1], 2 * n_freq * d)
    if not _is_var(a):
        return out

    def back(g):
        gx = g[..., :d].copy()
        gp = g[..., d:].reshape(*av.shape[:-1], n_freq, 2, d)
        gx += ((gp[..., 0, :] * coss - gp[..., 1, :] * sins)
               * freqs[:, None]).sum(axis=-2)
        _accumulate(a, gx)

    return Var(out, (a,), back)


def slice_cols(a, start, stop, squeeze=False):
    """Columns [start, stop) of a 2D array/Var; squeeze drops the axis when stop-start==1."""
    av = value_of(a)
    out = av[:, start:stop]
    if squeeze:
        out = out[:, 0]
    if not _is_var(a):
        return out

    def back(g):
        full = np.zeros_like(av)
        if squeeze:
            full[:, start] = g
        else:
            full[:, start:stop] = g
        _accumulate(a, full)

    return Var(out, (a,), back)


def mse_loss(a, b):
    """Mean of squared elementwise differences (graph-capable)."""
    d = sub(a, b)
    return mean(mul(d, d))


def backward(root, seed=None):
    """Reverse pass from `root`; fills .grad on every reachable Var."""
    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if not isinstance(node, Var):
            continue
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if isinstance(p, Var) and id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.value) if seed is None else np.asarray(seed)
    for node in reversed(topo):
        if node._back is not None and node.grad is not None:
            node._back(node.grad)


# ---------------------------------------------------------------------------
# layers and residual stacks
# ---------------------------------------------------------------------------

ACTIVATIONS = ("relu", "sigmoid", "identity")

_ACT_OPS = {"relu": relu, "sigmoid": sigmoid, "identity": lambda x: x}


class DenseLayer:
    """Affine layer y = act(x @ W.T + b), weights stored (out_dim, in_dim)."""

    def __init__(self, weights, bias, activation="identity"):
        weights = np.asarray(weights)
        bias = np.asarray(bias)
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if weights.ndim != 2 or bias.shape != (weights.shape[0],):
            raise DimensionMismatch("weights must be (out,in), bias (out,)")
        self.weights = weights
        self.bias = bias
        self.activation = activation

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]

    def forward(self, x, w=None, b=None):
        w = self.weights if w is None else w
        b = self.bias if b is None else b
        z = add(matmul(x, transpose(w)), b)
        return _ACT_OPS[self.activation](z)


def he_uniform(out_dim, in_dim, rng, dtype=np.float32):
    limit = np.sqrt(6.0 / in_dim)
    return rng.uniform(-limit, limit, size=(out_dim, in_dim)).astype(dtype)


def make_mlp(dims, rng, hidden_activation="relu", out_activation="identity",
             skip_every=0, dtype=np.float32, zero_last=False, last_scale=1.0):
    """Build a ResidualMlp with He-uniform weights and zero biases.

    `dims` is [in, h1, ..., out]. With `zero_last` the final layer starts at
    zero, so residual-parameterized heads begin as the exact identity;
    `last_scale` damps the final layer instead (keeps output heads away from
    saturation at the start of training).
    """
    layers = []
    for i in range(len(dims) - 1):
        last = i == len(dims) - 2
        w = he_uniform(dims[i + 1], dims[i], rng, dtype)
        if last and zero_last:
            w = np.zeros_like(w)
        elif last and last_scale != 1.0:
            w *= dtype(last_scale)
        layers.append(DenseLayer(
            w, np.zeros(dims[i + 1], dtype=dtype),
            out_activation if last else hidden_activation))
    return ResidualMlp(layers, skip_every=skip_every)


class ResidualMlp:
    """Stack of DenseLayers with identity skip connections every `skip_every` layers.

    The running skip source starts at the network input. After every
    `skip_every`-th layer the current activation gains the skip source when
    their widths agree, and the skip source moves to the (possibly summed)
    activation either way. `skip_every=0` disables skips entirely.
    """

    def __init__(self, layers, skip_every=0):
        if not layers:
            raise ValueError("need at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionMismatch(
                    f"layer widths disagree: {prev.out_dim} -> {nxt.in_dim}")
        self.layers = list(layers)
        self.skip_every = int(skip_every)
        self._version = 0

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    @property
    def version(self):
        return self._version

    def mark_updated(self):
        self._version += 1

    def param_arrays(self):
        out = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.bias)
        return out

    def param_count(self):
        return sum(a.size for a in self.param_arrays())

    def forward(self, x, params=None):
        """Run the stack on `x` (vector, batch, or Var).

        `params` optionally replaces stored parameters with a flat list
        [W0, b0, W1, b1, ...] of arrays or Vars (used while recording).
        """
        xv = value_of(x)
        single = xv.ndim == 1
        if xv.shape[-1] != self.in_dim:
            raise DimensionMismatch(
                f"input has {xv.shape[-1]} features, layer expects {self.in_dim}")
        if single:
            x = reshape(x, (1, -1)) if isinstance(x, Var) else xv.reshape(1, -1)
        h = x
        anchor = x
        for i, layer in enumerate(self.layers, start=1):
            if params is None:
                w = b = None
            else:
                w, b = params[2 * (i - 1)], params[2 * (i - 1) + 1]
            h = layer.forward(h, w=w, b=b)
            if self.skip_every > 0 and i % self.skip_every == 0:
                if value_of(h).shape[-1] == value_of(anchor).shape[-1]:
                    h = add(h, anchor)
                anchor = h
        if single:
            h = reshape(h, (-1,)) if isinstance(h, Var) else value_of(h).reshape(-1)
        return h


@dataclass
class GradTape:
    """Recorded forward pass of one ResidualMlp: output node + parameter leaves."""

    out: Var
    x: Var
    param_vars: list
    net: ResidualMlp
    version: int


def mlp_forward(net: ResidualMlp, x):
    """Pure forward pass; returns an array of the same batch arrangement as x."""
    y = net.forward(np.asarray(x))
    if not np.all(np.isfinite(value_of(y))):
        raise FloatingPointError("non-finite activation in forward pass")
    return y


def mlp_forward_recorded(net: ResidualMlp, x):
    """Forward pass that records a GradTape for mlp_backward."""
    leaves = [Var(a) for a in net.param_arrays()]
    xv = Var(np.asarray(x))
    out = net.forward(xv, params=leaves)
    return out.value, GradTape(out, xv, leaves, net, net.version)


def mlp_backward(net: ResidualMlp, tape: GradTape, dloss_dout):
    """Gradient of a scalar loss w.r.t. every parameter, given d(loss)/d(out).

    Returns one flat vector in declaration order (W0, b0, W1, b1, ...).
    Parameters that did not participate in the forward pass get exact zeros.
    """
    if tape.net is not net or tape.version != net.version:
        raise StaleTape("parameters changed since this tape was recorded")
    dloss_dout = np.asarray(dloss_dout)
    backward(tape.out, seed=dloss_dout.reshape(tape.out.value.shape))
    chunks = []
    for leaf in tape.param_vars:
        g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        chunks.append(np.asarray(g, dtype=leaf.value.dtype).ravel())
    return np.concatenate(chunks)


# ---------------------------------------------------------------------------
# flat parameter store
# ---------------------------------------------------------------------------


class FlatParams:
    """All sub-network parameters concatenated into one vector.

    Building the store rebinds every layer's weight/bias to a reshaped view
    of the flat vector, so in-place optimizer updates are visible to the
    networks without copying.
    """

    def __init__(self, named_nets, dtype=np.float32):
        self.named_nets = list(named_nets)
        sizes = []
        for _, net in self.named_nets:
            sizes.extend(a.size for a in net.param_arrays())
        self.vector = np.empty(int(np.sum(sizes, dtype=np.int64)), dtype=dtype)
        self.slices = []
        off = 0
        for _, net in self.named_nets:
            for layer in net.layers:
                for attr in ("weights", "bias"):
                    a = getattr(layer, attr)
                    n = a.size
                    self.vector[off:off + n] = a.astype(dtype, copy=False).ravel()
                    setattr(layer, attr, self.vector[off:off + n].reshape(a.shape))
                    self.slices.append((off, off + n, a.shape))
                    off += n

    @property
    def size(self):
        return self.vector.size

    def leaves(self):
        """Fresh Var leaves over every block, plus a gradient collector."""
        vars_ = [Var(self.vector[s:e].reshape(shape)) for s, e, shape in self.slices]

        def collect():
            g = np.zeros_like(self.vector)
            for v, (s, e, _) in zip(vars_, self.slices):
                if v.grad is not None:
                    g[s:e] = np.asarray(v.grad).ravel()
            return g

        return vars_, collect

    def net_params(self, vars_=None):
        """Group a flat leaf list per net name -> [W0, b0, ...]."""
        source = vars_
        out = {}
        i = 0
        for name, net in self.named_nets:
            n = 2 * len(net.layers)
            if source is None:
                out[name] = None
            else:
                out[name] = source[i:i + n]
            i += n
        return out

    def mark_updated(self):
        for _, net in self.named_nets:
            net.mark_updated()

    def set_vector(self, values):
        values = np.asarray(values, dtype=self.vector.dtype)
        if values.shape != self.vector.shape:
            raise LengthMismatch("parameter vector length mismatch")
        self.vector[:] = values
        self.mark_updated()


# ---------------------------------------------------------------------------
# optimizer and loss
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int
    m: np.ndarray
    v: np.ndarray
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    scratch: np.ndarray = None  # update buffer, reused across steps


def adam_init(n_params, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8, dtype=np.float32):
    return AdamState(0, np.zeros(n_params, dtype=dtype),
                     np.zeros(n_params, dtype=dtype), lr, beta1, beta2, eps)


def adam_step(params, grads, state: AdamState):
    """Bias-corrected Adam update, in place on `params`; returns (params, state)."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise LengthMismatch("params/grads/moments must have equal length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * (grads * grads)
    # p -= lr * (m / bc1) / (sqrt(v / bc2) + eps), with scratch reused
    if state.scratch is None or state.scratch.shape != params.shape:
        state.scratch = np.empty_like(params)
    buf = state.scratch
    np.divide(state.v, 1.0 - b2 ** state.step, out=buf)
    np.sqrt(buf, out=buf)
    buf += state.eps
    np.divide(state.m, buf, out=buf)
    buf *= state.lr / (1.0 - b1 ** state.step)
    params -= buf
    if not np.all(np.isfinite(params)):
        raise FloatingPointError("non-finite parameters after Adam step")
    return params, state


def mse(a, b):
    """Mean squared error between two equal-length arrays."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise LengthMismatch(f"shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))
