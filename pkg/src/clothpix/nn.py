"""Small reverse-mode network stack for pose -> cloth regression.

Two model families: an MLP over pose features (direct per-vertex offsets or
subspace coefficients) and a transpose-convolution decoder producing offset
images. Layers cache what their backward pass needs; gradients accumulate
into Param.grad until zero_grad. The convolution kernels run on im2col /
col2im from the kernels backend, which is where the time goes.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import blobio
from .kernels import im2col, col2im

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Param:
    """A learnable tensor plus its gradient accumulator."""

    def __init__(self, name, value):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)


class Layer:
    def params(self):
        return []

    def state_arrays(self):
        """Non-learnable buffers that belong in checkpoints (BN stats)."""
        return []


class Linear(Layer):
    def __init__(self, n_in, n_out, rng, name="linear"):
        self.w = Param(name + ".w", rng.normal(size=(n_in, n_out))
                       * np.sqrt(2.0 / n_in))
        self.b = Param(name + ".b", np.zeros(n_out))

    def params(self):
        return [self.w, self.b]

    def forward(self, x, train=False):
        self._x = x
        return x @ self.w.value + self.b.value

    def backward(self, dy):
        self.w.grad += self._x.T @ dy
        self.b.grad += dy.sum(axis=0)
        return dy @ self.w.value.T


class Relu(Layer):
    def forward(self, x, train=False):
        self._keep = x > 0.0
        return np.where(self._keep, x, 0.0)

    def backward(self, dy):
        return np.where(self._keep, dy, 0.0)


class Reshape(Layer):
    """(B, prod(shape)) <-> (B, *shape)."""

    def __init__(self, shape):
        self.shape = tuple(shape)

    def forward(self, x, train=False):
        self._n = x.shape[0]
        return x.reshape((self._n,) + self.shape)

    def backward(self, dy):
        return dy.reshape(self._n, -1)


class BatchNorm2d(Layer):
    """Per-channel batch normalization over (N, C, H, W).

    Training normalizes with batch statistics (biased variance) and updates
    running statistics with momentum; eval normalizes with the running
    statistics, so eval-mode forward is a pure function of the input.
    """

    def __init__(self, channels, name="bn"):
        self.gamma = Param(name + ".gamma", np.ones(channels))
        self.beta = Param(name + ".beta", np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def params(self):
        return [self.gamma, self.beta]

    def state_arrays(self):
        return [("running_mean", self.running_mean),
                ("running_var", self.running_var)]

    def forward(self, x, train=False):
        self._train = train
        if train:
            mu = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = x.shape[0] * x.shape[2] * x.shape[3]
            self.running_mean = ((1.0 - BN_MOMENTUM) * self.running_mean
                                 + BN_MOMENTUM * mu)
            unbiased = var * m / max(m - 1, 1)
            self.running_var = ((1.0 - BN_MOMENTUM) * self.running_var
                                + BN_MOMENTUM * unbiased)
        else:
            mu = self.running_mean
            var = self.running_var
        self._ivar = 1.0 / np.sqrt(var + BN_EPS)
        self._xhat = (x - mu[None, :, None, None]) * self._ivar[None, :, None, None]
        return (self.gamma.value[None, :, None, None] * self._xhat
                + self.beta.value[None, :, None, None])

    def backward(self, dy):
        xhat = self._xhat
        self.beta.grad += dy.sum(axis=(0, 2, 3))
        self.gamma.grad += (dy * xhat).sum(axis=(0, 2, 3))
        dxhat = dy * self.gamma.value[None, :, None, None]
        if not self._train:
            return dxhat * self._ivar[None, :, None, None]
        m = dy.shape[0] * dy.shape[2] * dy.shape[3]
        s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return (self._ivar[None, :, None, None] / m
                * (m * dxhat - s1 - xhat * s2))


class Conv2d(Layer):
    """Convolution, kernel 3 stride 1 pad 1 by default (same-size)."""

    def __init__(self, c_in, c_out, rng, kernel=3, stride=1, pad=1, name="conv"):
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.pad = kernel, stride, pad
        fan = c_in * kernel * kernel
        self.w = Param(name + ".w",
                       rng.normal(size=(c_out, c_in, kernel, kernel))
                       * np.sqrt(2.0 / fan))
        self.b = Param(name + ".b", np.zeros(c_out))

    def params(self):
        return [self.w, self.b]

    def forward(self, x, train=False):
        n, _, h, w = x.shape
        k, s, p = self.kernel, self.stride, self.pad
        self._in_shape = x.shape
        self._cols = im2col(x, k, k, s, p)
        oh = (h + 2 * p - k) // s + 1
        ow = (w + 2 * p - k) // s + 1
        wf = self.w.value.reshape(self.c_out, -1)
        y = np.einsum("ok,nkl->nol", wf, self._cols) + self.b.value[None, :, None]
        return y.reshape(n, self.c_out, oh, ow)

    def backward(self, dy):
        n, _, h, w = self._in_shape
        k, s, p = self.kernel, self.stride, self.pad
        dyf = dy.reshape(n, self.c_out, -1)
        self.w.grad += np.einsum("nol,nkl->ok", dyf, self._cols).reshape(
            self.w.value.shape)
        self.b.grad += dyf.sum(axis=(0, 2))
        wf = self.w.value.reshape(self.c_out, -1)
        dcols = np.einsum("ok,nol->nkl", wf, dyf)
        return col2im(dcols, n, self.c_in, h, w, k, k, s, p)


class ConvTranspose2d(Layer):
    """Transpose convolution, kernel 4 stride 2 pad 1: exact doubling."""

    def __init__(self, c_in, c_out, rng, kernel=4, stride=2, pad=1, name="convt"):
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.pad = kernel, stride, pad
        fan = c_in * kernel * kernel
        self.w = Param(name + ".w",
                       rng.normal(size=(c_in, c_out, kernel, kernel))
                       * np.sqrt(2.0 / fan))
        self.b = Param(name + ".b", np.zeros(c_out))

    def params(self):
        return [self.w, self.b]

    def out_size(self, h, w):
        k, s, p = self.kernel, self.stride, self.pad
        return (h - 1) * s - 2 * p + k, (w - 1) * s - 2 * p + k

    def forward(self, x, train=False):
        n, _, h, w = x.shape
        k, s, p = self.kernel, self.stride, self.pad
        oh, ow = self.out_size(h, w)
        self._hw = (h, w)
        self._xf = x.reshape(n, self.c_in, -1)
        wf = self.w.value.reshape(self.c_in, -1)
        cols = np.einsum("ik,nil->nkl", wf, self._xf)
        y = col2im(cols, n, self.c_out, oh, ow, k, k, s, p)
        return y + self.b.value[None, :, None, None]

    def backward(self, dy):
        n = dy.shape[0]
        k, s, p = self.kernel, self.stride, self.pad
        dcols = im2col(dy, k, k, s, p)
        wf = self.w.value.reshape(self.c_in, -1)
        self.w.grad += np.einsum("nil,nkl->ik", self._xf, dcols).reshape(
            self.w.value.shape)
        self.b.grad += dy.sum(axis=(0, 2, 3))
        dx = np.einsum("ik,nkl->nil", wf, dcols)
        return dx.reshape(n, self.c_in, *self._hw)


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def params(self):
        out = []
        for lay in self.layers:
            out.extend(lay.params())
        return out

    def state_arrays(self):
        out = []
        for i, lay in enumerate(self.layers):
            for name, arr in lay.state_arrays():
                out.append(("%d.%s" % (i, name), arr))
        return out

    def forward(self, x, train=False):
        for lay in self.layers:
            x = lay.forward(x, train)
        return x

    def backward(self, dy):
        for lay in reversed(self.layers):
            dy = lay.backward(dy)
        return dy


# ---------------------------------------------------------------------------
# model families


class MlpModel:
    """Pose features -> flat output through two rectified hidden layers.

    head "direct": output is the stacked per-vertex offset vector (3n).
    head "pca": output is subspace coefficients for a PcaBasis.
    """

    def __init__(self, in_dim, hidden, out_dim, head, seed=0):
        if head not in ("direct", "pca"):
            raise ValueError("unknown head %r" % (head,))
        self.in_dim, self.hidden = in_dim, tuple(hidden)
        self.out_dim, self.head = out_dim, head
        self.seed = seed
        rng = np.random.default_rng(seed)
        sizes = [in_dim] + list(hidden)
        layers = []
        for i in range(len(sizes) - 1):
            layers.append(Linear(sizes[i], sizes[i + 1], rng, "fc%d" % i))
            layers.append(Relu())
        layers.append(Linear(sizes[-1], out_dim, rng, "head"))
        self.net = Sequential(layers)

    def params(self):
        return self.net.params()

    def forward(self, features, train=False):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 1:
            features = features[None, :]
        if features.shape[1] != self.in_dim:
            raise ValueError("feature length %d, model expects %d"
                             % (features.shape[1], self.in_dim))
        return self.net.forward(features, train)

    def backward(self, dy):
        return self.net.backward(dy)

    @property
    def n_params(self):
        return sum(p.value.size for p in self.params())

    def to_config(self):
        return {"type": "mlp", "in_dim": self.in_dim,
                "hidden": list(self.hidden), "out_dim": self.out_dim,
                "head": self.head, "seed": self.seed}


class ConvDecoder:
    """Pose features -> offset image through doubling transpose convs.

    Projection to an initial (c0, h0, w0) feature map, then n_stages of
    [transpose conv k4 s2 (channels halve, resolution doubles), batch norm,
    rectifier], then a same-size k3 s1 convolution down to out_channels.
    Desk default 90 -> 4x4x64 -> 8x8x32 -> 16x16x16 -> 32x32x8 -> 3.
    """

    def __init__(self, in_dim=90, init_hw=(4, 4), c0=64, n_stages=3,
                 out_channels=3, seed=0):
        self.in_dim = in_dim
        self.init_hw = tuple(init_hw)
        self.c0, self.n_stages = c0, n_stages
        self.out_channels = out_channels
        self.seed = seed
        if c0 % (1 << n_stages):
            raise ValueError("c0 must be divisible by 2^n_stages")
        rng = np.random.default_rng(seed)
        h0, w0 = self.init_hw
        layers = [Linear(in_dim, c0 * h0 * w0, rng, "proj"),
                  Reshape((c0, h0, w0))]
        c = c0
        for i in range(n_stages):
            layers.append(ConvTranspose2d(c, c // 2, rng, name="up%d" % i))
            layers.append(BatchNorm2d(c // 2, name="bn%d" % i))
            layers.append(Relu())
            c //= 2
        layers.append(Conv2d(c, out_channels, rng, name="final"))
        self.net = Sequential(layers)

    @property
    def out_hw(self):
        h, w = self.init_hw
        return h << self.n_stages, w << self.n_stages

    def params(self):
        return self.net.params()

    def forward(self, features, train=False):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 1:
            features = features[None, :]
        if features.shape[1] != self.in_dim:
            raise ValueError("feature length %d, model expects %d"
                             % (features.shape[1], self.in_dim))
        return self.net.forward(features, train)

    def backward(self, dy):
        return self.net.backward(dy)

    @property
    def n_params(self):
        return sum(p.value.size for p in self.params())

    def to_config(self):
        return {"type": "conv", "in_dim": self.in_dim,
                "init_hw": list(self.init_hw), "c0": self.c0,
                "n_stages": self.n_stages, "out_channels": self.out_channels,
                "seed": self.seed}


def model_from_config(cfg):
    kind = cfg.get("type")
    if kind == "mlp":
        return MlpModel(cfg["in_dim"], cfg["hidden"], cfg["out_dim"],
                        cfg["head"], cfg.get("seed", 0))
    if kind == "conv":
        return ConvDecoder(cfg["in_dim"], cfg["init_hw"], cfg["c0"],
                           cfg["n_stages"], cfg["out_channels"],
                           cfg.get("seed", 0))
    raise ValueError("unknown model type %r" % (kind,))


def zero_grad(model):
    for p in model.params():
        p.grad[...] = 0.0


def get_state(model):
    """Copy of all parameter values and stat buffers, for checkpoints."""
    return ([p.value.copy() for p in model.params()],
            [arr.copy() for _, arr in model.net.state_arrays()])


def set_state(model, state):
    values, stats = state
    for p, v in zip(model.params(), values):
        p.value[...] = v
    for (_, arr), v in zip(model.net.state_arrays(), stats):
        arr[...] = v


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Bias-corrected moment descent over a fixed parameter list."""

    def __init__(self, params, lr=1e-3, beta1=ADAM_BETA1, beta2=ADAM_BETA2,
                 eps=ADAM_EPS):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad ** 2
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# model files: JSON architecture + f32 parameter blob


def save_model(path, model):
    arrays = [(p.name, p.value) for p in model.params()]
    arrays += [("stat." + name, arr) for name, arr in model.net.state_arrays()]
    header = {"kind": "model", "config": model.to_config(),
              "params": [p.name for p in model.params()]}
    blobio.write_blob(path, header, arrays)


def load_model(path):
    header, arrays = blobio.read_blob(path)
    if header.get("kind") != "model":
        raise ValueError("%s is not a model file" % path)
    model = model_from_config(header["config"])
    for p in model.params():
        p.value[...] = arrays[p.name]
    for name, arr in model.net.state_arrays():
        arr[...] = arrays["stat." + name]
    return model


def count_parameters(model):
    return model.n_params


def config_hash(cfg):
    import hashlib
    enc = json.dumps(cfg, sort_keys=True).encode("utf-8")
    return hashlib.sha256(enc).hexdigest()[:16]
