"""Feedforward networks with hand-written backward passes and Adam.

Weights are stored as ``(in_width, out_width)`` matrices so a layer computes
``x @ W + b`` on row-major batches. Gradients accumulate until
:meth:`MLP.adam_step` (or :meth:`MLP.zero_grad`) clears them.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from gaclab.geometry import normalize

RELU = "relu"
IDENTITY = "identity"
_ACT_CODES = {RELU: 0, IDENTITY: 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}

CHECKPOINT_MAGIC = b"GACNET1\n"


class DivergenceError(FloatingPointError):
    """Non-finite values reached the parameters or their gradients."""


class StaleCacheError(RuntimeError):
    """A forward cache was used after the parameters changed."""


@dataclass(frozen=True)
class LayerSpec:
    in_width: int
    out_width: int
    activation: str = RELU

    def __post_init__(self):
        if self.in_width < 1 or self.out_width < 1:
            raise ValueError("layer widths must be >= 1")
        if self.activation not in _ACT_CODES:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class ForwardCache:
    inputs: list
    preacts: list
    output: np.ndarray
    version: int


@dataclass
class AdamState:
    """First and second moment estimates, flat like :attr:`MLP.flat`."""

    m: np.ndarray = None
    v: np.ndarray = None
    step: int = 0


class MLP:
    """Stack of affine layers, each followed by ReLU or identity."""

    def __init__(self, specs, rng=None, dtype=np.float64):
        self.specs = [s if isinstance(s, LayerSpec) else LayerSpec(*s) for s in specs]
        for a, b in zip(self.specs, self.specs[1:]):
            if a.out_width != b.in_width:
                raise ValueError(f"layer widths do not chain: {a} -> {b}")
        self.dtype = np.dtype(dtype)
        # every parameter is a view into one flat buffer, and likewise for the
        # gradients, so Adam and Polyak updates are a few whole-buffer ops
        sizes = [n for s in self.specs for n in (s.in_width * s.out_width, s.out_width)]
        self.flat = np.zeros(sum(sizes), dtype=self.dtype)
        self.flat_grad = np.zeros_like(self.flat)
        self.weights, self.biases = [], []
        self.grad_weights, self.grad_biases = [], []
        offset = 0
        for s in self.specs:
            n_w = s.in_width * s.out_width
            for buf, Ws, bs in ((self.flat, self.weights, self.biases),
                                (self.flat_grad, self.grad_weights, self.grad_biases)):
                Ws.append(buf[offset:offset + n_w].reshape(s.in_width, s.out_width))
                bs.append(buf[offset + n_w:offset + n_w + s.out_width])
            offset += n_w + s.out_width
        if rng is not None:
            for s, W, b in zip(self.specs, self.weights, self.biases):
                bound = 1.0 / np.sqrt(s.in_width)
                W[...] = rng.uniform(-bound, bound, (s.in_width, s.out_width))
                b[...] = rng.uniform(-bound, bound, s.out_width)
        self.adam = AdamState(m=np.zeros_like(self.flat), v=np.zeros_like(self.flat))
        self._scratch = np.empty_like(self.flat)
        self.version = 0

    @classmethod
    def from_widths(cls, widths, hidden_activation=RELU, output_activation=IDENTITY,
                    rng=None, dtype=np.float64):
        specs = []
        for i, (a, b) in enumerate(zip(widths, widths[1:])):
            last = i == len(widths) - 2
            specs.append(LayerSpec(a, b, output_activation if last else hidden_activation))
        return cls(specs, rng=rng, dtype=dtype)

    @property
    def in_width(self):
        return self.specs[0].in_width

    @property
    def out_width(self):
        return self.specs[-1].out_width

    def parameters(self):
        """Flat list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def gradients(self):
        out = []
        for W, b in zip(self.grad_weights, self.grad_biases):
            out += [W, b]
        return out

    def n_parameters(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        self.flat_grad.fill(0)

    def forward(self, x):
        """Run the network and keep what :meth:`backward` needs."""
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[-1] != self.in_width:
            raise ValueError(
                f"input width {x.shape[-1]} does not match first layer ({self.in_width})")
        inputs, preacts = [], []
        h = x
        for spec, W, b in zip(self.specs, self.weights, self.biases):
            inputs.append(h)
            z = h @ W
            z += b
            preacts.append(z)
            h = np.maximum(z, 0) if spec.activation == RELU else z
        return ForwardCache(inputs, preacts, h, self.version)

    def __call__(self, x):
        return self.forward(x).output

    def backward(self, cache, grad_output, accumulate=True, input_grad=True):
        """Backpropagate ``grad_output``; return the gradient w.r.t. the input.

        Parameter gradients are added to ``grad_weights``/``grad_biases``
        unless ``accumulate`` is false. With ``input_grad=False`` the last
        product is skipped and None is returned. ReLU uses derivative 0 at
        exactly 0.
        """
        if cache.version != self.version:
            raise StaleCacheError("parameters changed since this forward pass")
        g = np.asarray(grad_output, dtype=self.dtype)
        for i in reversed(range(len(self.specs))):
            if self.specs[i].activation == RELU:
                g = g * (cache.preacts[i] > 0)
            x = cache.inputs[i]
            if accumulate:
                if x.ndim == 1:
                    self.grad_weights[i] += np.outer(x, g)
                    self.grad_biases[i] += g
                else:
                    x2 = x.reshape(-1, x.shape[-1])
                    g2 = g.reshape(-1, g.shape[-1])
                    self.grad_weights[i] += x2.T @ g2
                    self.grad_biases[i] += g2.sum(axis=0)
            if i == 0 and not input_grad:
                return None
            g = g @ self.weights[i].T
        return g

    def adam_step(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        """One bias-corrected Adam update, then clear the gradients."""
        g = self.flat_grad
        # a sum is non-finite iff some entry is (or the sum overflows, which
        # is just as much a divergence)
        if not math.isfinite(float(g.sum())):
            raise DivergenceError("non-finite gradient")
        st = self.adam
        st.step += 1
        c1 = 1.0 - beta1**st.step
        c2 = 1.0 - beta2**st.step
        st.m *= beta1
        st.m += (1.0 - beta1) * g
        st.v *= beta2
        g *= g
        g *= 1.0 - beta2
        st.v += g
        tmp = self._scratch
        np.multiply(st.v, 1.0 / c2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += eps
        np.divide(st.m, tmp, out=tmp)
        tmp *= lr / c1
        self.flat -= tmp
        g.fill(0)
        self.version += 1

    def copy(self):
        new = MLP(self.specs, rng=None, dtype=self.dtype)
        new.load_state(self)
        return new

    def load_state(self, other):
        for dst, src in zip(self.parameters(), other.parameters()):
            dst[...] = src
        self.version += 1

    def soft_update_from(self, source, tau):
        """Polyak averaging: ``theta' <- tau * theta + (1 - tau) * theta'``."""
        self.flat *= 1.0 - tau
        self.flat += tau * source.flat
        self.version += 1

    def all_finite(self):
        return math.isfinite(float(self.flat.sum()))


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Functional alias for :meth:`MLP.adam_step`."""
    params.adam_step(lr, beta1, beta2, eps)


@dataclass
class PolicyOutput:
    mu: np.ndarray
    kappa: np.ndarray
    mu_raw: np.ndarray
    degenerate: np.ndarray
    kappa_active: np.ndarray | None = None


@dataclass
class GaussianPolicyOutput:
    mean: np.ndarray
    log_std: np.ndarray


class _Backbone:
    hidden = 256

    def _build_backbone(self, obs_dim, rng, dtype):
        h = self.hidden
        self.backbone = MLP.from_widths([obs_dim, h, h], output_activation=RELU,
                                        rng=rng, dtype=dtype)

    def networks(self):
        raise NotImplementedError

    def zero_grad(self):
        for net in self.networks().values():
            net.zero_grad()

    def adam_step(self, lr):
        for net in self.networks().values():
            net.adam_step(lr)

    def n_head_parameters(self):
        return sum(n.n_parameters() for k, n in self.networks().items() if k != "backbone")


class GACPolicy(_Backbone):
    """Shared ReLU backbone with a direction head and a concentration head.

    The direction head emits ``d`` logits that are normalized onto the unit
    sphere; the concentration head emits one raw, unbounded score.
    """

    def __init__(self, obs_dim, action_dim, rng=None, dtype=np.float64, hidden=256,
                 kappa_hidden=64):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.hidden = hidden
        self._build_backbone(obs_dim, rng, dtype)
        self.direction = MLP.from_widths([hidden, action_dim], rng=rng, dtype=dtype)
        self.concentration = MLP.from_widths([hidden, kappa_hidden, 1], rng=rng, dtype=dtype)

    @property
    def n_outputs(self):
        return self.direction.out_width + self.concentration.out_width

    def networks(self):
        return {"backbone": self.backbone, "direction": self.direction,
                "concentration": self.concentration}

    def forward(self, states, normalize_direction=True):
        cb = self.backbone.forward(states)
        cd = self.direction.forward(cb.output)
        ck = self.concentration.forward(cb.output)
        mu_raw = cd.output
        if normalize_direction:
            mu, degenerate = normalize(mu_raw, return_degenerate=True)
        else:
            mu, degenerate = mu_raw, np.zeros(mu_raw.shape[:-1], dtype=bool)
        out = PolicyOutput(mu=mu, kappa=ck.output[..., 0], mu_raw=mu_raw,
                           degenerate=degenerate)
        return out, (cb, cd, ck)

    def backward(self, cache, grad_mu_raw, grad_kappa, input_grad=True):
        """Accumulate parameter gradients given ``dL/d mu_raw`` and ``dL/d kappa``.

        Returns the gradient w.r.t. the states, or None if ``input_grad`` is false.
        """
        cb, cd, ck = cache
        g_h = self.direction.backward(cd, grad_mu_raw)
        g_h = g_h + self.concentration.backward(ck, np.asarray(grad_kappa)[..., None])
        return self.backbone.backward(cb, g_h, input_grad=input_grad)


class GaussianPolicy(_Backbone):
    """Diagonal Gaussian head (mean and clamped log-std) squashed by tanh."""

    log_std_min = -5.0
    log_std_max = 2.0

    def __init__(self, obs_dim, action_dim, rng=None, dtype=np.float64, hidden=256):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.hidden = hidden
        self._build_backbone(obs_dim, rng, dtype)
        self.mean_head = MLP.from_widths([hidden, action_dim], rng=rng, dtype=dtype)
        self.log_std_head = MLP.from_widths([hidden, action_dim], rng=rng, dtype=dtype)

    @property
    def n_outputs(self):
        return self.mean_head.out_width + self.log_std_head.out_width

    def networks(self):
        return {"backbone": self.backbone, "mean": self.mean_head,
                "log_std": self.log_std_head}

    def forward(self, states):
        cb = self.backbone.forward(states)
        cm = self.mean_head.forward(cb.output)
        cs = self.log_std_head.forward(cb.output)
        raw = cs.output
        log_std = np.clip(raw, self.log_std_min, self.log_std_max)
        return GaussianPolicyOutput(cm.output, log_std), (cb, cm, cs)

    def sample(self, out, rng=None, noise=None):
        """Reparameterized tanh-squashed sample.

        Returns ``(action, log_prob, pre_squash, noise)`` where ``action`` lies
        in (-1, 1)^d and ``log_prob`` includes the tanh correction.
        """
        if noise is None:
            noise = rng.standard_normal(out.mean.shape).astype(out.mean.dtype)
        std = np.exp(out.log_std)
        pre = out.mean + std * noise
        action = np.tanh(pre)
        log_prob = gaussian_tanh_log_prob(pre, out.mean, out.log_std)
        return action, log_prob, pre, noise

    def backward(self, cache, grad_mean, grad_log_std, input_grad=True):
        cb, cm, cs = cache
        raw = cs.output
        # hard clamp passes no gradient outside its bounds
        inside = (raw >= self.log_std_min) & (raw <= self.log_std_max)
        g_h = self.mean_head.backward(cm, grad_mean)
        g_h = g_h + self.log_std_head.backward(cs, grad_log_std * inside)
        return self.backbone.backward(cb, g_h, input_grad=input_grad)


LOG_2PI = float(np.log(2.0 * np.pi))


def gaussian_tanh_log_prob(pre, mean, log_std):
    """Log density of ``tanh(pre)`` with ``pre ~ N(mean, exp(log_std)^2)``.

    Uses the stabilized correction ``log(1 - tanh(pre)^2 + 1e-6)``.
    """
    std = np.exp(log_std)
    z = (pre - mean) / std
    gauss = -0.5 * z**2 - log_std - 0.5 * LOG_2PI
    a = np.tanh(pre)
    return np.sum(gauss - np.log(1.0 - a**2 + 1e-6), axis=-1)


def critic_network(obs_dim, action_dim, rng=None, dtype=np.float64, hidden=256):
    """Q(s, a): MLP over the concatenated state and action."""
    return MLP.from_widths([obs_dim + action_dim, hidden, hidden, 1], rng=rng, dtype=dtype)


# --- checkpoint I/O -------------------------------------------------------
#
# Layout (all integers little-endian uint32, all reals little-endian f64):
#   magic  b"GACNET1\n"
#   n_networks
#   per network: name_len, name (utf-8), n_layers,
#                per layer: in_width, out_width, activation (0 relu, 1 identity)
#                then W row-major (in_width x out_width), then b (out_width)

def save_checkpoint(path, networks):
    """Write a ``{name: MLP}`` mapping to ``path``."""
    buf = bytearray(CHECKPOINT_MAGIC)
    buf += struct.pack("<I", len(networks))
    for name, net in networks.items():
        raw = name.encode("utf-8")
        buf += struct.pack("<I", len(raw)) + raw
        buf += struct.pack("<I", len(net.specs))
        for spec, W, b in zip(net.specs, net.weights, net.biases):
            buf += struct.pack("<III", spec.in_width, spec.out_width,
                               _ACT_CODES[spec.activation])
            buf += np.ascontiguousarray(W, dtype="<f8").tobytes()
            buf += np.ascontiguousarray(b, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path, dtype=np.float64):
    """Read a checkpoint written by :func:`save_checkpoint`."""
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a GACNET1 checkpoint")
    pos = len(CHECKPOINT_MAGIC)

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, data, pos)
        pos += struct.calcsize(fmt)
        return vals

    (n_nets,) = take("<I")
    nets = {}
    for _ in range(n_nets):
        (name_len,) = take("<I")
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (n_layers,) = take("<I")
        specs, Ws, bs = [], [], []
        for _ in range(n_layers):
            i, o, act = take("<III")
            specs.append(LayerSpec(i, o, _ACT_NAMES[act]))
            W = np.frombuffer(data, dtype="<f8", count=i * o, offset=pos).reshape(i, o)
            pos += 8 * i * o
            b = np.frombuffer(data, dtype="<f8", count=o, offset=pos)
            pos += 8 * o
            Ws.append(W)
            bs.append(b)
        net = MLP(specs, rng=None, dtype=dtype)
        for k in range(n_layers):
            net.weights[k][...] = Ws[k]
            net.biases[k][...] = bs[k]
        nets[name] = net
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    return nets
