"""Minimal trainable 1-D CNN detector and its complexity accounting.

Architecture: conv/pool layers, then global average pooling (GAP), then a
single sigmoid neuron. Inputs are I/Q pairs of shape ``(batch, 2, N)``.

Conv layers use same padding, stride 1 and ReLU. Pool layers take the max
over non-overlapping windows and drop any tail shorter than the window.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .signals import LabeledDataset, seed_sequence

INPUT_CHANNELS = 2

_TOKEN = re.compile(r"^(?:C(\d+)x(\d+)|P(\d+)|GAP)$")


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" | "pool" | "gap"
    n_filters: int = 0
    kernel_size: int = 0
    pool_size: int = 0

    def __post_init__(self):
        if self.kind == "conv":
            if self.n_filters < 1 or self.kernel_size < 1:
                raise ValueError("conv layers need positive filter count and size")
        elif self.kind == "pool":
            if self.pool_size < 1:
                raise ValueError("pool layers need a positive window")
        elif self.kind != "gap":
            raise ValueError(f"unknown layer kind {self.kind!r}")

    @property
    def token(self) -> str:
        if self.kind == "conv":
            return f"C{self.n_filters}x{self.kernel_size}"
        if self.kind == "pool":
            return f"P{self.pool_size}"
        return "GAP"

    @classmethod
    def from_token(cls, token: str) -> "LayerSpec":
        m = _TOKEN.match(token.strip())
        if not m:
            raise ValueError(f"bad layer token {token!r}")
        if m.group(1):
            return cls("conv", int(m.group(1)), int(m.group(2)))
        if m.group(3):
            return cls("pool", pool_size=int(m.group(3)))
        return cls("gap")


def conv(n_filters, kernel_size):
    return LayerSpec("conv", n_filters, kernel_size)


def pool(size):
    return LayerSpec("pool", pool_size=size)


GAP = LayerSpec("gap")


@dataclass(frozen=True)
class ArchSpec:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers or layers[0].kind != "conv":
            raise ValueError("the first layer must be a convolution")
        if layers[-1].kind != "gap" or sum(l.kind == "gap" for l in layers) != 1:
            raise ValueError("exactly one GAP layer is allowed, in final position")

    def __str__(self):
        return ",".join(l.token for l in self.layers)

    @property
    def tokens(self):
        return [l.token for l in self.layers]

    @classmethod
    def parse(cls, text) -> "ArchSpec":
        if isinstance(text, str):
            text = text.split(",")
        return cls(tuple(LayerSpec.from_token(t) for t in text))


# Best architectures reported for datasets 1-3.
TABLE_IV = {
    "dataset1": ArchSpec.parse("C64x3,GAP"),
    "dataset2": ArchSpec.parse("C64x3,C64x3,C32x5,C32x5,C16x3,C16x3,GAP"),
    "dataset3": ArchSpec.parse("C32x3,C32x3,C64x5,C64x5,C16x5,C16x5,C8x3,C64x3,GAP"),
}


# ---------------------------------------------------------------------------
# network


@dataclass
class Network:
    architecture: ArchSpec
    input_length: int
    layers: list  # per conv layer {"W": (F, C, s), "b": (F,)}; {} for pool/gap
    head_w: np.ndarray
    head_b: np.ndarray = field(default_factory=lambda: np.zeros(1))
    input_channels: int = INPUT_CHANNELS

    def parameters(self) -> list:
        """Parameter arrays in layer order; views, so in-place updates stick."""
        out = []
        for p in self.layers:
            if p:
                out += [p["W"], p["b"]]
        return out + [self.head_w, self.head_b]

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "Network":
        return Network(
            self.architecture,
            self.input_length,
            [{k: v.copy() for k, v in p.items()} for p in self.layers],
            self.head_w.copy(),
            self.head_b.copy(),
            self.input_channels,
        )


def layer_lengths(arch: ArchSpec, input_length: int) -> list:
    """Signal length entering each layer (and the final length after the last)."""
    lengths = [input_length]
    n = input_length
    for layer in arch.layers:
        if layer.kind == "pool":
            if n < layer.pool_size:
                raise ValueError(f"pool of size {layer.pool_size} on a length-{n} signal")
            n //= layer.pool_size
        lengths.append(n)
    return lengths


def build_network(arch: ArchSpec, input_length: int, seed=None) -> Network:
    """Glorot-uniform conv kernels (fan-in plus fan-out scaled), zero biases.

    The classifier weights also start at zero. A random head can disagree in
    sign with the energy cue on strong signals, and its early gradients then
    drive whole conv filters into the dead ReLU region.
    """
    if input_length < 1:
        raise ValueError("input_length must be at least 1")
    layer_lengths(arch, input_length)
    rng = np.random.default_rng(seed_sequence(seed) if seed is not None else None)
    c = INPUT_CHANNELS
    layers = []
    for layer in arch.layers:
        if layer.kind == "conv":
            s, f = layer.kernel_size, layer.n_filters
            limit = math.sqrt(6.0 / (c * s + f * s))
            layers.append({"W": rng.uniform(-limit, limit, (f, c, s)), "b": np.zeros(f)})
            c = f
        else:
            layers.append({})
    return Network(arch, input_length, layers, np.zeros(c), np.zeros(1))


def _as_batch(network: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1] != network.input_channels or x.shape[2] != network.input_length:
        raise ValueError(
            f"expected input of shape (batch, {network.input_channels}, {network.input_length}), got {x.shape}"
        )
    return x


def _pads(kernel_size):
    left = (kernel_size - 1) // 2
    return left, kernel_size - 1 - left


def _forward(network: Network, x):
    """Logits plus the cache needed for backprop. ``x`` is (B, 2, N)."""
    h = np.ascontiguousarray(x.transpose(0, 2, 1))  # (B, N, C)
    cache = []
    for layer, p in zip(network.architecture.layers, network.layers):
        if layer.kind == "conv":
            B, N, C = h.shape
            s = layer.kernel_size
            hp = np.pad(h, ((0, 0), _pads(s), (0, 0)))
            cols = sliding_window_view(hp, s, axis=1).reshape(B, N, C * s)
            Wm = p["W"].transpose(1, 2, 0).reshape(C * s, -1)
            z = cols @ Wm + p["b"]
            cache.append((cols, z, h.shape))
            h = np.maximum(z, 0.0)
        elif layer.kind == "pool":
            B, N, C = h.shape
            sp = layer.pool_size
            m = N // sp
            win = h[:, : m * sp].reshape(B, m, sp, C)
            idx = np.argmax(win, axis=2)
            cache.append((idx, h.shape))
            h = np.take_along_axis(win, idx[:, :, None, :], axis=2)[:, :, 0, :]
        else:
            cache.append(h.shape)
            h = h.mean(axis=1)
    z = h @ network.head_w + network.head_b[0]
    return z, h, cache


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z)))


def forward(network: Network, x) -> np.ndarray:
    """Detection probabilities for a batch of I/Q inputs, shape (batch,)."""
    z, _, _ = _forward(network, _as_batch(network, x))
    return sigmoid(z)


def bce_loss(z, y) -> float:
    """Mean binary cross-entropy from logits; ``y`` may be soft."""
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def loss_and_grads(network: Network, x, y):
    """Mean BCE and its gradient for every entry of ``network.parameters()``."""
    x = _as_batch(network, x)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    z, g, cache = _forward(network, x)
    loss = bce_loss(z, y)
    dz = (sigmoid(z) - y) / y.size
    grad_head_w = g.T @ dz
    grad_head_b = np.array([dz.sum()])
    dh = dz[:, None] * network.head_w[None, :]
    grads = []
    for layer, p, c in reversed(list(zip(network.architecture.layers, network.layers, cache))):
        if layer.kind == "gap":
            B, N, C = c
            dh = np.broadcast_to(dh[:, None, :] / N, (B, N, C))
        elif layer.kind == "pool":
            idx, shape = c
            B, N, C = shape
            sp = layer.pool_size
            m = N // sp
            dwin = np.zeros((B, m, sp, C))
            np.put_along_axis(dwin, idx[:, :, None, :], dh[:, :, None, :], axis=2)
            full = np.zeros(shape)
            full[:, : m * sp] = dwin.reshape(B, m * sp, C)
            dh = full
        else:
            cols, z_l, shape = c
            B, N, C = shape
            s = layer.kernel_size
            F = p["W"].shape[0]
            dz_l = dh * (z_l > 0)
            dWm = cols.reshape(B * N, C * s).T @ dz_l.reshape(B * N, F)
            db = dz_l.sum(axis=(0, 1))
            grads.append((dWm.reshape(C, s, F).transpose(2, 0, 1), db))
            Wm = p["W"].transpose(1, 2, 0).reshape(C * s, F)
            dcols = (dz_l @ Wm.T).reshape(B, N, C, s)
            left, right = _pads(s)
            dhp = np.zeros((B, N + s - 1, C))
            for k in range(s):
                dhp[:, k : k + N] += dcols[:, :, :, k]
            dh = dhp[:, left : left + N]
    out = []
    for dW, db in reversed(grads):
        out += [dW, db]
    return loss, out + [grad_head_w, grad_head_b]


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    network: Network
    initial_loss: float
    losses: list  # training-set loss after each epoch
    val_accuracy: list = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    def log_records(self):
        acc = self.val_accuracy or [math.nan] * len(self.losses)
        return [
            {"epoch": i + 1, "loss": l, "val_accuracy": a} for i, (l, a) in enumerate(zip(self.losses, acc))
        ]


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _dataset_arrays(dataset):
    if isinstance(dataset, LabeledDataset):
        return dataset.to_iq(), dataset.labels.astype(np.float64)
    x, y = dataset
    return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)


def evaluate_loss(network: Network, x, y, batch_size=1024) -> float:
    total = 0.0
    for i in range(0, len(y), batch_size):
        z, _, _ = _forward(network, x[i : i + batch_size])
        total += bce_loss(z, y[i : i + batch_size]) * len(z)
    return total / len(y)


def accuracy(network: Network, x, y, threshold=0.5, batch_size=1024) -> float:
    hits = 0
    for i in range(0, len(y), batch_size):
        p = forward(network, x[i : i + batch_size])
        hits += np.sum((p > threshold) == (y[i : i + batch_size] > 0.5))
    return float(hits) / len(y)


def train(network: Network, dataset, epochs: int, seed=None, batch_size=64, lr=1e-3, validation=None) -> TrainResult:
    """Mini-batch Adam on binary cross-entropy; mutates and returns ``network``.

    ``dataset`` and ``validation`` may be a ``LabeledDataset`` or an ``(x, y)``
    pair with ``x`` of shape (count, 2, N).
    """
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    x, y = _dataset_arrays(dataset)
    if np.unique(y).size < 2:
        raise ValueError("training data must contain both classes")
    _as_batch(network, x[:1])
    val = _dataset_arrays(validation) if validation is not None else None
    rng = np.random.default_rng(seed_sequence(seed) if seed is not None else None)
    opt = Adam(network.parameters(), lr=lr)
    result = TrainResult(network, evaluate_loss(network, x, y), [])
    for _ in range(epochs):
        order = rng.permutation(len(y))
        for i in range(0, len(y), batch_size):
            b = order[i : i + batch_size]
            _, grads = loss_and_grads(network, x[b], y[b])
            opt.step(grads)
        result.losses.append(evaluate_loss(network, x, y))
        if val is not None:
            result.val_accuracy.append(accuracy(network, *val))
    return result


def kfold_indices(n: int, k: int, seed=None) -> list:
    """Seeded shuffle split into ``k`` disjoint folds covering ``range(n)``."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < k:
        raise ValueError("need at least k samples")
    rng = np.random.default_rng(seed_sequence(seed) if seed is not None else None)
    return np.array_split(rng.permutation(n), k)


def kfold_scores(arch: ArchSpec, dataset, k=10, epochs=15, seed=0, map_fn=map, **train_kw) -> list:
    """Held-out accuracy (threshold 0.5) of a fresh network per fold.

    Folds are independent jobs; pass a parallel ``map_fn`` to fan them out.
    Each fold's seeds derive from (seed, fold index) only.
    """
    x, y = _dataset_arrays(dataset)
    if k < 2 or len(y) < k:
        raise ValueError("need k >= 2 and at least k samples")
    fold_seed, *job_seeds = seed_sequence(seed).spawn(k + 1)
    folds = kfold_indices(len(y), k, fold_seed)

    def job(i):
        held = folds[i]
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
        init_seed, shuffle_seed = job_seeds[i].spawn(2)
        net = build_network(arch, x.shape[2], init_seed)
        train(net, (x[train_idx], y[train_idx]), epochs, shuffle_seed, **train_kw)
        return accuracy(net, x[held], y[held])

    return list(map_fn(job, range(k)))


def kfold_accuracy(arch: ArchSpec, dataset, k=10, epochs=15, seed=0, **train_kw) -> float:
    """Mean held-out accuracy over ``k`` folds."""
    return float(np.mean(kfold_scores(arch, dataset, k, epochs, seed, **train_kw)))


def grad_check(network: Network, x, y, h=1e-5, grad_fn=None) -> float:
    """Largest per-array relative error between analytic and central-difference gradients.

    Relative error of an array is ||g_a - g_n|| / max(||g_a|| + ||g_n||, 1e-12).
    ``grad_fn(network, x, y)`` overrides the analytic gradient (for negative controls).
    """
    if not h > 0:
        raise ValueError("h must be positive")
    grad_fn = grad_fn or (lambda net, xx, yy: loss_and_grads(net, xx, yy)[1])
    x = _as_batch(network, x)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    analytic = grad_fn(network, x, y)

    def loss():
        z, _, _ = _forward(network, x)
        return bce_loss(z, y)

    worst = 0.0
    for p, ga in zip(network.parameters(), analytic):
        gn = np.zeros_like(p)
        flat, gflat = p.reshape(-1), gn.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss()
            flat[i] = old - h
            down = loss()
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        denom = max(np.linalg.norm(ga) + np.linalg.norm(gn), 1e-12)
        worst = max(worst, float(np.linalg.norm(ga - gn) / denom))
    return worst


# ---------------------------------------------------------------------------
# cost model


@dataclass(frozen=True)
class CostReport:
    rrm: int
    weights: int

    @property
    def rrm_millions(self) -> str:
        return f"{self.rrm / 1e6:.3f}"

    @property
    def weights_thousands(self) -> str:
        return f"{self.weights / 1e3:.1f}"


def count_cost(arch: ArchSpec, input_length: int) -> CostReport:
    """Real multiplications per inference and trainable weights.

    Same-padded conv: N * n_f * s_f * c_in multiplications and
    n_f * s_f * c_in + n_f weights. Pooling and GAP cost nothing; the final
    neuron adds c multiplications and c + 1 weights. Bias additions are not
    multiplications.
    """
    lengths = layer_lengths(arch, input_length)
    c = INPUT_CHANNELS
    rrm = weights = 0
    for layer, n in zip(arch.layers, lengths):
        if layer.kind == "conv":
            k = layer.kernel_size * c
            rrm += n * layer.n_filters * k
            weights += layer.n_filters * k + layer.n_filters
            c = layer.n_filters
    return CostReport(rrm + c, weights + c + 1)


# ---------------------------------------------------------------------------
# serialization

_NET_MAGIC = "SSNET1"


def save_network(network: Network, path) -> None:
    """One ASCII header line (magic, input length, arch tokens) then f64 LE parameters."""
    header = f"{_NET_MAGIC} {network.input_length} {network.architecture}\n".encode("ascii")
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in network.parameters())
    Path(path).write_bytes(header + body)


def load_network(path) -> Network:
    raw = Path(path).read_bytes()
    end = raw.index(b"\n")
    magic, length, tokens = raw[:end].decode("ascii").split(" ")
    if magic != _NET_MAGIC:
        raise ValueError(f"{path}: not a saved network")
    net = build_network(ArchSpec.parse(tokens), int(length), seed=0)
    flat = np.frombuffer(raw, dtype="<f8", offset=end + 1)
    expected = net.n_parameters()
    if flat.size != expected:
        raise ValueError(f"{path}: expected {expected} parameters, found {flat.size}")
    offset = 0
    for p in net.parameters():
        p[...] = flat[offset : offset + p.size].reshape(p.shape)
        offset += p.size
    return net
