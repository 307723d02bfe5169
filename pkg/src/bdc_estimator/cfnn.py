"""Cascade-forward neural network with a flat parameter vector.

Layer 0 is the input; layers ``1..L`` are hidden and ``L+1`` is the output.
Every layer receives its immediate predecessor and, when the cascade link is
enabled, the input and every earlier layer.

Parameter order (normative, used by model files): for each destination
layer in increasing order, for each connected source layer in increasing
order, the ``size(dst) x size(src)`` weight block in row-major order, then
the destination's bias vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch
from .normalization import Normalization

ACTIVATIONS = ("tansig", "purelin")


def tansig(x):
    """Hyperbolic tangent sigmoid ``2 / (1 + exp(-2x)) - 1``.

    Evaluated on ``|x|`` as ``-expm1(-2|x|) / (1 + exp(-2|x|))`` and sign
    restored, so nothing overflows and small arguments keep full precision.
    """
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore"):
        m = -2.0 * np.abs(x)
    out = np.copysign(-np.expm1(m) / (1.0 + np.exp(m)), x)
    return out if out.ndim else float(out)


def purelin(x):
    return x


@dataclass(frozen=True)
class CfnnTopology:
    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]
    cascade: frozenset[tuple[int, int]] = field(default=None)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"need >= 2 layers of size >= 1, got {sizes}")
        if len(self.activations) != len(sizes) - 1:
            raise ValueError("one activation per non-input layer required")
        bad = set(self.activations) - set(ACTIVATIONS)
        if bad:
            raise ValueError(f"unknown activation(s) {sorted(bad)}")
        if self.activations[-1] != "purelin":
            raise ValueError("the output layer must be purelin")
        if self.cascade is None:
            object.__setattr__(self, "cascade", frozenset(self.skip_pairs()))
        else:
            cascade = frozenset((int(s), int(d)) for s, d in self.cascade)
            if not cascade <= set(self.skip_pairs()):
                raise ValueError(f"cascade links must satisfy src < dst - 1: {sorted(cascade)}")
            object.__setattr__(self, "cascade", cascade)

    @classmethod
    def build(cls, n_in: int, hidden: Sequence[int], n_out: int,
              full_cascade: bool = True) -> "CfnnTopology":
        sizes = (n_in, *hidden, n_out)
        acts = ("tansig",) * len(hidden) + ("purelin",)
        return cls(sizes, acts, None if full_cascade else frozenset())

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes)

    def skip_pairs(self) -> list[tuple[int, int]]:
        n = len(self.layer_sizes)
        return [(s, d) for d in range(2, n) for s in range(d - 1)]

    def sources(self, dst: int) -> list[int]:
        return [s for s in range(dst) if s == dst - 1 or (s, dst) in self.cascade]

    def blocks(self) -> list[tuple[int, int | None, slice]]:
        """``(dst, src, slice)`` for every weight block; ``src is None`` marks a bias."""
        out = []
        pos = 0
        for dst in range(1, self.n_layers):
            nd = self.layer_sizes[dst]
            for src in self.sources(dst):
                size = nd * self.layer_sizes[src]
                out.append((dst, src, slice(pos, pos + size)))
                pos += size
            out.append((dst, None, slice(pos, pos + nd)))
            pos += nd
        return out


def param_count(topology: CfnnTopology) -> int:
    sizes = topology.layer_sizes
    return sum(sizes[d] * sum(sizes[s] for s in topology.sources(d)) + sizes[d]
               for d in range(1, topology.n_layers))


def unpack(topology: CfnnTopology, params: np.ndarray):
    """Return ``(weights, biases)`` as views into ``params``.

    ``weights[(dst, src)]`` has shape ``(size(dst), size(src))``.
    """
    params = np.asarray(params, dtype=float)
    n = param_count(topology)
    if params.shape != (n,):
        raise DimensionMismatch(f"expected {n} parameters, got shape {params.shape}")
    weights, biases = {}, {}
    sizes = topology.layer_sizes
    for dst, src, sl in topology.blocks():
        if src is None:
            biases[dst] = params[sl]
        else:
            weights[(dst, src)] = params[sl].reshape(sizes[dst], sizes[src])
    return weights, biases


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    return tansig(z) if name == "tansig" else z


def _as_batch(topology: CfnnTopology, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != topology.n_in:
        raise DimensionMismatch(f"input width {x2.shape[-1]} != n_in {topology.n_in}")
    return x2, single


def _forward_all(topology, weights, biases, x):
    acts = [x]
    for dst in range(1, topology.n_layers):
        z = biases[dst] + sum(acts[src] @ weights[(dst, src)].T for src in topology.sources(dst))
        acts.append(_activate(topology.activations[dst - 1], z))
    return acts


def forward(topology: CfnnTopology, params: np.ndarray, x) -> np.ndarray:
    """Network output for one row (1-D) or a batch of rows (2-D)."""
    weights, biases = unpack(topology, params)
    x2, single = _as_batch(topology, x)
    y = _forward_all(topology, weights, biases, x2)[-1]
    return y[0] if single else y


def _xy(topology, dataset):
    if isinstance(dataset, tuple):
        x, y = dataset
    else:
        x, y = dataset.inputs, dataset.targets
    x2, _ = _as_batch(topology, x)
    y = np.asarray(y, dtype=float).reshape(len(x2), -1)
    if y.shape[1] != topology.n_out:
        raise DimensionMismatch(f"target width {y.shape[1]} != n_out {topology.n_out}")
    return x2, y


def sse_loss(topology: CfnnTopology, params: np.ndarray, dataset) -> float:
    """Sum of squared errors over all rows and outputs.

    ``dataset`` is a :class:`~bdc_estimator.simulator.Dataset` (normalized
    columns are used) or an ``(inputs, targets)`` tuple.
    """
    x, y = _xy(topology, dataset)
    err = y - forward(topology, params, x)
    return float(np.sum(err * err))


def loss_and_gradient(topology: CfnnTopology, params: np.ndarray, dataset) -> tuple[float, np.ndarray]:
    x, y_d = _xy(topology, dataset)
    weights, biases = unpack(topology, params)
    acts = _forward_all(topology, weights, biases, x)
    err = y_d - acts[-1]
    loss = float(np.sum(err * err))

    grad = np.zeros(param_count(topology))
    g_w, g_b = unpack(topology, grad)
    # back-propagated error w.r.t. each layer's activation; cascade links
    # feed every later layer's delta back into its sources
    g_act = [np.zeros_like(a) for a in acts]
    g_act[-1] = -2.0 * err
    for dst in range(topology.n_layers - 1, 0, -1):
        if topology.activations[dst - 1] == "tansig":
            delta = g_act[dst] * (1.0 - acts[dst] ** 2)
        else:
            delta = g_act[dst]
        g_b[dst][:] = delta.sum(axis=0)
        for src in topology.sources(dst):
            g_w[(dst, src)][:] = delta.T @ acts[src]
            if src > 0:
                g_act[src] += delta @ weights[(dst, src)]
    return loss, grad


def gradient(topology: CfnnTopology, params: np.ndarray, dataset) -> np.ndarray:
    """Exact gradient of :func:`sse_loss` in canonical parameter order."""
    return loss_and_gradient(topology, params, dataset)[1]


def init_weights(topology: CfnnTopology, seed: int, scheme: str = "uniform",
                 value: float = 0.0) -> np.ndarray:
    """Initial parameter vector.

    ``scheme="uniform"`` draws each destination's weights and bias uniformly
    from ``+-1/sqrt(fan_in)`` where ``fan_in`` counts all connected source
    units; ``scheme="constant"`` fills with ``value``.
    """
    n = param_count(topology)
    if scheme == "constant":
        return np.full(n, float(value))
    if scheme != "uniform":
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    out = np.empty(n)
    sizes = topology.layer_sizes
    for dst, src, sl in topology.blocks():
        fan_in = sum(sizes[s] for s in topology.sources(dst))
        bound = 1.0 / math.sqrt(fan_in)
        out[sl] = rng.uniform(-bound, bound, sl.stop - sl.start)
    return out


@dataclass
class CfnnModel:
    """Trained network plus the scaling it was trained with."""

    topology: CfnnTopology
    params: np.ndarray
    input_norm: Normalization
    target_norm: Normalization
    delay_taps: int = 0

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float)
        if self.params.shape != (param_count(self.topology),):
            raise DimensionMismatch(
                f"model has {self.params.size} parameters, topology needs {param_count(self.topology)}")

    def predict(self, raw_inputs: np.ndarray) -> np.ndarray:
        """Denormalized outputs for raw (unscaled) input rows."""
        z = forward(self.topology, self.params, self.input_norm.normalize(raw_inputs))
        return self.target_norm.denormalize(z)

    def to_text(self) -> str:
        t = self.topology
        vec = lambda a: " ".join(repr(float(v)) for v in np.atleast_1d(a))
        lines = [
            "# cascade-forward network model",
            f"layer_sizes = {' '.join(str(s) for s in t.layer_sizes)}",
            f"activations = {' '.join(t.activations)}",
            f"cascade = {' '.join(f'{s}-{d}' for s, d in sorted(t.cascade, key=lambda p: (p[1], p[0])))}",
            f"delay_taps = {self.delay_taps}",
            f"input_min = {vec(self.input_norm.minimum)}",
            f"input_max = {vec(self.input_norm.maximum)}",
            f"target_min = {vec(self.target_norm.minimum)}",
            f"target_max = {vec(self.target_norm.maximum)}",
            f"param_count = {self.params.size}",
            "params",
        ]
        lines += [repr(float(v)) for v in self.params]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CfnnModel":
        lines = text.splitlines()
        header: dict[str, str] = {}
        k = 0
        while k < len(lines):
            line = lines[k].strip()
            k += 1
            if not line or line.startswith("#"):
                continue
            if line == "params":
                break
            key, sep, val = line.partition("=")
            if not sep:
                raise ValueError(f"model file line {k}: expected 'key = value'")
            header[key.strip()] = val.strip()
        else:
            raise ValueError("model file has no 'params' section")
        required = {"layer_sizes", "activations", "cascade", "delay_taps", "input_min",
                    "input_max", "target_min", "target_max", "param_count"}
        missing = required - set(header)
        if missing:
            raise ValueError(f"model file lacks {sorted(missing)}")
        floats = lambda s: np.array([float(v) for v in s.split()])
        cascade = frozenset(tuple(int(v) for v in item.split("-")) for item in header["cascade"].split())
        topology = CfnnTopology(tuple(int(v) for v in header["layer_sizes"].split()),
                                tuple(header["activations"].split()), cascade)
        params = np.array([float(v) for v in lines[k:] if v.strip()])
        if params.size != int(header["param_count"]) or params.size != param_count(topology):
            raise DimensionMismatch(
                f"model file carries {params.size} parameters, header says {header['param_count']}, "
                f"topology needs {param_count(topology)}")
        return cls(topology, params,
                   Normalization(floats(header["input_min"]), floats(header["input_max"])),
                   Normalization(floats(header["target_min"]), floats(header["target_max"])),
                   int(header["delay_taps"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "CfnnModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

