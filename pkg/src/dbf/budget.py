"""Bit-budget arithmetic and nonuniform allocation across layers.

The middle dimension is the compression knob: a layer stores
``n*k + k*m`` sign bits plus three scale vectors, so ``k = b*n*m/(n+m)``
hits ``b`` sign bits per weight.  Allocation treats middle channels as
prunable units: each channel of an ``n x m`` layer costs ``n + m`` sign
bits, channels are scored by the squared sensitivity of the layer
reconstruction loss to their middle scale, and a global greedy keeps the
densest score-per-bit channels subject to a per-layer floor.

Bits-per-weight figures here count sign bits only; ``storage_bits`` adds
the scale-vector overhead.  Scoring of distinct layers is independent;
allocation itself is a single-threaded reduction over all scores.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .bitcore import DbfLayer, unpack
from .factorize import FactorizeConfig, factorize
from .validation import as_matrix, as_vector


@dataclass(frozen=True)
class LayerSpec:
    """Shape and pooling identity of one layer in a collection."""

    name: str
    n: int
    m_dim: int
    group_key: tuple | None = None

    def __post_init__(self):
        if self.n < 1 or self.m_dim < 1:
            raise ValueError(f"layer {self.name}: dims must be >= 1")

    @property
    def group(self) -> tuple:
        return self.group_key if self.group_key is not None else (self.n, self.m_dim)

    @property
    def channel_cost(self) -> int:
        """Sign bits stored per middle channel (one A column + one B row)."""
        return self.n + self.m_dim

    @property
    def weights(self) -> int:
        return self.n * self.m_dim


@dataclass(frozen=True)
class ChannelScores:
    name: str
    scores: np.ndarray  # (k,), >= 0

    def __post_init__(self):
        object.__setattr__(self, "scores", as_vector(self.scores, "scores"))
        if (self.scores < 0).any():
            raise ValueError("channel scores must be nonnegative")


class StorageBits(NamedTuple):
    total_bits: int | float
    bits_per_weight: float
    scale_overhead_bpw: float


@dataclass
class LayerAllocation:
    name: str
    n: int
    m_dim: int
    k_old: int
    k_new: int
    bits_per_weight: float


@dataclass
class LayerBudget:
    entries: list[LayerAllocation]
    total_bits_per_weight: float

    def k_for(self, name: str) -> int:
        for e in self.entries:
            if e.name == name:
                return e.k_new
        raise KeyError(name)

    def to_json(self) -> str:
        payload = {
            "layers": [
                {
                    "layer": e.name,
                    "n": e.n,
                    "m": e.m_dim,
                    "k_old": e.k_old,
                    "k_new": e.k_new,
                    "bpw": e.bits_per_weight,
                }
                for e in self.entries
            ],
            "summary": {"total_bpw": self.total_bits_per_weight},
        }
        return json.dumps(payload, indent=2)


def middle_dim(n: int, m_dim: int, bits: float, granularity: int = 32) -> int:
    """Largest multiple of ``granularity`` with at most ``bits`` sign bits
    per weight, never below ``granularity`` itself.

    Warns when even one granularity block exceeds the requested budget.
    """
    if bits <= 0:
        raise ValueError(f"bits must be > 0, got {bits}")
    if granularity < 1:
        raise ValueError(f"granularity must be >= 1, got {granularity}")
    raw = bits * n * m_dim / (n + m_dim)
    k = int(raw // granularity) * granularity
    if k < granularity:
        warnings.warn(
            f"budget of {bits} bits/weight for {n}x{m_dim} is below one "
            f"granularity block; clamping k to {granularity}",
            stacklevel=2,
        )
        return granularity
    return k


def storage_bits(n: int, k: int, m_dim: int, scale_width_bits: int = 16) -> StorageBits:
    """Total stored bits, bits per weight, and the scale-vector share."""
    if min(n, k, m_dim) < 1:
        raise ValueError("dims must be >= 1")
    scale_bits = (n + k + m_dim) * scale_width_bits
    total = n * k + k * m_dim + scale_bits
    weights = n * m_dim
    return StorageBits(total, total / weights, scale_bits / weights)


def channel_scores(layer: DbfLayer, X_batches, Y_batches, name: str = "layer") -> ChannelScores:
    """Squared mid-scale sensitivities of the reconstruction loss.

    For each batch, the loss is the squared error of the layer's outputs
    against the targets; the gradient with respect to each middle scale is
    taken analytically through the staged forward, and
    ``score_i = sum_batches (grad_i * mid_i)^2``.
    """
    X_batches = list(X_batches)
    Y_batches = list(Y_batches)
    if not X_batches or len(X_batches) != len(Y_batches):
        raise ValueError("need at least one (X, Y) batch pair")
    Ad = unpack(layer.A)
    Bd = unpack(layer.B)
    scores = np.zeros(layer.k)
    for X, Y in zip(X_batches, Y_batches):
        X = as_matrix(X, "X")
        Y = as_matrix(Y, "Y")
        if X.shape != (X.shape[0], layer.m_dim) or Y.shape != (X.shape[0], layer.n):
            raise ValueError(
                f"batch shapes {X.shape}/{Y.shape} do not match layer "
                f"{layer.n}x{layer.m_dim}"
            )
        h1 = (X * layer.b[None, :]) @ Bd.T
        out = (h1 * layer.mid[None, :]) @ Ad.T * layer.a[None, :]
        d_h2 = (2.0 * (out - Y) * layer.a[None, :]) @ Ad
        grad = np.sum(d_h2 * h1, axis=0)
        scores += (grad * layer.mid) ** 2
    return ChannelScores(name, scores)


def _ceil_to(x: float, g: int) -> int:
    return int(np.ceil(x / g)) * g


def _floor_k(spec: LayerSpec, floor_bpw: float, granularity: int, k_src: int) -> int:
    if floor_bpw <= 0:
        return 0
    k = _ceil_to(floor_bpw * spec.weights / spec.channel_cost, granularity)
    return min(k, k_src)


def allocate(
    layers: Sequence[LayerSpec],
    scores: Sequence[ChannelScores],
    target_bpw: float,
    floor_bpw: float = 0.0,
    granularity: int = 32,
) -> LayerBudget:
    """Choose per-layer middle dimensions under a global sign-bit budget.

    Channels are retained per layer in descending score order, in whole
    granularity blocks that compete globally on score mass per bit (within
    a shape group this is plain score order); each layer keeps at least
    its floor-implied count.  A block that does not fit is skipped, so
    later cheaper blocks may still be retained.  Ties are broken by
    (layer name, channel index) for determinism.
    """
    if granularity < 1:
        raise ValueError(f"granularity must be >= 1, got {granularity}")
    by_name = {s.name: s for s in scores}
    if len(by_name) != len(layers) or any(l.name not in by_name for l in layers):
        raise ValueError("layers and scores must match one-to-one by name")

    total_weights = sum(l.weights for l in layers)
    budget = target_bpw * total_weights
    slack = budget * 1e-12  # tolerate float round-off when the target is exact

    k_src = {l.name: by_name[l.name].scores.size for l in layers}
    floors = {l.name: _floor_k(l, floor_bpw, granularity, k_src[l.name]) for l in layers}
    used = float(sum(floors[l.name] * l.channel_cost for l in layers))
    if used > budget + slack:
        deficit = used - budget
        raise ValueError(
            f"floor of {floor_bpw} bits/weight is infeasible under target "
            f"{target_bpw}: short by {deficit:.0f} bits"
        )

    # Channels are retained per layer in descending score order, so the only
    # retainable units beyond the floor are whole granularity blocks of each
    # layer's next-best channels.  Block masses are nonincreasing within a
    # layer; a global walk by score mass per bit therefore keeps prefixes.
    sorted_scores = {s.name: np.sort(s.scores)[::-1] for s in scores}
    blocks = []
    for spec in layers:
        sc = sorted_scores[spec.name]
        start = floors[spec.name]
        for j in range(start, k_src[spec.name] - granularity + 1, granularity):
            mass = float(sc[j : j + granularity].sum())
            blocks.append((-mass / (granularity * spec.channel_cost), spec.name, j, spec))
    blocks.sort(key=lambda c: (c[0], c[1], c[2]))

    kept = dict(floors)
    for _, name, j, spec in blocks:
        if kept[name] != j:
            continue  # an earlier, denser block of this layer did not fit
        cost = granularity * spec.channel_cost
        if used + cost <= budget + slack:
            kept[name] = j + granularity
            used += cost

    entries = []
    used_final = 0
    for spec in layers:
        k = kept[spec.name]
        used_final += k * spec.channel_cost
        entries.append(
            LayerAllocation(
                name=spec.name,
                n=spec.n,
                m_dim=spec.m_dim,
                k_old=k_src[spec.name],
                k_new=k,
                bits_per_weight=k * spec.channel_cost / spec.weights,
            )
        )
    return LayerBudget(entries, used_final / total_weights)


@dataclass
class ReallocationResult:
    budget: LayerBudget
    layers: dict[str, DbfLayer]
    errors: dict[str, float]
    source_errors: dict[str, float] = field(default_factory=dict)


def reallocate_pipeline(
    weights: dict[str, np.ndarray],
    calib: dict[str, Sequence[np.ndarray]],
    start_bpw: float,
    target_bpw: float,
    floor_bpw: float,
    config: FactorizeConfig | None = None,
    granularity: int = 32,
    groups: dict[str, tuple] | None = None,
) -> ReallocationResult:
    """One round of score-driven re-compression.

    Factorizes every layer at ``start_bpw``, scores the middle channels on
    the calibration batches (targets are the uncompressed layer's
    outputs), allocates nonuniform middle dimensions for ``target_bpw``
    with the given floor, then factorizes again at the allocated sizes.
    """
    if not (start_bpw > target_bpw >= floor_bpw):
        raise ValueError(
            f"need start_bpw > target_bpw >= floor_bpw, got "
            f"{start_bpw} / {target_bpw} / {floor_bpw}"
        )
    if config is None:
        config = FactorizeConfig()
    groups = groups or {}

    specs = []
    all_scores = []
    source_errors = {}
    for name, W in weights.items():
        W = as_matrix(W, name)
        n, m = W.shape
        spec = LayerSpec(name=name, n=n, m_dim=m, group_key=groups.get(name))
        specs.append(spec)
        k0 = middle_dim(n, m, start_bpw, granularity)
        layer0, report0 = factorize(W, k0, config)
        source_errors[name] = report0.final_error
        X_batches = [as_matrix(X, f"calib[{name}]") for X in calib[name]]
        Y_batches = [X @ W.T for X in X_batches]
        all_scores.append(channel_scores(layer0, X_batches, Y_batches, name=name))

    budget = allocate(specs, all_scores, target_bpw, floor_bpw, granularity)

    final_layers = {}
    errors = {}
    for name, W in weights.items():
        layer, report = factorize(np.asarray(W, dtype=np.float64), budget.k_for(name), config)
        final_layers[name] = layer
        errors[name] = report.final_error
    return ReallocationResult(budget, final_layers, errors, source_errors)
