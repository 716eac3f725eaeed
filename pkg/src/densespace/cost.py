"""Cost accounting: FLOPs counting, lookup tables, chained and local
cost estimation, exact cost of derived architectures, the regularized
loss, and analytic gradients of the chained estimate.

FLOPs convention: one multiply-accumulate counts as one FLOP. This is
the convention under which ResNet-18 at 224x224 comes out near 1.81e9.
Normalization and activation layers count as zero.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

import numpy as np

from .params import (
    ArchParams,
    EdgeKey,
    LayerKey,
    PathDistribution,
    op_weights,
    path_probs,
    validate_binding,
)
from .space import (
    KIND_CONV,
    KIND_LINEAR,
    KIND_MBCONV,
    KIND_RESNET_BASIC,
    KIND_RESNET_BOTTLENECK,
    KIND_SKIP,
    BOTTLENECK_EXPANSION,
    ConnectionSpec,
    OperationKind,
    SuperNetworkSpec,
)

UNIT_FLOPS = "FLOPs"
UNIT_MS = "milliseconds"


class CostError(ValueError):
    """Invalid cost inputs (bad signature, malformed table, bad loss args)."""


class MissingCostEntryError(KeyError):
    """A queried signature is absent from the cost table."""

    def __init__(self, signatures: list["OpSignature"]):
        self.signatures = signatures
        listing = ", ".join(str(s) for s in signatures[:8])
        more = "" if len(signatures) <= 8 else f" (+{len(signatures) - 8} more)"
        super().__init__(f"missing cost table entries: {listing}{more}")


@dataclass(frozen=True, order=True)
class OpSignature:
    kind: str
    kernel: int
    expansion: int
    c_in: int
    c_out: int
    res_in: int
    stride: int

    def __post_init__(self) -> None:
        if self.c_in < 1 or self.c_out < 1:
            raise CostError(f"channels must be positive: {self}")
        if self.stride not in (1, 2):
            raise CostError(f"stride must be 1 or 2: {self}")
        if self.res_in % self.stride:
            raise CostError(f"resolution {self.res_in} not divisible by stride {self.stride}")

    def __str__(self) -> str:
        return (f"{self.kind}(k={self.kernel},e={self.expansion},"
                f"{self.c_in}->{self.c_out},res={self.res_in},s={self.stride})")

    @classmethod
    def of(cls, op: OperationKind, c_in: int, c_out: int, res_in: int, stride: int) -> "OpSignature":
        return cls(op.kind, op.kernel, op.expansion, c_in, c_out, res_in, stride)


def flops_of(sig: OpSignature) -> float:
    """Multiply-accumulate count of one operation."""
    res_out = sig.res_in // sig.stride
    if sig.kind == KIND_SKIP:
        return 0.0
    if sig.kind == KIND_CONV:
        return float(sig.kernel ** 2 * sig.c_in * sig.c_out * res_out ** 2)
    if sig.kind == KIND_LINEAR:
        return float(sig.c_in * sig.c_out)
    if sig.kind == KIND_MBCONV:
        hidden = sig.c_in * sig.expansion
        expand = sig.c_in * hidden * sig.res_in ** 2
        depthwise = sig.kernel ** 2 * hidden * res_out ** 2
        project = hidden * sig.c_out * res_out ** 2
        return float(expand + depthwise + project)
    if sig.kind == KIND_RESNET_BASIC:
        conv1 = 9 * sig.c_in * sig.c_out * res_out ** 2
        conv2 = 9 * sig.c_out ** 2 * res_out ** 2
        proj = 0
        if sig.stride != 1 or sig.c_in != sig.c_out:
            proj = sig.c_in * sig.c_out * res_out ** 2
        return float(conv1 + conv2 + proj)
    if sig.kind == KIND_RESNET_BOTTLENECK:
        if sig.c_out % BOTTLENECK_EXPANSION:
            raise CostError(f"bottleneck output channels must be divisible by {BOTTLENECK_EXPANSION}")
        inner = sig.c_out // BOTTLENECK_EXPANSION
        # Stride sits on the 3x3 conv (the "-B" placement); the first 1x1
        # runs at full input resolution.
        conv1 = sig.c_in * inner * sig.res_in ** 2
        conv2 = 9 * inner ** 2 * res_out ** 2
        conv3 = inner * sig.c_out * res_out ** 2
        proj = 0
        if sig.stride != 1 or sig.c_in != sig.c_out:
            proj = sig.c_in * sig.c_out * res_out ** 2
        return float(conv1 + conv2 + conv3 + proj)
    raise CostError(f"unknown operation kind {sig.kind!r}")


def params_of(sig: OpSignature) -> float:
    """Weight count. Conv biases are excluded (convs are followed by
    normalization); the classifier keeps its bias."""
    if sig.kind == KIND_SKIP:
        return 0.0
    if sig.kind == KIND_CONV:
        return float(sig.kernel ** 2 * sig.c_in * sig.c_out)
    if sig.kind == KIND_LINEAR:
        return float(sig.c_in * sig.c_out + sig.c_out)
    if sig.kind == KIND_MBCONV:
        hidden = sig.c_in * sig.expansion
        return float(sig.c_in * hidden + sig.kernel ** 2 * hidden + hidden * sig.c_out)
    if sig.kind == KIND_RESNET_BASIC:
        proj = sig.c_in * sig.c_out if (sig.stride != 1 or sig.c_in != sig.c_out) else 0
        return float(9 * sig.c_in * sig.c_out + 9 * sig.c_out ** 2 + proj)
    if sig.kind == KIND_RESNET_BOTTLENECK:
        inner = sig.c_out // BOTTLENECK_EXPANSION
        proj = sig.c_in * sig.c_out if (sig.stride != 1 or sig.c_in != sig.c_out) else 0
        return float(sig.c_in * inner + 9 * inner ** 2 + inner * sig.c_out + proj)
    raise CostError(f"unknown operation kind {sig.kind!r}")


# ---------------------------------------------------------------------------
# Signatures of a super network.

def stem_signature(spec: SuperNetworkSpec) -> OpSignature:
    return OpSignature(KIND_CONV, 3, 0, 3, spec.stem_width, spec.input_resolution, 2)


def head_signature(width: int, num_classes: int) -> OpSignature:
    # Global average pooling is free under the MAC convention; only the
    # final fully connected layer counts.
    return OpSignature(KIND_LINEAR, 0, 0, width, num_classes, 1, 1)


def basic_layer_signatures(spec: SuperNetworkSpec, block_index: int) -> tuple[OpSignature, ...]:
    b = spec.block(block_index)
    return tuple(
        OpSignature.of(op, b.width, b.width, b.resolution, 1)
        for op in spec.basic_layer.candidates
    )


def alignment_signatures(spec: SuperNetworkSpec, conn: ConnectionSpec) -> tuple[OpSignature, ...]:
    if conn.alignment_layer is None:
        raise CostError(f"edge ({conn.src}, {conn.dst}) has no alignment layer")
    return tuple(
        OpSignature.of(
            op,
            spec.width_of(conn.src),
            spec.width_of(conn.dst),
            spec.resolution_of(conn.src),
            conn.stride,
        )
        for op in conn.alignment_layer.candidates
    )


def space_signatures(spec: SuperNetworkSpec) -> list[OpSignature]:
    """Every signature the estimators may query on this spec."""
    sigs: set[OpSignature] = {stem_signature(spec)}
    for b in spec.blocks:
        sigs.update(basic_layer_signatures(spec, b.index))
    for c in spec.connections:
        if c.alignment_layer is not None:
            sigs.update(alignment_signatures(spec, c))
        else:
            sigs.add(head_signature(spec.width_of(c.src), spec.num_classes))
    return sorted(sigs)


# ---------------------------------------------------------------------------
# Cost tables.

CSV_HEADER = ["kind", "kernel", "expansion", "c_in", "c_out", "res_in", "stride", "cost_ms"]


@dataclass
class CostTable:
    unit: str
    entries: dict[OpSignature, float]

    def __post_init__(self) -> None:
        for sig, v in self.entries.items():
            if v < 0:
                raise CostError(f"negative cost for {sig}")

    def lookup(self, sig: OpSignature) -> float:
        try:
            return self.entries[sig]
        except KeyError:
            raise MissingCostEntryError([sig]) from None

    def lookup_many(self, sigs: Iterable[OpSignature]) -> np.ndarray:
        sigs = list(sigs)
        missing = [s for s in sigs if s not in self.entries]
        if missing:
            raise MissingCostEntryError(missing)
        return np.array([self.entries[s] for s in sigs], dtype=np.float64)

    @classmethod
    def flops_for(cls, sigs: Iterable[OpSignature]) -> "CostTable":
        return cls(UNIT_FLOPS, {s: flops_of(s) for s in sigs})

    @classmethod
    def flops_for_space(cls, spec: SuperNetworkSpec) -> "CostTable":
        return cls.flops_for(space_signatures(spec))

    @classmethod
    def from_latency_csv(cls, path: str) -> "CostTable":
        entries: dict[OpSignature, float] = {}
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames != CSV_HEADER:
                raise CostError(
                    f"latency CSV header must be {','.join(CSV_HEADER)}, got "
                    f"{','.join(reader.fieldnames or [])}"
                )
            for row in reader:
                sig = OpSignature(
                    row["kind"],
                    int(row["kernel"]), int(row["expansion"]),
                    int(row["c_in"]), int(row["c_out"]),
                    int(row["res_in"]), int(row["stride"]),
                )
                entries[sig] = float(row["cost_ms"])
        return cls(UNIT_MS, entries)

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(CSV_HEADER)
            for sig in sorted(self.entries):
                writer.writerow([
                    sig.kind, sig.kernel, sig.expansion, sig.c_in, sig.c_out,
                    sig.res_in, sig.stride, repr(self.entries[sig]),
                ])


# ---------------------------------------------------------------------------
# The expectation engine over the relaxed super network.
#
# Given a per-candidate value for every searchable layer and a terminal
# value for each edge into the ending block, the chained recursion is
#     v[end] = 0
#     v[i] = basic[i] + sum_j p_ij * (edge[i, j] + v[j])
#     total = base + v[0]
# where node 0 is the stem (basic[0] = 0, single outgoing edge). With
# costs as values this is the chained cost estimate; the synthetic
# evaluator reuses it with per-candidate quality values.

ValueFn = Callable[[LayerKey], np.ndarray]
TerminalFn = Callable[[int], float]


@dataclass
class ChainState:
    weights: dict[LayerKey, np.ndarray]
    layer_values: dict[LayerKey, np.ndarray]
    layer_expect: dict[LayerKey, float]
    block_basic: dict[int, float]
    edge_term: dict[EdgeKey, float]
    dist: PathDistribution
    node_value: dict[int, float]
    base: float
    total: float


def chain_forward(
    spec: SuperNetworkSpec,
    params: ArchParams,
    value_of: ValueFn,
    terminal_of: TerminalFn,
    base: float,
) -> ChainState:
    weights: dict[LayerKey, np.ndarray] = {}
    layer_values: dict[LayerKey, np.ndarray] = {}
    layer_expect: dict[LayerKey, float] = {}
    for key in params.layer_keys():
        w = op_weights(params.alpha(key))
        vals = np.asarray(value_of(key), dtype=np.float64)
        if len(vals) != len(w):
            raise CostError(f"value/weight length mismatch at layer {key}")
        weights[key] = w
        layer_values[key] = vals
        layer_expect[key] = float(w @ vals)

    block_basic = {0: 0.0}
    for b in spec.blocks:
        block_basic[b.index] = sum(layer_expect[("b", b.index, l)] for l in range(b.num_basic_layers))

    edge_term: dict[EdgeKey, float] = {}
    for c in spec.connections:
        if c.alignment_layer is not None:
            edge_term[(c.src, c.dst)] = layer_expect[("a", c.src, c.dst)]
        else:
            edge_term[(c.src, c.dst)] = float(terminal_of(c.src))

    dist = path_probs(spec, params)
    node_value = {spec.ending_index: 0.0}
    for i in range(spec.n_blocks, -1, -1):
        acc = block_basic[i]
        dsts, probs = dist.probs[i]
        for dst, p in zip(dsts, probs):
            acc += p * (edge_term[(i, dst)] + node_value[dst])
        node_value[i] = float(acc)

    return ChainState(
        weights=weights,
        layer_values=layer_values,
        layer_expect=layer_expect,
        block_basic=block_basic,
        edge_term=edge_term,
        dist=dist,
        node_value=node_value,
        base=float(base),
        total=float(base) + node_value[0],
    )


@dataclass
class Grads:
    alpha_basic: dict[tuple[int, int], np.ndarray]
    alpha_align: dict[tuple[int, int], np.ndarray]
    beta: dict[tuple[int, int], float]

    @classmethod
    def zeros_like(cls, params: ArchParams) -> "Grads":
        return cls(
            {k: np.zeros_like(v) for k, v in params.alpha_basic.items()},
            {k: np.zeros_like(v) for k, v in params.alpha_align.items()},
            {k: 0.0 for k in params.beta},
        )

    def scaled(self, s: float) -> "Grads":
        return Grads(
            {k: s * v for k, v in self.alpha_basic.items()},
            {k: s * v for k, v in self.alpha_align.items()},
            {k: s * v for k, v in self.beta.items()},
        )

    def add_scaled(self, other: "Grads", s: float) -> "Grads":
        return Grads(
            {k: v + s * other.alpha_basic[k] for k, v in self.alpha_basic.items()},
            {k: v + s * other.alpha_align[k] for k, v in self.alpha_align.items()},
            {k: v + s * other.beta[k] for k, v in self.beta.items()},
        )

    def alpha(self, key: LayerKey) -> np.ndarray:
        return self.alpha_basic[(key[1], key[2])] if key[0] == "b" else self.alpha_align[(key[1], key[2])]


def chain_backward(spec: SuperNetworkSpec, params: ArchParams, state: ChainState) -> Grads:
    """Exact reverse-mode gradients of state.total w.r.t. alpha and beta."""
    grads = Grads.zeros_like(params)

    # Node sensitivities: g[i] = d total / d v[i].
    g = {i: 0.0 for i in range(spec.n_blocks + 2)}
    g[0] = 1.0
    for i in range(0, spec.n_blocks + 1):
        dsts, probs = state.dist.probs[i]
        for dst, p in zip(dsts, probs):
            g[dst] += g[i] * p

    def softmax_grad(key: LayerKey, coef: float) -> np.ndarray:
        w = state.weights[key]
        vals = state.layer_values[key]
        return coef * w * (vals - state.layer_expect[key])

    for b in spec.blocks:
        for l in range(b.num_basic_layers):
            grads.alpha_basic[(b.index, l)] += softmax_grad(("b", b.index, l), g[b.index])
    for c in spec.connections:
        if c.alignment_layer is not None:
            p = state.dist.prob(c.src, c.dst)
            grads.alpha_align[(c.src, c.dst)] += softmax_grad(("a", c.src, c.dst), g[c.src] * p)

    for i in range(0, spec.n_blocks + 1):
        dsts, probs = state.dist.probs[i]
        s = np.array([
            state.edge_term[(i, d)] + state.node_value[d] for d in dsts
        ])
        mean_s = float(probs @ s)
        for dst, p, sj in zip(dsts, probs, s):
            grads.beta[(i, dst)] += g[i] * p * (sj - mean_s)

    return grads


# ---------------------------------------------------------------------------
# Cost estimators.

@dataclass
class CostBreakdown:
    unit: str
    stem: float
    block_basic: dict[int, float]
    edge_align: dict[EdgeKey, float]
    total: float

    def to_json(self) -> dict[str, Any]:
        return {
            "unit": self.unit,
            "stem": self.stem,
            "block_basic": {str(i): v for i, v in sorted(self.block_basic.items())},
            "edge_align": {f"{i}.{j}": v for (i, j), v in sorted(self.edge_align.items())},
            "total": self.total,
        }


def _table_value_fn(spec: SuperNetworkSpec, table: CostTable) -> tuple[ValueFn, TerminalFn, float]:
    """Resolve every signature up front so missing entries are reported
    exhaustively, then serve cached per-layer cost vectors."""
    missing: list[OpSignature] = []
    values: dict[LayerKey, np.ndarray] = {}
    terminals: dict[int, float] = {}

    def grab(sigs: tuple[OpSignature, ...]) -> np.ndarray:
        out = np.zeros(len(sigs))
        for k, s in enumerate(sigs):
            if s in table.entries:
                out[k] = table.entries[s]
            else:
                missing.append(s)
        return out

    for b in spec.blocks:
        sigs = basic_layer_signatures(spec, b.index)
        for l in range(b.num_basic_layers):
            values[("b", b.index, l)] = grab(sigs)
    for c in spec.connections:
        if c.alignment_layer is not None:
            values[("a", c.src, c.dst)] = grab(alignment_signatures(spec, c))
        else:
            sig = head_signature(spec.width_of(c.src), spec.num_classes)
            if sig in table.entries:
                terminals[c.src] = table.entries[sig]
            else:
                missing.append(sig)
    stem_sig = stem_signature(spec)
    base = table.entries.get(stem_sig)
    if base is None:
        missing.append(stem_sig)
    if missing:
        raise MissingCostEntryError(sorted(set(missing)))
    return (lambda key: values[key]), (lambda src: terminals[src]), float(base)


def chained_cost(
    spec: SuperNetworkSpec, params: ArchParams, table: CostTable
) -> tuple[float, CostBreakdown]:
    """Expected cost of the relaxed network via the reverse recursion
    over path probabilities; O(N * M * |candidates|)."""
    validate_binding(spec, params)
    value_of, terminal_of, base = _table_value_fn(spec, table)
    state = chain_forward(spec, params, value_of, terminal_of, base)
    breakdown = CostBreakdown(
        unit=table.unit,
        stem=base,
        block_basic={i: v for i, v in state.block_basic.items() if i > 0},
        edge_align={e: v for e, v in state.edge_term.items()},
        total=state.total,
    )
    return state.total, breakdown


def cost_gradients(
    spec: SuperNetworkSpec, params: ArchParams, table: CostTable
) -> tuple[float, Grads]:
    """Chained cost and its exact analytic gradients w.r.t. alpha and beta."""
    validate_binding(spec, params)
    value_of, terminal_of, base = _table_value_fn(spec, table)
    state = chain_forward(spec, params, value_of, terminal_of, base)
    return state.total, chain_backward(spec, params, state)


def local_cost(spec: SuperNetworkSpec, params: ArchParams, table: CostTable) -> float:
    """Baseline estimate without global connection effects: every block's
    basic cost counts in full, transition probabilities weight only the
    incoming alignment costs."""
    validate_binding(spec, params)
    value_of, terminal_of, base = _table_value_fn(spec, table)
    state = chain_forward(spec, params, value_of, terminal_of, base)
    total = base
    for i in range(1, spec.n_blocks + 1):
        total += state.block_basic[i]
    for c in spec.connections:
        total += state.dist.prob(c.src, c.dst) * state.edge_term[(c.src, c.dst)]
    return float(total)


def chained_cost_literal(spec: SuperNetworkSpec, params: ArchParams, table: CostTable) -> float:
    """The chained estimate read literally as typeset (one-step lookahead
    with the successor's basic cost instead of its chained value). Kept
    only to document how it diverges from the recursive reading; not used
    by the search."""
    validate_binding(spec, params)
    value_of, terminal_of, base = _table_value_fn(spec, table)
    state = chain_forward(spec, params, value_of, terminal_of, base)
    tilde: dict[int, float] = {spec.ending_index: 0.0}
    for i in range(spec.n_blocks, -1, -1):
        acc = state.block_basic[i]
        dsts, probs = state.dist.probs[i]
        for dst, p in zip(dsts, probs):
            acc += p * (state.edge_term[(i, dst)] + state.block_basic.get(dst, 0.0))
        tilde[i] = float(acc)
    return base + tilde[0]


def arch_signatures(arch) -> list[OpSignature]:
    """Signatures traversed by a concrete architecture, in network order:
    stem, per-block alignment and retained basic layers, classifier."""
    sigs = [OpSignature(KIND_CONV, 3, 0, 3, arch.stem_width, arch.input_resolution, 2)]
    prev_w = arch.stem_width
    prev_res = arch.input_resolution // 2
    for blk in arch.blocks:
        sigs.append(OpSignature.of(blk.alignment_op, prev_w, blk.width, prev_res, blk.stride_in))
        for op in blk.ops:
            sigs.append(OpSignature.of(op, blk.width, blk.width, blk.resolution, 1))
        prev_w, prev_res = blk.width, blk.resolution
    sigs.append(head_signature(prev_w, arch.num_classes))
    return sigs


def exact_cost(arch, table: CostTable) -> float:
    """Cost of a fully concrete architecture: a plain sum over its
    retained layers (skip layers are already absent)."""
    return float(table.lookup_many(arch_signatures(arch)).sum())


def flops_of_arch(arch) -> float:
    return float(sum(flops_of(s) for s in arch_signatures(arch)))


def params_of_arch(arch) -> float:
    return float(sum(params_of(s) for s in arch_signatures(arch)))


def layer_cost(weights: np.ndarray, costs: np.ndarray) -> float:
    """Expected cost of one basic layer: sum of weight * cost."""
    w = np.asarray(weights, dtype=np.float64)
    c = np.asarray(costs, dtype=np.float64)
    if w.shape != c.shape:
        raise CostError(f"weights ({w.shape}) and costs ({c.shape}) differ in length")
    return float(w @ c)


def regularized_loss(task_loss: float, cost: float, lam: float, tau: float) -> float:
    """task_loss + lambda * log_tau(cost)."""
    if cost <= 0:
        raise CostError(f"cost must be positive, got {cost}")
    if tau <= 1:
        raise CostError(f"tau must exceed 1, got {tau}")
    if lam < 0:
        raise CostError(f"lambda must be non-negative, got {lam}")
    return float(task_loss + lam * math.log(cost) / math.log(tau))
