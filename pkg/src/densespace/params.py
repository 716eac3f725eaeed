"""Relaxation parameters and their probability algebra.

Alpha parameters live on searchable layers: key ("b", block, layer) for
basic layers and ("a", src, dst) for the alignment branch of an edge.
Beta parameters live on edges (src, dst), including edges into the
virtual ending block and the fixed stem edge (0, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterator

import numpy as np
from scipy.special import logsumexp

from .ioutil import canonical_json, sha256_hex
from .space import SuperNetworkSpec

LayerKey = tuple  # ("b", block_index, layer_index) | ("a", src, dst)
EdgeKey = tuple   # (src, dst)


class ParamsError(ValueError):
    """Invalid parameter values or binding mismatch with a spec."""


def softmax(values: np.ndarray) -> np.ndarray:
    """Numerically stabilized softmax (max-subtraction, computed in
    float64; safe for |values| well beyond 700)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ParamsError("softmax of empty input")
    if not np.all(np.isfinite(v)):
        raise ParamsError("softmax input contains non-finite values")
    e = np.exp(v - v.max())
    return e / e.sum()


def op_weights(alpha_layer: np.ndarray) -> np.ndarray:
    """Operation weights of one layer: softmax over its alpha values."""
    return softmax(alpha_layer)


@dataclass
class ArchParams:
    alpha_basic: dict[tuple[int, int], np.ndarray]
    alpha_align: dict[tuple[int, int], np.ndarray]
    beta: dict[tuple[int, int], float]

    def alpha(self, key: LayerKey) -> np.ndarray:
        if key[0] == "b":
            return self.alpha_basic[(key[1], key[2])]
        if key[0] == "a":
            return self.alpha_align[(key[1], key[2])]
        raise KeyError(key)

    def set_alpha(self, key: LayerKey, values: np.ndarray) -> None:
        if key[0] == "b":
            self.alpha_basic[(key[1], key[2])] = values
        elif key[0] == "a":
            self.alpha_align[(key[1], key[2])] = values
        else:
            raise KeyError(key)

    def layer_keys(self) -> Iterator[LayerKey]:
        for (i, l) in self.alpha_basic:
            yield ("b", i, l)
        for (i, j) in self.alpha_align:
            yield ("a", i, j)

    def copy(self) -> "ArchParams":
        return ArchParams(
            {k: v.copy() for k, v in self.alpha_basic.items()},
            {k: v.copy() for k, v in self.alpha_align.items()},
            dict(self.beta),
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "alpha": {
                "basic": {f"{i}.{l}": list(map(float, v)) for (i, l), v in self.alpha_basic.items()},
                "align": {f"{i}.{j}": list(map(float, v)) for (i, j), v in self.alpha_align.items()},
            },
            "beta": {f"{i}.{j}": float(v) for (i, j), v in self.beta.items()},
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "ArchParams":
        def key2(s: str) -> tuple[int, int]:
            a, b = s.split(".")
            return int(a), int(b)

        return cls(
            {key2(k): np.asarray(v, dtype=np.float64) for k, v in obj["alpha"]["basic"].items()},
            {key2(k): np.asarray(v, dtype=np.float64) for k, v in obj["alpha"]["align"].items()},
            {key2(k): float(v) for k, v in obj["beta"].items()},
        )

    def canonical(self) -> str:
        return canonical_json(self.to_json())

    def sha256(self) -> str:
        return sha256_hex(self.canonical())


def init_params(spec: SuperNetworkSpec) -> ArchParams:
    """All alpha and beta start at zero: uniform op weights and path
    probabilities."""
    alpha_basic = {
        (b.index, l): np.zeros(len(spec.basic_layer.candidates))
        for b in spec.blocks
        for l in range(b.num_basic_layers)
    }
    alpha_align = {
        (c.src, c.dst): np.zeros(len(c.alignment_layer.candidates))
        for c in spec.connections
        if c.alignment_layer is not None
    }
    beta = {(c.src, c.dst): 0.0 for c in spec.connections}
    return ArchParams(alpha_basic, alpha_align, beta)


def validate_binding(spec: SuperNetworkSpec, params: ArchParams) -> None:
    """Raise unless params cover exactly the layers and edges of spec."""
    want_basic = {(b.index, l) for b in spec.blocks for l in range(b.num_basic_layers)}
    if set(params.alpha_basic) != want_basic:
        raise ParamsError("alpha does not match the spec's basic layers")
    want_align = {(c.src, c.dst) for c in spec.connections if c.alignment_layer is not None}
    if set(params.alpha_align) != want_align:
        raise ParamsError("alignment alpha does not match the spec's edges")
    want_beta = {(c.src, c.dst) for c in spec.connections}
    if set(params.beta) != want_beta:
        raise ParamsError("beta does not match the spec's connection set")
    for (i, l), v in params.alpha_basic.items():
        if len(v) != len(spec.basic_layer.candidates):
            raise ParamsError(f"alpha length mismatch at basic layer ({i}, {l})")
        if not np.all(np.isfinite(v)):
            raise ParamsError(f"non-finite alpha at basic layer ({i}, {l})")
    for (i, j), v in params.alpha_align.items():
        n_cand = len(spec.edge_map[(i, j)].alignment_layer.candidates)
        if len(v) != n_cand:
            raise ParamsError(f"alpha length mismatch at alignment branch ({i}, {j})")
        if not np.all(np.isfinite(v)):
            raise ParamsError(f"non-finite alpha at alignment branch ({i}, {j})")
    for e, v in params.beta.items():
        if not math.isfinite(v):
            raise ParamsError(f"non-finite beta at edge {e}")


@dataclass(frozen=True)
class PathDistribution:
    """Per-source-block transition probabilities over outgoing edges."""

    probs: dict[int, tuple[tuple[int, ...], np.ndarray]]

    def prob(self, src: int, dst: int) -> float:
        dsts, p = self.probs[src]
        return float(p[dsts.index(dst)])

    def successors(self, src: int) -> tuple[int, ...]:
        return self.probs[src][0]


def path_probs(spec: SuperNetworkSpec, params: ArchParams) -> PathDistribution:
    """Softmax of beta per source block (normalized on the output
    dimension); consumers apply the probabilities on input branches."""
    probs: dict[int, tuple[tuple[int, ...], np.ndarray]] = {}
    for i in range(spec.n_blocks + 1):
        edges = spec.outgoing.get(i, ())
        if not edges:
            continue
        try:
            betas = np.array([params.beta[(c.src, c.dst)] for c in edges])
        except KeyError as e:
            raise ParamsError(f"unbound edge parameter for edge {e.args[0]}") from e
        probs[i] = (tuple(c.dst for c in edges), softmax(betas))
    return PathDistribution(probs)


def sample_layer(weights: np.ndarray, rng: np.random.Generator, count: int) -> tuple[int, ...]:
    """Sample `count` distinct candidate indices by sequential categorical
    draws with renormalization."""
    w = np.asarray(weights, dtype=np.float64)
    if count > len(w):
        raise ParamsError(f"cannot sample {count} ops from {len(w)} candidates")
    remaining = w.copy()
    picked: list[int] = []
    for _ in range(count):
        p = remaining / remaining.sum()
        idx = int(rng.choice(len(p), p=p))
        picked.append(idx)
        remaining[idx] = 0.0
    return tuple(picked)


def sample_ops(
    spec: SuperNetworkSpec,
    params: ArchParams,
    rng: np.random.Generator,
    count: int,
) -> dict[LayerKey, tuple[int, ...]]:
    """Sample candidate indices for every searchable layer, without
    replacement, from the layer's softmax distribution.

    Layers with fewer candidates than `count` are sampled at their
    candidate count (single-candidate alignment branches in the ResNet
    spaces would otherwise make count=2 impossible).
    """
    if count not in (1, 2):
        raise ParamsError(f"count must be 1 or 2, got {count}")
    sampled: dict[LayerKey, tuple[int, ...]] = {}
    for key in sorted(params.layer_keys()):
        alpha = params.alpha(key)
        sampled[key] = sample_layer(op_weights(alpha), rng, min(count, len(alpha)))
    return sampled


def rebalance_bias(old_alpha_sampled: np.ndarray, new_alpha_sampled: np.ndarray) -> float:
    """ln(sum(exp(old)) / sum(exp(new))) over the sampled subset; adding it
    to the new values restores the subset's total exponential mass."""
    old = np.asarray(old_alpha_sampled, dtype=np.float64)
    new = np.asarray(new_alpha_sampled, dtype=np.float64)
    if old.size == 0 or new.size == 0:
        raise ParamsError("rebalance bias of empty input")
    if old.shape != new.shape:
        raise ParamsError("rebalance bias requires equally many old and new values")
    if not (np.all(np.isfinite(old)) and np.all(np.isfinite(new))):
        raise ParamsError("rebalance bias input contains non-finite values")
    return float(logsumexp(old) - logsumexp(new))


def apply_sampled_update(
    alpha_layer: np.ndarray,
    sampled: tuple[int, ...],
    updated: np.ndarray,
) -> np.ndarray:
    """Replace the sampled alpha entries with updated values plus the
    re-balancing bias; every unsampled entry keeps its softmax weight."""
    alpha = np.asarray(alpha_layer, dtype=np.float64)
    idx = np.asarray(sampled, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= len(alpha)):
        raise ParamsError(f"sampled index out of range for layer of size {len(alpha)}")
    bias = rebalance_bias(alpha[idx], np.asarray(updated, dtype=np.float64))
    out = alpha.copy()
    out[idx] = np.asarray(updated, dtype=np.float64) + bias
    return out
