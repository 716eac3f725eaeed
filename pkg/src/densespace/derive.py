"""Turning relaxation parameters into a concrete architecture.

The block sequence is the max-product path through the transition
probabilities (Viterbi, computed in log-space); operations are the
per-layer argmax of alpha; layers whose argmax is the skip connection
are removed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .ioutil import canonical_json, sha256_hex
from .params import ArchParams, LayerKey, PathDistribution, path_probs, validate_binding
from .space import OperationKind, SuperNetworkSpec

ARCH_SCHEMA_VERSION = 1

BRUTE_FORCE_MAX_BLOCKS = 20


class DeriveError(ValueError):
    """Derivation failure (dead block, oversized brute-force request)."""


@dataclass(frozen=True)
class DerivedBlock:
    index: int
    width: int
    resolution: int
    stride_in: int
    src: int
    alignment_op: OperationKind
    ops: tuple[OperationKind, ...]  # retained basic layers, skip removed
    align_choice: int | None = None
    basic_choices: tuple[int, ...] | None = None

    def to_json(self) -> dict[str, Any]:
        layers = [self.alignment_op.to_json()] + [op.to_json() for op in self.ops]
        for entry, role in zip(layers, ["alignment"] + ["basic"] * len(self.ops)):
            entry["role"] = role
        return {
            "index": self.index,
            "width": self.width,
            "resolution": self.resolution,
            "stride_in": self.stride_in,
            "src": self.src,
            "layers": layers,
            "align_choice": self.align_choice,
            "basic_choices": None if self.basic_choices is None else list(self.basic_choices),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "DerivedBlock":
        layers = obj["layers"]
        return cls(
            index=int(obj["index"]),
            width=int(obj["width"]),
            resolution=int(obj["resolution"]),
            stride_in=int(obj["stride_in"]),
            src=int(obj["src"]),
            alignment_op=OperationKind.from_json(layers[0]),
            ops=tuple(OperationKind.from_json(o) for o in layers[1:]),
            align_choice=obj.get("align_choice"),
            basic_choices=None if obj.get("basic_choices") is None else tuple(obj["basic_choices"]),
        )


@dataclass(frozen=True)
class DerivedArchitecture:
    input_resolution: int
    stem_width: int
    num_classes: int
    blocks: tuple[DerivedBlock, ...]
    spec_sha256: str | None = None
    params_sha256: str | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "schema_version": ARCH_SCHEMA_VERSION,
            "input_resolution": self.input_resolution,
            "stem_width": self.stem_width,
            "num_classes": self.num_classes,
            "blocks": [b.to_json() for b in self.blocks],
            "provenance": {
                "spec_sha256": self.spec_sha256,
                "params_sha256": self.params_sha256,
            },
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "DerivedArchitecture":
        prov = obj.get("provenance", {})
        return cls(
            input_resolution=int(obj["input_resolution"]),
            stem_width=int(obj["stem_width"]),
            num_classes=int(obj["num_classes"]),
            blocks=tuple(DerivedBlock.from_json(b) for b in obj["blocks"]),
            spec_sha256=prov.get("spec_sha256"),
            params_sha256=prov.get("params_sha256"),
        )

    def canonical(self) -> str:
        return canonical_json(self.to_json())

    def sha256(self) -> str:
        return sha256_hex(self.canonical())


def validate_architecture(arch: DerivedArchitecture, spec: SuperNetworkSpec | None = None) -> list[str]:
    """Check the derived-architecture invariants; returns human-readable
    violation messages (empty when valid)."""
    out: list[str] = []
    if not arch.blocks:
        out.append("architecture has no blocks")
        return out
    prev_res = arch.input_resolution // 2  # stem stride 2
    prev_idx = 0
    for b in arch.blocks:
        if b.resolution > prev_res:
            out.append(f"resolution increases entering block {b.index}")
        if b.stride_in != prev_res // b.resolution:
            out.append(f"block {b.index} stride_in {b.stride_in} != resolution ratio")
        if any(op.is_skip for op in b.ops):
            out.append(f"block {b.index} retains a skip layer")
        if b.alignment_op.is_skip:
            out.append(f"block {b.index} alignment is a skip connection")
        if spec is not None and (prev_idx, b.index) not in spec.edge_map:
            out.append(f"blocks {prev_idx} and {b.index} are not connected in the spec")
        prev_res = b.resolution
        prev_idx = b.index
    total_stride = 2 * (arch.input_resolution // 2) // arch.blocks[-1].resolution
    if arch.input_resolution // arch.blocks[-1].resolution != total_stride:
        out.append("total stride does not match the input/output resolution ratio")
    return out


def _best_incoming(
    candidates: list[tuple[float, tuple[int, ...]]]
) -> tuple[float, tuple[int, ...]]:
    # Highest log-probability first; among exact ties, the
    # lexicographically smallest full index sequence.
    best = candidates[0]
    for c in candidates[1:]:
        if c[0] > best[0] or (c[0] == best[0] and c[1] < best[1]):
            best = c
    return best


def viterbi_derive(spec: SuperNetworkSpec, dist: PathDistribution) -> tuple[int, ...]:
    """Max-product path from the stem to the virtual ending block;
    forward dynamic program with backtracking, in log-space. Returns the
    real block indices (virtual endpoints stripped)."""
    n = spec.n_blocks
    for i in range(0, n + 1):
        _, probs = dist.probs[i]
        if float(np.sum(probs)) <= 0.0:
            raise DeriveError(f"block {i} has zero outgoing probability mass")

    logp: dict[int, float] = {0: 0.0}
    path: dict[int, tuple[int, ...]] = {0: (0,)}
    for i in range(1, n + 2):
        candidates: list[tuple[float, tuple[int, ...]]] = []
        for c in spec.incoming.get(i, ()):
            j = c.src
            if j not in logp:
                continue
            p = dist.prob(j, i)
            lp = logp[j] + (math.log(p) if p > 0 else -math.inf)
            candidates.append((lp, path[j] + (i,)))
        if not candidates:
            continue
        logp[i], path[i] = _best_incoming(candidates)

    end = n + 1
    if end not in logp or logp[end] == -math.inf:
        raise DeriveError("no path with positive probability reaches the ending block")
    return path[end][1:-1]


def brute_force_best_path(spec: SuperNetworkSpec, dist: PathDistribution) -> tuple[int, ...]:
    """Exhaustive enumeration oracle; same tie-break as viterbi_derive.
    Guarded to small spaces."""
    n = spec.n_blocks
    if n > BRUTE_FORCE_MAX_BLOCKS:
        raise DeriveError(f"brute force limited to {BRUTE_FORCE_MAX_BLOCKS} blocks, got {n}")
    end = n + 1
    best: tuple[float, tuple[int, ...]] | None = None

    stack: list[tuple[int, float, tuple[int, ...]]] = [(0, 0.0, (0,))]
    while stack:
        node, lp, trail = stack.pop()
        if node == end:
            cand = (lp, trail)
            if best is None or cand[0] > best[0] or (cand[0] == best[0] and cand[1] < best[1]):
                best = cand
            continue
        for c in spec.outgoing.get(node, ()):
            p = dist.prob(node, c.dst)
            step = math.log(p) if p > 0 else -math.inf
            stack.append((c.dst, lp + step, trail + (c.dst,)))
    if best is None or best[0] == -math.inf:
        raise DeriveError("no path with positive probability reaches the ending block")
    return best[1][1:-1]


def argmax_ops(spec: SuperNetworkSpec, params: ArchParams) -> dict[LayerKey, int]:
    """Per-layer argmax of alpha; exact ties go to the lowest index."""
    validate_binding(spec, params)
    return {key: int(np.argmax(params.alpha(key))) for key in params.layer_keys()}


def derive(spec: SuperNetworkSpec, params: ArchParams) -> DerivedArchitecture:
    """Viterbi over beta, argmax over alpha, skip removal."""
    dist = path_probs(spec, params)
    nodes = viterbi_derive(spec, dist)
    choices = argmax_ops(spec, params)

    blocks: list[DerivedBlock] = []
    prev = 0
    for i in nodes:
        conn = spec.edge_map[(prev, i)]
        block = spec.block(i)
        align_idx = choices[("a", prev, i)]
        basic_choices = tuple(choices[("b", i, l)] for l in range(block.num_basic_layers))
        candidates = spec.basic_layer.candidates
        retained = tuple(candidates[c] for c in basic_choices if not candidates[c].is_skip)
        blocks.append(DerivedBlock(
            index=i,
            width=block.width,
            resolution=block.resolution,
            stride_in=conn.stride,
            src=prev,
            alignment_op=conn.alignment_layer.candidates[align_idx],
            ops=retained,
            align_choice=align_idx,
            basic_choices=basic_choices,
        ))
        prev = i

    arch = DerivedArchitecture(
        input_resolution=spec.input_resolution,
        stem_width=spec.stem_width,
        num_classes=spec.num_classes,
        blocks=tuple(blocks),
        spec_sha256=spec.sha256(),
        params_sha256=params.sha256(),
    )
    problems = validate_architecture(arch, spec)
    if problems:
        raise DeriveError("derived architecture is invalid: " + "; ".join(problems))
    return arch
