"""Densely connected super-network search space.

The search space is a DAG of routing blocks. Node 0 is the stem, nodes
1..N are routing blocks, node N+1 is a virtual ending block. Block j is
reachable from block i when j - i <= max_connections and the spatial
resolution drops by at most 2x. Each edge into a real block carries a
shape-alignment layer; edges into the ending block carry none.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Iterable

from .ioutil import canonical_json, sha256_hex

MBCONV_KERNELS = (3, 5, 7)
MBCONV_EXPANSIONS = (3, 6)
BOTTLENECK_EXPANSION = 4

KIND_MBCONV = "mbconv"
KIND_SKIP = "skip"
KIND_RESNET_BASIC = "resnet-basic"
KIND_RESNET_BOTTLENECK = "resnet-bottleneck"
# Infrastructure kinds used only for cost signatures (stem / classifier).
KIND_CONV = "conv"
KIND_LINEAR = "linear"

CANDIDATE_SETS = ("mbconv", "resnet-basic", "resnet-bottleneck")

SPEC_SCHEMA_VERSION = 1


class SpaceError(ValueError):
    """Invalid operation parameters or space configuration."""


@dataclass(frozen=True, order=True)
class OperationKind:
    """A candidate operation. Kernel/expansion are 0 when not applicable."""

    kind: str
    kernel: int = 0
    expansion: int = 0

    def __post_init__(self) -> None:
        if self.kind == KIND_MBCONV:
            if self.kernel not in MBCONV_KERNELS:
                raise SpaceError(f"mbconv kernel must be one of {MBCONV_KERNELS}, got {self.kernel}")
            if self.expansion not in MBCONV_EXPANSIONS:
                raise SpaceError(f"mbconv expansion must be one of {MBCONV_EXPANSIONS}, got {self.expansion}")
        elif self.kind in (KIND_SKIP, KIND_RESNET_BASIC):
            if self.kernel != 0 or self.expansion != 0:
                raise SpaceError(f"{self.kind} carries no kernel/expansion parameters")
        elif self.kind == KIND_RESNET_BOTTLENECK:
            if self.expansion != BOTTLENECK_EXPANSION:
                raise SpaceError(f"bottleneck expansion is fixed at {BOTTLENECK_EXPANSION}")
            if self.kernel != 0:
                raise SpaceError("bottleneck carries no kernel parameter")
        else:
            raise SpaceError(f"unknown operation kind {self.kind!r}")

    @property
    def is_skip(self) -> bool:
        return self.kind == KIND_SKIP

    def to_json(self) -> dict[str, Any]:
        return {"kind": self.kind, "kernel": self.kernel, "expansion": self.expansion}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "OperationKind":
        return cls(obj["kind"], int(obj.get("kernel", 0)), int(obj.get("expansion", 0)))


def mbconv(kernel: int, expansion: int) -> OperationKind:
    return OperationKind(KIND_MBCONV, kernel, expansion)


def skip_connect() -> OperationKind:
    return OperationKind(KIND_SKIP)


def resnet_basic() -> OperationKind:
    return OperationKind(KIND_RESNET_BASIC)


def resnet_bottleneck() -> OperationKind:
    return OperationKind(KIND_RESNET_BOTTLENECK, 0, BOTTLENECK_EXPANSION)


def candidate_ops(set_name: str, with_skip: bool) -> tuple[OperationKind, ...]:
    """Candidate operations of a named set, optionally with the skip connection."""
    if set_name == "mbconv":
        ops = tuple(mbconv(k, e) for k in MBCONV_KERNELS for e in MBCONV_EXPANSIONS)
    elif set_name == "resnet-basic":
        ops = (resnet_basic(),)
    elif set_name == "resnet-bottleneck":
        ops = (resnet_bottleneck(),)
    else:
        raise SpaceError(f"unknown candidate set {set_name!r}, expected one of {CANDIDATE_SETS}")
    if with_skip:
        ops = ops + (skip_connect(),)
    return ops


@dataclass(frozen=True)
class LayerSpec:
    """A searchable layer: an ordered, duplicate-free set of candidate ops."""

    candidates: tuple[OperationKind, ...]
    allow_skip: bool

    def __post_init__(self) -> None:
        if not self.candidates:
            raise SpaceError("layer must have at least one candidate operation")
        if len(set(self.candidates)) != len(self.candidates):
            raise SpaceError("layer candidates must be duplicate-free")
        if not self.allow_skip and any(op.is_skip for op in self.candidates):
            raise SpaceError("skip connection not allowed in shape-alignment layers")

    def to_json(self) -> dict[str, Any]:
        return {
            "candidates": [op.to_json() for op in self.candidates],
            "allow_skip": self.allow_skip,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "LayerSpec":
        return cls(
            tuple(OperationKind.from_json(o) for o in obj["candidates"]),
            bool(obj["allow_skip"]),
        )


@dataclass(frozen=True)
class RoutingBlockSpec:
    index: int  # 1-based
    width: int
    resolution: int
    num_basic_layers: int
    stage_id: int

    def to_json(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "width": self.width,
            "resolution": self.resolution,
            "num_basic_layers": self.num_basic_layers,
            "stage_id": self.stage_id,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "RoutingBlockSpec":
        return cls(
            int(obj["index"]), int(obj["width"]), int(obj["resolution"]),
            int(obj["num_basic_layers"]), int(obj["stage_id"]),
        )


@dataclass(frozen=True)
class ConnectionSpec:
    """Edge (src, dst). Edges into the ending block have no alignment layer."""

    src: int
    dst: int
    stride: int
    alignment_layer: LayerSpec | None

    def to_json(self) -> dict[str, Any]:
        return {
            "from": self.src,
            "to": self.dst,
            "stride": self.stride,
            "alignment_layer": None if self.alignment_layer is None else self.alignment_layer.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "ConnectionSpec":
        align = obj["alignment_layer"]
        return cls(
            int(obj["from"]), int(obj["to"]), int(obj["stride"]),
            None if align is None else LayerSpec.from_json(align),
        )


@dataclass(frozen=True)
class SuperNetworkSpec:
    blocks: tuple[RoutingBlockSpec, ...]
    connections: tuple[ConnectionSpec, ...]
    max_connections: int
    input_resolution: int
    stem_width: int
    num_classes: int
    candidate_set: str
    basic_layer: LayerSpec

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def ending_index(self) -> int:
        return self.n_blocks + 1

    @property
    def stem_resolution(self) -> int:
        # The stem is a fixed 3x3 convolution with stride 2.
        return self.input_resolution // 2

    def block(self, index: int) -> RoutingBlockSpec:
        return self.blocks[index - 1]

    def width_of(self, node: int) -> int:
        return self.stem_width if node == 0 else self.block(node).width

    def resolution_of(self, node: int) -> int:
        return self.stem_resolution if node == 0 else self.block(node).resolution

    @cached_property
    def outgoing(self) -> dict[int, tuple[ConnectionSpec, ...]]:
        out: dict[int, list[ConnectionSpec]] = {i: [] for i in range(self.n_blocks + 1)}
        for c in self.connections:
            out[c.src].append(c)
        return {i: tuple(sorted(v, key=lambda c: c.dst)) for i, v in out.items()}

    @cached_property
    def incoming(self) -> dict[int, tuple[ConnectionSpec, ...]]:
        inc: dict[int, list[ConnectionSpec]] = {j: [] for j in range(1, self.n_blocks + 2)}
        for c in self.connections:
            inc[c.dst].append(c)
        return {j: tuple(sorted(v, key=lambda c: c.src)) for j, v in inc.items()}

    @cached_property
    def edge_map(self) -> dict[tuple[int, int], ConnectionSpec]:
        return {(c.src, c.dst): c for c in self.connections}

    def alignment_edges(self) -> tuple[ConnectionSpec, ...]:
        return tuple(c for c in self.connections if c.alignment_layer is not None)

    def basic_layer_keys(self) -> list[tuple[int, int]]:
        return [(b.index, l) for b in self.blocks for l in range(b.num_basic_layers)]

    def to_json(self) -> dict[str, Any]:
        return {
            "schema_version": SPEC_SCHEMA_VERSION,
            "blocks": [b.to_json() for b in self.blocks],
            "connections": [c.to_json() for c in self.connections],
            "max_connections": self.max_connections,
            "input_resolution": self.input_resolution,
            "stem_width": self.stem_width,
            "num_classes": self.num_classes,
            "candidate_set": self.candidate_set,
            "basic_layer": self.basic_layer.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "SuperNetworkSpec":
        return cls(
            blocks=tuple(RoutingBlockSpec.from_json(b) for b in obj["blocks"]),
            connections=tuple(ConnectionSpec.from_json(c) for c in obj["connections"]),
            max_connections=int(obj["max_connections"]),
            input_resolution=int(obj["input_resolution"]),
            stem_width=int(obj["stem_width"]),
            num_classes=int(obj["num_classes"]),
            candidate_set=obj["candidate_set"],
            basic_layer=LayerSpec.from_json(obj["basic_layer"]),
        )

    def canonical(self) -> str:
        return canonical_json(self.to_json())

    def sha256(self) -> str:
        return sha256_hex(self.canonical())


@dataclass(frozen=True)
class StageConfig:
    resolution: int
    widths: tuple[int, ...]


@dataclass(frozen=True)
class SpaceConfig:
    input_resolution: int
    stem_width: int
    stages: tuple[StageConfig, ...]
    max_connections: int
    num_basic_layers: int
    candidate_set: str
    num_classes: int = 1000

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "SpaceConfig":
        try:
            stages = tuple(
                StageConfig(int(s["resolution"]), tuple(int(w) for w in s["widths"]))
                for s in obj["stages"]
            )
            return cls(
                input_resolution=int(obj["input_resolution"]),
                stem_width=int(obj["stem_width"]),
                stages=stages,
                max_connections=int(obj["max_connections"]),
                num_basic_layers=int(obj["num_basic_layers"]),
                candidate_set=obj["candidate_set"],
                num_classes=int(obj.get("num_classes", 1000)),
            )
        except KeyError as e:
            raise SpaceError(f"space config missing field: {e.args[0]}") from e
        except (TypeError, ValueError) as e:
            raise SpaceError(f"space config field error: {e}") from e

    @classmethod
    def from_file(cls, path: str) -> "SpaceConfig":
        with open(path) as f:
            try:
                obj = json.load(f)
            except json.JSONDecodeError as e:
                raise SpaceError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
        return cls.from_json(obj)

    def to_json(self) -> dict[str, Any]:
        return {
            "input_resolution": self.input_resolution,
            "stem_width": self.stem_width,
            "stages": [{"resolution": s.resolution, "widths": list(s.widths)} for s in self.stages],
            "max_connections": self.max_connections,
            "num_basic_layers": self.num_basic_layers,
            "candidate_set": self.candidate_set,
            "num_classes": self.num_classes,
        }


def _is_pow2_fraction(numer: int, denom: int) -> bool:
    if denom <= 0 or numer <= 0 or numer % denom:
        return False
    q = numer // denom
    return q & (q - 1) == 0


def build_super_network(config: SpaceConfig) -> SuperNetworkSpec:
    """Construct the dense super network implied by a space config.

    The connection set is exactly all (i, j) with j - i <= M and a
    resolution ratio of at most 2, plus the fixed stem edge (0, 1) and
    edges from final-stage blocks into the virtual ending block.
    Deterministic: identical configs produce byte-identical specs.
    """
    if config.max_connections < 1:
        raise SpaceError(f"max_connections must be >= 1, got {config.max_connections}")
    if config.num_basic_layers < 1:
        raise SpaceError(f"num_basic_layers must be >= 1, got {config.num_basic_layers}")
    if not config.stages:
        raise SpaceError("at least one stage is required")
    if config.stem_width < 1:
        raise SpaceError("stem_width must be positive")

    basic_layer = LayerSpec(candidate_ops(config.candidate_set, with_skip=True), allow_skip=True)
    align_layer = LayerSpec(candidate_ops(config.candidate_set, with_skip=False), allow_skip=False)

    blocks: list[RoutingBlockSpec] = []
    prev_width = 0
    prev_res = config.input_resolution // 2
    for stage_id, stage in enumerate(config.stages, start=1):
        if not _is_pow2_fraction(config.input_resolution, stage.resolution):
            raise SpaceError(
                f"stage {stage_id} resolution {stage.resolution} is not a power-of-two "
                f"fraction of input resolution {config.input_resolution}"
            )
        if prev_res / stage.resolution > 2:
            raise SpaceError(
                f"resolution jump {prev_res}->{stage.resolution} between adjacent stages exceeds 2x"
            )
        if stage.resolution > prev_res:
            raise SpaceError(f"stage {stage_id} resolution {stage.resolution} increases over {prev_res}")
        if not stage.widths:
            raise SpaceError(f"stage {stage_id} has no block widths")
        for w in stage.widths:
            if w < prev_width:
                raise SpaceError(f"block width {w} decreases after {prev_width} (stage {stage_id})")
            if w < 1:
                raise SpaceError("block widths must be positive")
            blocks.append(RoutingBlockSpec(
                index=len(blocks) + 1,
                width=w,
                resolution=stage.resolution,
                num_basic_layers=config.num_basic_layers,
                stage_id=stage_id,
            ))
            prev_width = w
        prev_res = stage.resolution

    stem_res = config.input_resolution // 2
    if stem_res / blocks[0].resolution not in (1.0, 2.0):
        raise SpaceError(
            f"stem resolution {stem_res} to first block resolution {blocks[0].resolution} "
            "needs a stride greater than 2"
        )

    n = len(blocks)
    m = config.max_connections
    connections: list[ConnectionSpec] = [
        ConnectionSpec(0, 1, stem_res // blocks[0].resolution, align_layer)
    ]
    for i in range(1, n + 1):
        for j in range(i + 1, min(i + m, n) + 1):
            ri, rj = blocks[i - 1].resolution, blocks[j - 1].resolution
            if ri / rj <= 2:
                connections.append(ConnectionSpec(i, j, ri // rj, align_layer))
    last_stage = blocks[-1].stage_id
    for i in range(1, n + 1):
        if blocks[i - 1].stage_id == last_stage and (n + 1 - i) <= m:
            connections.append(ConnectionSpec(i, n + 1, 1, None))

    spec = SuperNetworkSpec(
        blocks=tuple(blocks),
        connections=tuple(sorted(connections, key=lambda c: (c.src, c.dst))),
        max_connections=m,
        input_resolution=config.input_resolution,
        stem_width=config.stem_width,
        num_classes=config.num_classes,
        candidate_set=config.candidate_set,
        basic_layer=basic_layer,
    )
    violations = validate(spec)
    if violations:
        raise SpaceError("constructed spec is invalid: " + "; ".join(v.message for v in violations))
    return spec


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


def _expected_connections(spec: SuperNetworkSpec) -> set[tuple[int, int]]:
    n = spec.n_blocks
    m = spec.max_connections
    edges = {(0, 1)}
    for i in range(1, n + 1):
        for j in range(i + 1, min(i + m, n) + 1):
            if spec.block(i).resolution / spec.block(j).resolution <= 2:
                edges.add((i, j))
    last_stage = spec.blocks[-1].stage_id
    for i in range(1, n + 1):
        if spec.block(i).stage_id == last_stage and (n + 1 - i) <= m:
            edges.add((i, n + 1))
    return edges


def validate(spec: SuperNetworkSpec) -> list[Violation]:
    """Check every structural invariant; returns one Violation per failure."""
    out: list[Violation] = []
    n = spec.n_blocks

    if spec.max_connections < 1:
        out.append(Violation("max_connections", f"max_connections {spec.max_connections} < 1"))
    if n == 0:
        out.append(Violation("blocks", "spec has no routing blocks"))
        return out

    for b in spec.blocks:
        if b.width < 1:
            out.append(Violation("width", f"block {b.index} width {b.width} is not positive"))
        if b.num_basic_layers < 1:
            out.append(Violation("layers", f"block {b.index} has no basic layers"))
        if not _is_pow2_fraction(spec.input_resolution, b.resolution):
            out.append(Violation(
                "resolution",
                f"block {b.index} resolution {b.resolution} not a power-of-two fraction "
                f"of {spec.input_resolution}",
            ))
    for a, b in zip(spec.blocks, spec.blocks[1:]):
        if b.width < a.width:
            out.append(Violation(
                "width-order",
                f"width decreases from block {a.index} ({a.width}) to block {b.index} ({b.width})",
            ))
        if b.stage_id < a.stage_id:
            out.append(Violation("stage-order", f"stage id decreases at block {b.index}"))
        if b.stage_id == a.stage_id and b.resolution != a.resolution:
            out.append(Violation(
                "stage-resolution",
                f"blocks {a.index} and {b.index} share stage {a.stage_id} but differ in resolution",
            ))

    stage_res: dict[int, int] = {}
    for b in spec.blocks:
        stage_res.setdefault(b.stage_id, b.resolution)

    for c in spec.connections:
        if c.dst <= c.src:
            out.append(Violation("edge-order", f"edge ({c.src}, {c.dst}) must go forward"))
            continue
        if c.dst - c.src > spec.max_connections:
            out.append(Violation(
                "edge-distance",
                f"edge ({c.src}, {c.dst}) exceeds max connection distance {spec.max_connections}",
            ))
        if c.dst <= n:
            ratio = spec.resolution_of(c.src) / spec.resolution_of(c.dst)
            if ratio not in (1.0, 2.0):
                out.append(Violation(
                    "edge-resolution",
                    f"edge ({c.src}, {c.dst}) resolution ratio {ratio} not in {{1, 2}}",
                ))
            elif c.stride != int(ratio):
                out.append(Violation(
                    "edge-stride",
                    f"edge ({c.src}, {c.dst}) stride {c.stride} != resolution ratio {int(ratio)}",
                ))
            if c.alignment_layer is None:
                out.append(Violation("edge-align", f"edge ({c.src}, {c.dst}) lacks an alignment layer"))
            elif any(op.is_skip for op in c.alignment_layer.candidates):
                out.append(Violation(
                    "edge-align-skip",
                    f"alignment layer of edge ({c.src}, {c.dst}) contains a skip connection",
                ))
        elif c.alignment_layer is not None:
            out.append(Violation(
                "ending-align",
                f"edge ({c.src}, {c.dst}) into the ending block must not carry an alignment layer",
            ))

    actual = {(c.src, c.dst) for c in spec.connections}
    if len(actual) != len(spec.connections):
        out.append(Violation("edge-dup", "duplicate connections present"))
    expected = _expected_connections(spec)
    for e in sorted(expected - actual):
        out.append(Violation("edge-missing", f"edge {e} permitted by constraints but absent"))
    for e in sorted(actual - expected):
        out.append(Violation("edge-extra", f"edge {e} not permitted by the connection constraints"))

    for i in range(1, n + 1):
        if not spec.outgoing.get(i):
            out.append(Violation("no-outgoing", f"block {i} has no outgoing connection"))
    for j in range(1, n + 1):
        if not spec.incoming.get(j):
            out.append(Violation("no-incoming", f"block {j} has no incoming connection"))

    return out
