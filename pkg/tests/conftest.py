"""Shared test helpers.

enumeration_cost is an independent oracle for the chained estimate: it
enumerates every stem-to-end path explicitly and averages the path
costs under the transition probabilities, instead of running the
reverse recursion. By linearity of expectation the two must agree to
floating-point accuracy on any space small enough to enumerate.
"""

from __future__ import annotations

import numpy as np
import pytest

from densespace.cost import (
    CostTable,
    alignment_signatures,
    basic_layer_signatures,
    head_signature,
    stem_signature,
)
from densespace.params import ArchParams, init_params, op_weights, path_probs
from densespace.space import SpaceConfig, StageConfig, SuperNetworkSpec, build_super_network

CANDIDATE_SET_CHOICES = ("mbconv", "resnet-basic", "resnet-bottleneck")


def small_mbconv_config(num_basic_layers: int = 2) -> SpaceConfig:
    return SpaceConfig(
        input_resolution=32,
        stem_width=16,
        stages=(
            StageConfig(16, (16,)),
            StageConfig(8, (24, 32)),
            StageConfig(4, (48, 64)),
        ),
        max_connections=3,
        num_basic_layers=num_basic_layers,
        candidate_set="mbconv",
        num_classes=10,
    )


@pytest.fixture
def small_spec() -> SuperNetworkSpec:
    return build_super_network(small_mbconv_config())


@pytest.fixture
def small_table(small_spec) -> CostTable:
    return CostTable.flops_for_space(small_spec)


def random_small_space(rng: np.random.Generator, max_blocks: int = 12, max_m: int = 4) -> SuperNetworkSpec:
    """A random valid space with at most max_blocks routing blocks."""
    n_blocks = int(rng.integers(1, max_blocks + 1))
    # Bottleneck widths must be divisible by 4; using multiples of 8
    # everywhere keeps every candidate set valid.
    width = 8 * int(rng.integers(1, 4))
    res = 16 if rng.integers(2) else 8  # stem resolution is 16 at input 32
    stages: list[StageConfig] = []
    remaining = n_blocks
    while remaining:
        size = int(rng.integers(1, remaining + 1))
        widths = []
        for _ in range(size):
            width += 8 * int(rng.integers(0, 3))
            widths.append(width)
        stages.append(StageConfig(res, tuple(widths)))
        remaining -= size
        if res > 4 and rng.integers(2):
            res //= 2
    config = SpaceConfig(
        input_resolution=32,
        stem_width=8,
        stages=tuple(stages),
        max_connections=int(rng.integers(1, max_m + 1)),
        num_basic_layers=int(rng.integers(1, 4)),
        candidate_set=CANDIDATE_SET_CHOICES[int(rng.integers(3))],
        num_classes=10,
    )
    return build_super_network(config)


def random_params_for(spec: SuperNetworkSpec, rng: np.random.Generator, scale: float = 1.0) -> ArchParams:
    params = init_params(spec)
    for k in sorted(params.alpha_basic):
        params.alpha_basic[k] = scale * rng.standard_normal(len(params.alpha_basic[k]))
    for k in sorted(params.alpha_align):
        params.alpha_align[k] = scale * rng.standard_normal(len(params.alpha_align[k]))
    for e in sorted(params.beta):
        params.beta[e] = float(scale * rng.standard_normal())
    return params


def one_hot_params(spec: SuperNetworkSpec, rng: np.random.Generator) -> ArchParams:
    """Parameters that put essentially all probability mass on one random
    path and one candidate per layer (logit margin 100)."""
    params = init_params(spec)
    node, chosen = 0, []
    while node != spec.ending_index:
        edges = spec.outgoing[node]
        conn = edges[int(rng.integers(len(edges)))]
        chosen.append((conn.src, conn.dst))
        node = conn.dst
    for e in params.beta:
        params.beta[e] = 50.0 if e in chosen else -50.0
    for key in sorted(params.layer_keys()):
        alpha = np.full(len(params.alpha(key)), -50.0)
        alpha[int(rng.integers(len(alpha)))] = 50.0
        params.set_alpha(key, alpha)
    return params


def enumeration_cost(spec: SuperNetworkSpec, params: ArchParams, table: CostTable) -> float:
    """Expected cost via explicit path enumeration (see module docstring)."""
    dist = path_probs(spec, params)
    basic: dict[int, float] = {}
    for b in spec.blocks:
        costs = np.array([table.lookup(s) for s in basic_layer_signatures(spec, b.index)])
        basic[b.index] = sum(
            float(op_weights(params.alpha(("b", b.index, l))) @ costs)
            for l in range(b.num_basic_layers)
        )
    edge: dict[tuple[int, int], float] = {}
    for c in spec.connections:
        if c.alignment_layer is not None:
            costs = np.array([table.lookup(s) for s in alignment_signatures(spec, c)])
            edge[(c.src, c.dst)] = float(op_weights(params.alpha(("a", c.src, c.dst))) @ costs)
        else:
            edge[(c.src, c.dst)] = table.lookup(
                head_signature(spec.width_of(c.src), spec.num_classes)
            )

    total = table.lookup(stem_signature(spec))
    stack = [(0, 1.0, 0.0)]
    while stack:
        node, prob, acc = stack.pop()
        if node == spec.ending_index:
            total += prob * acc
            continue
        acc += basic.get(node, 0.0)
        for c in spec.outgoing[node]:
            p = dist.prob(node, c.dst)
            stack.append((c.dst, prob * p, acc + edge[(c.src, c.dst)]))
    return float(total)
