import dataclasses

import numpy as np
import pytest

from conftest import random_small_space, small_mbconv_config
from densespace.reference import mbconv_reference_config, resnet_reference_config
from densespace.space import (
    ConnectionSpec,
    LayerSpec,
    OperationKind,
    SpaceConfig,
    SpaceError,
    StageConfig,
    SuperNetworkSpec,
    build_super_network,
    candidate_ops,
    mbconv,
    resnet_basic,
    resnet_bottleneck,
    skip_connect,
    validate,
)


def test_operation_kind_validation():
    assert mbconv(3, 6).kernel == 3
    assert skip_connect().is_skip
    assert resnet_bottleneck().expansion == 4
    with pytest.raises(SpaceError):
        OperationKind("mbconv", 4, 6)
    with pytest.raises(SpaceError):
        OperationKind("mbconv", 3, 2)
    with pytest.raises(SpaceError):
        OperationKind("skip", 3, 0)
    with pytest.raises(SpaceError):
        OperationKind("resnet-bottleneck", 0, 2)
    with pytest.raises(SpaceError):
        OperationKind("pooling")


def test_candidate_sets():
    ops = candidate_ops("mbconv", with_skip=True)
    assert len(ops) == 7 and ops[-1].is_skip
    assert len(set(ops)) == 7
    assert candidate_ops("mbconv", with_skip=False) == ops[:-1]
    assert candidate_ops("resnet-basic", with_skip=False) == (resnet_basic(),)
    assert candidate_ops("resnet-bottleneck", with_skip=True)[0] == resnet_bottleneck()
    with pytest.raises(SpaceError):
        candidate_ops("darts", with_skip=True)


def test_layer_spec_rejects_skip_in_alignment():
    with pytest.raises(SpaceError):
        LayerSpec((resnet_basic(), skip_connect()), allow_skip=False)
    with pytest.raises(SpaceError):
        LayerSpec((), allow_skip=True)
    with pytest.raises(SpaceError):
        LayerSpec((resnet_basic(), resnet_basic()), allow_skip=False)


def test_build_small_space_structure():
    spec = build_super_network(small_mbconv_config())
    assert spec.n_blocks == 5
    assert spec.ending_index == 6
    assert spec.stem_resolution == 16
    # Stem edge is present and fixed.
    assert (0, 1) in spec.edge_map
    assert spec.edge_map[(0, 1)].stride == 1
    # No edge spans more than max_connections blocks or more than a 2x
    # resolution drop.
    for c in spec.connections:
        assert c.dst - c.src <= spec.max_connections
        if c.dst <= spec.n_blocks:
            ratio = spec.resolution_of(c.src) / spec.resolution_of(c.dst)
            assert ratio in (1.0, 2.0)
            assert c.stride == int(ratio)
            assert c.alignment_layer is not None
        else:
            assert c.alignment_layer is None
    # Block 1 (res 16) cannot reach block 4 (res 4): a 4x drop.
    assert (1, 4) not in spec.edge_map
    # Ending edges leave only final-stage blocks.
    enders = [c.src for c in spec.incoming[spec.ending_index]]
    assert enders == [4, 5]
    assert validate(spec) == []


def test_reference_configs_build_clean():
    mb = build_super_network(mbconv_reference_config())
    assert mb.n_blocks == 11
    assert len(mb.connections) == 33
    assert validate(mb) == []
    rn = build_super_network(resnet_reference_config())
    assert rn.n_blocks == 9
    assert validate(rn) == []
    # ResNet alignment layers carry a single candidate and no skip.
    for c in rn.alignment_edges():
        assert len(c.alignment_layer.candidates) == 1
        assert not c.alignment_layer.candidates[0].is_skip
    # Basic layers offer the skip connection.
    assert any(op.is_skip for op in rn.basic_layer.candidates)


def test_build_rejects_bad_configs():
    base = small_mbconv_config()
    with pytest.raises(SpaceError):
        build_super_network(dataclasses.replace(base, max_connections=0))
    with pytest.raises(SpaceError):
        build_super_network(dataclasses.replace(base, num_basic_layers=0))
    with pytest.raises(SpaceError):
        build_super_network(dataclasses.replace(base, stages=()))
    # Non power-of-two resolution.
    bad = dataclasses.replace(base, stages=(StageConfig(12, (16,)),))
    with pytest.raises(SpaceError):
        build_super_network(bad)
    # Resolution jump over 2x between stages.
    bad = dataclasses.replace(base, stages=(StageConfig(16, (16,)), StageConfig(4, (32,))))
    with pytest.raises(SpaceError):
        build_super_network(bad)
    # Decreasing widths.
    bad = dataclasses.replace(base, stages=(StageConfig(16, (32, 16)),))
    with pytest.raises(SpaceError):
        build_super_network(bad)


def test_validate_flags_tampered_specs():
    spec = build_super_network(small_mbconv_config())
    # Drop a permitted edge.
    pruned = dataclasses.replace(spec, connections=spec.connections[:-1])
    codes = {v.code for v in validate(pruned)}
    assert "edge-missing" in codes
    # Add an edge the constraints forbid.
    extra = ConnectionSpec(1, 5, 2, spec.edge_map[(0, 1)].alignment_layer)
    widened = dataclasses.replace(spec, connections=spec.connections + (extra,))
    codes = {v.code for v in validate(widened)}
    assert "edge-extra" in codes
    # Backward edge.
    back = ConnectionSpec(3, 2, 1, spec.edge_map[(0, 1)].alignment_layer)
    codes = {v.code for v in validate(dataclasses.replace(spec, connections=spec.connections + (back,)))}
    assert "edge-order" in codes


def test_spec_json_round_trip_and_hash():
    spec = build_super_network(small_mbconv_config())
    again = SuperNetworkSpec.from_json(spec.to_json())
    assert again == spec
    assert again.sha256() == spec.sha256()
    assert spec.canonical() == again.canonical()


def test_space_config_json_round_trip():
    config = small_mbconv_config()
    assert SpaceConfig.from_json(config.to_json()) == config
    with pytest.raises(SpaceError):
        SpaceConfig.from_json({"input_resolution": 32})


def test_random_small_spaces_are_valid():
    rng = np.random.default_rng(7)
    for _ in range(40):
        spec = random_small_space(rng)
        assert 1 <= spec.n_blocks <= 12
        assert validate(spec) == []
