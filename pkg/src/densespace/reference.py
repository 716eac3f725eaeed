"""Reference search-space configs and published-network reconstructions.

The two reference space configs are plausible reconstructions, not
ground truth: the exact block counts and width schedules behind the
published search spaces were never released, only the qualitative rule
that widths grow slowly early and faster late.

The ResNet classifiers and the searched ResNet-family architectures are
reconstructed exactly from their published layer tables and are used to
validate the FLOPs and parameter accounting.
"""

from __future__ import annotations

from .cost import OpSignature, flops_of, head_signature, params_of
from .derive import DerivedArchitecture, DerivedBlock
from .space import (
    KIND_CONV,
    SpaceConfig,
    StageConfig,
    resnet_basic,
    resnet_bottleneck,
)


def mbconv_reference_config() -> SpaceConfig:
    return SpaceConfig(
        input_resolution=224,
        stem_width=32,
        stages=(
            StageConfig(112, (16,)),
            StageConfig(56, (24, 32)),
            StageConfig(28, (48, 56, 64)),
            StageConfig(14, (96, 112, 128)),
            StageConfig(7, (192, 256)),
        ),
        max_connections=4,
        num_basic_layers=3,
        candidate_set="mbconv",
    )


def resnet_reference_config() -> SpaceConfig:
    return SpaceConfig(
        input_resolution=224,
        stem_width=32,
        stages=(
            StageConfig(56, (48, 64)),
            StageConfig(28, (72, 96)),
            StageConfig(14, (176, 192, 208)),
            StageConfig(7, (288, 512)),
        ),
        max_connections=4,
        num_basic_layers=3,
        candidate_set="resnet-basic",
    )


# ---------------------------------------------------------------------------
# Plain ResNet classifiers (224x224 input, 1000 classes).

def _resnet_signatures(stage_widths, stage_depths, bottleneck: bool) -> list[OpSignature]:
    sigs = [OpSignature(KIND_CONV, 7, 0, 3, 64, 224, 2)]
    # 3x3 max pooling, stride 2: free under the MAC convention, halves
    # the resolution to 56.
    c_in, res = 64, 56
    op = resnet_bottleneck() if bottleneck else resnet_basic()
    for stage_idx, (width, depth) in enumerate(zip(stage_widths, stage_depths)):
        for d in range(depth):
            stride = 2 if (d == 0 and stage_idx > 0) else 1
            sigs.append(OpSignature.of(op, c_in, width, res, stride))
            res //= stride
            c_in = width
    sigs.append(head_signature(c_in, 1000))
    return sigs


def resnet18_signatures() -> list[OpSignature]:
    return _resnet_signatures((64, 128, 256, 512), (2, 2, 2, 2), bottleneck=False)


def resnet34_signatures() -> list[OpSignature]:
    return _resnet_signatures((64, 128, 256, 512), (3, 4, 6, 3), bottleneck=False)


def resnet50b_signatures() -> list[OpSignature]:
    # The "-B" variant: stride 2 sits on each 3x3 conv, which is how the
    # bottleneck signature is costed.
    return _resnet_signatures((256, 512, 1024, 2048), (3, 4, 6, 3), bottleneck=True)


def network_flops(sigs) -> float:
    return float(sum(flops_of(s) for s in sigs))


def network_params(sigs) -> float:
    return float(sum(params_of(s) for s in sigs))


# ---------------------------------------------------------------------------
# Searched ResNet-family architectures, from the published layer tables.
# Each (width, resolution, count) row becomes one block whose alignment
# layer absorbs the stride/width change; the remaining count - 1 layers
# are width-preserving.

def _searched_resnet(rows, bottleneck: bool) -> DerivedArchitecture:
    op = resnet_bottleneck() if bottleneck else resnet_basic()
    blocks = []
    prev_res = 112  # after the 3x3, 32, stride-2 stem
    for idx, (width, res, count) in enumerate(rows, start=1):
        blocks.append(DerivedBlock(
            index=idx,
            width=width,
            resolution=res,
            stride_in=prev_res // res,
            src=idx - 1,
            alignment_op=op,
            ops=(op,) * (count - 1),
        ))
        prev_res = res
    return DerivedArchitecture(
        input_resolution=224,
        stem_width=32,
        num_classes=1000,
        blocks=tuple(blocks),
    )


def densenas_r1() -> DerivedArchitecture:
    return _searched_resnet(
        [(64, 56, 1), (72, 28, 2), (176, 14, 6), (192, 14, 3), (288, 7, 1), (512, 7, 1)],
        bottleneck=False,
    )


def densenas_r2() -> DerivedArchitecture:
    return _searched_resnet(
        [(48, 56, 1), (72, 28, 4), (176, 14, 16), (208, 14, 4), (288, 7, 2), (512, 7, 1)],
        bottleneck=False,
    )


def densenas_r3() -> DerivedArchitecture:
    return _searched_resnet(
        [(192, 56, 1), (288, 28, 4), (704, 14, 16), (832, 14, 4), (1152, 7, 2), (2048, 7, 1)],
        bottleneck=True,
    )
