import pytest

from densespace.cost import CostTable, arch_signatures, exact_cost, flops_of_arch, params_of_arch
from densespace.reference import (
    densenas_r1,
    densenas_r2,
    densenas_r3,
    network_flops,
    network_params,
    resnet18_signatures,
    resnet34_signatures,
    resnet50b_signatures,
)


def rel_err(got, want):
    return abs(got - want) / want


@pytest.mark.parametrize(
    "sigs_fn,flops",
    [
        (resnet18_signatures, 1.81e9),
        (resnet34_signatures, 3.66e9),
        (resnet50b_signatures, 4.09e9),
    ],
)
def test_resnet_classifier_flops(sigs_fn, flops):
    assert rel_err(network_flops(sigs_fn()), flops) < 0.02


@pytest.mark.parametrize(
    "arch_fn,flops,params",
    [
        (densenas_r1, 1.61e9, 11.1e6),
        (densenas_r2, 3.06e9, 19.5e6),
        (densenas_r3, 3.41e9, 24.7e6),
    ],
)
def test_searched_architectures_flops_and_params(arch_fn, flops, params):
    arch = arch_fn()
    assert rel_err(flops_of_arch(arch), flops) < 0.02
    assert rel_err(params_of_arch(arch), params) < 0.02
    # The analytic table agrees with the direct count.
    table = CostTable.flops_for(arch_signatures(arch))
    assert exact_cost(arch, table) == flops_of_arch(arch)


def test_searched_architectures_shapes():
    for arch_fn, n_blocks in [(densenas_r1, 6), (densenas_r2, 6), (densenas_r3, 6)]:
        arch = arch_fn()
        assert len(arch.blocks) == n_blocks
        assert arch.blocks[-1].resolution == 7
        assert arch.input_resolution == 224
        # Total layer count equals the published depth of each row.
        depths = [1 + len(b.ops) for b in arch.blocks]
        assert sum(depths) >= n_blocks


def test_network_params_counts_head_bias():
    sigs = resnet18_signatures()
    head = sigs[-1]
    assert network_params([head]) == head.c_in * 1000 + 1000
