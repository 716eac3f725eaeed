import numpy as np
import pytest

from conftest import enumeration_cost, one_hot_params, random_params_for, random_small_space
from densespace.cost import (
    CostError,
    CostTable,
    MissingCostEntryError,
    OpSignature,
    arch_signatures,
    chained_cost,
    chained_cost_literal,
    cost_gradients,
    exact_cost,
    flops_of,
    head_signature,
    layer_cost,
    local_cost,
    params_of,
    space_signatures,
    stem_signature,
)
from densespace.derive import derive
from densespace.params import init_params
from densespace.space import (
    SpaceConfig,
    StageConfig,
    build_super_network,
    mbconv,
    resnet_basic,
    resnet_bottleneck,
    skip_connect,
)


# -- per-operation counting, against hand arithmetic -------------------------

def test_conv_and_linear_flops():
    stem = OpSignature("conv", 3, 0, 3, 32, 224, 2)
    assert flops_of(stem) == 9 * 3 * 32 * 112 ** 2  # 10,838,016
    fc = OpSignature("linear", 0, 0, 512, 1000, 1, 1)
    assert flops_of(fc) == 512 * 1000
    assert params_of(fc) == 512 * 1000 + 1000
    assert params_of(stem) == 9 * 3 * 32  # no conv bias


def test_mbconv_flops_reference():
    sig = OpSignature("mbconv", 3, 6, 16, 24, 112, 1)
    # expand 1x1 at input res + depthwise 3x3 at output res + project 1x1
    assert flops_of(sig) == 59006976.0
    hidden = 16 * 6
    assert params_of(sig) == 16 * hidden + 9 * hidden + hidden * 24


def test_mbconv_stride_two_splits_resolution():
    sig = OpSignature("mbconv", 5, 3, 32, 32, 28, 2)
    hidden = 96
    want = 32 * hidden * 28 ** 2 + 25 * hidden * 14 ** 2 + hidden * 32 * 14 ** 2
    assert flops_of(sig) == want


def test_resnet_basic_flops():
    same = OpSignature("resnet-basic", 0, 0, 64, 64, 56, 1)
    assert flops_of(same) == 2 * 9 * 64 * 64 * 56 ** 2  # no projection
    down = OpSignature("resnet-basic", 0, 0, 64, 128, 56, 2)
    want = 9 * 64 * 128 * 28 ** 2 + 9 * 128 * 128 * 28 ** 2 + 64 * 128 * 28 ** 2
    assert flops_of(down) == want


def test_resnet_bottleneck_flops():
    sig = OpSignature("resnet-bottleneck", 0, 4, 64, 256, 56, 1)
    inner = 64
    want = (64 * inner * 56 ** 2          # first 1x1 at input resolution
            + 9 * inner * inner * 56 ** 2  # 3x3 carries the stride
            + inner * 256 * 56 ** 2
            + 64 * 256 * 56 ** 2)          # projection (shape change)
    assert flops_of(sig) == want
    with pytest.raises(CostError):
        flops_of(OpSignature("resnet-bottleneck", 0, 4, 64, 250, 56, 1))


def test_skip_is_free():
    sig = OpSignature("skip", 0, 0, 32, 32, 16, 1)
    assert flops_of(sig) == 0.0
    assert params_of(sig) == 0.0


def test_signature_validation():
    with pytest.raises(CostError):
        OpSignature("conv", 3, 0, 0, 8, 16, 1)
    with pytest.raises(CostError):
        OpSignature("conv", 3, 0, 8, 8, 16, 3)
    with pytest.raises(CostError):
        OpSignature("conv", 3, 0, 8, 8, 15, 2)


# -- tables -------------------------------------------------------------------

def test_table_reports_all_missing_entries(small_spec):
    table = CostTable("FLOPs", {})
    sigs = space_signatures(small_spec)[:5]
    with pytest.raises(MissingCostEntryError) as err:
        table.lookup_many(sigs)
    assert sorted(err.value.signatures) == sorted(sigs)
    with pytest.raises(MissingCostEntryError):
        table.lookup(sigs[0])
    with pytest.raises(CostError):
        CostTable("FLOPs", {sigs[0]: -1.0})


def test_latency_csv_round_trip(tmp_path, small_spec):
    table = CostTable.flops_for_space(small_spec)
    # Scale to plausible millisecond magnitudes to exercise float text.
    latency = CostTable("milliseconds", {s: v * 1e-7 + 0.013 for s, v in table.entries.items()})
    path = tmp_path / "latency.csv"
    latency.to_csv(str(path))
    again = CostTable.from_latency_csv(str(path))
    assert again.unit == "milliseconds"
    assert again.entries == latency.entries  # repr round-trips floats exactly


def test_latency_csv_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("kind,kernel,c_in,c_out,res_in,stride,cost_ms\n")
    with pytest.raises(CostError):
        CostTable.from_latency_csv(str(path))


def test_space_signatures_cover_estimators(small_spec):
    sigs = space_signatures(small_spec)
    assert stem_signature(small_spec) in sigs
    assert head_signature(64, small_spec.num_classes) in sigs
    table = CostTable.flops_for(sigs)
    params = init_params(small_spec)
    chained_cost(small_spec, params, table)  # no MissingCostEntryError
    local_cost(small_spec, params, table)


def test_chained_cost_missing_entries_reported_exhaustively(small_spec):
    params = init_params(small_spec)
    with pytest.raises(MissingCostEntryError) as err:
        chained_cost(small_spec, params, CostTable("FLOPs", {}))
    assert set(err.value.signatures) == set(space_signatures(small_spec))


# -- estimators ---------------------------------------------------------------

def test_chained_cost_matches_path_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(12):
        spec = random_small_space(rng, max_blocks=7)
        table = CostTable.flops_for_space(spec)
        params = random_params_for(spec, rng)
        got, breakdown = chained_cost(spec, params, table)
        want = enumeration_cost(spec, params, table)
        assert got == pytest.approx(want, rel=1e-12)
        assert breakdown.total == got
        assert breakdown.stem == flops_of(stem_signature(spec))


def test_chained_equals_local_on_pure_chain():
    config = SpaceConfig(
        input_resolution=32,
        stem_width=8,
        stages=(StageConfig(16, (8, 16)), StageConfig(8, (24,))),
        max_connections=1,  # only consecutive edges: a single path
        num_basic_layers=2,
        candidate_set="mbconv",
        num_classes=10,
    )
    spec = build_super_network(config)
    table = CostTable.flops_for_space(spec)
    rng = np.random.default_rng(5)
    params = random_params_for(spec, rng)
    chained, _ = chained_cost(spec, params, table)
    assert chained == pytest.approx(local_cost(spec, params, table), rel=1e-12)


def test_local_and_literal_diverge_from_chained_on_dense_space(small_spec, small_table):
    rng = np.random.default_rng(6)
    params = random_params_for(small_spec, rng)
    chained, _ = chained_cost(small_spec, params, small_table)
    assert local_cost(small_spec, params, small_table) > chained
    assert chained_cost_literal(small_spec, params, small_table) != pytest.approx(chained, rel=1e-6)


def test_one_hot_chained_matches_exact(small_spec, small_table):
    rng = np.random.default_rng(2)
    for _ in range(10):
        params = one_hot_params(small_spec, rng)
        chained, _ = chained_cost(small_spec, params, small_table)
        exact = exact_cost(derive(small_spec, params), small_table)
        assert abs(chained - exact) / exact < 1e-6


def test_cost_gradients_match_finite_differences(small_spec, small_table):
    rng = np.random.default_rng(9)
    params = random_params_for(small_spec, rng)
    total, grads = cost_gradients(small_spec, params, small_table)
    h = 1e-5

    def fd(bump):
        plus = params.copy()
        minus = params.copy()
        bump(plus, +h)
        bump(minus, -h)
        up, _ = chained_cost(small_spec, plus, small_table)
        down, _ = chained_cost(small_spec, minus, small_table)
        return (up - down) / (2 * h)

    key = ("b", 2, 0)
    for k in range(len(params.alpha(key))):
        def bump_alpha(p, eps, k=k):
            p.alpha_basic[(2, 0)] = p.alpha_basic[(2, 0)].copy()
            p.alpha_basic[(2, 0)][k] += eps
        got = grads.alpha_basic[(2, 0)][k]
        assert got == pytest.approx(fd(bump_alpha), rel=1e-4, abs=total * 1e-10)
    for edge in [(0, 1), (1, 2), (2, 4)]:
        def bump_beta(p, eps, edge=edge):
            p.beta[edge] += eps
        assert grads.beta[edge] == pytest.approx(fd(bump_beta), rel=1e-4, abs=total * 1e-10)


def test_beta_gradients_sum_to_zero_per_source(small_spec, small_table):
    # Softmax normalization: a uniform shift of one block's outgoing beta
    # leaves the cost unchanged, so the gradients sum to zero.
    rng = np.random.default_rng(10)
    params = random_params_for(small_spec, rng)
    _, grads = cost_gradients(small_spec, params, small_table)
    per_src: dict[int, float] = {}
    for (i, _j), g in grads.beta.items():
        per_src[i] = per_src.get(i, 0.0) + g
    scale = max(abs(g) for g in grads.beta.values())
    for i, s in per_src.items():
        assert abs(s) <= 1e-9 * scale


# -- concrete architectures ----------------------------------------------------

def test_arch_signatures_order_and_exact_cost(small_spec, small_table):
    rng = np.random.default_rng(4)
    params = one_hot_params(small_spec, rng)
    arch = derive(small_spec, params)
    sigs = arch_signatures(arch)
    assert sigs[0] == stem_signature(small_spec)
    assert sigs[-1] == head_signature(arch.blocks[-1].width, small_spec.num_classes)
    assert exact_cost(arch, small_table) == pytest.approx(
        sum(flops_of(s) for s in sigs), rel=1e-12
    )


def test_layer_cost_and_regularized_loss():
    from densespace.cost import regularized_loss

    w = np.array([0.25, 0.75])
    c = np.array([4.0, 8.0])
    assert layer_cost(w, c) == 7.0
    with pytest.raises(CostError):
        layer_cost(w, np.array([1.0]))
    # log base tau: at tau = 10, cost 1e9 contributes 9 * lambda.
    assert regularized_loss(2.0, 1e9, 0.5, 10.0) == pytest.approx(2.0 + 0.5 * 9.0)
    assert regularized_loss(2.0, 123.0, 0.0, 10.0) == 2.0
    with pytest.raises(CostError):
        regularized_loss(0.0, -1.0, 0.1, 10.0)
    with pytest.raises(CostError):
        regularized_loss(0.0, 1.0, 0.1, 1.0)
    with pytest.raises(CostError):
        regularized_loss(0.0, 1.0, -0.1, 10.0)
