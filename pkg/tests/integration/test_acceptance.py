"""Acceptance-scale runs (W=8 searches). Enable with ENCMAC_RUN_SLOW_TESTS=1."""

import os

import pytest

from encmac import search
from encmac.array_sim import TRADITIONAL_MULTIPLIER_GATES
from encmac.circuit import gate_count
from encmac.quant import QuantScheme, build_product_table
from encmac.search import (
    DEFAULT_TARGET_FRACTION,
    SearchConfig,
    exhaustive_search,
    relative_target,
    sample_search,
    width_binary_search,
)
from encmac.train import (
    BaselineConfig,
    FinetuneConfig,
    accuracy,
    finetune_position_weights,
    make_dataset,
    nonuniform_pipeline,
    quantize_network,
    split_dataset,
    train_float_mlp,
)

JOBS = os.cpu_count() or 1


@pytest.fixture(scope="module")
def table8():
    scheme = QuantScheme.uniform(8)
    return build_product_table(scheme, scheme)


@pytest.fixture(scope="module")
def encoding48(table8):
    return sample_search(table8, 48, SearchConfig(seed=0), jobs=JOBS)


@pytest.mark.slow
@pytest.mark.integration
def test_small_instance_exhaustive_and_sampled(table2):
    """Test that W=2, M=5 is exact by enumeration and found by sampling on 19 of 20 seeds."""
    assert exhaustive_search(table2, 5).rmse < 1e-9
    hits = 0
    for seed in range(20):
        encoding, _ = sample_search(table2, 5, SearchConfig(max_samples=100_000, epsilon=0.0, seed=seed))
        hits += encoding.rmse <= 0.25
    assert hits >= 19


@pytest.mark.slow
@pytest.mark.integration
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_best_rmse_stabilizes(table8, seed):
    """Test that the best RMSE barely moves between 10^4 and 10^5 samples."""
    cfg = SearchConfig(max_samples=100_000, epsilon=0.0, seed=seed)
    _, trace = sample_search(table8, 48, cfg, jobs=JOBS)
    at_1e4 = trace.best_rmse_series[9_999]
    at_1e5 = trace.best_rmse_series[-1]
    assert (at_1e4 - at_1e5) / at_1e4 < 0.01


@pytest.mark.slow
@pytest.mark.integration
def test_width_search_lands_near_48(table8, encoding48, mocker):
    """Test that the width search starts at 72 and lands near 48 bits."""
    target = encoding48[0].rmse
    spy = mocker.spy(search, "sample_search")
    encoding, trace = width_binary_search(table8, SearchConfig(seed=1, target_rmse=target), jobs=JOBS)
    assert spy.call_args_list[0].args[1] == 72
    assert 40 <= trace.chosen_width <= 56
    assert encoding.rmse <= target


@pytest.mark.slow
@pytest.mark.integration
def test_gate_count_below_traditional(encoding48):
    """Test that a 48-bit encoding uses far fewer gates than an array multiplier."""
    total = gate_count(encoding48[0].circuit).total
    assert total <= 48
    assert 1 - total / TRADITIONAL_MULTIPLIER_GATES > 0.88


@pytest.mark.slow
@pytest.mark.integration
def test_toy_mlp_accuracy_with_searched_encoding(encoding48):
    """Test that fine-tuning keeps the toy network within 2 points of exact."""
    train, test = split_dataset(make_dataset(n=1000, features=16, seed=0), 0.25, seed=0)
    model = train_float_mlp(train, BaselineConfig(seed=0))
    scheme = QuantScheme.uniform(8)
    net = quantize_network(model, train.x, scheme, scheme)
    encoding = encoding48[0]
    exact = accuracy(net, None, test)
    result = finetune_position_weights(net, encoding, train, FinetuneConfig(epochs=20, lr=1e-3))
    assert result.accuracy_after >= result.accuracy_before
    assert accuracy(net, result.encoding, test) >= exact - 0.02


@pytest.fixture(scope="module")
def default_uniform_search(table8):
    cfg = SearchConfig(seed=3, target_rmse=relative_target(table8, DEFAULT_TARGET_FRACTION))
    return width_binary_search(table8, cfg, jobs=JOBS)


@pytest.mark.slow
@pytest.mark.integration
def test_default_target_lands_near_48(table8, default_uniform_search):
    """Test that the default relative target is reachable on 8-bit and lands near 48 bits."""
    encoding, trace = default_uniform_search
    assert encoding.rmse <= DEFAULT_TARGET_FRACTION * table8.rms
    assert 32 <= trace.chosen_width <= 64


@pytest.mark.slow
@pytest.mark.integration
def test_codebook_width_below_uniform_width(default_uniform_search):
    """Test that a 4-bit codebook table needs fewer output bits under the same target policy."""
    _, uniform_trace = default_uniform_search
    train, test = split_dataset(make_dataset(n=1000, features=16, seed=3), 0.25, seed=3)
    model = train_float_mlp(train, BaselineConfig(seed=3))
    report = nonuniform_pipeline(
        None,
        SearchConfig(seed=3),
        width=4,
        model=model,
        train_data=train,
        test_data=test,
        target_fraction=DEFAULT_TARGET_FRACTION,
        jobs=JOBS,
    )
    assert report.table_rows == 256
    assert report.chosen_width < uniform_trace.chosen_width
