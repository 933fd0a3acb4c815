"""Unit tests for toy-network inference, fine-tuning and codebook learning."""

import json

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from encmac.array_sim import column_mac
from encmac.circuit import sample_circuit
from encmac.errors import ContractError, TrainingDivergedError
from encmac.fit import fit_encoding
from encmac.quant import QuantScheme, build_product_table, quantize
from encmac.search import SearchConfig
from encmac.train import (
    DenseLayer,
    FinetuneConfig,
    ToyNetwork,
    accuracy,
    finetune_position_weights,
    infer,
    learn_codebook,
    load_dataset_csv,
    make_dataset,
    nonuniform_pipeline,
    position_weight_loss,
    quantize_inputs,
)


@pytest.fixture
def single_layer_net(scheme2):
    rng = np.random.default_rng(17)
    layer = DenseLayer(rng.integers(0, 4, (3, 6)), rng.normal(size=3), 0.25, 0.5, relu=False)
    return ToyNetwork([layer], scheme2, scheme2)


@pytest.fixture
def sampled_encoding2(table2):
    return fit_encoding(sample_circuit(np.random.default_rng(40), 2, 4), table2)


@pytest.mark.unit
def test_make_dataset_is_seeded():
    """Test that the blob dataset is reproducible."""
    a = make_dataset(n=50, features=4, seed=9)
    b = make_dataset(n=50, features=4, seed=9)
    np.testing.assert_array_equal(a.x, b.x)
    assert a.classes == 2 and a.features == 4 and len(a) == 50


@pytest.mark.unit
def test_load_dataset_csv(tmp_path):
    """Test CSV datasets with and without a header."""
    with_header = tmp_path / "a.csv"
    with_header.write_text("f0,f1,label\n0.5,1.0,0\n-1.0,2.0,1\n")
    data = load_dataset_csv(with_header)
    assert data.x.shape == (2, 2)
    assert data.y.tolist() == [0, 1]
    bare = tmp_path / "b.csv"
    bare.write_text("0.5,1.0,0\n")
    assert len(load_dataset_csv(bare)) == 1


@pytest.mark.unit
def test_network_validation(scheme2):
    """Test that invalid codes and inconsistent dims are rejected."""
    with pytest.raises(ContractError):
        ToyNetwork([DenseLayer(np.full((2, 3), 4), np.zeros(2), 1.0, 1.0)], scheme2, scheme2)
    with pytest.raises(ContractError):
        ToyNetwork(
            [DenseLayer(np.zeros((2, 3)), np.zeros(2), 1.0, 1.0), DenseLayer(np.zeros((2, 4)), np.zeros(2), 1.0, 1.0)],
            scheme2,
            scheme2,
        )


@pytest.mark.unit
def test_checkpoint_roundtrip(net2):
    """Test that network checkpoints round-trip and check dims."""
    data = json.loads(json.dumps(net2.to_dict()))
    restored = ToyNetwork.from_dict(data)
    assert restored.dims == net2.dims
    for a, b in zip(restored.layers, net2.layers):
        np.testing.assert_array_equal(a.weight_codes, b.weight_codes)
    data["dims"] = [1, 2, 3]
    with pytest.raises(ContractError):
        ToyNetwork.from_dict(data)


@pytest.mark.unit
def test_exact_encoding_inference_is_bit_identical(net2, tiny_splits, reference_encoding):
    """Test that an exact encoding reproduces exact inference bit for bit."""
    _, test = tiny_splits
    codes = quantize_inputs(net2, test.x)
    np.testing.assert_array_equal(infer(net2, reference_encoding, codes), infer(net2, None, codes))


@pytest.mark.unit
def test_encoded_inference_matches_array_columns():
    """Test that encoded layer outputs equal column_mac for real-valued position weights."""
    scheme = QuantScheme.uniform(4)
    table = build_product_table(scheme, scheme)
    rng = np.random.default_rng(21)
    weight_codes = rng.integers(0, 16, (4, 16))
    net = ToyNetwork([DenseLayer(weight_codes, np.zeros(4), 1.0, 1.0, relu=False)], scheme, scheme)
    codes = rng.integers(0, 16, (8, 16))
    for _ in range(20):
        encoding = fit_encoding(sample_circuit(rng, 4, 20), table)
        scores = infer(net, encoding, codes)
        expected = [[column_mac(encoding, w, a) for w in weight_codes] for a in codes]
        assert scores.tolist() == expected


@pytest.mark.unit
def test_zero_input_gives_bias_path(net2, reference_encoding, scheme2):
    """Test that zero inputs propagate only the biases."""
    codes = np.zeros((3, net2.dims[0]), dtype=np.int64)
    h = np.maximum(net2.layers[0].bias, 0.0)
    for layer in net2.layers[1:]:
        a = scheme2.levels[quantize(scheme2, h / layer.act_scale)]
        w = scheme2.levels[layer.weight_codes]
        h = (w @ a) * (layer.weight_scale * layer.act_scale) + layer.bias
        if layer.relu:
            h = np.maximum(h, 0.0)
    scores = infer(net2, reference_encoding, codes)
    for row in scores:
        np.testing.assert_allclose(row, h, rtol=0, atol=1e-12)


@pytest.mark.unit
def test_scheme_mismatch_is_rejected(net2):
    """Test that an encoding for other schemes is rejected."""
    scheme = QuantScheme.uniform(3)
    table = build_product_table(scheme, scheme)
    encoding = fit_encoding(sample_circuit(np.random.default_rng(0), 3, 6), table)
    with pytest.raises(ContractError):
        infer(net2, encoding, np.zeros((1, net2.dims[0]), dtype=np.int64))


@pytest.mark.unit
def test_input_codes_checked(net2):
    """Test that input codes must fit the activation scheme."""
    with pytest.raises(ContractError):
        infer(net2, None, np.full((1, net2.dims[0]), 4))


@pytest.mark.unit
def test_gradient_matches_finite_differences(single_layer_net, sampled_encoding2):
    """Test the position-weight gradient against finite differences."""
    rng = np.random.default_rng(3)
    codes = rng.integers(0, 4, (16, 6))
    labels = rng.integers(0, 3, 16)
    s = sampled_encoding2.weights.copy()
    _, grad = position_weight_loss(single_layer_net, sampled_encoding2, codes, labels, s)
    step = 1e-6
    for j in range(len(s)):
        up, down = s.copy(), s.copy()
        up[j] += step
        down[j] -= step
        numeric = (
            position_weight_loss(single_layer_net, sampled_encoding2, codes, labels, up)[0]
            - position_weight_loss(single_layer_net, sampled_encoding2, codes, labels, down)[0]
        ) / (2 * step)
        assert grad[j] == pytest.approx(numeric, rel=1e-4, abs=1e-8)


@pytest.mark.unit
def test_exact_encoding_loss_matches_exact_inference(net2, tiny_splits, reference_encoding):
    """Test that the training loss matches inference scores for an exact encoding."""
    train, _ = tiny_splits
    codes = quantize_inputs(net2, train.x)
    loss, _ = position_weight_loss(net2, reference_encoding, codes, train.y)
    exact = F.cross_entropy(torch.from_numpy(infer(net2, None, codes)), torch.from_numpy(train.y)).item()
    assert loss == pytest.approx(exact, rel=1e-9)


@pytest.mark.unit
def test_zero_learning_rate_keeps_weights(net2, tiny_splits, sampled_encoding2):
    """Test that a zero learning rate leaves the weights unchanged."""
    train, _ = tiny_splits
    result = finetune_position_weights(net2, sampled_encoding2, train, FinetuneConfig(lr=0.0, epochs=3))
    assert result.encoding.weights.tolist() == sampled_encoding2.weights.tolist()
    assert len(result.losses) == 4
    assert len(set(result.losses)) == 1


@pytest.mark.unit
def test_finetune_never_lowers_training_accuracy(net2, tiny_splits, sampled_encoding2):
    """Test that fine-tuning never lowers training accuracy."""
    train, _ = tiny_splits
    before_circuit = json.dumps(sampled_encoding2.circuit.to_dict(), sort_keys=True)
    result = finetune_position_weights(net2, sampled_encoding2, train, FinetuneConfig(lr=0.05, epochs=5, seed=1))
    assert result.accuracy_after >= result.accuracy_before
    assert accuracy(net2, result.encoding, train) == result.accuracy_after
    assert json.dumps(result.encoding.circuit.to_dict(), sort_keys=True) == before_circuit
    assert result.encoding.rmse >= 0


@pytest.mark.unit
def test_finetune_divergence(net2, tiny_splits, sampled_encoding2):
    """Test that a non-finite loss raises with the curve so far."""
    train, _ = tiny_splits
    with pytest.raises(TrainingDivergedError) as excinfo:
        finetune_position_weights(net2, sampled_encoding2, train, FinetuneConfig(lr=float("inf"), epochs=2))
    assert len(excinfo.value.losses) >= 1


@pytest.mark.unit
def test_finetune_config_validation():
    """Test that invalid fine-tuning settings are rejected."""
    with pytest.raises(ContractError):
        FinetuneConfig(lr=-1.0)
    with pytest.raises(ContractError):
        FinetuneConfig(loss="mse")


@pytest.mark.unit
def test_learn_codebook_sorted_and_padded():
    """Test that learned levels are sorted and padded."""
    scheme = learn_codebook(np.array([3.0, -1.0, 3.0, 0.5, -1.0]), width=2, seed=0)
    assert scheme.size == 4
    assert list(scheme.codebook) == sorted(scheme.codebook)
    assert scheme.codebook == (-1.0, 0.5, 3.0, 3.0)


@pytest.mark.unit
def test_learn_codebook_gaussian():
    """Test k-means levels on Gaussian weights."""
    values = np.random.default_rng(0).normal(size=2000)
    scheme = learn_codebook(values, width=4, seed=0)
    assert scheme.width == 4
    assert np.all(np.diff(scheme.levels) > 0)


@pytest.mark.unit
def test_codebook_table_has_256_rows():
    """Test that a 4-bit codebook table has 256 rows."""
    scheme = learn_codebook(np.random.default_rng(1).normal(size=500), width=4)
    assert len(build_product_table(scheme, scheme)) == 256


@pytest.mark.unit
def test_pipeline_degenerate_codebook():
    """Test the codebook pipeline on an all-equal codebook."""
    zeros = QuantScheme.from_codebook([0.0] * 16)
    report = nonuniform_pipeline(zeros, SearchConfig(max_samples=10, window=5, seed=2))
    assert report.encoding.rmse == 0.0
    assert report.chosen_width == SearchConfig().width_bounds(4)[0]
    assert report.table_rows == 256
    assert report.exact_accuracy is None


@pytest.mark.unit
def test_pipeline_learns_codebook_from_model(float_model, tiny_splits):
    """Test that the pipeline learns a codebook from the float model."""
    train, test = tiny_splits
    cfg = SearchConfig(max_samples=30, window=10, seed=4, min_width=4, max_width=24)
    report = nonuniform_pipeline(
        None, cfg, width=2, model=float_model, train_data=train, test_data=test, target_fraction=0.5
    )
    assert report.weight_scheme.width == 2
    assert 0.0 <= report.encoded_accuracy <= 1.0
    assert report.to_dict()["chosen_width"] == report.chosen_width
