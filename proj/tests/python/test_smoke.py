import itertools

import numpy as np
import pytest

import polyfuse


def test_version():
    assert polyfuse.__version__.count(".") == 2


def test_linear_fusion_is_three_block_sum():
    rng = np.random.default_rng(0)
    z = [rng.integers(-8, 8, n) / 4.0 for n in (3, 4, 2)]
    w = rng.integers(-8, 8, (9, 5)) / 4.0
    expected = z[0] @ w[:3] + z[1] @ w[3:7] + z[2] @ w[7:]
    np.testing.assert_array_equal(polyfuse.fuse_linear(*z, w), expected)


def test_factorized_polynomial_matches_dense_einsum():
    layer = polyfuse.FusionLayer({"kind": "polynomial", "dim_a": 2, "dim_b": 2, "dim_c": 1,
                                  "output_dim": 3, "rank": 4, "order": 3, "symmetric": True}, seed=5)
    rng = np.random.default_rng(1)
    z1, z2, z3 = rng.normal(size=2), rng.normal(size=2), rng.normal(size=1)
    z = np.concatenate([z1, z2, z3])
    dense = layer.materialize()
    assert dense.shape == (5, 5, 5, 3)
    expected = np.einsum("i,j,k,ijko->o", z, z, z, dense)
    np.testing.assert_allclose(layer.apply(z1, z2, z3), expected, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(polyfuse.fuse_polynomial_full(z, dense), expected, rtol=1e-12, atol=1e-14)


def test_reconstruct_full_against_numpy():
    rng = np.random.default_rng(2)
    factors = [rng.normal(size=(d, 3, 2)) for d in (2, 3, 4)]
    weights = rng.normal(size=3)
    expected = np.einsum("r,iro,jro,kro->ijko", weights, *factors)
    np.testing.assert_allclose(polyfuse.reconstruct_full(factors, weights), expected, rtol=1e-12)


def test_param_counts_at_full_sizes():
    base = {"dim_a": 120, "dim_b": 144, "dim_c": 144, "output_dim": 128, "rank": 16}
    assert polyfuse.param_count({**base, "kind": "linear"}) == 52224
    assert polyfuse.param_count({**base, "kind": "tensor", "path": "full"}) == 318504960
    assert polyfuse.param_count({**base, "kind": "polynomial", "order": 5, "symmetric": True}) == 835600


def test_unknown_keys_are_rejected():
    with pytest.raises(ValueError):
        polyfuse.param_count({"kind": "linear", "colour": 3})


def test_dataset_and_model_round_trip():
    spec = {"generator": "interaction", "trials": 4,
            "segment_shape": {"eeg": [5, 128], "nirs": [6, 30]}}
    data = polyfuse.Dataset.synthetic(spec, seed=3)
    assert len(data) == 4 * 33
    assert sorted(set(data.offsets)) == list(range(-10, 23))
    eeg, oxy, deoxy = data.arrays()
    assert eeg.shape == (132, 5, 128) and oxy.shape == deoxy.shape == (132, 6, 30)

    model = polyfuse.Model({"modality": "fused", "eeg_channels": 5, "eeg_length": 128, "nirs_channels": 6,
                            "nirs_length": 30, "width_divisor": 6,
                            "fusion": {"kind": "polynomial", "order": 2, "rank": 3, "output_dim": 4}}, seed=2)
    p = model.predict_proba(eeg[:7], oxy[:7], deoxy[:7])
    assert p.shape == (7, 2)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-14)
    np.testing.assert_array_equal(p, model.predict_proba(eeg[:7], oxy[:7], deoxy[:7]))


def test_cross_validate_is_reproducible():
    config = {
        "data": {"synthetic": {"generator": "additive", "trials": 10,
                               "segment_shape": {"eeg": [5, 128], "nirs": [6, 30]}}},
        "model": {"modality": "oxy"},
        "trainer": {"epochs": 2},
        "run_folds": [1],
        "seed": 4,
    }
    a = polyfuse.cross_validate(config)
    b = polyfuse.cross_validate(config)
    assert a == b
    assert a["config"]["version"] == polyfuse.__version__
    assert [f["fold"] for f in a["folds"]] == [1]
    assert 0.0 <= a["mean_accuracy"] <= 1.0


def test_verify_subset():
    rows = polyfuse.verify("linear-blocks,param-counts")
    assert [r["name"] for r in rows] == ["linear-blocks", "param-counts"]
    assert all(r["passed"] for r in rows)
