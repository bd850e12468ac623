import itertools
import warnings

import numpy as np
import pytest

from reference import best_masks, subset_sums as ref_subset_sums
from se2kit.quantizer import (QuantizationWarning, QuantSpec, autoencoder_quantize,
                              brute_force_quantize, quantize_with_bases, reconstruct,
                              reconstruction_loss, refine_masks, subset_sums)


def test_subset_sums_match_loop():
    base = [0.3, 1.1, 2.0, 5.5]
    np.testing.assert_allclose(subset_sums(base), ref_subset_sums(base))


def test_refine_masks_matches_exhaustive_loop(rng):
    base = np.sort(rng.uniform(0.1, 3, 4))
    W = rng.normal(0, 3, (7, 5))
    np.testing.assert_array_equal(refine_masks(base, W), best_masks(base, W))


def test_tie_goes_to_smaller_mask():
    # |w| = 1.5 is equidistant from masks 1 (1.0) and 2 (2.0)
    assert refine_masks([1.0, 2.0, 4.0, 8.0], np.array([1.5]))[0] == 1


def test_quant_spec_validation():
    with pytest.raises(ValueError):
        QuantSpec([1, 2, 3], np.zeros(2, int), np.zeros(2, int))
    with pytest.raises(ValueError):
        QuantSpec([2, 1, 3, 4], np.zeros(2, int), np.zeros(2, int))
    with pytest.raises(ValueError):
        QuantSpec([1, 2, 3, 4], np.array([16]), np.array([1]))
    with pytest.raises(ValueError):
        QuantSpec([1, 2, 3, 4], np.array([3]), np.array([0]))


def test_exactly_representable_matrix_has_zero_loss():
    base = np.array([1.0, 2.0, 4.0, 8.0])
    W = np.array([[3.0, -5.0], [15.0, 0.0]])
    q = quantize_with_bases(base, W)
    np.testing.assert_array_equal(reconstruct(q), W)
    assert reconstruction_loss(q, W) == 0.0
    assert q.synapse_type.tolist() == [["ampa", "gaba"], ["ampa", ""]]
    assert QuantSpec.from_dict(q.to_dict()).mask.tolist() == q.mask.tolist()


def test_signs_follow_weights(rng):
    W = rng.normal(0, 1, (10, 4))
    q_in, _, _ = autoencoder_quantize(W, restarts=8, steps=200)
    nz = q_in.mask > 0
    assert np.all(q_in.sign[nz] == np.sign(W[nz]))


def test_zero_matrix():
    q_in, q_rec, loss = autoencoder_quantize(np.zeros((3, 2)), np.zeros((2, 2)))
    assert loss == 0.0 and not q_in.mask.any() and not q_rec.mask.any()


def test_autoencoder_close_to_oracle_on_small_matrix(rng):
    W = rng.normal(0, 2, (4, 4))
    _, _, loss = autoencoder_quantize(W, restarts=32, steps=300)
    _, oracle = brute_force_quantize(W, points=48)
    assert loss <= 1.10 * oracle + 1e-12


def test_brute_force_agrees_with_itertools_enumeration(rng):
    W = rng.uniform(-3, 3, (3, 3))
    base, loss = brute_force_quantize(W, points=10)
    mag = np.abs(W).ravel()
    grid = np.linspace(mag.min(), mag.max(), 10)
    best = min(
        np.mean([min((s - m) ** 2 for s in ref_subset_sums(grid[list(c)])) for m in mag])
        for c in itertools.combinations_with_replacement(range(10), 4))
    assert loss == pytest.approx(best, rel=1e-12)


def test_shared_bases_and_shapes(rng):
    q_in, q_rec, _ = autoencoder_quantize(rng.normal(0, 1, (5, 3)), rng.normal(0, 1, (3, 3)),
                                          restarts=4, steps=50)
    assert q_in.shape == (5, 3) and q_rec.shape == (3, 3)
    np.testing.assert_array_equal(q_in.base_weights, q_rec.base_weights)


def test_poor_fit_warns():
    W = np.geomspace(1e-3, 1e3, 40).reshape(8, 5)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        autoencoder_quantize(W, restarts=2, steps=20, warn_above=1e-9)
    assert any(issubclass(w.category, QuantizationWarning) for w in caught)


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        autoencoder_quantize(np.array([[np.nan]]))
