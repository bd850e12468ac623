import numpy as np
import pytest

from se2kit.mismatch import MismatchSpec, adversarial_perturb, default_targets, sample_mismatch
from se2kit.params import I_FLOOR, ParameterError, SimParams


def test_spec_validation():
    with pytest.raises(ParameterError):
        MismatchSpec(sigma_rel=1.0)
    with pytest.raises(ParameterError):
        MismatchSpec(sigma_rel=-0.1)
    with pytest.raises(ParameterError):
        MismatchSpec(refresh_period=0)
    with pytest.raises(ParameterError):
        MismatchSpec(targets={"Iwhatever"})
    assert "w_in" in default_targets() and "Itau_mem" in default_targets()


def test_draw_index_follows_refresh_period():
    s = MismatchSpec(refresh_period=100)
    assert [s.draw_index(e) for e in (0, 99, 100, 250)] == [0, 0, 1, 2]


def test_zero_sigma_is_identity():
    p = SimParams()
    w = {"w_in": np.ones((3, 2)), "w_rec": np.zeros((2, 2))}
    q, w2, f = sample_mismatch(p, w, MismatchSpec(sigma_rel=0.0), 0, 2)
    assert q is p
    np.testing.assert_array_equal(w2["w_in"], w["w_in"])
    np.testing.assert_array_equal(f["w_in"], 1.0)


def test_same_seed_and_index_reproduce():
    p = SimParams()
    w = {"w_in": np.ones((4, 3)), "w_rec": np.ones((3, 3))}
    a = sample_mismatch(p, w, MismatchSpec(seed=3), 5, 3)
    b = sample_mismatch(p, w, MismatchSpec(seed=3), 5, 3)
    c = sample_mismatch(p, w, MismatchSpec(seed=3), 6, 3)
    assert a[0].same_values(b[0])
    np.testing.assert_array_equal(a[1]["w_in"], b[1]["w_in"])
    assert not np.array_equal(a[1]["w_in"], c[1]["w_in"])


def test_relative_statistics():
    p = SimParams()
    n = 20000
    q, w, _ = sample_mismatch(p, {"w_in": np.full((1, n), 2.0)}, MismatchSpec(sigma_rel=0.2), 0, n)
    rel = q.Itau_mem / p.Itau_mem - 1
    assert abs(rel.mean()) < 0.01 and rel.std() == pytest.approx(0.2, rel=0.03)
    wr = w["w_in"] / 2.0 - 1
    assert wr.std() == pytest.approx(0.2, rel=0.03)
    assert np.all(q.Ireset >= I_FLOOR)


def test_weights_never_change_sign():
    rng = np.random.default_rng(0)
    W = rng.normal(0, 1, (50, 50))
    _, w, _ = sample_mismatch(SimParams(), {"w_in": W}, MismatchSpec(sigma_rel=0.9), 0, 50)
    assert np.all(np.sign(w["w_in"]) * np.sign(W) >= 0)


def test_target_subset_leaves_others_nominal():
    p = SimParams()
    q, w, _ = sample_mismatch(p, {"w_in": np.ones((2, 2))}, MismatchSpec(targets={"w_in"}), 0, 2)
    assert q.same_values(p)
    assert not np.allclose(w["w_in"], 1.0)


def test_adversarial_step_moves_uphill():
    p = {"a": np.array([1.0, -2.0, 3.0])}
    g = {"a": np.array([0.5, 0.5, -1.0])}
    out = adversarial_perturb(p, g, 0.1)
    np.testing.assert_allclose(out["a"], [1.1, -1.8, 2.7])
    # first-order loss change is non-negative for every entry
    assert np.all((out["a"] - p["a"]) * g["a"] >= 0)
    with pytest.raises(ValueError):
        adversarial_perturb(p, {"a": np.ones(2)}, 0.1)
    floored = adversarial_perturb({"I": np.array([1e-15])}, {"I": np.array([-1.0])}, 0.5, floor=1e-15)
    assert floored["I"][0] == 1e-15
