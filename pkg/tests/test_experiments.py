import numpy as np
import pytest

from se2kit.experiments import (FRRReport, FrozenNoiseDataset, NoiseParams, Selection,
                                bench_training, evaluate, firing_rate, frr, generate_frozen_noise,
                                validation_rasters)
from se2kit.network import DynapSim, Linear, Sequential
from se2kit.params import ParameterError, SimParams


def test_noise_statistics():
    d = generate_frozen_noise(NoiseParams(n_test=200), seed=1)
    assert d.targets.shape == (2, 500, 60) and d.tests.shape == (200, 500, 60)
    p = d.tests.mean()
    assert p == pytest.approx(0.05, abs=3 * np.sqrt(0.05 * 0.95 / d.tests.size))
    assert set(np.unique(d.tests)) <= {0, 1}


def test_noise_reproducible_and_validation_disjoint():
    a = generate_frozen_noise(NoiseParams(n_test=5), seed=2)
    b = generate_frozen_noise(NoiseParams(n_test=5), seed=2)
    np.testing.assert_array_equal(a.tests, b.tests)
    v = validation_rasters(a.params, 2, 5)
    assert not np.array_equal(v, a.tests)


def test_dataset_save_load(tmp_path):
    d = generate_frozen_noise(NoiseParams(n_test=3, n_channels=7), seed=4)
    d.save(tmp_path / "d.npz")
    e = FrozenNoiseDataset.load(tmp_path / "d.npz")
    np.testing.assert_array_equal(e.tests, d.tests)
    assert e.params == d.params and e.seed == 4


def test_noise_parameter_errors():
    with pytest.raises(ParameterError):
        NoiseParams(rate=2000.0)
    with pytest.raises(ParameterError):
        NoiseParams(duration=0.0)


def test_firing_rate_examples():
    s = np.zeros((500, 2))
    s[::10, 0] = 1
    np.testing.assert_allclose(firing_rate(s, 1e-3), [100.0, 0.0])
    with pytest.raises(ValueError):
        firing_rate(np.zeros((0, 2)), 1e-3)


def test_frr_examples():
    assert frr(164, 14) == pytest.approx(11.714, abs=1e-3)
    assert frr(14, 164) == frr(164, 14)
    assert frr(0, 0) == 1.0
    assert frr(0, 3) == np.inf
    np.testing.assert_allclose(frr([2, 6], [4, 3]), [2.0, 2.0])
    with pytest.raises(ValueError):
        frr(-1, 2)
    with pytest.raises(ValueError):
        frr(np.nan, 2)


def test_report_statistics_and_winners():
    r = FRRReport([[10, 5], [3, 6], [4, 4]], "quantized", "x")
    np.testing.assert_allclose(r.frr, [2, 2, 1])
    assert r.mean == pytest.approx(5 / 3) and r.max == 2 and r.min == 1
    assert r.winners.tolist() == [0, 1, -1]
    assert r.to_csv().splitlines()[1].startswith("quantized,x,0,10,5,2")
    with pytest.raises(ValueError):
        FRRReport([[1, 2]], "bogus")


def test_selection_score_threshold():
    sel = Selection()
    good = sel.score(FRRReport([[50, 5], [5, 50]]), FRRReport([[1, 1.2]] * 3))
    bad = sel.score(FRRReport([[50, 20], [5, 50]]), FRRReport([[1, 1.2]] * 3))
    assert good >= 1.0 > bad


def test_evaluate_requires_two_outputs():
    net = Sequential(Linear(np.ones((4, 3))), DynapSim(3))
    with pytest.raises(ValueError, match="two output"):
        evaluate(net, np.zeros((1, 10, 4)))


def test_bench_rejects_zero_epochs():
    with pytest.raises(ParameterError):
        bench_training(epochs=0)


def test_bench_reports_throughput():
    rep = bench_training(epochs=5, warmup=1)
    assert rep.epochs == 5 and rep.seconds > 0
    assert rep.to_csv().startswith("backend,epochs,seconds,epochs_per_second")
