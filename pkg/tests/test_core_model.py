import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from reference import reference_simulate
from se2kit import kernels
from se2kit._accel import HAVE_NUMBA
from se2kit.model import DimensionError, NeuronState, evolve, simulate, step
from se2kit.params import (DEFAULT_CONSTANTS, I_FLOOR, NumericalError, ParameterError,
                           PhysicalConstants, SimParams, coefficients, current_for_time_constant,
                           derive_time_constant, refractory_period, refractory_steps,
                           synapse_jump)
from se2kit.raster import RasterFormatError, SpikeRaster


def test_time_constant_closed_form():
    # C*U_T/(kappa*Itau) with the default kappa = 0.7
    assert derive_time_constant(3.75e-12, 3e-12) == pytest.approx(3e-12 * 25e-3 / (0.7 * 3.75e-12))
    assert derive_time_constant(3.75e-12, 3e-12) == pytest.approx(0.0285714, rel=1e-5)
    unit = PhysicalConstants(kappa=1 - 1e-12)
    assert derive_time_constant(3.75e-12, 3e-12, unit) == pytest.approx(20e-3, rel=1e-9)
    assert derive_time_constant(I_FLOOR, 3e-12, unit) == pytest.approx(75.0, rel=1e-9)


@given(st.floats(1e-15, 1e-6))
def test_doubling_itau_halves_tau(itau):
    a = derive_time_constant(itau, 1e-12)
    b = derive_time_constant(2 * itau, 1e-12)
    assert b == pytest.approx(a / 2, rel=1e-12)
    assert current_for_time_constant(a, 1e-12) == pytest.approx(itau, rel=1e-12)


def test_constants_and_params_validated():
    with pytest.raises(ParameterError):
        PhysicalConstants(kappa=1.0)
    with pytest.raises(ParameterError):
        PhysicalConstants(C_mem=0.0)
    with pytest.raises(ParameterError):
        SimParams(Itau_mem=1e-16)
    with pytest.raises(ParameterError):
        SimParams(dt=0.0)
    with pytest.raises(ParameterError):
        SimParams(Igain_ampa=float("nan"))
    with pytest.raises(ParameterError):
        derive_time_constant(1e-16, 1e-12)


def test_refractory_rounding_ties_up():
    assert refractory_steps(2.5e-3, 1e-3) == 3
    assert refractory_steps(2.4999e-3, 1e-3) == 2
    assert refractory_steps(0.0, 1e-3) == 0


def test_params_dict_round_trip():
    p = SimParams(Idc=2e-12, Itau_mem=np.array([5e-12, 6e-12]))
    q = SimParams.from_dict(p.to_dict())
    assert q.same_values(p)
    assert not q.is_shared() and SimParams().is_shared()
    with pytest.raises(ParameterError):
        SimParams.from_dict({"bogus": 1.0})


def quiet_state(n=1, imem=1e-10):
    s = NeuronState.initial(n)
    s.Imem[:] = imem
    return s


def test_zero_input_membrane_decays_without_spiking():
    p = SimParams()
    s = quiet_state()
    for _ in range(50):
        prev = s.Imem.copy()
        s, spk = step(s, {}, p)
        assert spk[0] == 0
        assert s.Imem[0] < prev[0] or s.Imem[0] == I_FLOOR


def test_dc_drive_spikes_periodically_with_refractory_gap():
    p = SimParams(Idc=1e-9)
    assert p.Igain_mem / p.Itau_mem * p.Idc > p.Ispkthr
    s = NeuronState.initial(1)
    spikes = []
    for _ in range(1000):
        s, spk = step(s, {}, p)
        spikes.append(int(spk[0]))
    t = np.flatnonzero(spikes)
    isi = np.diff(t)
    n_ref = refractory_steps(refractory_period(p), p.dt)
    assert len(t) > 10
    assert np.all(isi == isi[0])                       # periodic
    assert isi.min() >= n_ref                          # never inside the refractory window
    assert len(t) / 1.0 <= 1.0 / refractory_period(p) + 1


def test_single_ampa_spike_decays_with_tau():
    p = SimParams()
    s = NeuronState.initial(1)
    s, _ = step(s, {"ampa": 1.0}, p)
    first = s.Isyn[0, 0]
    assert first == pytest.approx(I_FLOOR * math.exp(-p.dt / derive_time_constant(p.Itau_ampa, 25e-15))
                                  + float(synapse_jump(1.0, p, "ampa")), rel=1e-12)
    trace = [first]
    for _ in range(20):
        s, _ = step(s, {}, p)
        trace.append(s.Isyn[0, 0])
    slope = np.polyfit(np.arange(len(trace)) * p.dt, np.log(trace), 1)[0]
    tau_true = derive_time_constant(p.Itau_ampa, DEFAULT_CONSTANTS.C_syn["ampa"])
    assert -1 / slope == pytest.approx(tau_true, rel=0.02)


def test_two_spikes_give_twice_the_jump():
    p = SimParams()
    floor_part = I_FLOOR * coefficients(p, 1).decay[0, 0]
    one, _ = step(NeuronState.initial(1), {"ampa": 1.0}, p)
    two, _ = step(NeuronState.initial(1), {"ampa": 2.0}, p)
    assert two.Isyn[0, 0] - floor_part == pytest.approx(2 * (one.Isyn[0, 0] - floor_part), rel=1e-12)


def test_step_rejects_bad_inputs():
    p = SimParams()
    with pytest.raises(ValueError):
        step(NeuronState.initial(1), {"ampa": -1.0}, p)
    with pytest.raises(ValueError):
        step(NeuronState.initial(1), {"glutamate": 1.0}, p)
    bad = NeuronState.initial(1)
    bad.Imem[:] = np.nan
    with pytest.raises(NumericalError):
        step(bad, {}, p)


@given(st.lists(st.floats(0, 50), min_size=30, max_size=30),
       st.floats(1e-15, 5e-10))
def test_currents_never_below_floor(counts, idc):
    p = SimParams(Idc=idc)
    s = NeuronState.initial(1)
    for i, c in enumerate(counts):
        s, _ = step(s, {"ampa": c if i % 2 else 0.0, "gaba": c if i % 3 == 0 else 0.0}, p)
        assert np.all(s.currents() >= I_FLOOR)


def test_quiet_state_converges_monotonically_to_floor():
    s = NeuronState.initial(2)
    s.Imem[:] = 1e-9
    s.Isyn[:] = 1e-10
    s.Iahp[:] = 1e-11
    p = SimParams()
    prev = s.currents()
    for _ in range(300):
        s, _ = step(s, {}, p)
        cur = s.currents()
        assert np.all(cur <= prev)
        prev = cur
    assert np.allclose(cur, I_FLOOR, rtol=0, atol=1e-15 * 1e-3) or np.all(cur < 1e-13)


def random_layer(rng, n_in=5, n=3, scale=1000.0):
    w_in = rng.normal(0, scale, (n_in, n))
    w_rec = rng.normal(0, scale / 2, (n, n))
    x = (rng.random((200, n_in)) < 0.3).astype(float)
    return x, w_in, w_rec


@pytest.mark.parametrize("seed", range(5))
def test_simulate_matches_scalar_reference(seed):
    rng = np.random.default_rng(seed)
    x, w_in, w_rec = random_layer(rng)
    p = SimParams(Iw_ahp=2e-10, Idc=2e-9)
    res = simulate(x[None], w_in, w_rec, p)
    ref_spikes, ref_mem = reference_simulate(x, w_in, w_rec, p)
    assert res.spikes[0].sum() > 0
    np.testing.assert_array_equal(res.spikes[0], ref_spikes)
    np.testing.assert_allclose(res.vmem[0], ref_mem, rtol=1e-9, atol=0)


def test_step_and_simulate_agree(rng):
    x, w_in, w_rec = random_layer(rng)
    p = SimParams()
    res = simulate(x[None], w_in, w_rec, p)
    s = NeuronState.initial(3)
    last = np.zeros(3)
    for t in range(x.shape[0]):
        drive = x[t] @ w_in + last @ w_rec
        pos = x[t] @ np.maximum(w_in, 0) + last @ np.maximum(w_rec, 0)
        neg = x[t] @ np.maximum(-w_in, 0) + last @ np.maximum(-w_rec, 0)
        assert np.allclose(pos - neg, drive)
        s, spk = step(s, {"ampa": pos, "gaba": neg}, p)
        last = spk.astype(float)
        np.testing.assert_array_equal(spk, res.spikes[0, t])


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba unavailable")
def test_backends_bit_identical(rng):
    x, w_in, w_rec = random_layer(rng, 8, 4)
    p = SimParams(Iw_ahp=1e-10)
    a = simulate(x[None], w_in, w_rec, p, backend="numba", record=True)
    b = simulate(x[None], w_in, w_rec, p, backend="numpy", record=True)
    np.testing.assert_array_equal(a.spikes, b.spikes)
    np.testing.assert_array_equal(a.vmem, b.vmem)
    np.testing.assert_array_equal(a.traces, b.traces)


def test_plain_euler_mode_differs_but_stays_close():
    rng = np.random.default_rng(3)
    x, w_in, w_rec = random_layer(rng)
    p = SimParams()
    a = simulate(x[None], w_in, w_rec, p, record=True)
    b = simulate(x[None], w_in, w_rec, p, integrator="euler", record=True)
    assert not np.array_equal(a.vmem, b.vmem)
    with pytest.raises(ParameterError):
        coefficients(SimParams(dt=1.0), 1, integrator="euler")
    with pytest.raises(ParameterError):
        coefficients(p, 1, integrator="rk4")


def test_evolve_zero_input_zero_output():
    p = SimParams()
    out, rec = evolve(SpikeRaster.empty(100, 4), np.zeros((4, 2)), np.zeros((2, 2)), p)
    assert out.n_steps == 100 and out.data.sum() == 0


def test_evolve_zero_steps_returns_initial_state():
    s = quiet_state(2)
    out, rec = evolve(SpikeRaster.empty(0, 3), np.ones((3, 2)), np.zeros((2, 2)), SimParams(), state=s)
    assert out.n_steps == 0 and out.n_channels == 2
    np.testing.assert_array_equal(rec["state"].currents(), s.currents())


def test_evolve_records_traces(rng):
    x, w_in, w_rec = random_layer(rng)
    out, rec = evolve(SpikeRaster(x.astype(np.uint8)), w_in, w_rec, SimParams(), record=True)
    assert rec["Imem"].shape == (200, 3) and np.all(rec["Iampa"] >= I_FLOOR)


def test_shape_and_value_errors():
    p = SimParams()
    with pytest.raises(DimensionError):
        evolve(SpikeRaster.empty(5, 3), np.ones((4, 2)), np.zeros((2, 2)), p)
    with pytest.raises(DimensionError):
        simulate(np.zeros((1, 5, 3)), np.ones((3, 2)), np.zeros((3, 3)), p)
    with pytest.raises(ValueError):
        simulate(np.zeros((1, 5, 3)), np.full((3, 2), np.inf), np.zeros((2, 2)), p)


def test_spike_count_bounded_by_refractory(rng):
    p = SimParams()
    x = np.ones((1, 400, 10))
    res = simulate(x, np.full((10, 2), 100.0), np.zeros((2, 2)), p)
    t_ref = refractory_period(p)
    assert np.all(res.spikes.sum(1) <= math.floor(0.4 / t_ref) + 1)


def test_simulation_is_deterministic(rng):
    x, w_in, w_rec = random_layer(rng)
    a = simulate(x[None], w_in, w_rec, SimParams())
    b = simulate(x[None], w_in, w_rec, SimParams())
    np.testing.assert_array_equal(a.vmem, b.vmem)


def test_raster_text_format_round_trip(rng, tmp_path):
    r = SpikeRaster((rng.random((20, 4)) < 0.2).astype(np.uint8), 1e-3)
    text = r.dumps()
    assert text.splitlines()[0] == "# dt_ms=1 n_steps=20 n_channels=4"
    assert SpikeRaster.loads(text) == r
    r.save(tmp_path / "r.txt")
    assert SpikeRaster.load(tmp_path / "r.txt") == r
    with pytest.raises(RasterFormatError):
        SpikeRaster.loads("# dt_ms=1 n_steps=2 n_channels=2\n2,0\n")
    with pytest.raises(RasterFormatError):
        SpikeRaster.loads("0,0\n")
    with pytest.raises(ValueError):
        SpikeRaster(np.array([[2]]))


def test_kernel_selection():
    assert kernels.get("numpy").__name__.endswith("_numpy")
    with pytest.raises(ValueError):
        kernels.get("cuda")
