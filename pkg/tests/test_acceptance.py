"""End-to-end acceptance checks.

Each test records one PASS/FAIL line, printed in the terminal summary under
"acceptance criteria". The first three share one trained, quantized and
deployed model (seed 0), which takes roughly two minutes to build.
"""

import math
import time

import numpy as np
import pytest

from reference import best_masks
from se2kit.device import VirtualDevice
from se2kit.experiments import (Selection, bench_training, evaluate, experiment_params,
                                experiment_train_config, generate_frozen_noise, train_frozen_noise)
from se2kit.graph import as_graph
from se2kit.hwconfig import (BASE_NAMES, CODED_PARAMS, BiasTable, config_from_specification,
                             decoded_quantized_spec, net_from_config)
from se2kit.mapper import map_graph
from se2kit.mismatch import MismatchSpec, sample_mismatch
from se2kit.model import simulate
from se2kit.network import DynapSim, Linear, Sequential, simulate_network
from se2kit.params import I_FLOOR, SimParams
from se2kit.quantizer import (apply_quantization, autoencoder_quantize, brute_force_quantize,
                              quantize_spec)
from se2kit.raster import SpikeRaster
from se2kit.training import loss_and_grad

pytestmark = pytest.mark.slow
SEED = 0
TABLE = BiasTable.synthetic()


@pytest.fixture(scope="module")
def pipeline():
    t0 = time.perf_counter()
    data = generate_frozen_noise(seed=SEED)
    model = train_frozen_noise(data, experiment_train_config(SEED), experiment_params(), Selection())
    t_train = time.perf_counter() - t0
    spec = map_graph(as_graph(model.net))
    t1 = time.perf_counter()
    quant = quantize_spec(spec, seed=SEED)
    qspec = apply_quantization(spec, quant)
    t_quant = time.perf_counter() - t1
    config = config_from_specification(qspec, quant, TABLE)
    return dict(data=data, model=model, spec=spec, quant=quant, qspec=qspec, config=config,
                t_train=t_train, t_quant=t_quant)


def test_c1_frozen_noise_training(pipeline, criterion):
    data, model = pipeline["data"], pipeline["model"]
    target = evaluate(model.net, data.targets, data.dt, label="target")
    test = evaluate(model.net, data.tests, data.dt, label="test")
    ok = (target.min >= 5 and test.mean <= 1.5 and test.max <= 3
          and np.array_equal(target.winners, [0, 1]) and pipeline["t_train"] <= 900)
    detail = (f"target FRR {target.frr.round(2).tolist()} (>=5), test mean {test.mean:.3f} (<=1.5), "
              f"test max {test.max:.2f} (<=3), epoch {model.epoch}, {pipeline['t_train']:.0f} s")
    criterion("C1", "frozen-noise training", ok, detail)
    assert ok, detail


def test_c2_quantized_behavior(pipeline, criterion):
    data = pipeline["data"]
    target = evaluate(pipeline["qspec"], data.targets, data.dt, "quantized", "target")
    ok = target.min >= 2 and np.array_equal(target.winners, [0, 1]) and pipeline["t_quant"] <= 120
    detail = (f"quantized target FRR {target.frr.round(2).tolist()} (>=2), winners "
              f"{target.winners.tolist()}, loss {pipeline['quant'].clusters[0].loss:.4g}, "
              f"{pipeline['t_quant']:.0f} s")
    criterion("C2", "quantized behavior", ok, detail)
    assert ok, detail


def test_c3_virtual_device_ordering(pipeline, criterion):
    data = pipeline["data"]
    correct = []
    for chip in range(10):
        dev = VirtualDevice(pipeline["config"], MismatchSpec(0.2, seed=SEED * 1000 + chip), TABLE)
        rep = evaluate(dev, data.targets, data.dt, "hardware", "target")
        correct.append(bool(np.array_equal(rep.winners, [0, 1])))
    ok = sum(correct) >= 8
    detail = f"ordering correct on {sum(correct)}/10 mismatch draws (>=8)"
    criterion("C3", "virtual-device ordering", ok, detail)
    assert ok, detail


def test_c4_quantizer_optimality(criterion):
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    ratios = []
    for _ in range(50):
        W = rng.normal(0, 1, (3, 3))
        q_in, _, loss = autoencoder_quantize(W, seed=0)
        # the learned masks must be the entrywise optimum for the learned bases
        assert np.array_equal(q_in.mask, best_masks(q_in.base_weights, W))
        _, oracle = brute_force_quantize(W)
        ratios.append(loss / oracle if oracle > 0 else (1.0 if loss <= 1e-15 else math.inf))
    elapsed = time.perf_counter() - t0
    worst = max(ratios)
    ok = worst <= 1.10 and elapsed <= 300
    detail = f"worst loss/oracle {worst:.4f} (<=1.10) over 50 matrices, {elapsed:.0f} s"
    criterion("C4", "quantizer optimality", ok, detail)
    assert ok, detail


GRAD_PARAMS = SimParams(Iw_ahp=1e-10, Ispkthr=2e-12, Idc=5e-13)


def _fd_error(rng):
    x = (rng.random((1, 3, 3)) < 0.6).astype(float)
    y = np.zeros((1, 3, 2))
    y[0, :, rng.integers(2)] = 1
    w = {"w_in": rng.normal(0, 20, (3, 2)), "w_rec": rng.normal(0, 20, (2, 2))}
    _, g, _ = loss_and_grad(x, y, w["w_in"], w["w_rec"], GRAD_PARAMS, smooth=True)
    worst = 0.0
    for name in w:
        fd = np.zeros_like(w[name])
        for idx in np.ndindex(fd.shape):
            h = 1e-5 * max(1.0, abs(w[name][idx]))
            vals = []
            for s in (1, -1):
                ww = {k: v.copy() for k, v in w.items()}
                ww[name][idx] += s * h
                vals.append(loss_and_grad(x, y, ww["w_in"], ww["w_rec"], GRAD_PARAMS, smooth=True)[0])
            fd[idx] = (vals[0] - vals[1]) / (2 * h)
        scale = max(np.linalg.norm(fd), np.linalg.norm(g[name]))
        if scale > 1e-14:
            worst = max(worst, np.linalg.norm(g[name] - fd) / scale)
    return worst


def test_c5_gradient_correctness(criterion):
    rng = np.random.default_rng(5)
    errors = [_fd_error(rng) for _ in range(100)]
    worst = max(errors)
    ok = worst < 1e-4
    detail = f"max relative error {worst:.2e} (<1e-4) over 100 random points"
    criterion("C5", "gradient correctness", ok, detail)
    assert ok, detail


def test_c6_round_trip_integrity(pipeline, criterion):
    config, qspec, quant = pipeline["config"], pipeline["qspec"], pipeline["quant"]
    # masks and signs recovered from the CAM entries
    pos = {t: i for i, t in enumerate(qspec.hardware_tags)}
    vpos = {v: i for i, v in enumerate(qspec.virtual_tags)}
    cq = quant.clusters[0]
    mask_in = np.zeros_like(cq.q_in.mask)
    sign_in = np.zeros_like(cq.q_in.sign)
    for _, nc in config.neurons():
        for e in nc.cam:
            if e.source in vpos:
                mask_in[vpos[e.source], pos[nc.tag]] = e.mask
                sign_in[vpos[e.source], pos[nc.tag]] = 1 if e.synapse == "ampa" else -1
    weights_ok = np.array_equal(mask_in, cq.q_in.mask) and np.array_equal(sign_in, cq.q_in.sign)

    # every coded current lands on one of the two table entries bracketing it
    srt = np.sort(TABLE.current)
    worst_steps = 0
    p = qspec.params_per_core[(0, 0)]
    core = config.cores[0]
    wanted = {n: float(np.asarray(getattr(p, n))) for n in CODED_PARAMS}
    wanted.update({n: float(b) * float(p.Iw_ref) for n, b in zip(BASE_NAMES, cq.base_weights)})
    for name, I in wanted.items():
        got = TABLE.lookup(*core.params[name])
        k = np.searchsorted(srt, I)
        bracket = {srt[max(k - 1, 0)], srt[min(k, len(srt) - 1)]}
        if got not in bracket:
            worst_steps = max(worst_steps, 2)
    currents_ok = worst_steps == 0

    x = pipeline["data"].tests[:50].astype(float)
    net = net_from_config(config, TABLE)
    direct = decoded_quantized_spec(qspec, quant, TABLE)
    a = simulate(x, net[0].weights, net[1].w_rec, net[1].params).spikes
    b = simulate(x, direct.w_in, direct.w_rec, direct.neuron_params()).spikes
    spikes_ok = np.array_equal(a, b) and a.sum() > 0
    ok = weights_ok and currents_ok and spikes_ok
    detail = (f"masks/signs exact {weights_ok}, currents within one code step {currents_ok}, "
              f"spikes bit-exact on 50 samples {spikes_ok} ({int(a.sum())} spikes)")
    criterion("C6", "round-trip integrity", ok, detail)
    assert ok, detail


def test_c7_mapper_equivalence(criterion):
    rng = np.random.default_rng(7)
    p = SimParams(Idc=1.5e-9)
    mismatches = 0
    total_spikes = 0
    for _ in range(20):
        n_in, h, n_out = rng.integers(2, 8), rng.integers(2, 6), rng.integers(1, 4)
        net = Sequential(Linear(rng.normal(0, 800, (n_in, h))), DynapSim(h, p, rng.normal(0, 300, (h, h))),
                         Linear(rng.normal(0, 800, (h, n_out))), DynapSim(n_out, p, rng.normal(0, 300, (n_out, n_out))))
        x = SpikeRaster((rng.random((100, n_in)) < 0.3).astype(np.uint8))
        ref = np.concatenate([r.data for r in simulate_network(net, x)], axis=1)
        merged = map_graph(as_graph(net)).simulate(x).data
        mismatches += int(np.sum(ref != merged))
        total_spikes += int(ref.sum())
    ok = mismatches == 0 and total_spikes > 0
    detail = f"{mismatches} differing spike bins over 20 networks x 100 steps ({total_spikes} spikes)"
    criterion("C7", "mapper equivalence", ok, detail)
    assert ok, detail


def test_c8_mismatch_statistics(criterion):
    n = 100_000
    p = SimParams()
    w = {"w_in": np.full((1, n), 3.0), "w_rec": np.full((1, n), -2.0)}
    q, ww, _ = sample_mismatch(p, w, MismatchSpec(0.2, seed=8), 0, n)
    checks = []
    for name, nominal, values in (("Itau_mem", p.Itau_mem, q.Itau_mem),
                                  ("Ispkthr", p.Ispkthr, q.Ispkthr),
                                  ("w_in", 3.0, ww["w_in"].ravel()),
                                  ("w_rec", -2.0, ww["w_rec"].ravel())):
        rel = np.asarray(values) / nominal
        checks.append((name, abs(rel.mean() - 1) <= 0.01, abs(rel.std() / 0.2 - 1) <= 0.05))
    floor_ok = all(np.all(np.asarray(getattr(q, name)) >= I_FLOOR)
                   for name in ("Itau_mem", "Ireset", "Idc", "Iw_ahp", "Ispkthr", "Itau_ampa"))
    ok = floor_ok and all(m and s for _, m, s in checks)
    detail = ", ".join(f"{n} mean {'ok' if m else 'BAD'} std {'ok' if s else 'BAD'}" for n, m, s in checks)
    criterion("C8", "mismatch statistics", ok, f"{detail}; floor respected {floor_ok}")
    assert ok, detail


def test_c9_throughput(criterion):
    rep = bench_training(epochs=1000)
    ok = rep.epochs_per_second >= 100
    detail = f"{rep.epochs_per_second:.0f} epochs/s with backend {rep.backend} (>=100)"
    criterion("C9", "training throughput", ok, detail)
    assert ok, detail
