"""Vectorized numpy kernels (batch and neuron axes), loop over time only.

Same contract and state layout as the numba kernels. Input drives are
accumulated channel by channel so that the floating point summation order
matches the explicit loops exactly.
"""

import numpy as np

from ._numba import F_AHP, F_AMPA, F_GABA, F_IIN, F_MEM, F_REF


def surrogate_grad(ratio_minus_one, slope):
    return slope / (4.0 * (1.0 + slope * np.abs(ratio_minus_one)) ** 2)


def smooth_spike(ratio_minus_one, slope):
    return 0.5 + 0.25 * slope * ratio_minus_one / (1.0 + slope * np.abs(ratio_minus_one))


def _input_drive(x, w):
    B, T, n_in = x.shape
    acc = np.zeros((B, T, w.shape[1]))
    for i in range(n_in):
        xi = x[:, :, i, None]
        acc += np.where(xi != 0.0, w[i] * xi, 0.0)
    return acc


def forward(x, w_pos, w_neg, r_pos, r_neg, decay, jump, mem_decay, mem_drive,
            Idc, thr, Ireset, n_ref, floor, cur, ref, last, smooth, slope,
            spikes, vmem, flags, traces):
    B, T, _ = x.shape
    n = w_pos.shape[1]
    record = traces.shape[0] > 0
    in_pos = _input_drive(x, w_pos)
    in_neg = _input_drive(x, w_neg)
    for t in range(T):
        dpos = in_pos[:, t].copy()
        dneg = in_neg[:, t].copy()
        for k in range(n):
            sk = last[:, k, None]
            dpos += np.where(sk != 0.0, r_pos[k] * sk, 0.0)
            dneg += np.where(sk != 0.0, r_neg[k] * sk, 0.0)
        fl = np.zeros((B, n), dtype=np.uint8)

        a = cur[:, 0] * decay[0] + jump[0] * dpos
        fl |= np.where(a > floor, F_AMPA, 0).astype(np.uint8)
        a = np.where(a > floor, a, floor)
        g = cur[:, 1] * decay[1] + jump[1] * dneg
        fl |= np.where(g > floor, F_GABA, 0).astype(np.uint8)
        g = np.where(g > floor, g, floor)
        nm = np.maximum(cur[:, 2] * decay[2], floor)
        sh = np.maximum(cur[:, 3] * decay[3], floor)
        h = cur[:, 4] * decay[4]
        fl |= np.where(h > floor, F_AHP, 0).astype(np.uint8)
        h = np.where(h > floor, h, floor)
        iin = a + nm + Idc - g - sh - h
        fl |= np.where(iin > floor, F_IIN, 0).astype(np.uint8)
        iin = np.where(iin > floor, iin, floor)

        in_ref = ref > 0
        v = cur[:, 5] * mem_decay + mem_drive * iin
        fl |= np.where(~in_ref & (v > floor), F_MEM, 0).astype(np.uint8)
        v = np.where(v > floor, v, floor)
        xr = v / thr - 1.0
        if smooth:
            s = smooth_spike(xr, slope)
        else:
            s = np.where(xr >= 0.0, 1.0, 0.0)
        v = np.where(in_ref, Ireset, v)
        s = np.where(in_ref, 0.0, s)
        m = np.where(in_ref, Ireset, v * (1.0 - s) + Ireset * s)
        h = np.where(in_ref, h, h + jump[4] * s)
        fl |= np.where(in_ref, F_REF, 0).astype(np.uint8)
        if smooth:
            ref[:] = np.where(in_ref, ref - 1, ref)
        else:
            ref[:] = np.where(in_ref, ref - 1, np.where(s == 1.0, n_ref, ref))

        bad = ~(np.isfinite(m) & np.isfinite(a) & np.isfinite(g) & np.isfinite(h))
        if bad.any():
            b = int(np.argmax(bad.any(axis=1)))
            return b * T + t + 1
        cur[:, 0] = a
        cur[:, 1] = g
        cur[:, 2] = nm
        cur[:, 3] = sh
        cur[:, 4] = h
        cur[:, 5] = m
        spikes[:, t] = s
        vmem[:, t] = v
        flags[:, t] = fl
        if record:
            traces[:, t] = cur
        last[:] = s
    return 0


def backward(x, w_pos, w_neg, r_pos, r_neg, decay, jump, mem_decay, mem_drive,
             thr, Ireset, slope, last0, spikes, vmem, flags, dlds,
             g_wpos, g_wneg, g_rpos, g_rneg):
    B, T, _ = x.shape
    n = w_pos.shape[1]
    gA = np.zeros((B, n))
    gG = np.zeros((B, n))
    gH = np.zeros((B, n))
    gM = np.zeros((B, n))
    gs_rec = np.zeros((B, n))
    gdp_all = np.zeros((B, T, n))
    gdn_all = np.zeros((B, T, n))
    for t in range(T - 1, -1, -1):
        fl = flags[:, t]
        refr = (fl & F_REF) != 0
        v = vmem[:, t]
        s = spikes[:, t]
        gs = dlds[:, t] + gs_rec + gM * (Ireset - v) + gH * jump[4]
        gv = gM * (1.0 - s) + gs * surrogate_grad(v / thr - 1.0, slope) / thr
        gv = np.where(((fl & F_MEM) != 0) & ~refr, gv, 0.0)
        g_mprev = gv * mem_decay
        g_iin = np.where((fl & F_IIN) != 0, gv * mem_drive, 0.0)
        g_a = np.where((fl & F_AMPA) != 0, gA + g_iin, 0.0)
        g_g = np.where((fl & F_GABA) != 0, gG - g_iin, 0.0)
        gH = np.where((fl & F_AHP) != 0, (gH - g_iin) * decay[4], 0.0)
        gA = g_a * decay[0]
        gG = g_g * decay[1]
        gdp = g_a * jump[0]
        gdn = g_g * jump[1]
        gM = g_mprev
        gdp_all[:, t] = gdp
        gdn_all[:, t] = gdn
        gs_rec = gdp @ r_pos.T + gdn @ r_neg.T
    prev = np.concatenate([last0[:, None, :], spikes[:, :-1]], axis=1)
    g_wpos += np.einsum("bti,btj->ij", x, gdp_all)
    g_wneg += np.einsum("bti,btj->ij", x, gdn_all)
    g_rpos += np.einsum("btk,btj->kj", prev, gdp_all)
    g_rneg += np.einsum("btk,btj->kj", prev, gdn_all)
    return 0
