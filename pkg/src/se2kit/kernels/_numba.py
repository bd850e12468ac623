"""Explicit-loop kernels, compiled with numba when available.

State layout per sample: ``cur[b, 0:6, j]`` holds the ampa, gaba, nmda,
shunt, ahp and membrane currents of neuron ``j``; ``ref[b, j]`` the
remaining refractory steps; ``last[b, j]`` the spike emitted on the previous
step (it feeds the recurrent matrix).

Per-step flags (bitfield) recorded for the backward pass:
bit 0 ampa unclipped, bit 1 gaba unclipped, bit 2 ahp unclipped after decay,
bit 3 soma input unclipped, bit 4 membrane unclipped, bit 5 refractory.
"""

import numpy as np

from .._accel import njit

F_AMPA = 1
F_GABA = 2
F_AHP = 4
F_IIN = 8
F_MEM = 16
F_REF = 32


@njit(cache=True)
def surrogate_grad(ratio_minus_one, slope):
    return slope / (4.0 * (1.0 + slope * abs(ratio_minus_one)) ** 2)


@njit(cache=True)
def smooth_spike(ratio_minus_one, slope):
    return 0.5 + 0.25 * slope * ratio_minus_one / (1.0 + slope * abs(ratio_minus_one))


@njit(cache=True)
def forward(x, w_pos, w_neg, r_pos, r_neg, decay, jump, mem_decay, mem_drive,
            Idc, thr, Ireset, n_ref, floor, cur, ref, last, smooth, slope,
            spikes, vmem, flags, traces):
    B, T, n_in = x.shape
    n = w_pos.shape[1]
    record = traces.shape[0] > 0
    dpos = np.empty(n)
    dneg = np.empty(n)
    for b in range(B):
        for t in range(T):
            for j in range(n):
                dpos[j] = 0.0
                dneg[j] = 0.0
            for i in range(n_in):
                xi = x[b, t, i]
                if xi != 0.0:
                    for j in range(n):
                        dpos[j] += w_pos[i, j] * xi
                        dneg[j] += w_neg[i, j] * xi
            for k in range(n):
                sk = last[b, k]
                if sk != 0.0:
                    for j in range(n):
                        dpos[j] += r_pos[k, j] * sk
                        dneg[j] += r_neg[k, j] * sk
            for j in range(n):
                fl = 0
                a = cur[b, 0, j] * decay[0, j] + jump[0, j] * dpos[j]
                if a > floor:
                    fl |= F_AMPA
                else:
                    a = floor
                g = cur[b, 1, j] * decay[1, j] + jump[1, j] * dneg[j]
                if g > floor:
                    fl |= F_GABA
                else:
                    g = floor
                nm = max(cur[b, 2, j] * decay[2, j], floor)
                sh = max(cur[b, 3, j] * decay[3, j], floor)
                h = cur[b, 4, j] * decay[4, j]
                if h > floor:
                    fl |= F_AHP
                else:
                    h = floor
                iin = a + nm + Idc[j] - g - sh - h
                if iin > floor:
                    fl |= F_IIN
                else:
                    iin = floor
                if ref[b, j] > 0:
                    fl |= F_REF
                    ref[b, j] -= 1
                    v = Ireset[j]
                    s = 0.0
                    m = Ireset[j]
                else:
                    v = cur[b, 5, j] * mem_decay[j] + mem_drive[j] * iin
                    if v > floor:
                        fl |= F_MEM
                    else:
                        v = floor
                    xr = v / thr[j] - 1.0
                    if smooth:
                        s = smooth_spike(xr, slope)
                    elif xr >= 0.0:
                        s = 1.0
                    else:
                        s = 0.0
                    m = v * (1.0 - s) + Ireset[j] * s
                    h = h + jump[4, j] * s
                    if s == 1.0 and not smooth:
                        ref[b, j] = n_ref[j]
                if not (np.isfinite(m) and np.isfinite(a) and np.isfinite(g)
                        and np.isfinite(h)):
                    return b * T + t + 1
                cur[b, 0, j] = a
                cur[b, 1, j] = g
                cur[b, 2, j] = nm
                cur[b, 3, j] = sh
                cur[b, 4, j] = h
                cur[b, 5, j] = m
                spikes[b, t, j] = s
                vmem[b, t, j] = v
                flags[b, t, j] = fl
                if record:
                    for q in range(6):
                        traces[b, t, q, j] = cur[b, q, j]
            for j in range(n):
                last[b, j] = spikes[b, t, j]
    return 0


@njit(cache=True)
def backward(x, w_pos, w_neg, r_pos, r_neg, decay, jump, mem_decay, mem_drive,
             thr, Ireset, slope, last0, spikes, vmem, flags, dlds,
             g_wpos, g_wneg, g_rpos, g_rneg):
    B, T, n_in = x.shape
    n = w_pos.shape[1]
    gA = np.empty(n)
    gG = np.empty(n)
    gH = np.empty(n)
    gM = np.empty(n)
    gs_rec = np.empty(n)
    gdp = np.empty(n)
    gdn = np.empty(n)
    for b in range(B):
        for j in range(n):
            gA[j] = 0.0
            gG[j] = 0.0
            gH[j] = 0.0
            gM[j] = 0.0
            gs_rec[j] = 0.0
        for t in range(T - 1, -1, -1):
            for j in range(n):
                fl = flags[b, t, j]
                g_hpre = gH[j]
                if fl & F_REF:
                    g_mprev = 0.0
                    g_iin = 0.0
                else:
                    v = vmem[b, t, j]
                    s = spikes[b, t, j]
                    gs = dlds[b, t, j] + gs_rec[j]
                    gv = gM[j] * (1.0 - s)
                    gs += gM[j] * (Ireset[j] - v)
                    gs += gH[j] * jump[4, j]
                    gv += gs * surrogate_grad(v / thr[j] - 1.0, slope) / thr[j]
                    if not (fl & F_MEM):
                        gv = 0.0
                    g_mprev = gv * mem_decay[j]
                    g_iin = gv * mem_drive[j]
                if not (fl & F_IIN):
                    g_iin = 0.0
                g_a = gA[j] + g_iin
                g_g = gG[j] - g_iin
                g_hpre -= g_iin
                gH[j] = g_hpre * decay[4, j] if fl & F_AHP else 0.0
                if not (fl & F_AMPA):
                    g_a = 0.0
                if not (fl & F_GABA):
                    g_g = 0.0
                gA[j] = g_a * decay[0, j]
                gG[j] = g_g * decay[1, j]
                gdp[j] = g_a * jump[0, j]
                gdn[j] = g_g * jump[1, j]
                gM[j] = g_mprev
            for i in range(n_in):
                xi = x[b, t, i]
                if xi != 0.0:
                    for j in range(n):
                        g_wpos[i, j] += gdp[j] * xi
                        g_wneg[i, j] += gdn[j] * xi
            for k in range(n):
                sk = spikes[b, t - 1, k] if t > 0 else last0[b, k]
                acc = 0.0
                for j in range(n):
                    if sk != 0.0:
                        g_rpos[k, j] += gdp[j] * sk
                        g_rneg[k, j] += gdn[j] * sk
                    acc += gdp[j] * r_pos[k, j] + gdn[j] * r_neg[k, j]
                gs_rec[k] = acc
    return 0
