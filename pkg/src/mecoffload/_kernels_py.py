"""Pure-Python kernels. Reference for, and fallback to, the compiled ``_kernels``.

Both modules must produce bit-identical results: they use the same libm
functions and consume the numpy bit generator in the same order.
"""

import math

import numpy as np

BACKEND = "python"


def max_feasible_power(energy, tau):
    if energy <= 0.0:
        return 0.0
    return energy / tau


def _cbrt(x):
    # libm pow plus one Newton step, op for op as in the compiled kernel; x > 0
    y = x ** (1.0 / 3.0)
    return y - (y * y * y - x) / (3.0 * y * y)


def local_frequency(p_max, f_cap, kappa):
    if p_max <= 0.0:
        return 0.0
    return min(f_cap, _cbrt(p_max / kappa))


def local_compute_budget(p_max, f_cap, kappa, tau, cycles_per_bit):
    f = local_frequency(p_max, f_cap, kappa)
    return int(math.floor(tau * f / cycles_per_bit))


def path_gain(distance, ref_gain, exponent):
    d = distance if distance > 1.0 else 1.0
    return ref_gain * d ** (-exponent)


def uplink_rate(bandwidth, gain, tx_power, noise_psd):
    if gain <= 0.0 or tx_power <= 0.0:
        return 0.0
    return bandwidth * math.log2(1.0 + gain * tx_power / (noise_psd * bandwidth))


def poisson_knuth(rng, rate):
    if rate <= 0.0:
        return 0
    limit = math.exp(-rate)
    k = 0
    p = rng.random()
    while p > limit:
        k += 1
        p *= rng.random()
    return k


def poisson_batch(rng, rate, n):
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = poisson_knuth(rng, rate)
    return out


def interval_physics(energy, qlen, selected, gain, tau, f_cap, kappa, cycles_per_bit,
                     p_tx_max, bandwidth, noise_psd, task_bits, standby):
    """Per-user budgets, task counts and energy charges for one interval.

    Returns a dict of length-K arrays; see ``mecoffload.kernels`` for the
    field meanings.
    """
    k = len(energy)
    n_off = np.zeros(k, dtype=np.int64)
    n_loc = np.zeros(k, dtype=np.int64)
    off_budget = np.zeros(k, dtype=np.int64)
    loc_budget = np.zeros(k, dtype=np.int64)
    e_off = np.zeros(k, dtype=np.float64)
    e_loc = np.zeros(k, dtype=np.float64)
    rate = np.zeros(k, dtype=np.float64)
    tx_power = np.zeros(k, dtype=np.float64)
    freq = np.zeros(k, dtype=np.float64)
    new_energy = np.zeros(k, dtype=np.float64)
    for j in range(k):
        e = float(energy[j])
        p_max = max_feasible_power(e, tau)
        if selected[j]:
            p = min(p_max, p_tx_max)
            r = uplink_rate(bandwidth, float(gain[j]), p, noise_psd)
            budget = int(math.floor(tau * r))
            n = min(int(qlen[j]), budget // task_bits)
            tx_power[j] = p
            rate[j] = r
            off_budget[j] = budget
            n_off[j] = n
            if n > 0:
                e_off[j] = p * ((n * task_bits) / r)
        else:
            f = local_frequency(p_max, f_cap, kappa)
            budget = int(math.floor(tau * f / cycles_per_bit))
            n = min(int(qlen[j]), budget // task_bits)
            freq[j] = f
            loc_budget[j] = budget
            n_loc[j] = n
            if n > 0:
                e_loc[j] = kappa * f * f * cycles_per_bit * (n * task_bits)
        new_energy[j] = e - e_off[j] - e_loc[j] - standby
    return {
        "n_off": n_off, "n_loc": n_loc, "off_budget": off_budget, "loc_budget": loc_budget,
        "e_off": e_off, "e_loc": e_loc, "rate": rate, "tx_power": tx_power, "freq": freq,
        "new_energy": new_energy,
    }
