# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; mirror of ``_kernels_py`` (keep the two in lockstep)."""

import numpy as np
cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, floor, log2, pow
from numpy.random cimport bitgen_t

cnp.import_array()

BACKEND = "cython"


cdef inline bitgen_t* _bitgen(rng) except NULL:
    capsule = rng.bit_generator.capsule
    return <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")


cpdef double max_feasible_power(double energy, double tau) noexcept nogil:
    if energy <= 0.0:
        return 0.0
    return energy / tau


cdef inline double _cbrt(double x) noexcept nogil:
    # libm cbrt and numpy's cbrt differ in the last bit; this sequence is
    # reproduced exactly by the pure-Python backend
    cdef double y = pow(x, 1.0 / 3.0)
    return y - (y * y * y - x) / (3.0 * y * y)


cpdef double local_frequency(double p_max, double f_cap, double kappa) noexcept nogil:
    if p_max <= 0.0:
        return 0.0
    cdef double f = _cbrt(p_max / kappa)
    return f_cap if f_cap < f else f


cpdef long long local_compute_budget(double p_max, double f_cap, double kappa,
                                     double tau, double cycles_per_bit) noexcept nogil:
    cdef double f = local_frequency(p_max, f_cap, kappa)
    return <long long> floor(tau * f / cycles_per_bit)


cpdef double path_gain(double distance, double ref_gain, double exponent) noexcept nogil:
    cdef double d = distance if distance > 1.0 else 1.0
    return ref_gain * pow(d, -exponent)


cpdef double uplink_rate(double bandwidth, double gain, double tx_power,
                         double noise_psd) noexcept nogil:
    if gain <= 0.0 or tx_power <= 0.0:
        return 0.0
    return bandwidth * log2(1.0 + gain * tx_power / (noise_psd * bandwidth))


cdef long long _knuth(bitgen_t* bg, double rate) noexcept nogil:
    if rate <= 0.0:
        return 0
    cdef double limit = exp(-rate)
    cdef long long k = 0
    cdef double p = bg.next_double(bg.state)
    while p > limit:
        k += 1
        p *= bg.next_double(bg.state)
    return k


def poisson_knuth(rng, double rate):
    cdef bitgen_t* bg = _bitgen(rng)
    return _knuth(bg, rate)


def poisson_batch(rng, double rate, Py_ssize_t n):
    cdef bitgen_t* bg = _bitgen(rng)
    out = np.empty(n, dtype=np.int64)
    cdef long long[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            o[i] = _knuth(bg, rate)
    return out


def interval_physics(const double[::1] energy, const long long[::1] qlen,
                     const unsigned char[::1] selected, const double[::1] gain,
                     double tau, double f_cap, double kappa, double cycles_per_bit,
                     double p_tx_max, double bandwidth, double noise_psd,
                     long long task_bits, double standby):
    cdef Py_ssize_t k = energy.shape[0]
    n_off_a = np.zeros(k, dtype=np.int64)
    n_loc_a = np.zeros(k, dtype=np.int64)
    off_budget_a = np.zeros(k, dtype=np.int64)
    loc_budget_a = np.zeros(k, dtype=np.int64)
    e_off_a = np.zeros(k, dtype=np.float64)
    e_loc_a = np.zeros(k, dtype=np.float64)
    rate_a = np.zeros(k, dtype=np.float64)
    tx_a = np.zeros(k, dtype=np.float64)
    freq_a = np.zeros(k, dtype=np.float64)
    new_e_a = np.zeros(k, dtype=np.float64)
    cdef long long[::1] n_off = n_off_a, n_loc = n_loc_a
    cdef long long[::1] off_budget = off_budget_a, loc_budget = loc_budget_a
    cdef double[::1] e_off = e_off_a, e_loc = e_loc_a, rate = rate_a
    cdef double[::1] tx = tx_a, freq = freq_a, new_e = new_e_a
    cdef Py_ssize_t j
    cdef double e, p_max, p, r, f
    cdef long long budget, n
    with nogil:
        for j in range(k):
            e = energy[j]
            p_max = max_feasible_power(e, tau)
            if selected[j]:
                p = p_max if p_max < p_tx_max else p_tx_max
                r = uplink_rate(bandwidth, gain[j], p, noise_psd)
                budget = <long long> floor(tau * r)
                n = budget // task_bits
                if qlen[j] < n:
                    n = qlen[j]
                tx[j] = p
                rate[j] = r
                off_budget[j] = budget
                n_off[j] = n
                if n > 0:
                    e_off[j] = p * ((<double> (n * task_bits)) / r)
            else:
                f = local_frequency(p_max, f_cap, kappa)
                budget = <long long> floor(tau * f / cycles_per_bit)
                n = budget // task_bits
                if qlen[j] < n:
                    n = qlen[j]
                freq[j] = f
                loc_budget[j] = budget
                n_loc[j] = n
                if n > 0:
                    e_loc[j] = kappa * f * f * cycles_per_bit * (<double> (n * task_bits))
            new_e[j] = e - e_off[j] - e_loc[j] - standby
    return {
        "n_off": n_off_a, "n_loc": n_loc_a, "off_budget": off_budget_a,
        "loc_budget": loc_budget_a, "e_off": e_off_a, "e_loc": e_loc_a, "rate": rate_a,
        "tx_power": tx_a, "freq": freq_a, "new_energy": new_e_a,
    }
