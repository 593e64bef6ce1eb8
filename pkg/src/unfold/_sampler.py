"""Compiled single-coordinate Metropolis-Hastings sweeps for the Poisson posterior.

Target, up to a constant, on the nonnegative orthant:

    sum_i [y_i log mu_i - mu_i] - delta * beta' Omega beta,   mu = K beta.

Coordinate k is updated by expanding its log full conditional to second order
at the current value, giving a Gaussian N(m, v). If m >= 0 the proposal is
that Gaussian truncated to [0, inf); otherwise it is an exponential whose rate
-m/v matches the Gaussian's log-slope at zero. The reverse proposal is built
the same way at the proposed point, so the acceptance ratio is exact.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

_CURVATURE_EPS = 1e-12
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@nb.njit(cache=True)
def _seed(seed):
    np.random.seed(seed)


@nb.njit(cache=True)
def _log_conditional(b, k, K, y, mu, b0, delta, omega_kk, r_k):
    # mu holds K beta with beta_k = b0
    acc = 0.0
    for i in range(K.shape[0]):
        kik = K[i, k]
        m = mu[i] + kik * (b - b0)
        if y[i] > 0.0:
            if m <= 0.0:
                return -np.inf
            acc += y[i] * math.log(m)
        acc -= m
    return acc - delta * (omega_kk * b * b + 2.0 * b * r_k)


@nb.njit(cache=True)
def _proposal(a, k, K, y, mu, b0, delta, omega_kk, r_k):
    """Gaussian approximation (mean, precision) of the conditional at ``a``."""
    g1 = 0.0
    g2 = 0.0
    for i in range(K.shape[0]):
        kik = K[i, k]
        if kik == 0.0:
            continue
        m = mu[i] + kik * (a - b0)
        if y[i] > 0.0:
            ratio = kik / m
            g1 += y[i] * ratio
            g2 -= y[i] * ratio * ratio
        g1 -= kik
    g1 -= 2.0 * delta * (omega_kk * a + r_k)
    g2 -= 2.0 * delta * omega_kk
    prec = -g2
    if not (prec > _CURVATURE_EPS):
        prec = 2.0 * delta * omega_kk
    return a + g1 / prec, prec


@nb.njit(cache=True)
def _log_q(x, mean, prec):
    if mean >= 0.0:
        sd = 1.0 / math.sqrt(prec)
        z = (x - mean) / sd
        log_mass = math.log(0.5 * math.erfc(-mean / (sd * math.sqrt(2.0))))
        return -0.5 * z * z - math.log(sd) - _LOG_SQRT_2PI - log_mass
    rate = -mean * prec
    return math.log(rate) - rate * x


@nb.njit(cache=True)
def _draw(mean, prec):
    if mean >= 0.0:
        sd = 1.0 / math.sqrt(prec)
        while True:
            x = mean + sd * np.random.standard_normal()
            if x >= 0.0:
                return x
    rate = -mean * prec
    return np.random.exponential(1.0 / rate)


@nb.njit(cache=True)
def run_sweeps(K, y, omega, delta, beta0, n_draws, burn_in, seed):
    """Return (draws, accepted-move counts over the recorded sweeps)."""
    _seed(seed)
    n, p = K.shape
    beta = beta0.copy()
    mu = np.zeros(n)
    draws = np.empty((n_draws, p))
    accepted = np.zeros(p)
    for sweep in range(burn_in + n_draws):
        # refresh K beta so incremental updates cannot drift
        for i in range(n):
            acc = 0.0
            for j in range(p):
                acc += K[i, j] * beta[j]
            mu[i] = acc
        for k in range(p):
            b0 = beta[k]
            omega_kk = omega[k, k]
            r_k = 0.0
            for j in range(p):
                if j != k:
                    r_k += omega[k, j] * beta[j]
            h0 = _log_conditional(b0, k, K, y, mu, b0, delta, omega_kk, r_k)
            mean_f, prec_f = _proposal(b0, k, K, y, mu, b0, delta, omega_kk, r_k)
            b1 = _draw(mean_f, prec_f)
            h1 = _log_conditional(b1, k, K, y, mu, b0, delta, omega_kk, r_k)
            if h1 == -np.inf:
                continue
            mean_r, prec_r = _proposal(b1, k, K, y, mu, b0, delta, omega_kk, r_k)
            log_ratio = h1 - h0 + _log_q(b0, mean_r, prec_r) - _log_q(b1, mean_f, prec_f)
            if h0 == -np.inf or math.log(np.random.random()) < log_ratio:
                if b1 != b0:
                    for i in range(n):
                        mu[i] += K[i, k] * (b1 - b0)
                    beta[k] = b1
                if sweep >= burn_in:
                    accepted[k] += 1.0
        if sweep >= burn_in:
            for j in range(p):
                draws[sweep - burn_in, j] = beta[j]
    return draws, accepted
