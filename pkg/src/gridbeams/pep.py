"""Pairwise error probabilities between two beam/sequence hypotheses.

``alpha`` is the normalized coupling of the pair: for reciprocal channels
``phi_n^H phi_n' * g_n^H g_n' / (M*beta)``, for the non-reciprocal Rayleigh
uplink the sequence correlation ``|phi_n^H phi_n'|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import erfc, i0e, logsumexp


@dataclass(frozen=True)
class PepQuery:
    rho: float
    M: int
    beta: float
    alpha: complex

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.M < 1:
            raise ValueError("M must be positive")
        if abs(self.alpha) > 1 + 1e-12:
            raise ValueError("|alpha| cannot exceed 1")

    @property
    def snr(self) -> float:
        """Matched-filter SNR ``rho * M * beta``."""
        return self.rho * self.M * self.beta


def q_function(x):
    """Gaussian tail probability ``Q(x) = erfc(x / sqrt(2)) / 2``."""
    if np.ndim(x):
        return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))
    return float(0.5 * erfc(x / math.sqrt(2.0)))


def pep_known_phase(q: PepQuery) -> float:
    """Error probability of the real-part detector: ``Q(sqrt(rho*M*beta*(1 - Re alpha)))``."""
    re = complex(q.alpha).real
    if re > 1 + 1e-12:
        raise ValueError("Re{alpha} cannot exceed 1")
    return q_function(math.sqrt(max(q.snr * (1.0 - re), 0.0)))


@lru_cache(maxsize=16)
def _gauss_legendre(nodes: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    t, w = np.polynomial.legendre.leggauss(nodes)
    half = 0.5 * (b - a)
    return half * t + 0.5 * (a + b), half * w


def pep_unknown_phase(q: PepQuery, nodes: int = 257) -> float:
    """Error probability of the magnitude detector (phase shift unknown).

    Evaluates ``exp(-x)/(2 pi) * int_{-pi/2}^{pi/2} f(z(t)) dt`` with
    ``f(z) = z e^{xz} + (1-z) e^{x(1-z)}``, ``x = rho*M*beta`` and
    ``z = 1/(B^2 + 1)``, ``B = sqrt(g^2+1) - g``, ``g = A cos t``,
    ``A = |alpha| / sqrt(1 - |alpha|^2)``. Summed in the log domain.
    """
    a = abs(complex(q.alpha))
    if a >= 1.0:
        raise ValueError("|alpha| must be below 1")
    if nodes < 16:
        raise ValueError("use at least 16 quadrature nodes")
    x = q.snr
    A = a / math.sqrt(1.0 - a * a)
    t, w = _gauss_legendre(nodes, -math.pi / 2, math.pi / 2)
    g = A * np.cos(t)
    B = 1.0 / (np.sqrt(g * g + 1.0) + g)  # == sqrt(g^2+1) - g without cancellation
    B2 = B * B
    log_z = -np.log1p(B2)
    log_1mz = np.log(B2) + log_z
    z = np.exp(log_z)
    log_f = np.logaddexp(log_z + x * z, log_1mz + x * (1.0 - z))
    val = -x - math.log(2 * math.pi) + logsumexp(log_f, b=w)
    return math.exp(val)


def pep_nonreciprocal_rayleigh(rho_beta: float, M: int, alpha_mag: float) -> float:
    """Error probability of the energy detector ``||Y phi*||^2`` under i.i.d. Rayleigh uplink.

    Sums ``sum_{k>=M} C(M+k-1, k) u^M (1-u)^k`` with
    ``u = 1/2 - w / (2 sqrt(w^2 - 2w/(rho*beta)))`` and
    ``w = -rho*beta (1-|alpha|^2) / (2 (rho*beta + 1))``. Terms are accumulated
    in the log domain until ten in a row fall below ``1e-15`` of the running sum.
    """
    if M < 1:
        raise ValueError("M must be positive")
    if rho_beta < 0:
        raise ValueError("rho*beta must be non-negative")
    if not 0.0 <= alpha_mag <= 1.0 + 1e-12:
        raise ValueError("alpha_mag must lie in [0, 1]")
    if alpha_mag >= 1.0 or rho_beta == 0.0:
        u = 0.5
    else:
        w = -rho_beta * (1.0 - alpha_mag**2) / (2.0 * (rho_beta + 1.0))
        u = 0.5 - w / (2.0 * math.sqrt(w * w - 2.0 * w / rho_beta))
    log_u, log_1mu = math.log(u), math.log1p(-u)
    # log C(2M-1, M)
    log_c = math.lgamma(2 * M) - math.lgamma(M) - math.lgamma(M + 1)
    k = M
    log_rel = math.log(1e-15)
    log_total = -math.inf
    small = 0
    while k <= M + 1_000_000:
        lt = log_c + M * log_u + k * log_1mu
        log_total = np.logaddexp(log_total, lt)
        if lt < log_total + log_rel:
            small += 1
            if small >= 10:
                break
        else:
            small = 0
        log_c += math.log(M + k) - math.log(k + 1)
        k += 1
    return math.exp(log_total)


def bessel_i0_log(x):
    """``log I0(x)`` for ``x >= 0``, finite far beyond where ``I0`` overflows."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise ValueError("log I0 is only defined here for non-negative arguments")
    out = np.log(i0e(arr)) + arr
    return float(out) if out.ndim == 0 else out
