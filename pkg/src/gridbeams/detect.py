"""Maximum-likelihood beam/sequence detectors at the base station.

Every ``*_scores`` function takes ``Y`` with shape ``(..., M, tau)`` and
returns one score per candidate, shape ``(..., N)``; the matching
``detect_*`` function wraps a single observation and returns a
:class:`Detection`. Ties go to the lowest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from .beamworld import BeamSet, ReceivedSignal, steering_vector
from .pep import bessel_i0_log

# batch rows processed together by the angle-search detectors (bounds memory)
_LOS_CHUNK = 32


@dataclass(frozen=True)
class Detection:
    index: int
    score: float
    theta_hat: float | None = None


def _Y(Y) -> np.ndarray:
    return np.asarray(Y.Y if isinstance(Y, ReceivedSignal) else Y, dtype=complex)


def _G(G) -> np.ndarray:
    return G.G if isinstance(G, BeamSet) else np.asarray(G, dtype=complex)


def _Phi(Phi) -> np.ndarray:
    return np.asarray(getattr(Phi, "Phi", Phi), dtype=complex)


def wrap_phase(x):
    """Map angles onto (-pi, pi]."""
    y = np.pi - np.mod(np.pi - np.asarray(x, dtype=float), 2 * np.pi)
    return float(y) if np.ndim(y) == 0 else y


def correlate(Y, G, Phi) -> np.ndarray:
    """``phi_n^T Y^H g_n`` for every candidate ``n``."""
    Y, Gm, P = _Y(Y), _G(G), _Phi(Phi)
    M, tau = Y.shape[-2:]
    if Gm.shape[0] != M or P.shape[0] != tau or Gm.shape[1] != P.shape[1]:
        raise ValueError("dimension mismatch between Y, G and Phi")
    K = (Gm[:, None, :] * P[None, :, :]).reshape(M * tau, -1)
    return np.conj(Y).reshape(Y.shape[:-2] + (M * tau,)) @ K


def phase_mle(Y, phi, g) -> float:
    """Maximum-likelihood phase shift ``-arg(phi^T Y^H g)``; 0 when the product vanishes."""
    c = correlate(Y, np.asarray(g)[:, None], np.asarray(phi)[:, None])[..., 0]
    if c == 0:
        return 0.0
    return wrap_phase(-np.angle(c))


def _pick(scores: np.ndarray) -> tuple[int, float]:
    n = int(np.argmax(scores))
    return n, float(scores[n])


def detect_reciprocal_unknown_phase(Y, G, Phi) -> Detection:
    """``argmax_n |phi_n^T Y^H g_n|`` with the phase estimate of the winner."""
    c = correlate(Y, G, Phi)
    n, s = _pick(np.abs(c))
    theta = 0.0 if c[n] == 0 else wrap_phase(-np.angle(c[n]))
    return Detection(n, s, theta)


def detect_reciprocal_known_phase(Y, G, Phi) -> Detection:
    """``argmax_n Re{phi_n^T Y^H g_n}``; the terminal has removed the phase shift."""
    n, s = _pick(correlate(Y, G, Phi).real)
    return Detection(n, s)


def rayleigh_scores(Y, Phi) -> np.ndarray:
    """``||Y phi_n^*||^2``."""
    X = _Y(Y) @ np.conj(_Phi(Phi))
    return np.sum(X.real**2 + X.imag**2, axis=-2)


def detect_nonreciprocal_rayleigh(Y, Phi) -> Detection:
    return Detection(*_pick(rayleigh_scores(Y, Phi)))


@lru_cache(maxsize=8)
def _psi_grid(grid_size: int) -> np.ndarray:
    # uniform over (-pi/2, pi/2], excluding the left end
    return -np.pi / 2 + np.pi * np.arange(1, grid_size + 1) / grid_size


@lru_cache(maxsize=8)
def _psi_nodes(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    t, w = np.polynomial.legendre.leggauss(nodes)
    return t * np.pi / 2, w * np.pi / 2


def _steering_products(Y, Phi, psi, beta) -> np.ndarray:
    """``h(psi)^H Y phi_n^*`` for each angle and candidate: shape ``(..., P, N)``."""
    Y = _Y(Y)
    X = Y @ np.conj(_Phi(Phi))  # (..., M, N)
    Ah = np.sqrt(beta) * np.conj(steering_vector(psi, Y.shape[-2]))  # (P, M)
    return Ah @ X


def _chunked(fn, Y, *args):
    Y = _Y(Y)
    lead = Y.shape[:-2]
    flat = Y.reshape((-1,) + Y.shape[-2:])
    out = [fn(flat[i : i + _LOS_CHUNK], *args) for i in range(0, flat.shape[0], _LOS_CHUNK)]
    res = np.concatenate(out, axis=0)
    return res.reshape(lead + res.shape[1:])


def los_concentrated_scores(Y, Phi, grid_size: int = 1024, beta: float = 1.0) -> np.ndarray:
    """``max_psi |h(psi)^H Y phi_n^*|`` over a uniform angle grid."""
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    psi = _psi_grid(grid_size)
    return _chunked(lambda y: np.abs(_steering_products(y, Phi, psi, beta)).max(axis=-2), Y)


def detect_nonreciprocal_los_concentrated(Y, Phi, grid_size: int = 1024, beta: float = 1.0) -> Detection:
    return Detection(*_pick(los_concentrated_scores(Y, Phi, grid_size, beta)))


def los_integral_scores(
    Y, Phi, rho: float, phase_marginalized: bool = True, nodes: int = 257, beta: float = 1.0
) -> np.ndarray:
    """``log int exp(2 sqrt(rho) s(psi)) dpsi`` by Gauss-Legendre in the log domain.

    ``s`` is ``|h^H Y phi^*|`` when the line-of-sight phase has been
    concentrated out, else ``Re{h^H Y phi^*}``.
    """
    if nodes < 8:
        raise ValueError("use at least 8 quadrature nodes")
    psi, w = _psi_nodes(nodes)
    logw = np.log(w)[:, None]
    k = 2.0 * math.sqrt(rho)

    def one(y):
        S = _steering_products(y, Phi, psi, beta)
        s = np.abs(S) if phase_marginalized else S.real
        return logsumexp(k * s + logw, axis=-2)

    return _chunked(one, Y)


def detect_nonreciprocal_los_integral(
    Y: ReceivedSignal, Phi, phase_marginalized: bool = True, nodes: int = 257, beta: float = 1.0
) -> Detection:
    return Detection(*_pick(los_integral_scores(Y.Y, Phi, Y.rho, phase_marginalized, nodes, beta)))


def calibrated_scores(Y, Phi, H, rho: float, phase_marginalized: bool = False) -> np.ndarray:
    """Log-likelihood of each sequence with the uplink channel drawn from the set ``H``.

    ``log sum_h exp(2 sqrt(rho) Re{phi^T Y^H h})``, or with a uniform unknown
    phase on ``h``, ``log sum_h I0(2 sqrt(rho) |phi^T Y^H h|)``.
    """
    Y, Hm, P = _Y(Y), _G(H), _Phi(Phi)
    YhH = np.conj(np.swapaxes(Y, -1, -2)) @ Hm  # (..., tau, J)
    C = P.T @ YhH  # (..., N, J)
    k = 2.0 * math.sqrt(rho)
    if phase_marginalized:
        terms = bessel_i0_log(k * np.abs(C))
    else:
        terms = k * C.real
    return logsumexp(terms, axis=-1)


def detect_calibrated(Y: ReceivedSignal, Phi, H, phase_marginalized: bool = False) -> Detection:
    if _G(H).shape[1] < 1:
        raise ValueError("uplink channel set is empty")
    return Detection(*_pick(calibrated_scores(Y.Y, Phi, H, Y.rho, phase_marginalized)))
