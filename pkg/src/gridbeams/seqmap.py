"""Channel-to-sequence mappings and their design.

A mapping assigns unit-norm uplink sequence ``Phi[:, n]`` to beam ``n``.
The three design metrics score the worst beam pair; the sequence generation
search (``sga``) keeps the best of many random draws, optionally drawn with a
beam-dependent correlation built by ``upsca`` or ``kpsca``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .beamworld import BeamSet, complex_normal
from .matfile import MatrixFileError, read_matrix, write_matrix

METRICS = ("mu_U", "mu_K", "mu_NR")
# draws are produced in fixed-size blocks so the i-th candidate depends only on (seed, i)
SGA_BLOCK = 1024
# entries below this fraction of the largest magnitude count as exact zeros
ZERO_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class SequenceMap:
    """``tau x N`` matrix whose unit-norm column ``n`` is sent when the terminal sees beam ``n``."""

    Phi: np.ndarray

    def __post_init__(self):
        Phi = np.array(self.Phi, dtype=complex, copy=True)
        if Phi.ndim != 2 or Phi.shape[0] < 1 or Phi.shape[1] < 1:
            raise ValueError("Phi must be a non-empty 2-D matrix")
        norms = np.linalg.norm(Phi, axis=0)
        if np.max(np.abs(norms - 1.0)) > 1e-9:
            raise ValueError("sequence columns must have unit norm")
        Phi.setflags(write=False)
        object.__setattr__(self, "Phi", Phi)

    @property
    def tau(self) -> int:
        return self.Phi.shape[0]

    @property
    def N(self) -> int:
        return self.Phi.shape[1]

    @classmethod
    def from_unnormalized(cls, X) -> "SequenceMap":
        X = np.asarray(X, dtype=complex)
        return cls(X / np.linalg.norm(X, axis=0))

    def fixed(self, n: int = 0) -> "SequenceMap":
        """Mapping that sends column ``n`` for every beam (no channel knowledge)."""
        return SequenceMap(np.repeat(self.Phi[:, [n]], self.N, axis=1))


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """Hermitian positive semidefinite ``N x N`` matrix for correlated sequence draws."""

    R: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=complex, copy=True)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValueError("R must be square")
        scale = max(1.0, float(np.max(np.abs(R))))
        if np.max(np.abs(R - R.conj().T)) > 1e-9 * scale:
            raise ValueError("R is not Hermitian")
        w = np.linalg.eigvalsh((R + R.conj().T) / 2)
        if w.min() < -1e-9 * scale:
            raise ValueError(f"R is not positive semidefinite (min eigenvalue {w.min():.3g})")
        R.setflags(write=False)
        object.__setattr__(self, "R", R)

    def sqrt(self) -> np.ndarray:
        """Hermitian square root; works for singular ``R``."""
        w, V = np.linalg.eigh((self.R + self.R.conj().T) / 2)
        return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.conj().T


def orthogonal_mapping(N: int, tau: int) -> SequenceMap:
    """Beam ``n`` gets standard basis vector ``(n + 1) mod tau``.

    With one-based beam labels this is the cyclic rule that pairs the first and
    last beam of a 70-beam DFT grid when ``tau = 3``.
    """
    if tau < 1:
        raise ValueError("tau must be at least 1")
    if tau > N:
        raise ValueError("tau must not exceed N")
    Phi = np.zeros((tau, N), dtype=complex)
    Phi[(np.arange(N) + 1) % tau, np.arange(N)] = 1.0
    return SequenceMap(Phi)


def save_mapping(Phi: SequenceMap, path: str | os.PathLike) -> None:
    write_matrix(path, [Phi.tau, Phi.N], Phi.Phi)


def load_mapping(path: str | os.PathLike) -> SequenceMap:
    _, X = read_matrix(path, 2)
    norms = np.linalg.norm(X, axis=0)
    dev = np.abs(norms**2 - 1.0)
    if np.any(dev > 0.01):
        raise MatrixFileError(f"sequence column {int(np.argmax(dev))} is not unit norm")
    fix = dev > 1e-12
    X = X.copy()
    X[:, fix] /= norms[fix]
    return SequenceMap(X)


def _as_G(G) -> np.ndarray:
    return G.G if isinstance(G, BeamSet) else np.asarray(G, dtype=complex)


def _as_Phi(Phi) -> np.ndarray:
    return Phi.Phi if isinstance(Phi, SequenceMap) else np.asarray(Phi, dtype=complex)


def coupling(G, Phi) -> np.ndarray:
    """Matrix of pair couplings ``phi_n^H phi_n' * g_n^H g_n'``."""
    Gm, P = _as_G(G), _as_Phi(Phi)
    if Gm.shape[1] != P.shape[1]:
        raise ValueError("beam and sequence counts differ")
    return (P.conj().T @ P) * (Gm.conj().T @ Gm)


def _pair_values(metric: str, G, Phi) -> np.ndarray:
    if metric == "mu_U":
        return np.abs(coupling(G, Phi))
    if metric == "mu_K":
        return coupling(G, Phi).real
    if metric == "mu_NR":
        P = _as_Phi(Phi)
        return np.abs(P.conj().T @ P)
    raise ValueError(f"unknown metric {metric!r}")


def metric_value(metric: str, G, Phi) -> float:
    V = _pair_values(metric, G, Phi)
    if V.shape[0] < 2:
        raise ValueError("metrics need at least two beams")
    np.fill_diagonal(V, -np.inf)
    return float(V.max())


def metric_pairs(metric: str, G, Phi, atol: float = 1e-9) -> list[tuple[int, int]]:
    """Ordered pairs ``(n, n')`` attaining the metric, for diagnostics."""
    V = _pair_values(metric, G, Phi)
    np.fill_diagonal(V, -np.inf)
    top = V.max()
    return [tuple(map(int, p)) for p in np.argwhere(V >= top - atol)]


def metric_mu_U(G, Phi) -> float:
    """Worst-pair ``|phi_n^H phi_n' g_n^H g_n'|`` (phase unknown at the terminal)."""
    return metric_value("mu_U", G, Phi)


def metric_mu_K(G, Phi) -> float:
    """Worst-pair ``Re{phi_n^H phi_n' g_n^H g_n'}`` (phase known and compensated)."""
    return metric_value("mu_K", G, Phi)


def metric_mu_NR(Phi) -> float:
    """Worst-pair sequence correlation ``|phi_n^H phi_n'|`` (no reciprocity)."""
    return metric_value("mu_NR", None, Phi)


def batch_metric(metric: str, GG: np.ndarray | None, P: np.ndarray) -> np.ndarray:
    """Metric of each candidate in ``P`` (shape ``(K, tau, N)``); ``GG`` is the beam Gram matrix."""
    C = np.conj(np.swapaxes(P, -1, -2)) @ P
    if metric == "mu_NR":
        V = np.abs(C)
    elif metric == "mu_U":
        V = np.abs(C * GG)
    elif metric == "mu_K":
        V = (C * GG).real
    else:
        raise ValueError(f"unknown metric {metric!r}")
    N = P.shape[-1]
    V[..., np.arange(N), np.arange(N)] = -np.inf
    return V.reshape(V.shape[0], -1).max(axis=1)


def nearest_psd(A) -> CorrelationMatrix:
    """Frobenius-nearest PSD matrix to the Hermitian part of ``A`` (eigenvalue clipping)."""
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    H = (A + A.conj().T) / 2
    w, V = np.linalg.eigh(H)
    if w.min() >= 0:
        return CorrelationMatrix(H)
    X = (V * np.clip(w, 0.0, None)) @ V.conj().T
    return CorrelationMatrix((X + X.conj().T) / 2)


def _nonzero_mask(X: np.ndarray) -> np.ndarray:
    top = np.max(np.abs(X))
    return np.abs(X) > ZERO_RTOL * top if top > 0 else np.zeros(X.shape, dtype=bool)


def _beam_correlation(G) -> np.ndarray:
    Gm = _as_G(G)
    if Gm.shape[1] < 2:
        raise ValueError("need at least two beams")
    return Gm.conj().T @ Gm / Gm.shape[0]


def upsca(G) -> CorrelationMatrix:
    """Sequence correlation aimed at the phase-unknown metric.

    Pairs of strongly correlated beams get weakly correlated sequences:
    ``1 / (|R^G| * m)`` with ``m`` the smallest non-zero ``|R^G|`` entry and
    zero entries mapped to 1, then projected onto the PSD cone.
    """
    RG = np.abs(_beam_correlation(G))
    nz = _nonzero_mask(RG)
    m = RG[nz].min()
    RP = np.ones_like(RG)
    RP[nz] = 1.0 / (RG[nz] * m)
    return nearest_psd(RP)


def kpsca(G) -> CorrelationMatrix:
    """Sequence correlation aimed at the phase-known metric.

    Real and imaginary parts of the beam correlation are inverted separately;
    zero real parts map to 1 and zero imaginary parts to 0, keeping the target
    Hermitian before the PSD projection.
    """
    RG = _beam_correlation(G)
    re, im = RG.real, RG.imag
    scale = np.max(np.abs(RG))
    nz_r = np.abs(re) > ZERO_RTOL * scale
    nz_i = np.abs(im) > ZERO_RTOL * scale
    m_r = np.abs(re[nz_r]).min()
    out_r = np.ones_like(re)
    out_r[nz_r] = 1.0 / (re[nz_r] * m_r)
    out_i = np.zeros_like(im)
    if nz_i.any():
        m_i = np.abs(im[nz_i]).min()
        out_i[nz_i] = 1.0 / (im[nz_i] * m_i)
    return nearest_psd(out_r + 1j * out_i)


def _block_draws(seed: int, block: int, tau: int, N: int, S: np.ndarray | None) -> np.ndarray:
    rng = np.random.default_rng([seed, block])
    Z = complex_normal(rng, (SGA_BLOCK, tau, N))
    if S is not None:
        # each length-N row gets covariance R = S S^H
        Z = Z @ S.T
    norms = np.linalg.norm(Z, axis=1, keepdims=True)
    return Z / norms


def sga(
    G,
    metric: str,
    dist="white",
    tau: int = 3,
    iters: int = 1000,
    seed: int = 0,
    *,
    return_trace: bool = False,
):
    """Random-search sequence design.

    Draws ``iters`` candidate ``tau x N`` matrices (white ``CN(0, I)`` entries,
    or rows ``CN(0, R)`` for a correlation matrix ``R``), normalizes columns and
    keeps the first candidate with the strictly smallest metric.

    Returns ``(mapping, metric_value)``, plus the best-so-far trace when
    ``return_trace`` is set.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    if iters < 1:
        raise ValueError("iters must be at least 1")
    if tau < 1:
        raise ValueError("tau must be at least 1")
    Gm = _as_G(G)
    N = Gm.shape[1]
    if N < 2:
        raise ValueError("need at least two beams")
    if isinstance(dist, str):
        if dist != "white":
            raise ValueError(f"unknown distribution {dist!r}")
        S = None
    else:
        R = dist if isinstance(dist, CorrelationMatrix) else CorrelationMatrix(dist)
        if R.R.shape != (N, N):
            raise ValueError("correlation matrix size does not match N")
        S = R.sqrt()
    GG = Gm.conj().T @ Gm

    best_val = np.inf
    best = None
    trace = np.empty(iters) if return_trace else None
    done = 0
    block = 0
    while done < iters:
        P = _block_draws(seed, block, tau, N, S)[: iters - done]
        vals = batch_metric(metric, GG, P)
        if return_trace:
            trace[done : done + len(vals)] = np.minimum.accumulate(np.minimum(vals, best_val))
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val = float(vals[k])
            best = P[k]
        done += len(vals)
        block += 1
    out = (SequenceMap(best), best_val)
    return out + (trace,) if return_trace else out
