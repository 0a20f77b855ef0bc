"""Beam sets, channel realizations and received uplink signals.

Indices are zero-based throughout: beam ``n`` is column ``G[:, n]``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .matfile import MatrixFileError, read_matrix, write_matrix

NORM_TOL = 1e-9
# relative column-norm slack accepted (and repaired) when loading from file
LOAD_NORM_SLACK = 0.01


def complex_normal(rng, shape) -> np.ndarray:
    """Circularly symmetric CN(0, 1) samples of the given shape."""
    if isinstance(shape, int):
        shape = (shape,)
    x = np.asarray(rng.standard_normal(tuple(shape) + (2,)), dtype=float)
    return (x[..., 0] + 1j * x[..., 1]) * np.sqrt(0.5)


def _uniform_half_open(rng, low: float, high: float, size) -> np.ndarray:
    """Uniform samples on the interval (low, high]."""
    return high - rng.uniform(0.0, high - low, size)


@dataclass(frozen=True, eq=False)
class BeamSet:
    """Grid-of-beams dictionary: ``N`` columns of length ``M``, each with squared norm ``M*beta``."""

    G: np.ndarray
    beta: float

    def __post_init__(self):
        G = np.array(self.G, dtype=complex, copy=True)
        if G.ndim != 2 or G.shape[0] < 1 or G.shape[1] < 1:
            raise ValueError("G must be a non-empty 2-D matrix")
        beta = float(self.beta)
        if not beta > 0:
            raise ValueError("beta must be positive")
        target = G.shape[0] * beta
        norms = np.sum(np.abs(G) ** 2, axis=0)
        dev = np.max(np.abs(norms - target)) / target
        if dev > NORM_TOL:
            raise ValueError(f"beam norms deviate from M*beta by {dev:.3g} (relative)")
        G.setflags(write=False)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "beta", beta)

    @property
    def M(self) -> int:
        return self.G.shape[0]

    @property
    def N(self) -> int:
        return self.G.shape[1]

    @property
    def norm2(self) -> float:
        """Common squared beam norm ``M*beta``."""
        return self.M * self.beta

    def gram(self) -> np.ndarray:
        """Matrix of inner products ``g_n^H g_n'``."""
        return self.G.conj().T @ self.G

    def __len__(self) -> int:
        return self.N


def _check_counts(**kw):
    for name, v in kw.items():
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v!r}")


def dft_beamset(M: int, N: int, beta: float = 1.0) -> BeamSet:
    """DFT grid of beams, ``G[m, n] = sqrt(beta) * exp(2j*pi*m*n/N)``."""
    _check_counts(M=M, N=N)
    m = np.arange(M)[:, None]
    n = np.arange(N)[None, :]
    return BeamSet(np.sqrt(beta) * np.exp(2j * np.pi * m * n / N), beta)


def beam_inner_product(G: BeamSet, n: int, n2: int) -> complex:
    """``g_n^H g_n2``."""
    for k in (n, n2):
        if not 0 <= k < G.N:
            raise IndexError(f"beam index {k} out of range 0..{G.N - 1}")
    return complex(np.vdot(G.G[:, n], G.G[:, n2]))


def save_beamset(G: BeamSet, path: str | os.PathLike) -> None:
    write_matrix(path, [G.M, G.N, float(G.beta)], G.G)


def _renormalize(A: np.ndarray, target: float, what: str) -> np.ndarray:
    norms = np.sum(np.abs(A) ** 2, axis=0)
    dev = np.abs(norms - target) / target
    if np.any(dev > LOAD_NORM_SLACK):
        bad = int(np.argmax(dev))
        raise MatrixFileError(
            f"{what} column {bad} has squared norm {norms[bad]:.6g}, expected {target:.6g}"
        )
    A = A.copy()
    # columns already within rounding are left untouched so round trips stay bit-exact
    fix = dev > 1e-12
    A[:, fix] *= np.sqrt(target / norms[fix])
    return A


def load_beamset(path: str | os.PathLike) -> BeamSet:
    header, G = read_matrix(path, 3)
    try:
        beta = float(header[2])
    except ValueError as exc:
        raise MatrixFileError("beta must be a number") from exc
    if not beta > 0:
        raise MatrixFileError("beta must be positive")
    return BeamSet(_renormalize(G, G.shape[0] * beta, "beam"), beta)


def max_coherence(X: np.ndarray) -> float:
    """Largest ``|x_n^H x_n'| / (|x_n| |x_n'|)`` over distinct columns."""
    X = np.asarray(X, dtype=complex)
    if X.shape[1] < 2:
        return 0.0
    U = X / np.linalg.norm(X, axis=0)
    C = np.abs(U.conj().T @ U)
    np.fill_diagonal(C, 0.0)
    return float(C.max())


def grassmann_packing(
    M: int, N: int, beta: float = 1.0, iters: int = 2000, seed: int = 0
) -> BeamSet:
    """Best-effort line packing by repeatedly pushing apart the most coherent pair.

    Starts from seeded random unit vectors. A move is kept only when it lowers
    that pair's coherence without raising the overall maximum, so the result is
    never worse than the random start. No optimality is claimed; load a packing
    from file when quality matters.
    """
    _check_counts(M=M, N=N)
    if N < M:
        raise ValueError("packing needs N >= M")
    if iters < 0:
        raise ValueError("iters must be non-negative")
    rng = np.random.default_rng(seed)
    X = complex_normal(rng, (M, N))
    X /= np.linalg.norm(X, axis=0)

    def coh(U):
        C = np.abs(U.conj().T @ U)
        np.fill_diagonal(C, 0.0)
        return C

    C = coh(X)
    for _ in range(iters):
        worst = C.max()
        if worst <= 1e-15:
            break
        i, j = np.unravel_index(np.argmax(C), C.shape)
        moved = False
        for a, b in ((j, i), (i, j)):
            c = np.vdot(X[:, b], X[:, a])
            for step in (1.0, 0.5, 0.25, 0.125, 0.0625):
                v = X[:, a] - step * c * X[:, b]
                nv = np.linalg.norm(v)
                if nv < 1e-12:
                    continue
                v = v / nv
                row = np.abs(X.conj().T @ v)
                row[a] = 0.0
                if row[b] < C[a, b] and max(row.max(), _max_excluding(C, a)) <= worst:
                    X[:, a] = v
                    C[a, :] = row
                    C[:, a] = row
                    moved = True
                    break
            if moved:
                break
        if not moved:
            break
    return BeamSet(np.sqrt(M * beta) * X, beta)


def _max_excluding(C: np.ndarray, a: int) -> float:
    mask = np.ones(C.shape[0], dtype=bool)
    mask[a] = False
    if mask.sum() < 2:
        return 0.0
    return float(C[np.ix_(mask, mask)].max())


def steering_vector(psi, M: int) -> np.ndarray:
    """Half-wavelength ULA response ``exp(-1j*pi*m*sin(psi))``; shape ``psi.shape + (M,)``."""
    psi = np.asarray(psi, dtype=float)
    m = np.arange(M)
    return np.exp(-1j * np.pi * np.multiply.outer(np.sin(psi), m))


def beam_angle(n: int, N: int) -> float:
    """Impinging angle whose steering vector coincides with DFT beam ``n``."""
    u = (-2.0 * n / N) % 2.0
    if u > 1.0:
        u -= 2.0
    return float(np.arcsin(u))


def quantize_to_grid(g, G: BeamSet):
    """Index of the beam closest to ``g`` in Euclidean distance, lowest index on ties.

    ``g`` may be a single ``M``-vector or a batch of shape ``(B, M)``.
    """
    g = np.asarray(g, dtype=complex)
    if g.shape[-1] != G.M:
        raise ValueError(f"channel length {g.shape[-1]} does not match M={G.M}")
    d = np.sum(np.abs(G.G - g[..., :, None]) ** 2, axis=-2)
    idx = np.argmin(d, axis=-1)
    return int(idx) if g.ndim == 1 else idx


DOWNLINK_MODELS = ("ongrid", "los", "rician", "aoa")
UPLINK_MODELS = ("reciprocal", "rayleigh", "los", "los_nophase", "calibrated")


@dataclass(frozen=True, eq=False)
class ChannelKind:
    """Which channel generator to use and its parameters.

    ``model`` selects the true downlink channel: on the grid, an off-grid
    line-of-sight channel, Rician fading around such a channel (``sigma2`` is
    the scattered power per antenna), or a line-of-sight channel that the
    terminal quantizes from a noisy angle estimate (error variance
    ``aoa_scale / (rho * cos(psi)**2)`` in squared degrees).

    ``uplink`` selects how the uplink channel relates to the downlink one.
    ``calibrated`` draws uniformly from ``uplink_set``, with a random common
    phase when ``uplink_phase`` is set.
    """

    model: str = "ongrid"
    sigma2: float = 0.0
    aoa_scale: float = 0.1
    uplink: str = "reciprocal"
    uplink_set: BeamSet | None = None
    uplink_phase: bool = False

    def __post_init__(self):
        if self.model not in DOWNLINK_MODELS:
            raise ValueError(f"unknown channel model {self.model!r}")
        if self.uplink not in UPLINK_MODELS:
            raise ValueError(f"unknown uplink model {self.uplink!r}")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be non-negative")
        if self.aoa_scale < 0:
            raise ValueError("aoa_scale must be non-negative")
        if self.uplink == "calibrated" and self.uplink_set is None:
            raise ValueError("calibrated uplink needs uplink_set")

    @property
    def reciprocal(self) -> bool:
        return self.uplink == "reciprocal"


@dataclass
class ChannelBatch:
    """Vectorized channel draws; row ``b`` of each array belongs to draw ``b``."""

    g_true: np.ndarray  # (B, M)
    h_uplink: np.ndarray  # (B, M)
    theta: np.ndarray  # (B,)
    quantized_index: np.ndarray  # (B,)
    aux: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.theta)


@dataclass
class ChannelDraw:
    g_true: np.ndarray
    h_uplink: np.ndarray
    theta: float
    quantized_index: int
    aux: dict[str, Any] = field(default_factory=dict)


def draw_channels(kind: ChannelKind, G: BeamSet, rng, size: int, rho: float | None = None) -> ChannelBatch:
    """Draw ``size`` independent channel realizations.

    Draw order is fixed so a given generator state always yields the same
    batch. ``rho`` is only needed by the angle-error model.
    """
    M, beta = G.M, G.beta
    theta = _uniform_half_open(rng, -np.pi, np.pi, size)
    aux: dict[str, np.ndarray] = {}
    if kind.model == "ongrid":
        q = rng.integers(0, G.N, size)
        g = G.G[:, q].T.copy()
    else:
        psi = _uniform_half_open(rng, -np.pi / 2, np.pi / 2, size)
        aux["psi"] = psi
        g_los = np.sqrt(beta) * steering_vector(psi, M)
        g = g_los
        seen = g_los
        if kind.model == "rician" and kind.sigma2 > 0:
            g = g_los + np.sqrt(kind.sigma2) * complex_normal(rng, (size, M))
        elif kind.model == "aoa":
            if rho is None:
                raise ValueError("angle-error model needs rho")
            e = rng.standard_normal(size)
            with np.errstate(divide="ignore", invalid="ignore"):
                std_deg = np.sqrt(kind.aoa_scale / (rho * np.cos(psi) ** 2))
                err = np.where(e == 0.0, 0.0, std_deg * e)
            lim = np.nextafter(90.0, 0.0)
            psi_hat = np.deg2rad(np.clip(np.rad2deg(psi) + err, -lim, lim))
            aux["psi_hat"] = psi_hat
            seen = np.sqrt(beta) * steering_vector(psi_hat, M)
        if kind.model == "rician":
            # the terminal only knows the line-of-sight part
            seen = g_los
        q = quantize_to_grid(seen, G)

    if kind.uplink == "reciprocal":
        h = np.exp(1j * theta)[:, None] * g
    elif kind.uplink == "rayleigh":
        h = np.sqrt(beta) * complex_normal(rng, (size, M))
    elif kind.uplink in ("los", "los_nophase"):
        psi_u = _uniform_half_open(rng, -np.pi / 2, np.pi / 2, size)
        aux["psi_uplink"] = psi_u
        h = np.sqrt(beta) * steering_vector(psi_u, M)
        if kind.uplink == "los":
            xi = _uniform_half_open(rng, -np.pi, np.pi, size)
            aux["xi"] = xi
            h = np.exp(1j * xi)[:, None] * h
    else:
        H = kind.uplink_set
        if H.M != M:
            raise ValueError("uplink set antenna count differs from the beam set")
        j = rng.integers(0, H.N, size)
        aux["uplink_index"] = j
        h = H.G[:, j].T.copy()
        if kind.uplink_phase:
            nu = _uniform_half_open(rng, -np.pi, np.pi, size)
            aux["nu"] = nu
            h = np.exp(1j * nu)[:, None] * h
    return ChannelBatch(g, h, theta, np.asarray(q), aux)


def draw_channel(kind: ChannelKind, G: BeamSet, rng, rho: float | None = None) -> ChannelDraw:
    b = draw_channels(kind, G, rng, 1, rho)
    return ChannelDraw(
        g_true=b.g_true[0],
        h_uplink=b.h_uplink[0],
        theta=float(b.theta[0]),
        quantized_index=int(b.quantized_index[0]),
        aux={k: v[0].item() for k, v in b.aux.items()},
    )


@dataclass(frozen=True, eq=False)
class ReceivedSignal:
    """Uplink observation ``Y`` (``M x tau``) at coherent-integration SNR ``rho``."""

    Y: np.ndarray
    rho: float

    @property
    def M(self) -> int:
        return self.Y.shape[-2]

    @property
    def tau(self) -> int:
        return self.Y.shape[-1]


def synthesize_received(
    h,
    phi,
    rho: float,
    theta_compensated: bool = False,
    theta: float = 0.0,
    rng=None,
) -> ReceivedSignal:
    """``Y = sqrt(rho) * h_eff phi^T + W`` with unit-variance complex Gaussian ``W``.

    With ``theta_compensated`` the terminal has pre-rotated its sequence, so the
    ``exp(1j*theta)`` factor carried by ``h`` is removed.
    """
    h = np.asarray(h, dtype=complex)
    phi = np.asarray(phi, dtype=complex)
    if abs(np.linalg.norm(phi) - 1.0) > 1e-9:
        raise ValueError("sequence must have unit norm")
    if rho < 0:
        raise ValueError("rho must be non-negative")
    if rng is None:
        rng = np.random.default_rng()
    h_eff = h * np.exp(-1j * theta) if theta_compensated else h
    W = complex_normal(rng, (h.shape[0], phi.shape[0]))
    return ReceivedSignal(np.sqrt(rho) * np.outer(h_eff, phi) + W, float(rho))
