"""Seeded Monte Carlo evaluation of detection error rate and channel MSE.

Trials are generated in fixed blocks of ``BLOCK`` draws; block ``b`` uses a
generator seeded with ``(seed, b)``. Trial ``i`` therefore depends only on
``(seed, i)``, whatever the total trial count or the number of worker threads.
All SNR points of a sweep share the same channel and noise draws.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import detect
from .beamworld import BeamSet, ChannelKind, complex_normal, draw_channels
from .pep import PepQuery, pep_known_phase, pep_nonreciprocal_rayleigh, pep_unknown_phase
from .seqmap import SequenceMap

BLOCK = 1024
REGIMES = ("nocsi", "partial", "full", "nonreciprocal", "calibrated")
NONRECIPROCAL_DETECTORS = ("rayleigh", "los_concentrated", "los_integral", "los_integral_real")
CROSSCHECK_REGIMES = ("known", "unknown", "rayleigh")


def db2lin(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


@dataclass(frozen=True, eq=False)
class Scenario:
    """One simulated setup.

    ``regime`` picks what the terminal knows and hence which detector runs:

    ``nocsi``
        fixed sequence (column 0 of ``mapping``), phase unknown, magnitude detector
    ``partial``
        sequence from the mapping, phase unknown, magnitude detector
    ``full``
        sequence from the mapping, phase pre-compensated, real-part detector
    ``nonreciprocal``
        uplink independent of the downlink; ``detector`` is one of
        ``rayleigh``, ``los_concentrated``, ``los_integral`` (phase
        concentrated) or ``los_integral_real``
    ``calibrated``
        uplink drawn from ``channel.uplink_set``
    """

    regime: str
    channel: ChannelKind
    beamset: BeamSet
    mapping: SequenceMap
    detector: str | None = None
    grid_size: int = 1024
    nodes: int = 257

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.mapping.N != self.beamset.N:
            raise ValueError("mapping and beam set have different N")
        up = self.channel.uplink
        if self.regime in ("nocsi", "partial", "full") and up != "reciprocal":
            raise ValueError(f"regime {self.regime!r} needs a reciprocal uplink")
        if self.regime == "nonreciprocal":
            if up not in ("rayleigh", "los", "los_nophase"):
                raise ValueError("non-reciprocal regime needs a rayleigh or los uplink")
            det = self.detector or "rayleigh"
            if det not in NONRECIPROCAL_DETECTORS:
                raise ValueError(f"unknown non-reciprocal detector {det!r}")
            object.__setattr__(self, "detector", det)
        elif self.detector is not None:
            raise ValueError(f"regime {self.regime!r} does not take a detector choice")
        if self.regime == "calibrated" and up != "calibrated":
            raise ValueError("calibrated regime needs a calibrated uplink")
        if self.channel.uplink_set is not None and self.channel.uplink_set.M != self.beamset.M:
            raise ValueError("uplink set antenna count differs from the beam set")

    @property
    def compensated(self) -> bool:
        return self.regime == "full"

    @property
    def phase_unknown(self) -> bool:
        return self.regime in ("nocsi", "partial")

    @property
    def sent_mapping(self) -> SequenceMap:
        """Mapping the terminal actually uses (and the detector assumes)."""
        return self.mapping.fixed(0) if self.regime == "nocsi" else self.mapping


def wilson_interval(errors: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if trials <= 0:
        return 0.0, 1.0
    p = errors / trials
    d = 1 + z * z / trials
    c = (p + z * z / (2 * trials)) / d
    h = z / d * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials))
    return max(0.0, c - h), min(1.0, c + h)


@dataclass
class SimResult:
    snr_db: list[float]
    trials: int
    errors: list[int]
    mse: list[float]
    seed: int
    p_err: list[float] = field(init=False)
    ci95: list[float] = field(init=False)

    def __post_init__(self):
        self.p_err = [e / self.trials for e in self.errors]
        self.ci95 = [(hi - lo) / 2 for lo, hi in (wilson_interval(e, self.trials) for e in self.errors)]

    def interval(self, i: int) -> tuple[float, float]:
        return wilson_interval(self.errors[i], self.trials)

    def to_csv(self, mse_scale: float = 1.0) -> str:
        rows = ["snr_db,trials,errors,p_err,ci95,mse"]
        for i, s in enumerate(self.snr_db):
            rows.append(
                f"{float(s)!r},{self.trials},{self.errors[i]},{self.p_err[i]!r},"
                f"{self.ci95[i]!r},{self.mse[i] / mse_scale!r}"
            )
        return "\n".join(rows) + "\n"


def _detect_batch(sc: Scenario, Y: np.ndarray, rho: float) -> tuple[np.ndarray, np.ndarray | None]:
    """Detected indices (and phase estimates for phase-unknown regimes)."""
    G = sc.beamset
    Phi = sc.sent_mapping.Phi
    if sc.regime in ("nocsi", "partial", "full"):
        c = detect.correlate(Y, G, Phi)
        if sc.regime == "full":
            return np.argmax(c.real, axis=-1), None
        n = np.argmax(np.abs(c), axis=-1)
        cw = np.take_along_axis(c, n[:, None], axis=-1)[:, 0]
        return n, -np.angle(cw)
    if sc.regime == "calibrated":
        s = detect.calibrated_scores(Y, Phi, sc.channel.uplink_set, rho, sc.channel.uplink_phase)
        return np.argmax(s, axis=-1), None
    det = sc.detector
    if det == "rayleigh":
        s = detect.rayleigh_scores(Y, Phi)
    elif det == "los_concentrated":
        s = detect.los_concentrated_scores(Y, Phi, sc.grid_size, G.beta)
    else:
        s = detect.los_integral_scores(Y, Phi, rho, det == "los_integral", sc.nodes, G.beta)
    return np.argmax(s, axis=-1), None


def _run_block(sc: Scenario, block: int, seed: int, rhos, noiseless: bool):
    """Per-trial error flags and squared errors, each of shape ``(len(rhos), BLOCK)``."""
    G = sc.beamset
    Phi = sc.sent_mapping.Phi
    M, tau = G.M, Phi.shape[0]
    errs = np.empty((len(rhos), BLOCK), dtype=bool)
    sq = np.empty((len(rhos), BLOCK))
    per_rho = sc.channel.model == "aoa"
    ch = W = None
    for i, rho in enumerate(rhos):
        if ch is None or per_rho:
            # identical generator state per SNR point keeps the draws common
            rng = np.random.default_rng([seed, block])
            ch = draw_channels(sc.channel, G, rng, BLOCK, rho=rho)
            W = np.zeros((BLOCK, M, tau), complex) if noiseless else complex_normal(rng, (BLOCK, M, tau))
        q = ch.quantized_index
        h = ch.h_uplink
        if sc.compensated:
            h = h * np.exp(-1j * ch.theta)[:, None]
        Y = math.sqrt(rho) * h[:, :, None] * Phi[:, q].T[:, None, :] + W
        n_hat, theta_hat = _detect_batch(sc, Y, rho)
        errs[i] = n_hat != q
        est = G.G[:, n_hat].T
        if theta_hat is not None:
            # compare against the effective channel exp(i theta) g
            est = np.exp(1j * theta_hat)[:, None] * est
            ref = np.exp(1j * ch.theta)[:, None] * ch.g_true
        else:
            ref = ch.g_true
        d = ref - est
        sq[i] = np.sum(d.real**2 + d.imag**2, axis=1)
    return errs, sq


def run_trial(sc: Scenario, rho: float, trial_index: int, seed: int, noiseless: bool = False) -> tuple[bool, float]:
    """Outcome of trial ``trial_index``: (detection error, squared channel error)."""
    if trial_index < 0:
        raise ValueError("trial_index must be non-negative")
    b, k = divmod(trial_index, BLOCK)
    errs, sq = _run_block(sc, b, seed, [rho], noiseless)
    return bool(errs[0, k]), float(sq[0, k])


def sweep(
    sc: Scenario,
    snr_db_grid,
    trials: int,
    seed: int,
    threads: int = 1,
    noiseless: bool = False,
) -> SimResult:
    """Error rate and MSE at each SNR (dB) from ``trials`` independent trials."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    snr_db = [float(s) for s in snr_db_grid]
    rhos = [float(r) for r in db2lin(snr_db)]
    n_blocks = -(-trials // BLOCK)

    def work(b):
        errs, sq = _run_block(sc, b, seed, rhos, noiseless)
        k = min(BLOCK, trials - b * BLOCK)
        return errs[:, :k].sum(axis=1), sq[:, :k].sum(axis=1)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, range(n_blocks)))
    else:
        parts = [work(b) for b in range(n_blocks)]
    errors = np.zeros(len(rhos), dtype=np.int64)
    sq_sum = np.zeros(len(rhos))
    for e, s in parts:  # fixed block order keeps float sums reproducible
        errors += e
        sq_sum += s
    return SimResult(snr_db, trials, [int(e) for e in errors], [float(s / trials) for s in sq_sum], seed)


def snr_at_error_rate(res: SimResult, target: float) -> float:
    """SNR (dB) where the error-rate curve first drops to ``target``, by log-linear interpolation.

    Returns ``inf`` if the curve never reaches the target and ``-inf`` if it
    starts below it.
    """
    p = res.p_err
    if p[0] <= target:
        return -math.inf
    for i in range(1, len(p)):
        if p[i] <= target:
            x0, x1 = res.snr_db[i - 1], res.snr_db[i]
            if p[i] == 0:
                return x1
            y0, y1, yt = math.log(p[i - 1]), math.log(p[i]), math.log(target)
            return x0 + (yt - y0) * (x1 - x0) / (y1 - y0)
    return math.inf


def pair_alpha(beamset: BeamSet, mapping: SequenceMap, n: int, n2: int) -> complex:
    """Normalized coupling ``phi_n^H phi_n2 g_n^H g_n2 / (M beta)``."""
    P, G = mapping.Phi, beamset.G
    return complex(np.vdot(P[:, n], P[:, n2]) * np.vdot(G[:, n], G[:, n2]) / beamset.norm2)


def pep_crosscheck(
    pair: tuple[int, int],
    mapping: SequenceMap,
    beamset: BeamSet,
    regime: str,
    rho: float,
    trials: int,
    seed: int,
    block: int = 65536,
) -> tuple[float, float]:
    """Monte Carlo frequency of a single pairwise error event next to its analytic value.

    Beam ``n`` is true; the event is that candidate ``n2`` beats it under the
    real-part (``known``), magnitude (``unknown``) or energy (``rayleigh``)
    statistic.
    """
    if regime not in CROSSCHECK_REGIMES:
        raise ValueError(f"unknown cross-check regime {regime!r}")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    n, n2 = pair
    G, P = beamset.G, mapping.Phi
    M, beta = beamset.M, beamset.beta
    Gp = G[:, [n, n2]]
    Pp = P[:, [n, n2]]
    hits = 0
    done = 0
    b = 0
    while done < trials:
        k = min(block, trials - done)
        rng = np.random.default_rng([seed, b])
        if regime == "rayleigh":
            h = math.sqrt(beta) * complex_normal(rng, (k, M))
        elif regime == "unknown":
            theta = rng.uniform(-np.pi, np.pi, k)
            h = np.exp(1j * theta)[:, None] * G[:, n]
        else:
            h = np.broadcast_to(G[:, n], (k, M))
        W = complex_normal(rng, (k, M, P.shape[0]))
        Y = math.sqrt(rho) * h[:, :, None] * P[:, n][None, None, :] + W
        if regime == "rayleigh":
            s = detect.rayleigh_scores(Y, Pp)
        else:
            c = detect.correlate(Y, Gp, Pp)
            s = c.real if regime == "known" else np.abs(c)
        hits += int(np.count_nonzero(s[:, 1] > s[:, 0]))
        done += k
        b += 1
    mc = hits / trials

    if regime == "rayleigh":
        a = abs(np.vdot(P[:, n], P[:, n2]))
        analytic = pep_nonreciprocal_rayleigh(rho * beta, M, min(a, 1.0))
    else:
        q = PepQuery(rho, M, beta, pair_alpha(beamset, mapping, n, n2))
        analytic = pep_known_phase(q) if regime == "known" else pep_unknown_phase(q)
    return mc, analytic
