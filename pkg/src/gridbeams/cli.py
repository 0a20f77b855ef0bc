"""Command-line front end.

Settings come from an INI file (``--config``) with per-topic sections;
``--set section.key=value`` and the dedicated flags override file values.
See README.md for the recognised keys.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import os
import platform
import sys
import tempfile

import numpy as np
import scipy

from . import __version__
from .beamworld import (
    BeamSet,
    ChannelKind,
    dft_beamset,
    grassmann_packing,
    load_beamset,
    save_beamset,
)
from .pep import PepQuery, pep_known_phase, pep_nonreciprocal_rayleigh, pep_unknown_phase
from .seqmap import (
    METRICS,
    CorrelationMatrix,
    kpsca,
    load_mapping,
    metric_mu_K,
    metric_mu_NR,
    metric_mu_U,
    orthogonal_mapping,
    save_mapping,
    sga,
    upsca,
)
from .sim import Scenario, db2lin, sweep

DEFAULTS = {
    "run": {"seed": "0", "threads": "1", "trials": "10000", "snr_db": "0,5,10,15,20"},
    "beamset": {"source": "dft", "M": "10", "N": "70", "beta": "1", "iters": "2000"},
    "mapping": {"source": "os", "tau": "3", "metric": "mu_K", "dist": "white", "iters": "1000"},
    "scenario": {
        "regime": "full",
        "channel": "ongrid",
        "sigma2": "0",
        "aoa_scale": "0.1",
        "uplink": "reciprocal",
        "uplink_phase": "false",
        "grid_size": "1024",
        "nodes": "257",
        "normalize_mse": "false",
    },
    "pep": {"evaluator": "known", "alpha": "0", "M": "10", "beta": "1"},
}


class UsageError(Exception):
    pass


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.replace(";", ",").split(",") if x.strip()]


def load_config(path: str | None, overrides: list[str]) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    cfg.optionxform = str  # keys are case sensitive (M vs m)
    cfg.read_dict(DEFAULTS)
    if path is not None:
        if not os.path.exists(path):
            raise UsageError(f"config file not found: {path}")
        cfg.read(path, encoding="utf-8")
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or not name:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        if not cfg.has_section(section):
            cfg.add_section(section)
        cfg.set(section, name, value)
    return cfg


def config_text(cfg: configparser.ConfigParser) -> str:
    """Canonical rendering used for hashing; the worker count is left out since it cannot change results."""
    lines = []
    for s in sorted(cfg.sections()):
        for k in sorted(cfg[s]):
            if (s, k) == ("run", "threads"):
                continue
            lines.append(f"{s}.{k}={cfg[s][k]}")
    return "\n".join(lines) + "\n"


def build_beamset(cfg) -> BeamSet:
    b = cfg["beamset"]
    src = b.get("source")
    if src == "dft":
        return dft_beamset(b.getint("M"), b.getint("N"), b.getfloat("beta"))
    if src == "grassmann":
        return grassmann_packing(
            b.getint("M"), b.getint("N"), b.getfloat("beta"), b.getint("iters"), b.getint("seed", cfg["run"].getint("seed"))
        )
    if src == "file":
        if "path" not in b:
            raise UsageError("beamset.path is required for source=file")
        return load_beamset(b["path"])
    raise UsageError(f"unknown beamset.source {src!r}")


def _correlation(dist: str, G: BeamSet):
    if dist == "white":
        return "white"
    if dist == "upsca":
        return upsca(G)
    if dist == "kpsca":
        return kpsca(G)
    raise UsageError(f"unknown mapping.dist {dist!r}")


def _metric_name(cfg) -> str:
    m = cfg["mapping"]["metric"]
    if m not in METRICS:
        raise UsageError(f"unknown metric {m!r}; choose from {', '.join(METRICS)}")
    return m


def build_mapping(cfg, G: BeamSet):
    m = cfg["mapping"]
    src = m.get("source")
    if src == "os":
        return orthogonal_mapping(G.N, m.getint("tau"))
    if src == "file":
        if "path" not in m:
            raise UsageError("mapping.path is required for source=file")
        P = load_mapping(m["path"])
        if P.N != G.N:
            raise UsageError(f"mapping has {P.N} columns but the beam set has {G.N}")
        return P
    if src == "sga":
        P, _ = sga(
            G,
            _metric_name(cfg),
            _correlation(m["dist"], G),
            m.getint("tau"),
            m.getint("iters"),
            m.getint("seed", cfg["run"].getint("seed")),
        )
        return P
    raise UsageError(f"unknown mapping.source {src!r}")


def build_scenario(cfg) -> Scenario:
    G = build_beamset(cfg)
    P = build_mapping(cfg, G)
    s = cfg["scenario"]
    uplink_set = None
    if s["uplink"] == "calibrated":
        path = s.get("uplink_set", "beamset")
        uplink_set = G if path == "beamset" else load_beamset(path)
    kind = ChannelKind(
        model=s["channel"],
        sigma2=s.getfloat("sigma2"),
        aoa_scale=s.getfloat("aoa_scale"),
        uplink=s["uplink"],
        uplink_set=uplink_set,
        uplink_phase=s.getboolean("uplink_phase"),
    )
    return Scenario(
        s["regime"], kind, G, P, s.get("detector"), s.getint("grid_size"), s.getint("nodes")
    )


class Outputs:
    """Files written atomically; all of them are removed if the command fails."""

    def __init__(self):
        self.done: list[str] = []

    def write(self, path: str, writer) -> None:
        d = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
        os.close(fd)
        try:
            writer(tmp)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise
        self.done.append(path)

    def text(self, path: str, s: str) -> None:
        def w(p):
            with open(p, "w", encoding="utf-8", newline="\n") as f:
                f.write(s)

        self.write(path, w)

    def rollback(self) -> None:
        for p in self.done:
            if os.path.exists(p):
                os.remove(p)
        self.done.clear()


def _require_out(args) -> str:
    if not args.out:
        raise UsageError(f"{args.command} needs --out")
    return args.out


def cmd_beamset(args, cfg, out: Outputs) -> int:
    G = build_beamset(cfg)
    out.write(_require_out(args), lambda p: save_beamset(G, p))
    print(f"wrote beam set M={G.M} N={G.N} beta={G.beta!r}")
    return 0


def cmd_metrics(args, cfg, out: Outputs) -> int:
    G = build_beamset(cfg)
    P = build_mapping(cfg, G)
    vals = {"mu_U": metric_mu_U(G, P), "mu_K": metric_mu_K(G, P), "mu_NR": metric_mu_NR(P)}
    for k, v in vals.items():
        print(f"{k} = {v:.6f}")
    if args.out:
        row = ",".join(repr(float(v)) for v in vals.values())
        out.text(args.out, "mu_U,mu_K,mu_NR\n" + row + "\n")
    return 0


def cmd_design(args, cfg, out: Outputs) -> int:
    path = _require_out(args)
    G = build_beamset(cfg)
    m = cfg["mapping"]
    dist = _correlation(m["dist"], G)
    if isinstance(dist, CorrelationMatrix) and dist.R.shape[0] != G.N:
        raise UsageError("correlation matrix size does not match N")
    P, best, trace = sga(
        G,
        _metric_name(cfg),
        dist,
        m.getint("tau"),
        m.getint("iters"),
        m.getint("seed", cfg["run"].getint("seed")),
        return_trace=True,
    )
    out.write(path, lambda p: save_mapping(P, p))
    # only iterations where the best value changed, plus the last one
    keep = np.flatnonzero(np.r_[True, trace[1:] < trace[:-1]])
    if keep[-1] != len(trace) - 1:
        keep = np.r_[keep, len(trace) - 1]
    rows = ["iteration,best_metric"] + [f"{i + 1},{float(trace[i])!r}" for i in keep]
    out.text(m.get("trace", path + ".trace.csv"), "\n".join(rows) + "\n")
    print(f"{m['metric']} = {best:.6f}")
    return 0


def _parse_alpha(s: str) -> complex:
    try:
        return complex(s.replace(" ", "").replace("i", "j"))
    except ValueError as exc:
        raise UsageError(f"cannot parse alpha value {s!r}") from exc


def cmd_pep(args, cfg, out: Outputs) -> int:
    p = cfg["pep"]
    ev = p["evaluator"]
    if ev not in ("known", "unknown", "rayleigh"):
        raise UsageError(f"unknown pep.evaluator {ev!r}")
    M, beta = p.getint("M"), p.getfloat("beta")
    alphas = [_parse_alpha(a) for a in p["alpha"].split(",") if a.strip()]
    snr = _floats(cfg["run"]["snr_db"])
    rows = ["snr_db,alpha_re,alpha_im_or_mag,pep"]
    for s in snr:
        rho = float(db2lin(s))
        for a in alphas:
            if ev == "rayleigh":
                mag = abs(a)
                if mag >= 1:
                    raise UsageError("|alpha| must be below 1")
                v = pep_nonreciprocal_rayleigh(rho * beta, M, mag)
                second = mag
            else:
                if ev == "unknown" and abs(a) >= 1:
                    raise UsageError("|alpha| must be below 1")
                q = PepQuery(rho, M, beta, a)
                v = pep_known_phase(q) if ev == "known" else pep_unknown_phase(q)
                second = a.imag
            rows.append(f"{s!r},{a.real!r},{second!r},{v!r}")
    text = "\n".join(rows) + "\n"
    if args.out:
        out.text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_simulate(args, cfg, out: Outputs) -> int:
    r = cfg["run"]
    trials = r.getint("trials")
    if trials < 1:
        raise UsageError("trials must be at least 1")
    threads = r.getint("threads")
    if threads < 1:
        raise UsageError("threads must be at least 1")
    snr = _floats(r["snr_db"])
    if not snr:
        raise UsageError("snr_db list is empty")
    try:
        sc = build_scenario(cfg)
    except ValueError as exc:
        raise UsageError(f"invalid scenario: {exc}") from exc
    seed = r.getint("seed")
    res = sweep(sc, snr, trials, seed, threads)
    scale = sc.beamset.norm2 if cfg["scenario"].getboolean("normalize_mse") else 1.0
    csv = res.to_csv(scale)
    if args.out:
        out.text(args.out, csv)
        meta = [
            f"seed={seed}",
            f"config_sha256={hashlib.sha256(config_text(cfg).encode()).hexdigest()}",
            f"gridbeams={__version__}",
            f"numpy={np.__version__}",
            f"scipy={scipy.__version__}",
            f"python={platform.python_version()}",
        ]
        out.text(args.out + ".meta", "\n".join(meta) + "\n" + config_text(cfg))
    else:
        sys.stdout.write(csv)
    return 0


COMMANDS = {
    "beamset": cmd_beamset,
    "metrics": cmd_metrics,
    "design": cmd_design,
    "pep": cmd_pep,
    "simulate": cmd_simulate,
}


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridbeams", description="Grid-of-beams detection experiments.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI file with run settings")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output file")
        sp.add_argument("--trials", type=int)
        sp.add_argument("--snr-db", help="comma-separated SNR list in dB")
        sp.add_argument("--threads", type=int)
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    return ap


def main(argv=None) -> int:
    ap = make_parser()
    args = ap.parse_args(argv)
    overrides = list(args.set)
    for flag, key in (("seed", "seed"), ("trials", "trials"), ("snr_db", "snr_db"), ("threads", "threads")):
        v = getattr(args, flag)
        if v is not None:
            overrides.append(f"run.{key}={v}")
    out = Outputs()
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](args, cfg, out)
    except UsageError as exc:
        out.rollback()
        ap.error(str(exc))  # exits with status 2
    except (ValueError, OSError, KeyError) as exc:
        out.rollback()
        print(f"gridbeams {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except BaseException:
        out.rollback()
        raise


if __name__ == "__main__":
    sys.exit(main())
