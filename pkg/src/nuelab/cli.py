"""Experiment runner: one subcommand per pipeline, INI configs, CSV artifacts.

Config format (plain sectioned key=value, ``#`` comments)::

    [experiment]
    kind = density            # optional; must match the subcommand if given

    [map]
    name = example            # doubling, circle, tent, chebyshev, identity, example
    a = 0.05                  # family parameters (k, a, q, r_V, space)

    [constants]
    lam = 0.5                 # any BaseConstants field

    [run]
    seed = 0                  # any RunConfig field

Unknown sections or keys are rejected.  Every run writes its CSVs and a
``manifest.json`` (config hash, seed, versions, wall time, file hashes) into
the output directory.  Exit codes: 0 success, 2 validation failure or bad
config, 3 numeric non-convergence.

Heavy modules are imported inside the runners so that ``--threads`` can cap
the BLAS/OpenMP pools before numpy is loaded.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NONCONVERGED = 3

COMMANDS = (
    "validate-map", "pliss", "hyptimes", "tail", "frequency", "constants",
    "tower", "validate-tower", "r-stability", "density", "stability",
)
MAP_NAMES = ("doubling", "circle", "tent", "chebyshev", "identity", "example")
MAP_KEYS = {"name", "k", "a", "q", "r_V", "space"}
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")


class ConfigError(ValueError):
    pass


class ValidationFailure(RuntimeError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "out"
    # Monte Carlo sizes and horizons
    samples: int = 2000
    horizon: int = 200
    # pliss
    instances: int = 1000
    N: int = 200
    c1: float = 0.5
    c2: float = 1.0
    A: float = 2.0
    # hyperbolic times (sigma also drives the tower); defaults: ledger sigma, counting theta
    sigma: Optional[float] = None
    theta: Optional[float] = None
    x0: tuple = ()
    center: tuple = ()
    radius: float = 1.0
    # densities
    grid: int = 256
    samples_per_cell: int = 16
    tol: float = 1e-10
    pipeline: str = "direct"
    # tower
    delta0: float = 0.06
    cells: int = 512  # grid cells across the diameter of Delta_0
    n_max: int = 200
    N0_cap: int = 12
    R0: int = 0
    delta1: Optional[float] = None
    base_p: tuple = ()
    validate_samples: int = 16
    pushforward_samples: int = 4
    # parameter sweeps and certification
    a0: float = 0.0
    a_list: tuple = ()
    a_max: Optional[float] = None
    cert_grid: int = 512

    def check(self):
        positive = ("samples", "horizon", "instances", "N", "grid", "samples_per_cell", "cells",
                    "n_max", "validate_samples", "pushforward_samples", "cert_grid")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"run.{name} must be >= 1")
        if self.seed < 0:
            raise ConfigError("run.seed must be >= 0")
        if not 0 < self.c1 < self.c2 < self.A:
            raise ConfigError("run needs 0 < c1 < c2 < A")
        if self.sigma is not None and not 0 < self.sigma < 1:
            raise ConfigError("run.sigma must lie in (0, 1)")
        if self.theta is not None and not 0 < self.theta <= 1:
            raise ConfigError("run.theta must lie in (0, 1]")
        if not 0 < self.delta0 < 0.25:
            raise ConfigError("run.delta0 must lie in (0, 0.25)")
        if not 0 < self.tol < 1:
            raise ConfigError("run.tol must lie in (0, 1)")
        if self.R0 < 0 or self.N0_cap < 0:
            raise ConfigError("run.R0 and run.N0_cap must be >= 0")
        if self.radius <= 0:
            raise ConfigError("run.radius must be positive")
        if self.pipeline not in ("direct", "tower"):
            raise ConfigError("run.pipeline must be 'direct' or 'tower'")


@dataclass
class MapBlock:
    name: str = "doubling"
    params: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    kind: Optional[str] = None
    map: MapBlock = field(default_factory=MapBlock)
    constants: dict = field(default_factory=dict)
    run: RunConfig = field(default_factory=RunConfig)

    def canonical(self) -> str:
        d = {"kind": self.kind, "map": asdict(self.map), "constants": self.constants, "run": asdict(self.run)}
        return json.dumps(d, sort_keys=True, default=list)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _convert(cls, name: str, text: str):
    f = {f.name: f for f in fields(cls)}[name]
    t = str(f.type)
    try:
        if t == "tuple":
            return _floats(text)
        if text.strip().lower() in ("", "none") and "Optional" in t:
            return None
        if "int" in t:
            return int(text)
        if "float" in t:
            return float(text)
        return text.strip()
    except ValueError:
        raise ConfigError(f"cannot read {name} = {text!r} as {t}") from None


def load_config(path) -> ExperimentConfig:
    from .constants import BaseConstants

    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str  # keys are case-sensitive (N, A, r_V)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as e:
        raise ConfigError(f"config {path} does not parse: {e}") from None

    unknown = set(cp.sections()) - {"experiment", "map", "constants", "run"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    cfg = ExperimentConfig()

    if cp.has_section("experiment"):
        extra = set(cp["experiment"]) - {"kind"}
        if extra:
            raise ConfigError(f"unknown keys in [experiment]: {sorted(extra)}")
        kind = cp["experiment"].get("kind")
        if kind is not None and kind not in COMMANDS:
            raise ConfigError(f"experiment.kind {kind!r} is not one of {COMMANDS}")
        cfg.kind = kind

    if cp.has_section("map"):
        sec = cp["map"]
        extra = set(sec) - MAP_KEYS
        if extra:
            raise ConfigError(f"unknown keys in [map]: {sorted(extra)}")
        name = sec.get("name", "doubling")
        if name not in MAP_NAMES:
            raise ConfigError(f"map.name {name!r} is not one of {MAP_NAMES}")
        params = {}
        for k in sec:
            if k == "name":
                continue
            if k == "q":
                params[k] = _floats(sec[k])
            elif k == "space":
                params[k] = sec[k].strip()
            else:
                try:
                    params[k] = int(sec[k]) if k == "k" else float(sec[k])
                except ValueError:
                    raise ConfigError(f"cannot read map.{k} = {sec[k]!r}") from None
        cfg.map = MapBlock(name, params)

    if cp.has_section("constants"):
        names = {f.name: f for f in fields(BaseConstants)}
        extra = set(cp["constants"]) - set(names)
        if extra:
            raise ConfigError(f"unknown keys in [constants]: {sorted(extra)}")
        for k, v in cp["constants"].items():
            try:
                cfg.constants[k] = int(v) if k == "p_count" else float(v)
            except ValueError:
                raise ConfigError(f"cannot read constants.{k} = {v!r}") from None

    if cp.has_section("run"):
        names = {f.name for f in fields(RunConfig)}
        extra = set(cp["run"]) - names
        if extra:
            raise ConfigError(f"unknown keys in [run]: {sorted(extra)}")
        cfg.run = RunConfig(**{k: _convert(RunConfig, k, v) for k, v in cp["run"].items()})
    cfg.run.check()
    return cfg


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def _cell(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


class Artifacts:
    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.files: dict = {}
        out_dir.mkdir(parents=True, exist_ok=True)

    def csv(self, name: str, header, rows, preamble=()):
        path = self.dir / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in preamble:
                fh.write(line + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(v) for v in r])
        self.files[name] = hashlib.sha256(path.read_bytes()).hexdigest()

    def summary(self, rows):
        self.csv("summary.csv", ["quantity", "value"], rows)


def _versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {"python": platform.python_version(), "numpy": numpy.__version__, "scipy": scipy.__version__,
            "nuelab": __version__}


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------


def _base(cfg: ExperimentConfig):
    from .constants import BaseConstants

    try:
        return BaseConstants(**cfg.constants)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"constants block rejected: {e}") from None


def _ledger(cfg: ExperimentConfig):
    from .constants import build_ledger

    return build_ledger(_base(cfg))


def _map(cfg: ExperimentConfig, **override):
    from .maps import map_from_name

    params = {**cfg.map.params, **override}
    return map_from_name(cfg.map.name, params)


def _family(cfg: ExperimentConfig):
    from .maps import ExampleFamilyConfig

    if cfg.map.name != "example":
        raise ConfigError("this experiment needs map.name = example")
    p = cfg.map.params
    return ExampleFamilyConfig(k=int(p.get("k", 3)), a=float(p.get("a", 0.0)),
                               q=tuple(p.get("q", (0.5, 0.5))), r_V=float(p.get("r_V", 0.15)))


def _a_max(cfg: ExperimentConfig) -> float:
    from .maps import certify_amplitude

    if cfg.run.a_max is not None:
        return cfg.run.a_max
    b = _base(cfg)
    return certify_amplitude(_family(cfg), b.sigma0, b.sigma1, b.delta_V, cfg.run.cert_grid)


def _disk(cfg: ExperimentConfig, m, ledger):
    """Base disk: preimage search on the undeformed map, constants on m."""
    from .maps import example_base
    from .tower import BaseDisk, choose_base_point, measure_branch_constants

    r = cfg.run
    delta1 = ledger.delta1 if r.delta1 is None else r.delta1
    search = example_base(int(cfg.map.params.get("k", 3))) if cfg.map.name == "example" else m
    cand = [r.base_p] if r.base_p else None
    d = choose_base_point(search, delta1, r.N0_cap, delta0=r.delta0, candidates=cand, seed=r.seed)
    if search is m:
        return d
    K0, D0 = measure_branch_constants(m, d.p, r.delta0, d.N0, seed=r.seed)
    return BaseDisk(d.p, r.delta0, d.N0, K0, D0, d.periodic)


def _partition(cfg: ExperimentConfig, m, ledger, disk, seed=None):
    from .constants import derive_eps_collar
    from .tower import build_partition

    r = cfg.run
    sigma = ledger.sigma if r.sigma is None else r.sigma
    eps = derive_eps_collar(disk.K0, sigma, disk.N0, disk.delta0)
    return build_partition(m, ledger, disk, 2.0 * disk.delta0 / r.cells, r.n_max,
                           R0=r.R0, sigma=sigma, eps=eps, seed=r.seed if seed is None else seed)


def _hypconfig(cfg: ExperimentConfig, ledger):
    from .hyptimes import HypConfig

    b = ledger.base
    sigma = ledger.sigma if cfg.run.sigma is None else cfg.run.sigma
    return HypConfig(sigma, delta_hyp=b.delta_hyp, b=b.b, lam=b.lam, eps_rec=ledger.eps_rec,
                     delta_rec=b.delta_hyp, beta=b.beta)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def run_validate_map(cfg, art):
    from .maps import ConditionReport, validate_nondegeneracy, verify_example_conditions

    m = _map(cfg)
    rep = validate_nondegeneracy(m, cfg.run.samples, cfg.run.seed)
    rows = rep.csv_rows()
    passed = rep.passed
    if cfg.map.name == "example":
        b = _base(cfg)
        fam = _family(cfg)
        ex = verify_example_conditions(m, fam.q, fam.r_V, b.sigma0, b.sigma1, b.delta_V, cfg.run.cert_grid)
        rows += ex.csv_rows()
        passed = passed and ex.passed
    art.csv("validate_map.csv", ConditionReport.header, rows)
    if not passed:
        bad = [r[0] for r in rows if not r[4]]
        raise ValidationFailure(f"map conditions violated: {bad}")


def run_pliss(cfg, art):
    import numpy as np

    from .pliss import PlissProblem, pliss_bruteforce, pliss_times
    from .rng import make_rng

    r = cfg.run
    rng = make_rng(r.seed, 5)
    rows, bad = [], []
    for i in range(r.instances):
        N = int(rng.integers(1, r.N + 1))
        a = rng.uniform(r.c1 - (r.A - r.c1), r.A, N)
        p = PlissProblem(a, r.c1, r.c2, r.A)
        fast, slow = pliss_times(p), pliss_bruteforce(p)
        agree = fast.indices == slow.indices
        bound_ok = (not fast.guarantee_applies) or fast.count > fast.theta * N
        rows.append([i, N, fast.count, fast.theta * N, fast.guarantee_applies, agree, bound_ok])
        if not (agree and bound_ok):
            bad.append(i)
    art.csv("pliss.csv", ["instance", "N", "count", "theta_N", "hypotheses", "agree", "bound_ok"], rows)
    if bad:
        raise ValidationFailure(f"pliss selection disagrees or misses the bound on instances {bad[:10]}")


def run_hyptimes(cfg, art):
    from .hyptimes import hyperbolic_times, trace_orbit

    m = _map(cfg)
    led = _ledger(cfg)
    x0 = cfg.run.x0 or tuple([0.1234] * m.dim)
    if len(x0) != m.dim:
        raise ConfigError(f"run.x0 needs {m.dim} coordinates")
    t = trace_orbit(m, x0 if m.dim > 1 else x0[0], cfg.run.horizon)
    if t.singular:
        raise ValidationFailure("orbit hits the critical set")
    hyp = set(hyperbolic_times(t, _hypconfig(cfg, led)))
    rows = [[n + 1, (n + 1) in hyp, float(t.log_inv_norm[n]), float(t.crit_dist[n])] for n in range(t.n)]
    art.csv("hyptimes.csv", ["n", "hyperbolic", "log_inv_norm", "crit_dist"], rows)
    art.summary([["count", len(hyp)], ["frequency", len(hyp) / t.n], ["sigma", _hypconfig(cfg, led).sigma]])


def run_tail(cfg, art):
    from .hyptimes import TailEstimate, tail_measure

    m = _map(cfg)
    est = tail_measure(m, _hypconfig(cfg, _ledger(cfg)), cfg.run.horizon, cfg.run.samples, cfg.run.seed)
    art.csv("tail.csv", TailEstimate.header, est.csv_rows())
    art.summary([["gamma_hat", est.gamma_hat], ["C_hat", est.C_hat], ["fit_r2", est.fit_r2],
                 ["censored_fraction", est.censored_fraction], ["notice", est.notice]])


def run_frequency(cfg, art):
    import numpy as np

    from .hyptimes import FrequencyReport, frequency_check
    from .maps import theta_from_counting

    m = _map(cfg)
    led = _ledger(cfg)
    b = led.base
    theta = cfg.run.theta if cfg.run.theta is not None else theta_from_counting(b.p_count, b.sigma1)
    mid = np.broadcast_to(0.5 * (np.asarray(m.space.lo) + np.asarray(m.space.hi)), (m.dim,))
    center = cfg.run.center or tuple(float(v) for v in mid)
    rep = frequency_check(m, center, cfg.run.radius, _hypconfig(cfg, led), cfg.run.horizon,
                          cfg.run.samples, cfg.run.seed, theta)
    art.csv("frequency.csv", FrequencyReport.header, rep.csv_rows())
    art.summary([["average", rep.average], ["stderr", rep.stderr], ["theta", rep.theta],
                 ["margin", rep.margin], ["passed", rep.passed]])
    if not rep.passed:
        raise ValidationFailure(f"hyperbolic-time frequency {rep.average} below theta/2 - 2 stderr")


def run_constants(cfg, art):
    led = _ledger(cfg)
    art.csv("ledger.csv", ["name", "value", "provenance"], led.csv_rows())
    if not led.admissible:
        raise ValidationFailure(f"inadmissible ledger: {led.reasons}")


def _tower(cfg):
    m = _map(cfg)
    led = _ledger(cfg)
    disk = _disk(cfg, m, led)
    return _partition(cfg, m, led, disk)


def run_tower(cfg, art):
    from .tower import ReturnTimeStats, return_time_stats

    P = _tower(cfg)
    art.csv("partition.csv", ["cell_id", "x", "y", "status", "R_or_t"], P.csv_rows(), P.csv_header())
    st = return_time_stats(P)
    art.csv("return_times.csv", ReturnTimeStats.header, st.csv_rows())
    rows = [["a0", st.a0], ["b0", st.b0], ["c0", st.c0], ["c1", st.c1], ["a1", st.a1], ["c2", st.c2],
            ["censored_fraction", P.censored_fraction], ["elements", len(P.elements)],
            ["exp_rate", st.exp_rate], ["gamma_hat", st.gamma_hat], ["notice", st.notice]]
    rows += [[f"check:{k}", v[1]] for k, v in st.checks.items()]
    art.summary(rows)
    if not st.passed:
        raise ValidationFailure(f"metric estimates fail: {[k for k, v in st.checks.items() if not v[0]]}")


def run_validate_tower(cfg, art):
    from .tower import InducedMapReport, validate_induced_map

    P = _tower(cfg)
    rep = validate_induced_map(P, cfg.run.validate_samples, cfg.run.seed)
    art.csv("induced_map.csv", InducedMapReport.header, rep.csv_rows())
    art.summary([["expansion_ok", rep.expansion_ok], ["distortion_ok", rep.distortion_ok],
                 ["markov_ok", rep.markov_ok], ["max_distortion", rep.max_distortion],
                 ["max_inv_norm", rep.max_inv_norm]])
    if not rep.passed:
        raise ValidationFailure("induced map fails the expansion, distortion or Markov check")


def run_r_stability(cfg, art):
    from .tower import RStabilityTable, stability_of_R

    r = cfg.run
    if not r.a_list:
        raise ConfigError("r-stability needs run.a_list")
    a_max = _a_max(cfg)
    for a in (r.a0, *r.a_list):
        if not 0 <= a <= a_max:
            raise ConfigError(f"a={a} outside the certified range [0, {a_max}]")
    led = _ledger(cfg)
    disk = _disk(cfg, _map(cfg, a=r.a0), led)
    tab = stability_of_R(lambda a: _partition(cfg, _map(cfg, a=a), led, disk), r.a0, r.a_list)
    art.csv("r_stability.csv", RStabilityTable.header, tab.csv_rows())


def run_density(cfg, art):
    from .density import (Grid, induced_density_and_pushforward, invariance_residual, l1_distance,
                          stationary_density, transfer_matrix, uniform_density)

    r = cfg.run
    m = _map(cfg)
    grid = Grid.regular(m.space, r.grid)
    if r.pipeline == "direct":
        T = transfer_matrix(m, grid, r.samples_per_cell, r.seed)
        h = stationary_density(T, r.tol)
        residual = invariance_residual(T, h)
        extra = []
    else:
        pf = induced_density_and_pushforward(_tower(cfg), grid, samples_per_element=r.pushforward_samples,
                                             seed=r.seed)
        h, residual = pf.mu, pf.mu_F_residual
        extra = [["conservation_error", pf.conservation_error], ["escaped_mass", pf.escaped_mass],
                 ["censored_fraction", pf.censored_fraction]]
    art.csv("density.csv", h.header, h.csv_rows())
    art.csv("summary.csv", ["pipeline", "cells", "residual", "l1_to_uniform"],
            [[r.pipeline, grid.size, residual, l1_distance(h, uniform_density(grid))]])
    if extra:
        art.csv("pushforward.csv", ["quantity", "value"], extra)


def run_stability(cfg, art):
    from .density import Grid, induced_density_and_pushforward, stability_sweep
    from .maps import TORUS

    r = cfg.run
    fam = _family(cfg)
    a_list = r.a_list or (r.a0,)
    grid = Grid.regular(TORUS, r.grid)
    tower_density = None
    if r.pipeline == "tower":
        led = _ledger(cfg)
        disk = _disk(cfg, _map(cfg, a=r.a0), led)

        def tower_density(m, s):
            return induced_density_and_pushforward(_partition(cfg, m, led, disk, s), grid,
                                                   samples_per_element=r.pushforward_samples, seed=s).mu

    curve = stability_sweep(fam, r.a0, a_list, grid, r.pipeline, r.seed, a_max=_a_max(cfg),
                            samples_per_cell=r.samples_per_cell, tol=r.tol, tower_density=tower_density)
    art.csv("stability.csv", curve.header, curve.csv_rows())
    art.summary([["spearman", curve.spearman], ["floor", curve.floor],
                 *[[f"floor:{k}", v] for k, v in curve.floor_parts.items()],
                 ["below_floor_at_smallest", curve.below_floor_at_smallest]])


RUNNERS = {
    "validate-map": run_validate_map,
    "pliss": run_pliss,
    "hyptimes": run_hyptimes,
    "tail": run_tail,
    "frequency": run_frequency,
    "constants": run_constants,
    "tower": run_tower,
    "validate-tower": run_validate_tower,
    "r-stability": run_r_stability,
    "density": run_density,
    "stability": run_stability,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nuelab", description="Numerical laboratory for non-uniformly expanding maps.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("config_path", nargs="?", help="config file (same as --config)")
    ap.add_argument("--config", dest="config_opt")
    ap.add_argument("--seed", type=int, help="override run.seed")
    ap.add_argument("--threads", type=int, help="cap BLAS/OpenMP worker threads")
    ap.add_argument("--deterministic", action="store_true", help="single-threaded, bit-reproducible run")
    ap.add_argument("--out-dir", help="override run.out_dir")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    path = args.config_opt or args.config_path
    threads = 1 if args.deterministic else args.threads
    if threads is not None:
        if threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_INVALID
        for v in THREAD_VARS:
            os.environ[v] = str(threads)
    try:
        cfg = load_config(path) if path else ExperimentConfig()
        if cfg.kind is not None and cfg.kind != args.command:
            raise ConfigError(f"config is for {cfg.kind!r}, not {args.command!r}")
        if args.seed is not None:
            cfg.run.seed = args.seed
        if args.out_dir is not None:
            cfg.run.out_dir = args.out_dir
        cfg.run.check()
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID

    from .density import NonConvergence
    from .maps import DegenerateMapError
    from .tower import CollarViolation, NoBasePoint

    art = Artifacts(Path(cfg.run.out_dir))
    t0 = time.perf_counter()
    code, message = EXIT_OK, "ok"
    try:
        RUNNERS[args.command](cfg, art)
    except NonConvergence as e:
        code, message = EXIT_NONCONVERGED, f"non-convergence: {e}"
    except (ConfigError, ValidationFailure, DegenerateMapError, NoBasePoint, CollarViolation, ValueError) as e:
        code, message = EXIT_INVALID, str(e)
    wall = time.perf_counter() - t0
    manifest = {
        "command": args.command,
        "config": str(path) if path else None,
        "config_sha256": hashlib.sha256(cfg.canonical().encode()).hexdigest(),
        "seed": cfg.run.seed,
        "deterministic": bool(args.deterministic),
        "threads": threads,
        "versions": _versions(),
        "wall_time_s": wall,
        "exit_code": code,
        "message": message,
        "files": dict(sorted(art.files.items())),
    }
    with open(art.dir / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if code != EXIT_OK:
        print(f"error: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
