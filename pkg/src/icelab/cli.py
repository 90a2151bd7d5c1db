"""Command line driver: configured experiments to JSONL records and CSV gates.

Each experiment samples height fields on one or more domains, derives
per-sample observables (heights at targets, increment profiles, loop
counts, crossing and annulus-circuit events), and writes

* ``<experiment>_records.jsonl``: one meta line, then one record per
  sample ordered by (chain_id, sample_index) within each domain size;
* ``<experiment>_summary.csv``: one row per derived quantity, with the
  acceptance gate it feeds and a pass flag.

Records are byte-identical across reruns with the same configuration:
chain streams are derived from (seed, N, chain_id) alone, the worker
pool only schedules whole chains, and no wall-clock data is written.
``replay`` rebuilds a summary from stored records without resampling,
pooling several record files if given; a corrupted line is reported
with its file and line number.  See docs/records_schema.md for the row
layout, and the module constants below for gate thresholds.

Exit codes: 0 all gates pass, 1 a gate fails, 2 bad configuration,
3 unreadable or corrupted records / unwritable output.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable

import numpy as np
from scipy.stats import chi2

from ._mix import derive_seed
from .heightfield import BoundaryCondition, HeightField, zero_bc
from .lattice import EvenDomain, Region, Vertex, annulus_region, build_even_domain, \
    rectangle_region
from .loops import annulus_loop_event, count_in_annulus, extract_loop_family, \
    outermost_zero_loop
from .martingale import profile, separation_scale
from .sampler import RunSpec, calibrate, cftp_sample, enumerate_uniform, glauber_run
from .stats import StepDistribution, ballot_dp, crossing_eq_cross, crossing_geq, \
    normal_distance, paired_covariance, spearman_trend, \
    truncated_square_covariance, variance_fit

__all__ = [
    "ConfigError",
    "RecordError",
    "ExperimentConfig",
    "load_config",
    "run_experiment",
    "summarize",
    "read_records",
    "replay",
    "main",
]

SCHEMA_VERSION = 1
N_CHAINS = 16

EXPERIMENTS = ("uniformity", "variance", "clt", "rsw", "loops", "fkg",
               "decoupling", "coupling_failure", "ballot", "multipoint")

EXIT_OK, EXIT_GATE, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

# Level for both crossing events.  The loop-count ladder starts at
# max(2, N // 8) and doubles three times, reaching the near-boundary
# shell where level circuits actually live at these sizes; the
# zero-circuit ladder starts at max(2, N // 16) and stays interior so
# its third width is not trivially full.  "Few loops" means fewer than
# a/3 circuits in the a-th annulus (c = 1/3, frozen from the pilot
# run).  Crossing-count tail ratios are measured where at least
# TAIL_MIN_COUNT samples remain and gated at TAIL_RATIO_MAX.
CROSSING_LEVEL = 2
FEW_LOOP_C = Fraction(1, 3)
TAIL_MIN_COUNT = 20
TAIL_RATIO_MAX = 0.9

_Z95 = 1.6448536269514722  # one-sided 95% normal quantile

_DEFAULT_N: dict[str, tuple[int, ...]] = {
    "uniformity": (0,),
    "variance": (8, 16, 32, 64),
    "clt": (16, 32, 64),
    "rsw": (8, 16, 32),
    "loops": (64,),
    "fkg": (32,),
    "decoupling": (64,),
    "coupling_failure": (64,),
    "ballot": (64,),
    "multipoint": (16, 64),
}

_DEFAULT_TARGETS: dict[str, tuple[tuple[float, float], ...]] = {
    "fkg": ((-0.25, 0.0), (0.25, 0.0)),
    "multipoint": ((-0.5, 0.0), (0.5, 0.0)),
}

_ROW_KEYS = ("schema_version", "experiment", "N", "chain_id", "sample_index",
             "seed", "sampler", "phi_at_targets", "deltas", "truncated",
             "residual", "loop_counts", "event_flags", "ballot", "timing")


class ConfigError(Exception):
    """Invalid experiment configuration."""


class RecordError(Exception):
    """Unreadable or corrupted record file."""


# -- configuration -------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    N_list: tuple[int, ...]
    samples_per_N: int = 1000
    seed: int = 0
    workers: int = 1
    sampler: str = "glauber"
    burn_in: int | str = "auto"
    thinning: int | str = "auto"
    targets: tuple[tuple[float, float], ...] = ((0.0, 0.0),)
    output_dir: str = "icelab_out"


def _domain_radius(experiment: str, N: int) -> int:
    # Crossing and annulus events at scale n need room around the
    # queried window, so the rsw run samples D_{2n}.
    return 2 * N if experiment == "rsw" else N


def load_config(path: str | None, experiment: str,
                overrides: dict[str, Any]) -> ExperimentConfig:
    """Merge config file and command line overrides, then validate."""
    data: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    if "experiment" in data and data["experiment"] != experiment:
        raise ConfigError(
            f"config file is for {data['experiment']!r}, not {experiment!r}")
    data["experiment"] = experiment
    data.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    data.setdefault("N_list", _DEFAULT_N[experiment])
    data.setdefault("targets", _DEFAULT_TARGETS.get(experiment, ((0.0, 0.0),)))
    try:
        data["N_list"] = tuple(int(n) for n in data["N_list"])
        data["targets"] = tuple((float(x), float(y)) for x, y in data["targets"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed N_list or targets: {exc}") from exc
    cfg = ExperimentConfig(**data)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}")
    if not isinstance(cfg.samples_per_N, int) or cfg.samples_per_N < 1:
        raise ConfigError("samples_per_N must be a positive integer")
    if not isinstance(cfg.workers, int) or cfg.workers < 1:
        raise ConfigError("workers must be a positive integer")
    if not isinstance(cfg.seed, int):
        raise ConfigError("seed must be an integer")
    if cfg.sampler not in ("glauber", "cftp"):
        raise ConfigError(f"unknown sampler {cfg.sampler!r}")
    for name in ("burn_in", "thinning"):
        v = getattr(cfg, name)
        if v == "auto":
            continue
        if not isinstance(v, int) or v < 0 or (name == "thinning" and v < 1):
            raise ConfigError(f"{name} must be 'auto' or a nonnegative integer")
    if not cfg.N_list:
        raise ConfigError("N_list must not be empty")
    if cfg.experiment == "uniformity":
        if cfg.N_list != (0,):
            raise ConfigError("uniformity runs on the minimal domain: N_list must be [0]")
    else:
        bad = [n for n in cfg.N_list if n < 2 or n % 2]
        if bad:
            raise ConfigError(f"N must be even and >= 2, got {bad}")
    if len(set(cfg.N_list)) != len(cfg.N_list):
        raise ConfigError("N_list has repeated entries")
    if cfg.experiment in ("loops", "coupling_failure"):
        small = [n for n in cfg.N_list if n < 16]
        if small:
            raise ConfigError(
                f"annulus ladder needs N >= 16, got {small}")
    if cfg.sampler == "cftp":
        worst = max(_domain_radius(cfg.experiment, n) for n in cfg.N_list)
        if worst > 12:
            raise ConfigError(
                f"cftp is limited to domain radius 12, this run needs {worst}")
    if cfg.experiment in ("fkg", "multipoint") and len(cfg.targets) != 2:
        raise ConfigError(f"{cfg.experiment} needs exactly two targets")
    if not cfg.targets:
        raise ConfigError("targets must not be empty")
    for t in cfg.targets:
        if max(abs(t[0]), abs(t[1])) > 1.0:
            raise ConfigError(f"target fractions must lie in [-1, 1], got {t}")


def _resolve_target(frac: tuple[float, float], N: int) -> Vertex:
    """Nearest even vertex to (fx*N, fy*N), snapping x toward the origin."""
    x, y = int(round(frac[0] * N)), int(round(frac[1] * N))
    if (x + y) % 2:
        x += -1 if x > 0 else 1
    return (x, y)


# -- per-size geometry and sample derivation -----------------------------


@dataclass
class _Geometry:
    domain: EvenDomain
    bc: BoundaryCondition
    targets: list[Vertex]
    rect: Region | None = None
    event_n: int | None = None
    annuli: dict[str, Region] | None = None
    derive: Callable[[HeightField], dict[str, Any]] | None = None


def _geometry(cfg: ExperimentConfig, N: int) -> _Geometry:
    dom = build_even_domain((0, 0), _domain_radius(cfg.experiment, N))
    bc = zero_bc(dom)
    geo = _Geometry(domain=dom, bc=bc, targets=[])
    exp = cfg.experiment
    if exp == "uniformity":
        geo.targets = sorted(dom.interior())
        geo.derive = lambda f: {
            "phi_at_targets": [int(f.value(v)) for v in geo.targets]}
    elif exp in ("variance", "decoupling"):
        geo.targets = [_resolve_target(cfg.targets[0], N)]
        geo.derive = lambda f: _derive_profile(f, geo.targets[0], N)
    elif exp == "clt":
        geo.targets = [_resolve_target(cfg.targets[0], N)]
        geo.derive = lambda f: {
            "phi_at_targets": [int(f.value(geo.targets[0]))]}
    elif exp in ("fkg", "multipoint"):
        geo.targets = [_resolve_target(t, N) for t in cfg.targets]
        if len(set(geo.targets)) != len(geo.targets):
            raise ConfigError(f"targets coincide after snapping at N={N}")
        geo.derive = lambda f: {
            "phi_at_targets": [int(f.value(v)) for v in geo.targets]}
    elif exp == "rsw":
        # Square window with margin N to the boundary of D_2N: the
        # crossing theorem wants distance >= eps*n between window and
        # boundary, and the square is the piloted aspect whose h = 2
        # diagonal crossings stay inside the gate band at desk scale.
        geo.rect = rectangle_region(N, N)
        geo.event_n = N
        geo.derive = lambda f: {"event_flags": {
            "crossing_geq": bool(crossing_geq(f, geo.rect, CROSSING_LEVEL)),
            "crossing_eq_cross": bool(
                crossing_eq_cross(f, geo.rect, CROSSING_LEVEL)),
            "annulus_loop": bool(annulus_loop_event(f, geo.event_n)),
        }}
    elif exp == "loops":
        geo.targets = [(0, 0)]
        geo.annuli = _annulus_ladder(N, max(2, N >> 3))
        geo.derive = lambda f: _derive_loop_counts(f, geo)
    elif exp == "coupling_failure":
        geo.targets = [(0, 0)]
        geo.annuli = _annulus_ladder(N, max(2, N >> 4))
        geo.derive = lambda f: {"event_flags": {
            f"no_zero_loop_{key}": outermost_zero_loop(f, (0, 0), ann) is None
            for key, ann in geo.annuli.items()}}
    else:
        raise ConfigError(f"experiment {exp!r} does not sample fields")
    for v in geo.targets:
        if not dom.contains(v):
            raise ConfigError(f"target {v} lies outside D_{N}")
    return geo


def _annulus_ladder(N: int, k: int) -> dict[str, Region]:
    return {f"{k}:{k << a}": annulus_region((0, 0), k, k << a)
            for a in (1, 2, 3)}


def _derive_profile(field: HeightField, target: Vertex, N: int) -> dict[str, Any]:
    p = profile(field, target, N)
    return {
        "phi_at_targets": [int(p.target_height)],
        "deltas": [int(d) for d in p.deltas],
        "truncated": [int(t) for t in p.truncated],
        "residual": int(p.residual),
    }


def _derive_loop_counts(field: HeightField, geo: _Geometry) -> dict[str, Any]:
    fam = extract_loop_family(field, geo.targets[0])
    return {"loop_counts": {
        key: [int(c) for c in count_in_annulus(fam, ann)]
        for key, ann in geo.annuli.items()}}


# -- sampling ------------------------------------------------------------


def _chain_counts(total: int) -> list[int]:
    base, rem = divmod(total, N_CHAINS)
    return [base + 1 if c < rem else base for c in range(N_CHAINS)]


def _base_row(experiment: str, N: int, chain_id: int, index: int,
              stream: int, sampler: str) -> dict[str, Any]:
    row = dict.fromkeys(_ROW_KEYS)
    row.update(schema_version=SCHEMA_VERSION, experiment=experiment, N=N,
               chain_id=chain_id, sample_index=index, seed=int(stream),
               sampler=sampler)
    return row


def _run_chain(cfg: ExperimentConfig, N: int, geo: _Geometry, sampler: str,
               chain_id: int, count: int, burn: int, thin: int) -> list[dict[str, Any]]:
    """All records of one chain; pure function of (cfg.seed, N, chain_id)."""
    rows: list[dict[str, Any]] = []
    base_seed = derive_seed(cfg.seed, N)
    if sampler == "glauber":
        spec = RunSpec(seed=base_seed, chain_id=chain_id, burn_in_sweeps=burn,
                       thinning_sweeps=thin, n_samples=count)
        stream = derive_seed(base_seed, chain_id)
        for i, f in enumerate(glauber_run(geo.domain, geo.bc, spec)):
            row = _base_row(cfg.experiment, N, chain_id, i, stream, sampler)
            row["timing"] = {"sweeps": thin + (burn if i == 0 else 0)}
            row.update(geo.derive(f))
            rows.append(row)
    else:
        chain_seed = derive_seed(base_seed, chain_id)
        for i in range(count):
            f = cftp_sample(geo.domain, geo.bc, chain_seed, chain_id=i)
            row = _base_row(cfg.experiment, N, chain_id, i,
                            derive_seed(chain_seed, i), sampler)
            row["timing"] = None
            row.update(geo.derive(f))
            rows.append(row)
    return rows


def _resolve_sweeps(cfg: ExperimentConfig, geo: _Geometry, N: int) -> tuple[int, int]:
    if cfg.burn_in == "auto" or cfg.thinning == "auto":
        # Calibration gets the chain id just past the sampling chains so
        # its pilot stream never overlaps chain 0.
        cal = calibrate(geo.domain, geo.bc,
                        derive_seed(derive_seed(cfg.seed, N), N_CHAINS))
        burn = cal["burn_in_sweeps"] if cfg.burn_in == "auto" else cfg.burn_in
        thin = cal["thinning_sweeps"] if cfg.thinning == "auto" else cfg.thinning
        return burn, thin
    return cfg.burn_in, cfg.thinning


def run_experiment(cfg: ExperimentConfig) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    """Sample every configured size and return (meta, records)."""
    if cfg.experiment == "ballot":
        return _run_ballot(cfg)
    resolved: dict[str, Any] = {}
    rows: list[dict[str, Any]] = []
    for N in cfg.N_list:
        geo = _geometry(cfg, N)
        samplers = ("cftp", "glauber") if cfg.experiment == "uniformity" \
            else (cfg.sampler,)
        burn = thin = None
        if "glauber" in samplers:
            burn, thin = _resolve_sweeps(cfg, geo, N)
        counts = _chain_counts(cfg.samples_per_N)
        block: dict[str, Any] = {
            "domain_radius": _domain_radius(cfg.experiment, N),
            "targets": [list(v) for v in geo.targets],
            "samplers": list(samplers),
            "burn_in": burn,
            "thinning": thin,
            "chain_samples": counts,
        }
        if geo.annuli is not None:
            block["annuli"] = sorted(geo.annuli)
        if cfg.experiment == "multipoint":
            block["separation_scale"] = separation_scale(geo.targets, N)
        resolved[f"N={N}"] = block
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            for sampler in samplers:
                futures = [
                    pool.submit(_run_chain, cfg, N, geo, sampler, c,
                                counts[c], burn or 0, thin or 1)
                    for c in range(N_CHAINS) if counts[c] > 0]
                for fut in futures:
                    rows.extend(fut.result())
    return _meta(cfg, resolved), rows


def _run_ballot(cfg: ExperimentConfig) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    n_max = max(cfg.N_list)
    step = StepDistribution((-1, 1), (0.5, 0.5))
    rows = []
    for i, n in enumerate(range(2, n_max + 1)):
        p = ballot_dp(step, n)
        row = _base_row("ballot", n, 0, i, cfg.seed, "none")
        row["ballot"] = {"n": n, "p_exact": str(Fraction(p)),
                         "p_float": float(p),
                         "p_sqrt_n": float(p) * math.sqrt(n)}
        rows.append(row)
    resolved = {"step": {"support": [-1, 1], "probabilities": [0.5, 0.5]},
                "n_max": n_max}
    return _meta(cfg, resolved), rows


def _meta(cfg: ExperimentConfig, resolved: dict[str, Any]) -> dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "meta",
        "experiment": cfg.experiment,
        "config": {
            "experiment": cfg.experiment,
            "N_list": list(cfg.N_list),
            "samples_per_N": cfg.samples_per_N,
            "seed": cfg.seed,
            "workers": cfg.workers,
            "sampler": cfg.sampler,
            "burn_in": cfg.burn_in,
            "thinning": cfg.thinning,
            "targets": [list(t) for t in cfg.targets],
            "output_dir": cfg.output_dir,
        },
        "chains": N_CHAINS,
        "resolved": resolved,
    }


# -- summaries -----------------------------------------------------------


def _srow(criterion: int | None, experiment: str, check: str, N: int | None,
          value: float, stderr: float | None, n: int | None,
          gate: str, passed: bool | None) -> dict[str, Any]:
    return {"criterion": criterion, "experiment": experiment, "check": check,
            "N": N, "value": value, "stderr": stderr, "n_samples": n,
            "gate": gate, "passed": passed}


def _prop_rows(rows: list[dict[str, Any]], flag: str) -> np.ndarray:
    return np.asarray([r["event_flags"][flag] for r in rows], dtype=bool)


def _by_N(rows: list[dict[str, Any]]) -> dict[int, list[dict[str, Any]]]:
    out: dict[int, list[dict[str, Any]]] = {}
    for r in rows:
        out.setdefault(r["N"], []).append(r)
    return out


def _paired_decrease_z(hi: np.ndarray, lo: np.ndarray) -> float:
    """One-sided z that P[hi] > P[lo], hi/lo observed on the same samples."""
    d = hi.astype(np.float64) - lo.astype(np.float64)
    n = d.size
    if n < 2 or np.all(d == d[0]):
        return 0.0 if d[0] == 0 else math.inf
    return float(d.mean() / (d.std(ddof=1) / math.sqrt(n)))


def _variance_of(phis: np.ndarray) -> tuple[float, float]:
    v = float(phis.var())
    m4 = float(((phis - phis.mean()) ** 4).mean())
    se = math.sqrt(max(m4 - v * v, 0.0) / phis.size)
    return v, se


def summarize(experiment: str, rows: list[dict[str, Any]],
              meta: dict[str, Any]) -> list[dict[str, Any]]:
    """Pure recomputation of the summary table from records."""
    fn = {
        "uniformity": _summarize_uniformity,
        "variance": _summarize_variance,
        "clt": _summarize_clt,
        "rsw": _summarize_rsw,
        "loops": _summarize_loops,
        "fkg": _summarize_fkg,
        "decoupling": _summarize_decoupling,
        "coupling_failure": _summarize_coupling_failure,
        "ballot": _summarize_ballot,
        "multipoint": _summarize_multipoint,
    }[experiment]
    return fn(rows, meta)


def _summarize_uniformity(rows, meta):
    dom = build_even_domain((0, 0), 0)
    bc = zero_bc(dom)
    targets = [tuple(v) for v in meta["resolved"]["N=0"]["targets"]]
    reference = enumerate_uniform(dom, bc)
    keys = sorted(tuple(int(f.value(v)) for v in targets) for f in reference)
    n_states = len(keys)
    exact_var = float(np.mean([f.value((0, 0)) ** 2 for f in reference])
                      - np.mean([f.value((0, 0)) for f in reference]) ** 2)
    center = targets.index((0, 0))
    out = [_srow(1, "uniformity", "enumeration_count", 0, n_states, None,
                 None, "== 18", n_states == 18)]
    for sampler in ("cftp", "glauber"):
        sub = [r for r in rows if r["sampler"] == sampler]
        if not sub:
            continue
        counts = {k: 0 for k in keys}
        alien = 0
        for r in sub:
            k = tuple(r["phi_at_targets"])
            if k in counts:
                counts[k] += 1
            else:
                alien += 1
        n = len(sub)
        expect = n / n_states
        stat = sum((c - expect) ** 2 / expect for c in counts.values())
        p = float(chi2.sf(stat, n_states - 1)) if alien == 0 else 0.0
        out.append(_srow(1, "uniformity", f"chi2_p[{sampler}]", 0, p, None, n,
                         "> 0.001", p > 0.001 and alien == 0))
        phis = np.asarray([r["phi_at_targets"][center] for r in sub], float)
        v, se = _variance_of(phis)
        ok = abs(v - exact_var) <= 3 * se
        out.append(_srow(1, "uniformity", f"var_center[{sampler}]", 0, v, se,
                         n, f"within 3 stderr of {exact_var:.6g}", ok))
    return out


def _telescoping_rows(experiment, rows):
    checked = failed = 0
    for r in rows:
        phi = r["phi_at_targets"][0]
        deltas, residual = r["deltas"], r["residual"]
        checked += len(deltas) + 2
        if sum(deltas) + residual != phi or residual % 2 \
                or any(d % 2 for d in deltas):
            failed += 1
    return _srow(4, experiment, "telescoping_and_parity", None, checked, None,
                 len(rows), "no violations", failed == 0)


def _summarize_variance(rows, meta):
    groups = _by_N(rows)
    sizes = sorted(groups)
    out = [_telescoping_rows("variance", rows)]
    points = []
    for N in sizes:
        phis = np.asarray([r["phi_at_targets"][0] for r in groups[N]], float)
        v, se = _variance_of(phis)
        points.append((N, v))
        out.append(_srow(6, "variance", "var_phi", N, v, se, phis.size,
                         "reported", None))
    variances = [v for _, v in points]
    increasing = all(b > a for a, b in zip(variances, variances[1:]))
    out.append(_srow(6, "variance", "var_strictly_increasing", None,
                     min(b - a for a, b in zip(variances, variances[1:]))
                     if len(variances) > 1 else 0.0,
                     None, len(rows), "> 0", increasing))
    if len(sizes) >= 3:
        slope, _, max_rel = variance_fit(points)
        out.append(_srow(6, "variance", "log_slope", None, slope, None,
                         len(rows), "> 0", slope > 0))
        out.append(_srow(6, "variance", "max_rel_residual", None, max_rel,
                         None, len(rows), "<= 0.15", max_rel <= 0.15))
    return out


def _summarize_clt(rows, meta):
    groups = _by_N(rows)
    sizes = sorted(groups)
    out = []
    tvs = []
    for N in sizes:
        phis = [r["phi_at_targets"][0] for r in groups[N]]
        tv, ks = normal_distance(phis)
        tvs.append(tv)
        out.append(_srow(7, "clt", "tv_normal", N, tv, None, len(phis),
                         "reported", None))
        out.append(_srow(None, "clt", "ks_dithered", N, ks, None, len(phis),
                         "reported", None))
    if len(sizes) > 1:
        dec = all(b < a for a, b in zip(tvs, tvs[1:]))
        out.append(_srow(7, "clt", "tv_strictly_decreasing", None,
                         max(b - a for a, b in zip(tvs, tvs[1:])), None,
                         len(rows), "< 0", dec))
    out.append(_srow(7, "clt", "tv_at_largest_N", sizes[-1], tvs[-1], None,
                     len(groups[sizes[-1]]), "<= 0.08", tvs[-1] <= 0.08))
    return out


def _summarize_rsw(rows, meta):
    out = []
    for N, sub in sorted(_by_N(rows).items()):
        n = len(sub)
        for flag in ("crossing_geq", "crossing_eq_cross", "annulus_loop"):
            p = float(_prop_rows(sub, flag).mean())
            se = math.sqrt(p * (1 - p) / n)
            out.append(_srow(8, "rsw", f"p_{flag}", N, p, se, n,
                             "in [0.02, 0.98]", 0.02 <= p <= 0.98))
    return out


def _loop_arrays(rows):
    keys = sorted(rows[0]["loop_counts"],
                  key=lambda s: int(s.split(":")[1]))
    contained = {k: np.asarray([r["loop_counts"][k][0] for r in rows]) for k in keys}
    crossing = {k: np.asarray([r["loop_counts"][k][1] for r in rows]) for k in keys}
    return keys, contained, crossing


def _summarize_loops(rows, meta):
    keys, contained, crossing = _loop_arrays(rows)
    n = len(rows)
    out = []
    few = []
    for a, key in enumerate(keys, start=1):
        flag = contained[key] * FEW_LOOP_C.denominator < FEW_LOOP_C.numerator * a
        few.append(flag)
        p = float(flag.mean())
        out.append(_srow(9, "loops", f"p_few_loops[{key},c={FEW_LOOP_C}]",
                         None, p, math.sqrt(p * (1 - p) / n), n,
                         "reported", None))
    for a in range(len(few) - 1):
        z = _paired_decrease_z(few[a], few[a + 1])
        out.append(_srow(9, "loops", f"few_loops_decay[a={a + 1}->{a + 2}]",
                         None, z, None, n, f">= {_Z95:.3f}", z >= _Z95))
    tail_counts = np.bincount(crossing[keys[0]])
    tail = tail_counts[::-1].cumsum()[::-1]
    ratios = [float(tail[t + 1]) / float(tail[t]) for t in range(len(tail) - 1)
              if tail[t + 1] >= TAIL_MIN_COUNT]
    worst = max(ratios) if ratios else 0.0
    out.append(_srow(9, "loops", "crossing_tail_max_ratio", None,
                     worst, None, n, f"<= {TAIL_RATIO_MAX}",
                     worst <= TAIL_RATIO_MAX))
    return out


def _summarize_fkg(rows, meta):
    out = []
    for N, sub in sorted(_by_N(rows).items()):
        xs = np.asarray([r["phi_at_targets"][0] for r in sub], float)
        ys = np.asarray([r["phi_at_targets"][1] for r in sub], float)
        for label, a, b in (("phi", xs, ys), ("abs_phi", np.abs(xs), np.abs(ys))):
            est = paired_covariance(a, b)
            out.append(_srow(10, "fkg", f"cov_{label}", N, est.value,
                             est.stderr, est.n, ">= -3 stderr",
                             est.value >= -3 * est.stderr))
    return out


def _summarize_decoupling(rows, meta):
    out = [_telescoping_rows("decoupling", rows)]
    for N, sub in sorted(_by_N(rows).items()):
        cov, _ = truncated_square_covariance([r["truncated"] for r in sub])
        diag = np.sqrt(np.clip(np.diag(cov), 1e-30, None))
        norm = np.abs(cov) / np.outer(diag, diag)
        K = cov.shape[0]
        seps, vals = [], []
        for k in range(K):
            for l in range(k + 1, min(k + 5, K)):
                seps.append(l - k)
                vals.append(float(norm[k, l]))
        for s in sorted(set(seps)):
            mean_s = float(np.mean([v for p, v in zip(seps, vals) if p == s]))
            out.append(_srow(11, "decoupling", f"mean_norm_cov[sep={s}]", N,
                             mean_s, None, len(sub), "reported", None))
        if len(set(vals)) < 2:
            # All increments vanished (no level circuits in the sample):
            # there is no trend to certify, which is a failed gate, not a
            # crash.
            rho, p = math.nan, math.nan
        else:
            rho, p = spearman_trend(seps, vals)
        out.append(_srow(11, "decoupling", "spearman_rho", N, rho, None,
                         len(sub), "< 0", rho < 0))
        out.append(_srow(11, "decoupling", "spearman_p_decreasing", N, p,
                         None, len(sub), "<= 0.05", p <= 0.05))
    return out


def _summarize_coupling_failure(rows, meta):
    out = []
    for N, sub in sorted(_by_N(rows).items()):
        keys = sorted((k for k in sub[0]["event_flags"]),
                      key=lambda s: int(s.split(":")[1]))
        flags = [_prop_rows(sub, k) for k in keys]
        n = len(sub)
        for k, fl in zip(keys, flags):
            p = float(fl.mean())
            out.append(_srow(11, "coupling_failure", f"p_{k}", N, p,
                             math.sqrt(p * (1 - p) / n), n, "reported", None))
        for a in range(len(flags) - 1):
            z = _paired_decrease_z(flags[a], flags[a + 1])
            out.append(_srow(11, "coupling_failure",
                             f"absence_decay[{keys[a]}->{keys[a + 1]}]", N, z,
                             None, n, f">= {_Z95:.3f}", z >= _Z95))
    return out


def _summarize_ballot(rows, meta):
    ps = {r["ballot"]["n"]: Fraction(r["ballot"]["p_exact"]) for r in rows}
    out = []
    for n, expect in ((2, Fraction(1, 2)), (3, Fraction(1, 4)),
                      (5, Fraction(3, 16))):
        if n in ps:
            out.append(_srow(3, "ballot", f"p_{n}", n, float(ps[n]), None,
                             None, f"== {expect}", ps[n] == expect))
    band = [r["ballot"]["p_sqrt_n"] for r in rows if r["ballot"]["n"] >= 4]
    if band:
        ratio = max(band) / min(band)
        out.append(_srow(3, "ballot", "sqrt_band_ratio", max(ps), ratio, None,
                         None, "<= 4", ratio <= 4))
    return out


def _summarize_multipoint(rows, meta):
    groups = _by_N(rows)
    sizes = sorted(groups)
    out = []
    corrs = []
    for N in sizes:
        sub = groups[N]
        xs = np.asarray([r["phi_at_targets"][0] for r in sub], float)
        ys = np.asarray([r["phi_at_targets"][1] for r in sub], float)
        est = paired_covariance(xs, ys)
        denom = math.sqrt(float(xs.var()) * float(ys.var()))
        corr = abs(est.value) / denom if denom > 0 else 0.0
        corrs.append(corr)
        out.append(_srow(12, "multipoint", "abs_corr", N, corr,
                         est.stderr / denom if denom > 0 else None,
                         len(sub), "reported", None))
        block = meta["resolved"].get(f"N={N}", {})
        if "separation_scale" in block:
            out.append(_srow(None, "multipoint", "separation_scale", N,
                             block["separation_scale"], None, None,
                             "reported", None))
    if len(sizes) > 1:
        out.append(_srow(12, "multipoint", "corr_decreases", sizes[-1],
                         corrs[-1] - corrs[0], None, len(rows), "< 0",
                         corrs[-1] < corrs[0]))
    for j in (0, 1):
        phis = [r["phi_at_targets"][j] for r in groups[sizes[-1]]]
        tv, _ = normal_distance(phis)
        out.append(_srow(12, "multipoint", f"marginal_tv[target={j}]",
                         sizes[-1], tv, None, len(phis), "<= 0.08",
                         tv <= 0.08))
    return out


# -- record io -----------------------------------------------------------


def _records_path(out_dir: Path, experiment: str) -> Path:
    return out_dir / f"{experiment}_records.jsonl"


def _summary_path(out_dir: Path, experiment: str) -> Path:
    return out_dir / f"{experiment}_summary.csv"


def write_records(path: Path, meta: dict[str, Any],
                  rows: list[dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(meta, separators=(",", ":")) + "\n")
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def write_summary(path: Path, table: list[dict[str, Any]]) -> None:
    cols = ("criterion", "experiment", "check", "N", "value", "stderr",
            "n_samples", "gate", "passed")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in table:
            w.writerow([_fmt(row[c]) for c in cols])


def _check_row(obj: Any) -> str | None:
    if not isinstance(obj, dict):
        return "record is not an object"
    if obj.get("schema_version") != SCHEMA_VERSION:
        return f"schema_version {obj.get('schema_version')!r} != {SCHEMA_VERSION}"
    if obj.get("experiment") not in EXPERIMENTS:
        return f"unknown experiment {obj.get('experiment')!r}"
    for key in ("N", "chain_id", "sample_index", "seed"):
        if not isinstance(obj.get(key), int):
            return f"field {key} must be an integer"
    for key in ("phi_at_targets", "deltas", "truncated"):
        v = obj.get(key)
        if v is not None and not (isinstance(v, list)
                                  and all(isinstance(x, int) for x in v)):
            return f"field {key} must be null or a list of integers"
    if obj.get("residual") is not None and not isinstance(obj["residual"], int):
        return "field residual must be null or an integer"
    ev = obj.get("event_flags")
    if ev is not None and not (isinstance(ev, dict)
                               and all(isinstance(x, bool) for x in ev.values())):
        return "field event_flags must be null or a map to booleans"
    lc = obj.get("loop_counts")
    if lc is not None and not (isinstance(lc, dict) and all(
            isinstance(v, list) and len(v) == 2
            and all(isinstance(x, int) for x in v) for v in lc.values())):
        return "field loop_counts must be null or a map to [contained, crossing]"
    return None


def read_records(paths: list[str | Path]) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    """Validated meta and pooled rows; RecordError pinpoints corruption."""
    meta: dict[str, Any] | None = None
    rows: list[dict[str, Any]] = []
    for path in paths:
        try:
            with open(path, encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise RecordError(f"cannot read records {path}: {exc}") from exc
        if not lines:
            raise RecordError(f"{path}:1: empty record file")
        for lineno, line in enumerate(lines, start=1):
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(
                    f"corrupted record at {path}:{lineno}: {exc}") from exc
            if lineno == 1:
                if not isinstance(obj, dict) or obj.get("kind") != "meta":
                    raise RecordError(
                        f"corrupted record at {path}:1: missing meta line")
                if meta is None:
                    meta = obj
                elif obj.get("experiment") != meta.get("experiment"):
                    raise RecordError(
                        f"{path}:1: experiment {obj.get('experiment')!r} does "
                        f"not match {meta.get('experiment')!r}")
                continue
            problem = _check_row(obj)
            if problem is not None:
                raise RecordError(
                    f"corrupted record at {path}:{lineno}: {problem}")
            if obj["experiment"] != meta["experiment"]:
                raise RecordError(
                    f"corrupted record at {path}:{lineno}: experiment mismatch")
            rows.append(obj)
    if meta is None or not rows:
        raise RecordError("no records to replay")
    return meta, rows


def replay(paths: list[str | Path], out_dir: str | Path) -> int:
    """Recompute the summary from stored records; no resampling."""
    meta, rows = read_records(paths)
    table = summarize(meta["experiment"], rows, meta)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_summary(_summary_path(out, meta["experiment"]), table)
    return _report(table)


def _report(table: list[dict[str, Any]]) -> int:
    ok = True
    for row in table:
        if row["passed"] is None:
            continue
        status = "PASS" if row["passed"] else "FAIL"
        ok = ok and row["passed"]
        where = f" N={row['N']}" if row["N"] is not None else ""
        print(f"{status} [criterion {row['criterion']}] {row['check']}{where}: "
              f"value={_fmt(row['value'])} gate {row['gate']}")
    return EXIT_OK if ok else EXIT_GATE


# -- entry point ---------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="icelab",
        description="height function experiments on even domains")
    sub = ap.add_subparsers(dest="command", required=True)
    for exp in EXPERIMENTS:
        p = sub.add_parser(exp, help=f"run the {exp} experiment")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--N", type=int, nargs="+", dest="N_list",
                       help="domain sizes, overrides the config")
        p.add_argument("--samples", type=int, dest="samples_per_N")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--sampler", choices=("glauber", "cftp"))
        p.add_argument("--burn-in", dest="burn_in", type=_auto_int)
        p.add_argument("--thinning", type=_auto_int)
        p.add_argument("--out", dest="output_dir")
    rp = sub.add_parser("replay", help="recompute a summary from records")
    rp.add_argument("--records", nargs="+", required=True)
    rp.add_argument("--out", dest="output_dir", default="icelab_out")
    return ap


def _auto_int(text: str) -> int | str:
    return "auto" if text == "auto" else int(text)


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "replay":
        try:
            return replay(args.records, args.output_dir)
        except RecordError as exc:
            print(exc, file=sys.stderr)
            return EXIT_IO
        except OSError as exc:
            print(exc, file=sys.stderr)
            return EXIT_IO
    overrides = {k: getattr(args, k) for k in
                 ("N_list", "samples_per_N", "seed", "workers", "sampler",
                  "burn_in", "thinning", "output_dir")}
    if overrides["N_list"] is not None:
        overrides["N_list"] = tuple(overrides["N_list"])
    try:
        cfg = load_config(args.config, args.command, overrides)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        meta, rows = run_experiment(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_records(_records_path(out, cfg.experiment), meta, rows)
        table = summarize(cfg.experiment, rows, meta)
        write_summary(_summary_path(out, cfg.experiment), table)
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    return _report(table)


if __name__ == "__main__":
    sys.exit(main())
