"""Command-line front end.

    spare init      [-o FILE] [--n-groups N ...]
    spare analyze   --n-groups N [--redundancy R] [--node-mtbf M] ...
    spare montecarlo --n-groups N --redundancy 2-12 [--trials T] [--out FILE]
    spare simulate  SPEC [--out-dir DIR] [--workers K]

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import analytics, montecarlo
from .desim import REFERENCE_ALLREDUCE, ClusterConfig, ConfigError, Scheme, simulate
from .placement import OPTIMAL_RULERS, PlacementInfeasibleError, build_placement, min_groups

log = logging.getLogger("spare")

WORKERS_ENV = "SPARE_WORKERS"
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

MONTECARLO_HEADER = ["r", "mu_theory", "mu_sim", "stack_theory", "stack_sim"]
REPORT_HEADER = ["scheme", "N", "r", "trial", "ttt_ratio", "availability",
                 "mean_stacks", "restarts", "failures", "status"]

# ClusterConfig fields that live in the [cluster] section; the rest come from the sweep
CLUSTER_KEYS = [
    "node_mtbf", "weibull_shape", "restart_cost", "ckpt_save", "compute_per_stack",
    "failed_allreduce_factor", "shrink_cost", "controller_cost", "jitter_mean",
    "jitter_std", "horizon_steps", "max_ttt_ratio", "ckpt_interval_steps",
]
_FIELD_TYPES = {"horizon_steps": int, "ckpt_interval_steps": int}


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------

def parse_int_list(text: str) -> list[int]:
    """'2-5, 8' -> [2, 3, 4, 5, 8]."""
    out: list[int] = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            lo_i, hi_i = int(lo), int(hi)
            if hi_i < lo_i:
                raise UsageError(f"empty range {part!r}")
            out.extend(range(lo_i, hi_i + 1))
        else:
            out.append(int(part))
    return out


def format_int_list(values: Sequence[int]) -> str:
    values = list(values)
    if len(values) > 2 and values == list(range(values[0], values[-1] + 1)):
        return f"{values[0]}-{values[-1]}"
    return ", ".join(str(v) for v in values)


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.replace(" ", "").split(",") if x]


def _fmt(value: float) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


def supported_redundancies(n_groups: int) -> list[int]:
    """Every r for which an optimal-ruler placement fits on N groups."""
    out = []
    for r in sorted(OPTIMAL_RULERS):
        if r <= n_groups and n_groups >= min_groups(r):
            try:
                build_placement(n_groups, r)
            except PlacementInfeasibleError:
                continue
            out.append(r)
    return out


# ---------------------------------------------------------------------------
# experiment spec
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    base: ClusterConfig = field(default_factory=ClusterConfig)
    schemes: tuple[Scheme, ...] = (Scheme.SPARE_CKPT, Scheme.REP_CKPT, Scheme.CKPT_ONLY)
    n_groups: tuple[int, ...] = (200,)
    allreduce_time: tuple[float, ...] = (2.0,)
    spare_redundancy: tuple[int, ...] = tuple(range(2, 13))
    rep_redundancy: tuple[int, ...] = (2, 3, 4)
    trials: int = 3
    base_seed: int = 0

    @classmethod
    def reference(cls, n_groups: Sequence[int] = (200,)) -> "ExperimentSpec":
        n_groups = tuple(n_groups)
        spare_r = sorted(set.intersection(*(set(supported_redundancies(n)) for n in n_groups)))
        return cls(
            n_groups=n_groups,
            allreduce_time=tuple(REFERENCE_ALLREDUCE.get(n, 2.0) for n in n_groups),
            spare_redundancy=tuple(spare_r),
        )

    def cells(self) -> list[ClusterConfig]:
        """All sweep cells in deterministic (scheme, N, r) order; validated."""
        if not self.schemes or not self.n_groups:
            raise ConfigError("empty sweep: need at least one scheme and one n_groups value")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if len(self.allreduce_time) != len(self.n_groups):
            raise ConfigError("allreduce_time must pair one value with each n_groups entry")
        out = []
        for scheme in self.schemes:
            rs = {Scheme.SPARE_CKPT: self.spare_redundancy,
                  Scheme.REP_CKPT: self.rep_redundancy,
                  Scheme.CKPT_ONLY: (1,)}[scheme]
            if not rs:
                raise ConfigError(f"empty redundancy list for {scheme.value}")
            for n, t_a in zip(self.n_groups, self.allreduce_time):
                for r in rs:
                    out.append(replace(self.base, scheme=scheme, n_groups=n,
                                       allreduce_time=t_a, redundancy=r))
        return out

    # -- INI round trip ------------------------------------------------------

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cluster = {}
        for key in CLUSTER_KEYS:
            value = getattr(self.base, key)
            if value is not None:
                cluster[key] = _fmt(value)
        cp["cluster"] = cluster
        cp["sweep"] = {
            "schemes": ", ".join(s.value for s in self.schemes),
            "n_groups": ", ".join(str(n) for n in self.n_groups),
            "allreduce_time": ", ".join(_fmt(t) for t in self.allreduce_time),
            "spare_ckpt_redundancy": format_int_list(self.spare_redundancy),
            "rep_ckpt_redundancy": format_int_list(self.rep_redundancy),
            "trials": str(self.trials),
            "base_seed": str(self.base_seed),
        }
        buf = io.StringIO()
        buf.write("# SPARe experiment spec. Durations in seconds.\n"
                  "# allreduce_time pairs element-wise with n_groups.\n"
                  "# Optional [cluster] keys: max_ttt_ratio, ckpt_interval_steps.\n\n")
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentSpec":
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed spec: {exc}") from exc
        for section in cp.sections():
            if section not in ("cluster", "sweep"):
                raise ConfigError(f"unknown section [{section}]")
        overrides: dict[str, Any] = {}
        if cp.has_section("cluster"):
            for key, raw in cp["cluster"].items():
                if key not in CLUSTER_KEYS:
                    raise ConfigError(f"unknown [cluster] key {key!r}")
                try:
                    overrides[key] = _FIELD_TYPES.get(key, float)(raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        if not cp.has_section("sweep"):
            raise ConfigError("missing [sweep] section")
        sw = cp["sweep"]
        known = {"schemes", "n_groups", "allreduce_time", "spare_ckpt_redundancy",
                 "rep_ckpt_redundancy", "trials", "base_seed"}
        unknown = set(sw.keys()) - known
        if unknown:
            raise ConfigError(f"unknown [sweep] keys: {sorted(unknown)}")
        try:
            schemes = tuple(Scheme(s.strip()) for s in sw.get("schemes", "").split(",") if s.strip())
            n_groups = tuple(parse_int_list(sw.get("n_groups", "")))
            if "allreduce_time" in sw:
                t_a = tuple(_float_list(sw["allreduce_time"]))
            else:
                t_a = tuple(REFERENCE_ALLREDUCE.get(n, 2.0) for n in n_groups)
            spec = cls(
                base=replace(ClusterConfig(), **overrides),
                schemes=schemes,
                n_groups=n_groups,
                allreduce_time=t_a,
                spare_redundancy=tuple(parse_int_list(sw.get("spare_ckpt_redundancy", ""))),
                rep_redundancy=tuple(parse_int_list(sw.get("rep_ckpt_redundancy", ""))),
                trials=int(sw.get("trials", "1")),
                base_seed=int(sw.get("base_seed", "0")),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        for cell in spec.cells():
            cell.validate()
        return spec


# ---------------------------------------------------------------------------
# sweep runner
# ---------------------------------------------------------------------------

def trial_seed(base_seed: int, trial: int) -> int:
    """Run seed derived only from (base_seed, trial index)."""
    return int(np.random.SeedSequence([base_seed, trial]).generate_state(1, np.uint64)[0])


def _run_cell(job: tuple[int, int, ClusterConfig]) -> tuple[int, int, dict | str]:
    cell, trial, config = job
    try:
        return cell, trial, simulate(config).to_dict()
    except Exception as exc:  # recorded per cell, not fatal for the sweep
        return cell, trial, f"{type(exc).__name__}: {exc}"


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer %s=%r", WORKERS_ENV, env)
    return os.cpu_count() or 1


def run_sweep(spec: ExperimentSpec, workers: int = 1) -> list[tuple[ClusterConfig, int, dict | str]]:
    cells = spec.cells()
    jobs = [(c, t, replace(cfg, seed=trial_seed(spec.base_seed, t)))
            for c, cfg in enumerate(cells) for t in range(spec.trials)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_cell(job))
            log.info("cell %s N=%d r=%d trial %d done", job[2].scheme.value,
                     job[2].n_groups, job[2].redundancy, job[1])
    results.sort(key=lambda x: (x[0], x[1]))
    return [(cells[c], t, res) for c, t, res in results]


def report_rows(results) -> tuple[list[dict], list[dict]]:
    """Per-trial rows and one aggregate row per cell (trial = 'mean')."""
    rows: list[dict] = []
    aggregates: list[dict] = []
    by_cell: dict[tuple, list[dict]] = {}
    for cfg, trial, res in results:
        r = cfg.redundancy if cfg.scheme is not Scheme.CKPT_ONLY else 1
        key = (cfg.scheme.value, cfg.n_groups, r)
        if isinstance(res, str):
            row = dict(zip(REPORT_HEADER, [*key, trial, "", "", "", "", "", f"error: {res}"]))
        else:
            row = {
                "scheme": key[0], "N": key[1], "r": key[2], "trial": trial,
                "ttt_ratio": res["ttt_ratio"], "availability": res["availability"],
                "mean_stacks": res["mean_stacks_per_step"], "restarts": res["restarts"],
                "failures": res["failures"],
                "status": "ok" if res["completed"] else "incomplete",
            }
        rows.append(row)
        by_cell.setdefault(key, []).append(row)
    for key, group in by_cell.items():
        agg = dict(zip(REPORT_HEADER, [*key, "mean"]))
        if any(g["status"].startswith("error") for g in group):
            agg.update({k: "" for k in REPORT_HEADER[4:9]})
            agg["status"] = "error"
        else:
            for k in REPORT_HEADER[4:9]:
                agg[k] = sum(g[k] for g in group) / len(group)
            agg["status"] = "ok" if all(g["status"] == "ok" for g in group) else "incomplete"
        aggregates.append(agg)
    return rows, aggregates


def best_rows(aggregates: list[dict]) -> list[dict]:
    """Per (scheme, N), the aggregate row with the smallest mean ttt_ratio."""
    best: dict[tuple, dict] = {}
    for agg in aggregates:
        if agg["status"] == "error":
            continue
        key = (agg["scheme"], agg["N"])
        if key not in best or agg["ttt_ratio"] < best[key]["ttt_ratio"]:
            best[key] = agg
    return [best[k] for k in sorted(best)]


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def write_report(path: Path, rows: list[dict], aggregates: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_HEADER, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        writer.writerows(aggregates)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_init(args) -> int:
    spec = ExperimentSpec.reference(args.n_groups or (200,))
    text = spec.to_ini()
    if args.output in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.output).write_text(text)
        log.info("wrote %s", args.output)
    return EXIT_OK


def analyze_rows(n_groups: int, redundancies: Sequence[int], m: float, t_s: float, t_r: float):
    rows = []
    for r in redundancies:
        mu = analytics.mean_failures_to_wipeout(n_groups, r)
        t_f = mu * m
        try:
            s_bar = analytics.mean_overhead(n_groups, r)
            s_lb = analytics.mean_overhead_lower_bound(n_groups, r)
        except analytics.DegenerateModelError:
            s_bar = s_lb = math.nan
        a = analytics.availability(t_f, t_s, t_r)
        rows.append({
            "r": r, "mu": mu, "S_bar": s_bar, "S_bar_lb": s_lb,
            "T_c": analytics.optimal_ckpt_period(t_f, t_s, t_r), "A": a, "J": s_bar / a,
        })
    return rows


def cmd_analyze(args) -> int:
    n = args.n_groups
    if n < 2:
        raise UsageError("--n-groups must be >= 2")
    if args.node_mtbf <= 0 or args.ckpt_save < 0 or args.restart_cost < 0:
        raise UsageError("need node_mtbf > 0, ckpt_save >= 0, restart_cost >= 0")
    if args.redundancy:
        rs = parse_int_list(args.redundancy)
        bad = [r for r in rs if not 2 <= r <= n]
        if bad:
            raise UsageError(f"redundancy out of range [2, {n}]: {bad}")
    else:
        rs = supported_redundancies(n)
    rows = analyze_rows(n, rs, args.node_mtbf, args.ckpt_save, args.restart_cost)
    out = sys.stdout
    if args.format == "csv":
        writer = csv.DictWriter(out, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    else:
        print(f"N={n} m={args.node_mtbf:g}s T_s={args.ckpt_save:g}s T_r={args.restart_cost:g}s", file=out)
        print(f"{'r':>3} {'mu':>9} {'S_bar':>7} {'S_bar_lb':>8} {'T_c':>9} {'A':>7} {'J':>7}", file=out)
        finite = [row for row in rows if not math.isnan(row["J"])]
        best = min(finite, key=lambda x: x["J"])["r"] if finite else None
        for row in rows:
            mark = " *" if row["r"] == best else ""
            print(f"{row['r']:>3} {row['mu']:>9.1f} {row['S_bar']:>7.3f} {row['S_bar_lb']:>8.3f} "
                  f"{row['T_c']:>9.1f} {row['A']:>7.4f} {row['J']:>7.3f}{mark}", file=out)
    print(f"r*={analytics.optimal_redundancy(n)}", file=out)
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    n = args.n_groups
    rs = parse_int_list(args.redundancy) if args.redundancy else supported_redundancies(n)
    if not rs:
        raise UsageError("no redundancy values")
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    for r in rs:
        try:
            build_placement(n, r)
        except (PlacementInfeasibleError, ValueError) as exc:
            raise UsageError(str(exc)) from exc
    rows = montecarlo.table_rows(n, rs, args.trials, args.seed)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=MONTECARLO_HEADER, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    if args.out in (None, "-"):
        sys.stdout.write(buf.getvalue())
    else:
        Path(args.out).write_text(buf.getvalue())
        log.info("wrote %s", args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        text = Path(args.spec).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read spec: {exc}") from exc
    spec = ExperimentSpec.from_ini(text)
    if args.trials is not None:
        spec = replace(spec, trials=args.trials)
    workers = args.workers if args.workers else default_workers()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = run_sweep(spec, workers)
    rows, aggregates = report_rows(results)
    write_report(out_dir / "report.csv", rows, aggregates)
    errors = [r for r in rows if r["status"].startswith("error")]
    summary = {
        "base_seed": spec.base_seed,
        "trials": spec.trials,
        "cells": len(aggregates),
        "best": best_rows(aggregates),
        "errors": errors,
    }
    (out_dir / "summary.json").write_text(json.dumps(_json_safe(summary), allow_nan=False, indent=2, sort_keys=True) + "\n")
    for row in summary["best"]:
        print(f"{row['scheme']:>10} N={row['N']:<5} best r={row['r']:<3} "
              f"ttt_ratio={row['ttt_ratio']:.3f} availability={row['availability']:.4f} "
              f"[{row['status']}]")
    if errors:
        log.error("%d run(s) failed; see report.csv", len(errors))
        return EXIT_RUNTIME
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spare", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init", help="write a spec template pre-filled with the reference cluster parameters")
    s.add_argument("-o", "--output", help="output file (default stdout)")
    s.add_argument("--n-groups", type=int, nargs="+", help="N values (default 200)")
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("analyze", help="evaluate the analytic model")
    s.add_argument("--n-groups", "--n", type=int, required=True, dest="n_groups")
    s.add_argument("--redundancy", "--r", dest="redundancy",
                   help="r or list/range such as 2-12 (default: every supported r)")
    s.add_argument("--node-mtbf", type=float, default=300.0)
    s.add_argument("--ckpt-save", type=float, default=60.0)
    s.add_argument("--restart-cost", type=float, default=3600.0)
    s.add_argument("--format", choices=("table", "csv"), default="table")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("montecarlo", help="failure-trail Monte Carlo, theory vs simulation CSV")
    s.add_argument("--n-groups", "--n", type=int, required=True, dest="n_groups")
    s.add_argument("--redundancy", "--r", dest="redundancy",
                   help="r or list/range (default: every supported r)")
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="CSV path (default stdout)")
    s.set_defaults(func=cmd_montecarlo)

    s = sub.add_parser("simulate", help="run a DES sweep from a spec file")
    s.add_argument("spec")
    s.add_argument("--out-dir", default="results")
    s.add_argument("--workers", type=int, help=f"worker processes (default ${WORKERS_ENV} or CPU count)")
    s.add_argument("--trials", type=int, help="override trials per cell")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"spare {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"spare {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
