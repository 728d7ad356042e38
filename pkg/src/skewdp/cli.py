"""Command-line experiment harness.

``skewdp run`` sweeps allocations, weight exponents, privacy levels and seeds
and writes one CSV row per metric. ``skewdp report`` summarizes such a file
with medians and quartiles per cell.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import matcomp, solvers, synthgen
from .allocation import adjusted_counts
from .graph import MultiTaskDataset, RatingData, read_ratings
from .privacy import (
    PrivacyError,
    RdpAccount,
    dp_to_rdp,
    exact_counts,
    private_counts_for_budget,
    split_budget,
)

ALLOCATIONS = ("uniform-weights", "uniform-sampling", "tail-sampling", "adaptive")
ALGORITHMS = ("ssp", "gd", "als")
RESULT_FIELDS = ("dataset", "algorithm", "allocation", "mu", "epsilon", "delta", "seed",
                 "metric", "value", "total_coefficient", "certified_epsilon")


class CliError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic"
    algorithm: str = "ssp"
    allocation: list = field(default_factory=lambda: ["adaptive"])
    mu: list = field(default_factory=lambda: [0.5])
    epsilon: list = field(default_factory=lambda: [1.0])
    delta: float = 1e-5
    seeds: list = field(default_factory=lambda: [0])
    buckets: int = 4
    k: int = 20
    output: str = "results.csv"
    zero_noise: bool = False
    count_budget_fraction: float | None = None
    c_n: float | None = 1.0
    per_user_cap: int = 20
    lam: float = 0.01
    rank: int = 5
    rounds: int = 5
    clip_x: float = 1.0
    clip_star: float = 1.0
    max_m: int = 2000
    max_n: int = 100_000

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise CliError(f"unknown algorithm {self.algorithm!r}")
        for a in self.allocation:
            if a not in ALLOCATIONS:
                raise CliError(f"unknown allocation {a!r}; expected one of {ALLOCATIONS}")
        if not all(0 <= mu <= 1 for mu in self.mu):
            raise CliError("mu must lie in [0, 1]")
        if not all(e > 0 for e in self.epsilon):
            raise CliError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise CliError("delta must lie in (0, 1)")
        if not self.seeds:
            raise CliError("need at least one seed")
        f = self.count_budget_fraction
        if f is not None and not 0 <= f < 1:
            raise CliError("count budget fraction must lie in [0, 1)")
        if self.algorithm == "als" and f == 0:
            raise CliError("alternating minimization needs a positive count budget fraction")
        if self.c_n != "log" and not (isinstance(self.c_n, (int, float)) and self.c_n >= 1):
            raise CliError("c(n) must be >= 1")
        return self


# --- datasets -------------------------------------------------------------------

def _parse_spec(spec: str):
    name, _, rest = spec.partition(":")
    opts = {}
    for item in filter(None, rest.split(",")):
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"bad dataset option {item!r}; expected key=value")
        opts[key.strip()] = value.strip()
    return name, opts


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.lower() in ("1", "true", "yes")
    return type(like)(float(value)) if isinstance(like, int) else type(like)(value)


def synth_config(spec: str, seed: int) -> synthgen.SynthConfig:
    _, opts = _parse_spec(spec)
    aliases = {"mean": "mean_tasks_per_user", "noise": "noise_std", "train": "train_fraction"}
    base = synthgen.SynthConfig(seed=seed)
    kw = {}
    for key, value in opts.items():
        key = aliases.get(key, key)
        if not hasattr(base, key) or key == "seed":
            raise CliError(f"unknown synthetic option {key!r}")
        kw[key] = _coerce(value, getattr(base, key))
    return replace(base, **kw)


def load_regression(cfg: ExperimentConfig, seed: int):
    name, _ = _parse_spec(cfg.dataset)
    if name != "synthetic":
        raise CliError("ssp and gd run on synthetic[:key=value,...] datasets")
    data = synthgen.generate(synth_config(cfg.dataset, seed))
    _check_scale(cfg, data.train.m, data.train.n)
    return data.train, data.test


def load_ratings(cfg: ExperimentConfig, seed: int) -> tuple[RatingData, RatingData]:
    name, opts = _parse_spec(cfg.dataset)
    rng = np.random.default_rng(seed)
    if name == "synthetic":
        data = synthgen.generate(synth_config(cfg.dataset, seed))
        tr, te = data.train, data.test
        train = RatingData(tr.graph, tr.y, list(range(tr.m)), list(range(tr.n)))
        test = RatingData(te.graph, te.y, list(range(te.m)), list(range(te.n)))
    elif name == "lowrank":
        m = int(opts.get("m", 500))
        n = int(opts.get("n", 200))
        skew = float(opts["skew"]) if "skew" in opts else None
        ratings, _, _ = matcomp.low_rank_ratings(
            min(m, n), max(m, n), int(opts.get("rank", 5)), float(opts.get("density", 0.2)),
            rng, float(opts.get("noise", 0.1)), skew)
        train, test = matcomp.train_test_split(ratings, 0.8, rng)
    else:
        path = Path(cfg.dataset)
        if not path.exists():
            raise CliError(f"dataset file {path} does not exist")
        train, test = matcomp.train_test_split(read_ratings(path), 0.8, rng)
    _check_scale(cfg, train.m, train.n)
    return train, test


def _check_scale(cfg, m, n):
    if m > cfg.max_m or n > cfg.max_n:
        raise CliError(f"dataset ({m} x {n}) exceeds the configured limits "
                       f"({cfg.max_m} x {cfg.max_n})")


# --- runs -------------------------------------------------------------------------

def _c_n(cfg, n):
    return max(1.0, math.log(n)) if cfg.c_n == "log" else cfg.c_n


def _certified(account: RdpAccount, delta: float) -> float:
    return account.to_dp(delta).epsilon if account.private else float("nan")


def _regression_cell(cfg, train, test, allocation, mu, eps, seed):
    """One (allocation, mu, epsilon, seed) cell for the SSP or GD solver."""
    total = dp_to_rdp(eps, cfg.delta)
    frac = cfg.count_budget_fraction or 0.0
    rng = np.random.default_rng([seed, 1])
    account = RdpAccount() if not cfg.zero_noise else RdpAccount.non_private()
    g = train.graph
    if frac > 0 and not cfg.zero_noise:
        priv = private_counts_for_budget(g, frac * total, 0.9, rng)
        account.compose(priv.coefficient, "preprocess: task counts")
        counts = adjusted_counts(priv)
    else:
        counts = exact_counts(g).estimates
    beta = split_budget(total, account.total_coefficient, 1) if account.private else total
    counts = np.maximum(counts, 1.0)
    mu_eff = 0.0 if allocation == "uniform-weights" else mu
    strategy = "adaptive-weights" if allocation == "adaptive" else allocation
    c_n = _c_n(cfg, g.n)
    plan = matcomp.build_plan(strategy, g, counts, beta, rng, mu=mu_eff, c_n=c_n,
                              per_user_cap=cfg.per_user_cap)
    noise_on = not cfg.zero_noise
    if cfg.algorithm == "ssp":
        theta = solvers.weighted_ssp(train, plan, cfg.clip_x, cfg.clip_star, cfg.lam, rng,
                                     noise_on=noise_on, account=account)
    else:
        loss = solvers.RidgeLoss(cfg.lam)
        T, rates = solvers.schedule_strongly_convex(counts, plan.task_weights, train.d,
                                                     loss.strong_convexity)
        gd = solvers.GdConfig(cfg.clip_star, loss.lipschitz(cfg.clip_star, cfg.clip_x,
                                                            cfg.clip_star),
                              T, rates, loss.strong_convexity)
        clipped = MultiTaskDataset(g, train.x, np.clip(train.y, -cfg.clip_x * cfg.clip_star,
                                                       cfg.clip_x * cfg.clip_star))
        theta = solvers.weighted_noisy_gd(clipped, plan, gd, loss, rng, noise_on=noise_on,
                                          account=account)
    metrics = [("test_rmse", solvers.test_rmse(theta, test)),
               ("excess_risk", solvers.excess_risk(theta, train, cfg.lam))]
    return metrics, account, None


def _als_cell(cfg, train, test, allocation, mu, eps, seed):
    total = dp_to_rdp(eps, cfg.delta)
    frac = 0.15 if cfg.count_budget_fraction is None else cfg.count_budget_fraction
    beta0 = frac * total
    beta = split_budget(total, beta0, cfg.rounds)
    strategy = "adaptive-weights" if allocation == "adaptive" else allocation
    run = matcomp.alternating_minimization(
        train, cfg.rounds, cfg.rank, cfg.lam, beta, beta0, strategy,
        np.random.default_rng([seed, 1]), solver="ssp", mu=mu, c_n=_c_n(cfg, train.n),
        per_user_cap=cfg.per_user_cap, clip_x=cfg.clip_x, clip_star=cfg.clip_star,
        noise_on=not cfg.zero_noise)
    model = run.model
    rm = matcomp.sliced_metrics("rmse", model, test, cfg.buckets, train)
    rc = matcomp.sliced_metrics("recall", model, test, cfg.buckets, train, k=cfg.k)
    metrics = [("rmse", rm.global_value), (f"recall@{cfg.k}", rc.global_value)]
    sliced = rm.rows()[1:] + rc.rows()[1:]
    return metrics, run.account, sliced


def run(cfg: ExperimentConfig):
    """Run the full grid; returns ``(rows, sliced_rows)`` sorted for stable output."""
    cfg.validate()
    rows, sliced_rows = [], []
    for seed in cfg.seeds:
        if cfg.algorithm == "als":
            train, test = load_ratings(cfg, seed)
            cell = _als_cell
        else:
            train, test = load_regression(cfg, seed)
            cell = _regression_cell
        for allocation in cfg.allocation:
            mus = cfg.mu if allocation == "adaptive" else [0.0 if allocation == "uniform-weights"
                                                           else float("nan")]
            for mu in mus:
                for eps in cfg.epsilon:
                    metrics, account, sliced = cell(cfg, train, test, allocation, mu, eps, seed)
                    certified = _certified(account, cfg.delta)
                    if certified > eps * (1 + 1e-12):
                        raise PrivacyError(f"certified epsilon {certified} exceeds {eps}")
                    key = (cfg.dataset, cfg.algorithm, allocation, mu, eps, cfg.delta, seed)
                    for name, value in metrics:
                        rows.append(key + (name, value, account.total_coefficient, certified))
                    for bucket, name, value in sliced or []:
                        sliced_rows.append(key + (bucket, name, value))
    rows.sort(key=_sort_key)
    sliced_rows.sort(key=_sort_key)
    return rows, sliced_rows


def _sort_key(row):
    return tuple((0, v) if isinstance(v, str) else (1, -1.0 if v != v else v) for v in row)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(rows, fields, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


SLICED_FIELDS = RESULT_FIELDS[:7] + ("bucket", "metric", "value")


def sliced_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".sliced" + path.suffix)


# --- report -----------------------------------------------------------------------

def summarize(rows: list[dict], value_field: str = "value", drop=("seed",)) -> list[tuple]:
    """Median and quartiles of ``value_field`` per cell (all other identifying columns)."""
    if not rows:
        raise CliError("no rows to summarize")
    ignore = set(drop) | {value_field, "total_coefficient", "certified_epsilon"}
    keys = [k for k in rows[0] if k not in ignore]
    cells: dict[tuple, list] = {}
    for r in rows:
        cells.setdefault(tuple(r[k] for k in keys), []).append(float(r[value_field]))
    out = []
    for cell in sorted(cells):
        vals = np.asarray(cells[cell])
        q1, med, q3 = np.quantile(vals, [0.25, 0.5, 0.75])
        out.append(cell + (float(med), float(q1), float(q3), len(vals)))
    return keys + ["median", "q1", "q3", "count"], out


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def report(input_path, output_path, sliced_input=None, sliced_output=None):
    header, summary = summarize(read_rows(input_path))
    write_rows(summary, header, output_path)
    if sliced_input is not None and Path(sliced_input).exists():
        sliced = read_rows(sliced_input)
        if sliced:
            header, summary = summarize(sliced)
            write_rows(summary, header, sliced_output or sliced_path(output_path))


# --- argument parsing -------------------------------------------------------------

def _c_n_arg(text):
    return "log" if text.strip() == "log" else float(text)


def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def read_config_file(path) -> dict:
    """``key=value`` lines (``#`` comments allowed); keys use flag names."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise CliError(f"{path}:{lineno}: expected key=value")
            out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


_LIST_KEYS = {"allocation", "mu", "epsilon", "seeds"}


def _config_from_mapping(values: dict) -> ExperimentConfig:
    base = ExperimentConfig()
    kw = {}
    for key, value in values.items():
        if value is None:
            continue
        if not hasattr(base, key):
            raise CliError(f"unknown option {key!r}")
        if isinstance(value, str):
            if key == "allocation":
                value = value.replace(",", " ").split()
            elif key in ("mu", "epsilon"):
                value = _floats(value)
            elif key == "seeds":
                value = [int(v) for v in _floats(value)]
            elif key == "zero_noise":
                value = value.lower() in ("1", "true", "yes")
            elif key == "count_budget_fraction":
                value = float(value)
            elif key == "c_n":
                value = _c_n_arg(value)
            else:
                value = _coerce(value, getattr(base, key))
        kw[key] = value
    return replace(base, **kw)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skewdp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment grid and write a result CSV")
    r.add_argument("--config", help="key=value file; command-line flags take precedence")
    r.add_argument("--dataset", help="synthetic[:key=value,...], lowrank[:...] or a ratings CSV")
    r.add_argument("--algorithm", choices=ALGORITHMS)
    r.add_argument("--allocation", nargs="+", choices=ALLOCATIONS)
    r.add_argument("--mu", nargs="+", type=float)
    r.add_argument("--epsilon", nargs="+", type=float)
    r.add_argument("--delta", type=float)
    r.add_argument("--seeds", nargs="+", type=int)
    r.add_argument("--buckets", type=int)
    r.add_argument("--k", type=int, help="recall cutoff")
    r.add_argument("--output")
    r.add_argument("--zero-noise", action="store_true", default=None,
                   help="disable all noise (test mode; nothing is certified)")
    r.add_argument("--count-budget-fraction", type=float)
    r.add_argument("--c-n", type=_c_n_arg,
                   help="value of c(n), or 'log' for log n (default 1)")
    r.add_argument("--per-user-cap", type=int, help="tasks kept per user by sampling plans")
    r.add_argument("--lam", type=float)
    r.add_argument("--rank", type=int)
    r.add_argument("--rounds", type=int)
    r.add_argument("--clip-x", type=float)
    r.add_argument("--clip-star", type=float)
    r.add_argument("--max-m", type=int)
    r.add_argument("--max-n", type=int)
    s = sub.add_parser("report", help="median and quartiles per cell of a result CSV")
    s.add_argument("input")
    s.add_argument("--output", required=True)
    s.add_argument("--sliced", help="sliced result CSV (default: derived from input)")
    return p


def config_from_args(args) -> ExperimentConfig:
    values = read_config_file(args.config) if args.config else {}
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        values[key] = value
    return _config_from_mapping(values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = config_from_args(args)
            rows, sliced = run(cfg)
            write_rows(rows, RESULT_FIELDS, cfg.output)
            if sliced:
                write_rows(sliced, SLICED_FIELDS, sliced_path(cfg.output))
            print(f"wrote {len(rows)} rows to {cfg.output}")
        else:
            sliced_in = args.sliced or sliced_path(args.input)
            report(args.input, args.output, sliced_in)
            print(f"wrote summary to {args.output}")
    except (CliError, PrivacyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0
