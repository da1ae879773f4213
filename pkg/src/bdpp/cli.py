"""Command-line entry point: ``bdpp search | verify | bench | report``.

Exit codes: 0 success, 1 a property check failed, 2 usage or config error,
3 file could not be read or written.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis, bilevel
from . import diffcore as dc
from . import regularizers
from .bilevel import ProxyConfig, SearchConfig, TrajectoryRecord
from .oracle import BenchmarkError, SyntheticTask, TabularBenchmark, brute_force_best, generate_benchmark
from .regularizers import (
    ALPHA_VARIANTS,
    SCHEDULE_KINDS,
    WEIGHT_VARIANTS,
    AlphaRegularizer,
    LambdaSchedule,
    WeightRegularizer,
)
from .searchspace import EDGES, ParseError, beta_of_alpha, genotype_to_string, string_to_genotype

log = logging.getLogger("bdpp")

EXIT_OK, EXIT_PROPERTY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid run configuration; the message starts with the field path."""


class TrajectoryFormatError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}: line {line}: {msg}")
        self.line = line


# ---------------------------------------------------------------- config

# The default run: Beta-Decay ramped 0 -> 10 over the search, flood level 0.3,
# a w-only warm-up, batch-normalised parametric ops.
DEFAULT_CONFIG = {
    "search": {
        "eta_alpha": 0.5,
        "eta_w": 0.1,
        "batch_size": None,
        "split_fraction_w": 0.5,
        "early_stop": "none",
        "plateau_window": 5,
        "plateau_tol": 1e-3,
        "init_scale": 1.0,
        "batch_norm": True,
        "warmup_epochs": 300,
        "seed": 0,
    },
    "regularizers": {
        "alpha": {"variant": "beta_decay", "schedule": {"kind": "linear_increase", "start": 0.0, "end": 10.0}},
        "weight": {"variant": "flooding", "coefficient": 0.3},
    },
    "proxy": {"data_fraction": 1.0, "channels": 8, "layers": 1, "epochs": 800},
    "task": {"seed": 0, "n": 2000, "input_dim": 8, "num_classes": 3, "noise": 1.0, "separation": 4.0},
    "benchmark": {"mode": "generated", "seed": 0},
    "output": {"trajectory": None},
}

_NUM = (int, float)


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


# field -> (accepted types, predicate or None, what the predicate demands)
_SCHEMA = {
    "search": {
        "eta_alpha": (_NUM, _positive, "> 0"),
        "eta_w": (_NUM, _positive, "> 0"),
        "batch_size": ((int, type(None)), lambda v: v is None or v >= 1, "null or an integer >= 1"),
        "split_fraction_w": (_NUM, lambda v: 0 < v < 1, "in (0, 1)"),
        "early_stop": ((str,), lambda v: v in bilevel.CRITERIA, f"one of {list(bilevel.CRITERIA)}"),
        "plateau_window": ((int,), lambda v: v >= 1, "an integer >= 1"),
        "plateau_tol": (_NUM, _nonneg, ">= 0"),
        "init_scale": (_NUM, _positive, "> 0"),
        "batch_norm": ((bool,), None, "true or false"),
        "warmup_epochs": ((int,), _nonneg, "an integer >= 0"),
        "seed": ((int,), _nonneg, "an integer >= 0"),
    },
    "proxy": {
        "data_fraction": (_NUM, lambda v: 0 < v <= 1, "in (0, 1]"),
        "channels": ((int,), lambda v: v >= 1, "an integer >= 1"),
        "layers": ((int,), lambda v: v >= 1, "an integer >= 1"),
        "epochs": ((int,), lambda v: v >= 1, "an integer >= 1"),
    },
    "task": {
        "seed": ((int,), _nonneg, "an integer >= 0"),
        "n": ((int,), lambda v: v >= 1, "an integer >= 1"),
        "input_dim": ((int,), lambda v: v >= 2, "an integer >= 2"),
        "num_classes": ((int,), lambda v: v >= 2, "an integer >= 2"),
        "noise": (_NUM, _positive, "> 0"),
        "separation": (_NUM, _positive, "> 0"),
    },
}


def _check_keys(obj, allowed, path):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object, got {type(obj).__name__}")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown key (allowed: {', '.join(sorted(allowed))})")


def _check_value(value, types, pred, demand, path):
    # bool is an int subclass; only accept it where bool is asked for
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(f"{path}: must be {demand}, got {json.dumps(value)}")
    if not isinstance(value, types):
        raise ConfigError(f"{path}: must be {demand}, got {json.dumps(value)}")
    if pred is not None and not pred(value):
        raise ConfigError(f"{path}: must be {demand}, got {json.dumps(value)}")
    return value


def _section(raw: dict, name: str) -> dict:
    out = dict(DEFAULT_CONFIG[name])
    given = raw.get(name, {})
    _check_keys(given, _SCHEMA[name], name)
    for key, value in given.items():
        out[key] = _check_value(value, *_SCHEMA[name][key], f"{name}.{key}")
    return out


def _choice(value, options, path):
    if value not in options:
        raise ConfigError(f"{path}: must be one of {list(options)}, got {json.dumps(value)}")
    return value


@dataclass
class RunConfig:
    search: SearchConfig
    task: SyntheticTask
    benchmark: dict | None
    trajectory: str | None


def parse_config(raw) -> RunConfig:
    """Validate a JSON document (already decoded) into typed configs."""
    _check_keys(raw, DEFAULT_CONFIG, "config")
    search = _section(raw, "search")
    proxy = _section(raw, "proxy")
    task = _section(raw, "task")

    regs = raw.get("regularizers", {})
    _check_keys(regs, ("alpha", "weight"), "regularizers")
    alpha = {**DEFAULT_CONFIG["regularizers"]["alpha"], **regs.get("alpha", {})}
    _check_keys(alpha, ("variant", "schedule"), "regularizers.alpha")
    _choice(alpha["variant"], ALPHA_VARIANTS, "regularizers.alpha.variant")
    sched = {**DEFAULT_CONFIG["regularizers"]["alpha"]["schedule"], **alpha.get("schedule", {})}
    _check_keys(sched, ("kind", "start", "end"), "regularizers.alpha.schedule")
    _choice(sched["kind"], SCHEDULE_KINDS, "regularizers.alpha.schedule.kind")
    for k in ("start", "end"):
        _check_value(sched[k], _NUM, _nonneg, ">= 0", f"regularizers.alpha.schedule.{k}")
    weight = {**DEFAULT_CONFIG["regularizers"]["weight"], **regs.get("weight", {})}
    _check_keys(weight, ("variant", "coefficient"), "regularizers.weight")
    _choice(weight["variant"], WEIGHT_VARIANTS, "regularizers.weight.variant")
    _check_value(weight["coefficient"], _NUM, _nonneg, ">= 0", "regularizers.weight.coefficient")

    bench = raw.get("benchmark", DEFAULT_CONFIG["benchmark"])
    if bench is not None:
        _check_keys(bench, ("mode", "seed", "path"), "benchmark")
        mode = _choice(bench.get("mode", "generated"), ("generated", "imported"), "benchmark.mode")
        if mode == "generated":
            if "path" in bench:
                raise ConfigError("benchmark.path: only allowed with mode 'imported'")
            _check_value(bench.get("seed", 0), (int,), _nonneg, "an integer >= 0", "benchmark.seed")
        else:
            if "seed" in bench:
                raise ConfigError("benchmark.seed: only allowed with mode 'generated'")
            _check_value(bench.get("path"), (str,), None, "a file path", "benchmark.path")
        bench = {"mode": mode, **{k: v for k, v in bench.items() if k != "mode"}}

    out = raw.get("output", {})
    _check_keys(out, ("trajectory",), "output")
    traj = out.get("trajectory")
    if traj is not None:
        _check_value(traj, (str,), None, "a file path or null", "output.trajectory")

    try:
        schedule = LambdaSchedule(sched["kind"], float(sched["start"]), float(sched["end"]), proxy["epochs"])
    except ValueError as exc:
        raise ConfigError(f"regularizers.alpha.schedule: {exc}") from None
    config = SearchConfig(
        eta_alpha=float(search["eta_alpha"]),
        eta_w=float(search["eta_w"]),
        batch_size=search["batch_size"],
        alpha_reg=AlphaRegularizer(alpha["variant"], schedule),
        weight_reg=WeightRegularizer(weight["variant"], float(weight["coefficient"])),
        proxy=ProxyConfig(float(proxy["data_fraction"]), proxy["channels"], proxy["layers"], proxy["epochs"]),
        split_fraction_w=float(search["split_fraction_w"]),
        early_stop=search["early_stop"],
        plateau_window=search["plateau_window"],
        plateau_tol=float(search["plateau_tol"]),
        init_scale=float(search["init_scale"]),
        batch_norm=search["batch_norm"],
        warmup_epochs=search["warmup_epochs"],
        seed=search["seed"],
    )
    task_cfg = SyntheticTask(**{k: (float(v) if k in ("noise", "separation") else v) for k, v in task.items()})
    return RunConfig(config, task_cfg, bench, traj)


def _reject_duplicates(pairs):
    seen = {}
    for k, v in pairs:
        if k in seen:
            raise ConfigError(f"{k}: duplicate key")
        seen[k] = v
    return seen


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return parse_config({})
    text = Path(path).read_text()  # OSError propagates as an IO failure
    try:
        raw = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: not valid JSON (line {exc.lineno}, column {exc.colno}): {exc.msg}") from None
    return parse_config(raw)


def load_benchmark(source: dict | None) -> TabularBenchmark | None:
    if source is None:
        return None
    if source["mode"] == "generated":
        return generate_benchmark(source.get("seed", 0))
    return TabularBenchmark.read_csv(source["path"])


# ---------------------------------------------------------------- trajectory csv


def trajectory_header(num_edges: int = len(EDGES)) -> list[str]:
    cols = ["epoch", "l_train", "l_val", "l_beta", "m", "genotype", "oracle_score"]
    for i in range(num_edges):
        cols += [f"e{i}_mean", f"e{i}_median", f"e{i}_std"]
    return cols


def _g(v: float) -> str:
    return f"{v:.9g}"


def trajectory_to_csv(records: list[TrajectoryRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trajectory_header(len(records[0].alpha_std) if records else len(EDGES)))
    for r in records:
        row = [str(r.epoch), _g(r.l_train), _g(r.l_val), _g(r.l_beta), str(r.m), r.genotype,
               "" if r.oracle_score is None else _g(r.oracle_score)]
        for s in zip(r.alpha_mean, r.alpha_median, r.alpha_std):
            row += [_g(v) for v in s]
        w.writerow(row)
    return buf.getvalue()


def _float_field(text, path, line, col):
    try:
        v = float(text)
    except ValueError:
        raise TrajectoryFormatError(path, line, f"column {col}: not a number: {text!r}") from None
    if not np.isfinite(v):
        raise TrajectoryFormatError(path, line, f"column {col}: not finite: {text!r}")
    return v


def _int_field(text, path, line, col):
    if not text.isdigit():
        raise TrajectoryFormatError(path, line, f"column {col}: not a non-negative integer: {text!r}")
    return int(text)


def parse_trajectory(text: str, path="<trajectory>") -> list[TrajectoryRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise TrajectoryFormatError(path, 1, "empty file")
    header = trajectory_header()
    if rows[0] != header:
        raise TrajectoryFormatError(path, 1, "header does not match " + ",".join(header))
    records, last_epoch = [], 0
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise TrajectoryFormatError(path, line, f"expected {len(header)} fields, got {len(row)}")
        epoch = _int_field(row[0], path, line, "epoch")
        if epoch <= last_epoch:
            raise TrajectoryFormatError(path, line, f"epoch {epoch} does not increase")
        last_epoch = epoch
        l_train, l_val, l_beta = (_float_field(row[i], path, line, header[i]) for i in (1, 2, 3))
        m = _int_field(row[4], path, line, "m")
        if m > len(EDGES):
            raise TrajectoryFormatError(path, line, f"m = {m} exceeds {len(EDGES)} edges")
        try:
            string_to_genotype(row[5])
        except ParseError as exc:
            raise TrajectoryFormatError(path, line, f"genotype: {exc}") from None
        score = None if row[6] == "" else _float_field(row[6], path, line, "oracle_score")
        stats = [_float_field(row[i], path, line, header[i]) for i in range(7, len(header))]
        records.append(TrajectoryRecord(epoch, l_train, l_val, l_beta, m, row[5], score,
                                        stats[0::3], stats[1::3], stats[2::3]))
    return records


def read_trajectory(path: str | Path) -> list[TrajectoryRecord]:
    return parse_trajectory(Path(path).read_text(), path)


# ---------------------------------------------------------------- property suites


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    detail: str


def _beta_decay_grad(alpha: np.ndarray) -> np.ndarray:
    g = dc.Graph()
    a = g.leaf(alpha, kind="alpha")
    # looked up at call time so a patched loss is what gets checked
    return dc.backward(g, regularizers.beta_decay_loss(a))[a]


def suite_beta_grad(trials: int = 100, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng([seed, 101])
    worst_cf = worst_fd = 0.0
    for _ in range(trials):
        shape = (int(rng.integers(1, 7)), int(rng.integers(2, 9)))
        a = rng.normal(scale=2.0, size=shape)
        expected = beta_of_alpha(a) / shape[0]
        worst_cf = max(worst_cf, float(np.max(np.abs(_beta_decay_grad(a) - expected))))
        worst_fd = max(worst_fd, dc.finite_diff_check(lambda g, x: regularizers.beta_decay_loss(x), a))
    return [
        Check("beta-grad", "autodiff = softmax/edges", worst_cf <= 1e-10, f"max abs err {worst_cf:.2e} over {trials}"),
        Check("beta-grad", "finite differences", worst_fd <= 1e-6, f"max rel err {worst_fd:.2e} over {trials}"),
    ]


def suite_theta(trials: int = 1000, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng([seed, 102])
    out = []
    for variant in analysis.THETA_VARIANTS:
        worst = 0.0
        for _ in range(trials):
            k = int(rng.integers(2, 9))
            row, grad, lam_eta = rng.normal(scale=2.0, size=k), rng.normal(size=k), rng.uniform(0, 2)
            worst = max(worst, analysis.theta_report(row, variant, lam_eta, data_grad=grad).max_deviation)
        out.append(Check("theta", f"closed form = simulation, {variant}", worst <= 1e-8,
                         f"max rel dev {worst:.2e} over {trials}"))
    bad = 0
    for _ in range(trials):
        row = rng.normal(scale=2.0, size=int(rng.integers(2, 9)))
        theta = analysis.theta_closed_form(row, "beta_decay", rng.uniform(0.01, 2))
        order = np.argsort(row, kind="stable")
        ok = theta[np.argmax(row)] < 1 < theta[np.argmin(row)] and np.all(np.diff(theta[order]) < 0)
        bad += not ok
    out.append(Check("theta", "beta_decay theta decreasing in alpha", bad == 0, f"{bad} violations in {trials}"))
    return out


def suite_lipschitz(trials: int = 1000, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng([seed, 103])
    order_bad = gap_bad = norm_bad = 0
    for _ in range(trials):
        row = rng.normal(scale=2.0, size=int(rng.integers(2, 9)))
        new = regularizers.alpha_penalty_step(row, "beta_decay", rng.uniform(0, 1), 1.0)
        order_bad += not np.array_equal(np.argsort(row, kind="stable"), np.argsort(new, kind="stable"))
        gaps, new_gaps = row[:, None] - row[None, :], new[:, None] - new[None, :]
        up = gaps >= 0
        gap_bad += not (np.all(new_gaps[up] >= -1e-12) and np.all(new_gaps[up] <= gaps[up] + 1e-12))
        before, _ = analysis.lipschitz_measure(row[None, :])
        after, _ = analysis.lipschitz_measure(new[None, :])
        norm_bad += not after[0] <= before[0] + 1e-15
    return [
        Check("lipschitz", "order preserved", order_bad == 0, f"{order_bad} violations in {trials}"),
        Check("lipschitz", "gaps weakly contract", gap_bad == 0, f"{gap_bad} violations in {trials}"),
        Check("lipschitz", "per-edge beta norm not increased", norm_bad == 0, f"{norm_bad} violations in {trials}"),
    ]


def _half_square(g, w):
    return dc.scale(0.5, dc.sum_squares(w))


def _quarter_fourth(g, w):
    sq = dc.mul(w, w)
    return dc.scale(0.25, dc.total(dc.mul(sq, sq)))


def suite_flooding(trials: int = 0, seed: int = 0) -> list[Check]:
    # the quadratic case has a vanishing third derivative, so the two-step
    # prediction is exact; on the quartic the error scales with eta cubed
    exact = analysis.flooding_taylor_check(_half_square, [1.0], 0.1, b=0.45)
    e1 = analysis.flooding_taylor_check(_quarter_fourth, [1.0], 0.1, b=0.2).error
    e2 = analysis.flooding_taylor_check(_quarter_fourth, [1.0], 0.05, b=0.24).error
    ratio = e1 / e2 if e2 > 0 else float("inf")
    return [
        Check("flooding", "exact on w^2/2", exact.error <= 1e-12 and exact.phases == ("descent", "ascent"),
              f"error {exact.error:.2e}, phases {'/'.join(exact.phases)}"),
        Check("flooding", "third-order error on w^4/4", 6 <= ratio <= 10, f"ratio {ratio:.3f}"),
    ]


def suite_criteria(trials: int = 0, seed: int = 0) -> list[Check]:
    fired = bilevel.criteria_epochs([0, 0, 1, 2, 3, 4, 6], 6)
    want = {"c1": 2, "c2": 4, "c3": 6}
    return [Check("criteria", "scripted counts fire c1/c2/c3", fired == want,
                  " ".join(f"{k}={fired.get(k)}" for k in ("c1", "c2", "c3")))]


SUITES = {
    "beta-grad": suite_beta_grad,
    "theta": suite_theta,
    "flooding": suite_flooding,
    "criteria": suite_criteria,
    "lipschitz": suite_lipschitz,
}


def run_suites(name: str, seed: int = 0) -> list[Check]:
    names = list(SUITES) if name == "all" else [name]
    checks = []
    for n in names:
        checks += SUITES[n](seed=seed)
    return checks


# ---------------------------------------------------------------- report


def _fired_epochs(records: list[TrajectoryRecord]) -> dict[str, TrajectoryRecord]:
    out = {}
    for r in records:
        for c in sorted(bilevel.criteria_for(r.m, len(EDGES))):
            out.setdefault(c, r)
    return out


def _code(genotype: str) -> str:
    # a raw "|" would end the table cell
    return "`" + genotype.replace("|", "\\|") + "`"


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.6f}"


def render_report(records: list[TrajectoryRecord], traj_name: str, bench: TabularBenchmark | None = None,
                  bench_name: str | None = None, rows: int = 10) -> str:
    if not records:
        raise ValueError("trajectory has no epochs")

    def score(r):
        if bench is not None:
            return bench.evaluate(r.genotype)
        return r.oracle_score

    last = records[-1]
    lines = ["# Search report", "", f"Trajectory: `{traj_name}`" + (f", benchmark: `{bench_name}`" if bench_name else ""), ""]
    lines += ["## Summary", "", "| quantity | value |", "|---|---|"]
    lines += [f"| epochs | {len(records)} |", f"| final genotype | {_code(last.genotype)} |",
              f"| final L_train | {last.l_train:.6f} |", f"| final L_val | {last.l_val:.6f} |",
              f"| final L_beta | {last.l_beta:.6f} |", f"| determined edges | {last.m}/{len(EDGES)} |",
              f"| final score | {_fmt(score(last))} |", ""]

    fired = _fired_epochs(records)
    lines += ["## Early-stop criteria", "", "| criterion | epoch | genotype | score |", "|---|---|---|---|"]
    for c in ("c1", "c2", "c3"):
        if c in fired:
            r = fired[c]
            lines.append(f"| {c} | {r.epoch} | {_code(r.genotype)} | {_fmt(score(r))} |")
        else:
            lines.append(f"| {c} | not fired | | |")
    lines += [f"| last | {last.epoch} | {_code(last.genotype)} | {_fmt(score(last))} |", ""]

    step = max(1, len(records) // rows)
    picked = records[step - 1::step]
    if picked[-1] is not last:
        picked.append(last)
    stds = " | ".join(f"e{i} std" for i in range(len(last.alpha_std)))
    lines += ["## Trajectory", "", f"| epoch | L_train | L_val | L_beta | m | {stds} | score |",
              "|" + "---|" * (6 + len(last.alpha_std))]
    for r in picked:
        s = " | ".join(f"{v:.4f}" for v in r.alpha_std)
        lines.append(f"| {r.epoch} | {r.l_train:.4f} | {r.l_val:.4f} | {r.l_beta:.4f} | {r.m} | {s} | {_fmt(score(r))} |")
    lines.append("")

    if bench is not None:
        best_g, best = brute_force_best(bench)
        scores = [bench.evaluate(r.genotype) for r in records]
        top = int(np.argmax(scores))
        lines += ["## Regret against brute-force best", "",
                  f"Optimal genotype `{genotype_to_string(best_g)}` scores {best:.6f}.", "",
                  "| selection | epoch | score | regret |", "|---|---|---|---|"]
        for c in ("c1", "c2", "c3"):
            if c in fired:
                r = fired[c]
                v = bench.evaluate(r.genotype)
                lines.append(f"| {c} | {r.epoch} | {v:.6f} | {best - v:.6f} |")
        lines.append(f"| last | {last.epoch} | {scores[-1]:.6f} | {best - scores[-1]:.6f} |")
        lines.append(f"| optimal epoch | {records[top].epoch} | {scores[top]:.6f} | {best - scores[top]:.6f} |")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------- commands


def cmd_search(args) -> int:
    run = load_config(args.config)
    out = args.out or run.trajectory
    if out is None:
        raise ConfigError("output.trajectory: no --out given and none configured")
    bench = load_benchmark(run.benchmark)
    data = run.task.generate()
    t0 = time.perf_counter()
    res = bilevel.search(run.search, data, bench)
    log.info("search finished in %.1fs", time.perf_counter() - t0)
    Path(out).write_text(trajectory_to_csv(res.records))
    final = res.records[-1].genotype
    print(final)
    if bench is not None:
        best_g, best = brute_force_best(bench)
        score = bench.evaluate(final)
        print(f"{'method':<10} {'score':>10}  genotype")
        print(f"{'search':<10} {score:>10.6f}  {final}")
        print(f"{'optimal':<10} {best:>10.6f}  {genotype_to_string(best_g)}")
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = run_suites(args.suite, seed=args.seed)
    width = max(len(c.name) for c in checks)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.suite:<10} {c.name:<{width}}  {c.detail}")
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_PROPERTY


def cmd_bench(args) -> int:
    if args.bench_cmd == "gen":
        generate_benchmark(args.seed).write_csv(args.out)
        return EXIT_OK
    try:
        bench = TabularBenchmark.read_csv(args.bench)
        g, score = brute_force_best(bench)
    except (ValueError, BenchmarkError) as exc:
        raise ConfigError(str(exc)) from None
    print(f"{genotype_to_string(g)} {score:.12f}")
    return EXIT_OK


def cmd_report(args) -> int:
    records = read_trajectory(args.traj)
    bench = None
    if args.bench is not None:
        try:
            bench = TabularBenchmark.read_csv(args.bench)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    try:
        text = render_report(records, Path(args.traj).name, bench, Path(args.bench).name if args.bench else None)
    except (ValueError, BenchmarkError) as exc:
        raise ConfigError(str(exc)) from None
    Path(args.out).write_text(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bdpp", description="Beta-Decay regularised differentiable architecture search")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("search", help="run a search and write the trajectory CSV")
    s.add_argument("--config", default=None, help="JSON run config (defaults when omitted)")
    s.add_argument("--out", default=None, help="trajectory CSV path")
    s.set_defaults(func=cmd_search)

    v = sub.add_parser("verify", help="run numerical property suites")
    v.add_argument("--suite", required=True, choices=[*SUITES, "all"])
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="generate or query a tabular benchmark")
    bsub = b.add_subparsers(dest="bench_cmd", required=True)
    g = bsub.add_parser("gen")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    best = bsub.add_parser("best")
    best.add_argument("--bench", required=True)
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("report", help="render a markdown report from a trajectory")
    r.add_argument("--traj", required=True)
    r.add_argument("--bench", default=None)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, TrajectoryFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except bilevel.EmptyPartitionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
