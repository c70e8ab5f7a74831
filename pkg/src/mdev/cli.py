"""Command-line runner: configs, schedules, seeded experiments, CSV/JSON output.

Config files are flat ``key = value`` lines with dotted section names::

    model.name = linear-sin
    theorems = T1,T3
    schedule.eps = 0.05,0.02,0.01
    mc.n_rep = 20000
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bounds import THEOREMS
from .geometry import parse_omega
from .infer import ESTIMATOR_KINDS, TEST_KINDS
from .mdp import MCConfig, bound_comparison_run, gauss_exceedance, lemma1_tail_ratio
from .model import MODEL_NAMES, Grid, check_regularity, fisher_information, get_model

CSV_COLUMNS = ("theorem", "epsilon", "u_eps", "x", "alpha_target", "empirical_1", "empirical_2",
               "theoretical_1", "theoretical_2", "ratio", "se_combined", "meets_bound")

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_HARD_FAILURE = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class Schedule:
    """``u_eps = a * eps**delta`` over a decreasing list of noise levels."""

    eps_list: tuple = (0.05, 0.02, 0.01, 0.005)
    a: float = 1.0
    delta: float = 0.8
    lam: float = 1.0

    def u(self, eps: float) -> float:
        return self.a * eps ** self.delta


def validate_schedule(s: Schedule) -> list[str]:
    """Empty list when the schedule stays in the moderate-deviation zone."""
    out = []
    lo = 2.0 / (2.0 + s.lam)
    if not 0 < s.lam <= 1:
        out.append(f"lambda={s.lam} outside (0, 1]")
    if not s.a > 0:
        out.append(f"a={s.a} must be positive")
    if not s.delta < 1:
        out.append(f"delta={s.delta} must be < 1 so that u/eps grows")
    if not s.delta > lo:
        out.append(f"delta={s.delta} must exceed 2/(2+lambda)={lo:.6g} so that u^(2+lambda)/eps^2 shrinks")
    eps = list(s.eps_list)
    for e in eps:
        if not e > 0:
            out.append(f"eps={e} must be positive")
    if out:
        return out
    for prev, cur in zip(eps, eps[1:]):
        if not cur < prev:
            out.append(f"eps={cur} does not decrease after {prev}")
            continue
        if not s.u(cur) / cur > s.u(prev) / prev:
            out.append(f"eps={cur}: u/eps not increasing")
        if not s.u(cur) ** (2 + s.lam) / cur ** 2 < s.u(prev) ** (2 + s.lam) / prev ** 2:
            out.append(f"eps={cur}: u^(2+lambda)/eps^2 not decreasing")
    return out


def _floats(text):
    text = str(text).strip()
    return tuple(float(v) for v in text.split(",") if v.strip()) if text else ()


@dataclass
class ExperimentConfig:
    model_name: str = "linear-sin"
    gamma: float = 0.2
    theta0: tuple = (0.0,)
    theorems: tuple = ("T3",)
    schedule: Schedule = field(default_factory=Schedule)
    alpha: float = 0.05
    test_kind: str = "neyman_pearson"
    estimator: str = "score_one_step"
    omega: str = "ball"
    n_rep: int = 20000
    seed: int = 20240601
    grid_n: int = 256
    tilt: str = "boundary"
    chunk: int = 2048
    output_dir: str = "results"

    _KEYS = {
        "model.name": "model_name", "model.gamma": "gamma", "model.theta0": "theta0",
        "theorems": "theorems", "schedule.eps": None, "schedule.a": None,
        "schedule.delta": None, "schedule.lambda": None, "test.alpha": "alpha",
        "test.kind": "test_kind", "estimator.kind": "estimator", "omega.kind": "omega",
        "mc.n_rep": "n_rep", "mc.seed": "seed", "mc.grid_n": "grid_n", "mc.tilt": "tilt",
        "mc.chunk": "chunk", "output.dir": "output_dir",
    }

    def to_flat(self) -> dict:
        s = self.schedule
        return {
            "model.name": self.model_name, "model.gamma": repr(self.gamma),
            "model.theta0": ",".join(repr(v) for v in self.theta0),
            "theorems": ",".join(self.theorems),
            "schedule.eps": ",".join(repr(v) for v in s.eps_list), "schedule.a": repr(s.a),
            "schedule.delta": repr(s.delta), "schedule.lambda": repr(s.lam),
            "test.alpha": repr(self.alpha), "test.kind": self.test_kind,
            "estimator.kind": self.estimator, "omega.kind": self.omega,
            "mc.n_rep": str(self.n_rep), "mc.seed": str(self.seed), "mc.grid_n": str(self.grid_n),
            "mc.tilt": self.tilt, "mc.chunk": str(self.chunk), "output.dir": self.output_dir,
        }

    @classmethod
    def from_flat(cls, flat: dict) -> "ExperimentConfig":
        unknown = set(flat) - set(cls._KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        d = cls()
        sched = d.schedule
        try:
            kw = {}
            for key, value in flat.items():
                attr = cls._KEYS[key]
                if attr is None:
                    continue
                if attr in ("theta0",):
                    kw[attr] = _floats(value)
                elif attr == "theorems":
                    kw[attr] = tuple(t.strip() for t in str(value).split(",") if t.strip())
                elif attr in ("gamma", "alpha"):
                    kw[attr] = float(value)
                elif attr in ("n_rep", "seed", "grid_n", "chunk"):
                    kw[attr] = int(value)
                else:
                    kw[attr] = str(value).strip()
            kw["schedule"] = Schedule(
                eps_list=_floats(flat.get("schedule.eps", ",".join(map(repr, sched.eps_list)))),
                a=float(flat.get("schedule.a", sched.a)),
                delta=float(flat.get("schedule.delta", sched.delta)),
                lam=float(flat.get("schedule.lambda", sched.lam)),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def validate(self):
        problems = []
        if self.model_name not in MODEL_NAMES:
            problems.append(f"unknown model {self.model_name!r}")
        bad = [t for t in self.theorems if t not in THEOREMS]
        if bad:
            problems.append(f"unknown theorems {bad}")
        if self.test_kind not in TEST_KINDS:
            problems.append(f"unknown test kind {self.test_kind!r}")
        if self.estimator not in ESTIMATOR_KINDS:
            problems.append(f"unknown estimator {self.estimator!r}")
        if self.tilt not in ("boundary", "swap", "none"):
            problems.append(f"unknown tilt {self.tilt!r}")
        if not problems:
            try:
                parse_omega(self.omega, self.model().dim)
            except ValueError as exc:
                problems.append(str(exc))
        problems += validate_schedule(self.schedule)
        if problems:
            raise ConfigError("; ".join(problems))

    def model(self):
        return get_model(self.model_name, gamma=self.gamma, lam=self.schedule.lam)

    def mc(self, workers: int = 1) -> MCConfig:
        return MCConfig(n_rep=self.n_rep, seed=self.seed, tilt=self.tilt, grid_n=self.grid_n,
                        workers=workers, chunk=self.chunk)


def parse_config_text(text: str) -> dict:
    flat = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        flat[key] = value
    return flat


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_flat(parse_config_text(Path(path).read_text(encoding="utf-8")))


def canonical_text(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in sorted(cfg.to_flat().items()))


def content_hash(text: str) -> str:
    """SHA-1 over ``blob <len>\\0<text>``, the same id ``git hash-object`` gives."""
    data = text.encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _fmt(v):
    if v is None:
        return "NA"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    v = float(v)
    return "NA" if math.isnan(v) else format(v, ".17g")


def report_row(rep) -> list[str]:
    emp = list(rep.empirical.values()) + [None, None]
    theo = list(rep.theoretical.values()) + [None, None]
    return [rep.theorem, _fmt(rep.epsilon), _fmt(rep.u_eps), _fmt(rep.x), _fmt(rep.alpha_target),
            _fmt(emp[0]), _fmt(emp[1]), _fmt(theo[0]), _fmt(theo[1]), _fmt(rep.ratio_or_gap),
            _fmt(rep.se_combined), _fmt(rep.meets_bound)]


def write_csv(reports, path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rep in reports:
        w.writerow(report_row(rep))
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def run_experiment(cfg: ExperimentConfig, workers: int = 1, out_dir=None) -> tuple[int, list]:
    """Run every selected theorem over the schedule and write CSV, sidecar and plot scripts.

    Returns ``(exit_status, reports)``.
    """
    start = time.time()
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.model()
    mc = cfg.mc(workers)
    omega = parse_omega(cfg.omega, model.dim)
    reports = []
    for theorem in cfg.theorems:
        reports += bound_comparison_run(model, cfg.schedule, mc, theorem, theta0=np.array(cfg.theta0),
                                        alpha=cfg.alpha, test_kind=cfg.test_kind,
                                        estimator=cfg.estimator, omega=omega)
    csv_path = out / "results.csv"
    write_csv(reports, csv_path)
    text = canonical_text(cfg)
    sidecar = {
        "config": cfg.to_flat(),
        "seed": cfg.seed,
        "config_hash": content_hash(text),
        "wall_clock_seconds": time.time() - start,
        "errors": [f"{r.theorem} eps={r.epsilon}: {r.error}" for r in reports if r.error],
    }
    (out / "results.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8", newline="")
    emit_plots(csv_path)
    if any(r.error for r in reports):
        return EXIT_HARD_FAILURE, reports
    if not all(r.meets_bound for r in reports):
        return EXIT_VIOLATION, reports
    return EXIT_OK, reports


_PLOT_TEMPLATE = '''"""Ratio vs. separation for {theorem}; generated from {source}."""
import matplotlib.pyplot as plt

x = {x!r}
ratio = {ratio!r}
se = {se!r}

fig, ax = plt.subplots()
ax.errorbar(x, ratio, yerr=[3 * s for s in se], marker="o", capsize=3, label="{theorem}")
ax.axhline({asymptote!r}, color="gray", linestyle="--", label="asymptote {asymptote!r}")
ax.set_xlabel("u_eps * sqrt(I) / eps")
ax.set_ylabel("{ylabel}")
ax.legend()
fig.savefig("{stem}.png", dpi=120)
'''


def emit_plots(results_path) -> list[Path]:
    """Write ``plot_<theorem>.py`` next to the CSV, one per theorem present."""
    path = Path(results_path)
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ("theorem", "x", "ratio", "se_combined") if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        rows = list(reader)
    if not rows:
        warnings.warn(f"{path} has no result rows; no plot scripts written")
        return []
    written = []
    for theorem in sorted({r["theorem"] for r in rows}):
        sel = [r for r in rows if r["theorem"] == theorem and r["ratio"] != "NA"]
        num = lambda v: float(v) if v != "NA" else 0.0
        stem = f"plot_{theorem}"
        script = _PLOT_TEMPLATE.format(
            theorem=theorem, source=path.name, stem=stem,
            x=[float(r["x"]) for r in sel], ratio=[float(r["ratio"]) for r in sel],
            se=[num(r["se_combined"]) for r in sel],
            asymptote=-0.5 if theorem == "T2" else 1.0,
            ylabel="scaled log miss" if theorem == "T2" else "ratio",
        )
        target = path.parent / f"{stem}.py"
        target.write_text(script, encoding="utf-8", newline="")
        written.append(target)
    return written


# -- argument handling -------------------------------------------------------------------

def _workers(arg):
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("MDEV_WORKERS")
    return max(1, int(env)) if env else (os.cpu_count() or 1)


def _model_from_args(args):
    return get_model(args.model, gamma=args.gamma, lam=args.lam)


def cmd_fisher(args):
    model = _model_from_args(args)
    f = fisher_information(model, _floats(args.theta0), Grid(args.grid_n))
    print(f"model {model.name} at theta0 = {f.theta0.tolist()}")
    print(np.array2string(f.matrix, precision=10))
    return EXIT_OK


def cmd_check_model(args):
    model = _model_from_args(args)
    rep = check_regularity(model, _floats(args.theta0), Grid(args.grid_n))
    print(f"{'radius':>10} {'linearize':>12} {'quad form':>12} {'info drift':>12}")
    for r, a, b, c in zip(rep.radii, rep.residual_12, rep.residual_14, rep.residual_15):
        print(f"{r:10.4g} {a:12.4e} {b:12.4e} {c:12.4e}")
    for key, val in rep.fitted_orders.items():
        print(f"order {key}: {'unresolved' if val is None else f'{val:.3f}'}")
    print(f"A1 {'pass' if rep.passes_a1 else 'FAIL'}  A2 {'pass' if rep.passes_a2 else 'FAIL'}  "
          f"A3 {'pass' if rep.passes_a3 else 'FAIL'}")
    return EXIT_OK if rep.passes else EXIT_VIOLATION


def cmd_gauss_exceed(args):
    omega = parse_omega(args.omega, args.dim)
    cfg = MCConfig(n_rep=args.n_rep, seed=args.seed if args.seed is not None else MCConfig.seed,
                   workers=_workers(args.workers))
    est = gauss_exceedance(omega, args.r, cfg)
    print(f"P(zeta not in {args.r:g}*{omega.label}) = {est.p_hat:.6e} "
          f"(se {est.se:.2e}, log {est.log_p:.6f}, ess {est.ess:.0f})")
    return EXIT_OK


def cmd_lemma1(args):
    print(f"{'gamma':>12} {'ratio':>14} {'|ratio-1|':>12}")
    for g in _floats(args.gammas):
        r = lemma1_tail_ratio(g, g, args.c)
        print(f"{g:12.4g} {r:14.10f} {abs(r - 1):12.4e}")
    return EXIT_OK


def cmd_run(args):
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = ExperimentConfig()
        cfg.validate()
    if args.seed is not None:
        cfg.seed = args.seed
    status, reports = run_experiment(cfg, _workers(args.workers), args.out)
    for r in reports:
        flag = "ok" if r.meets_bound else ("ERROR " + r.error if r.error else "VIOLATION")
        print(f"{r.theorem} eps={r.epsilon:<8g} x={r.x:8.4g} ratio={r.ratio_or_gap:.6g} {flag}")
    return status


def build_parser():
    p = argparse.ArgumentParser(prog="mdev", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--workers", type=int, help="worker threads (default: MDEV_WORKERS or all cores)")
    common.add_argument("--out", help="output directory")
    sub = p.add_subparsers(dest="command", required=True)

    def model_args(sp):
        sp.add_argument("--model", default="linear-sin", choices=MODEL_NAMES)
        sp.add_argument("--theta0", default="0", help="comma-separated parameter")
        sp.add_argument("--gamma", type=float, default=0.2, help="power-cusp exponent")
        sp.add_argument("--lambda", dest="lam", type=float, default=1.0)
        sp.add_argument("--grid-n", type=int, default=4096)

    model_args(sub.add_parser("fisher", parents=[common], help="print I(theta0)"))
    model_args(sub.add_parser("check-model", parents=[common], help="regularity report"))
    sub.add_parser("run", parents=[common], help="run experiments from a config")
    g = sub.add_parser("gauss-exceed", parents=[common], help="P(zeta not in r*Omega)")
    g.add_argument("--omega", default="ball")
    g.add_argument("--dim", type=int, default=2)
    g.add_argument("--r", type=float, required=True)
    g.add_argument("--n-rep", type=int, default=100_000)
    lm = sub.add_parser("lemma1", parents=[common], help="tail-ratio table")
    lm.add_argument("--c", type=float, default=3.0)
    lm.add_argument("--gammas", default="0.04,0.01,0.0025,0.000625")
    return p


COMMANDS = {"fisher": cmd_fisher, "check-model": cmd_check_model, "run": cmd_run,
            "gauss-exceed": cmd_gauss_exceed, "lemma1": cmd_lemma1}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"mdev: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
