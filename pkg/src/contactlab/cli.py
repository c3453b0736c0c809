"""Command-line front end: ``contactlab <subcommand> --config run.yaml``.

Every subcommand validates the whole config first, writes its CSV/JSON
artifacts into the output directory and finishes with ``manifest.json``.
Exit status is 0 iff every check the subcommand makes passes; 2 signals an
unusable config, 1 a failed check.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .checks import run_exact_suite
from .config import ConfigError, RunConfig, load_config, parse_config
from .coupling import SamplingError, conditioning_events, joint_domination_run, sample_initial_pairs
from .dynamics import ModelParams, ParameterError, simulate
from .estimators import (
    BracketError,
    CriticalEstimate,
    CriticalProtocol,
    FitError,
    compare_critical,
    estimate_critical,
    estimate_expected_infected_curve,
    integrability_functional,
    survival_sweep,
)
from .graphs import Graph, GraphError
from .montecarlo import replica_rng, replica_sizes

OUT_ENV = "CONTACTLAB_OUT"
SWEEP_HEADER = ["lambda", "L", "T", "replicas", "survival", "stderr"]
COUPLING_HEADER = ["replica", "t", "n_lower", "n_upper", "n_discrepancy", "n_dominator", "domination_ok"]
SWEEP_POINTS = 21


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Run:
    """Collects artifacts for one subcommand invocation."""

    def __init__(self, out: Path, command: str, cfg: RunConfig, text: str, config_path: str, workers: int):
        self.out = out
        self.command = command
        self.cfg = cfg
        self.text = text
        self.config_path = config_path
        self.workers = workers
        self.artifacts: dict = {}
        self.t0 = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)

    def write_csv(self, name: str, header: list, rows) -> None:
        path = self.out / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        self._register(name)

    def write_json(self, name: str, obj) -> None:
        (self.out / name).write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")
        self._register(name)

    def _register(self, name):
        self.artifacts[name] = hashlib.sha256((self.out / name).read_bytes()).hexdigest()

    def finish(self, ok: bool) -> int:
        manifest = {
            "command": self.command,
            "version": __version__,
            "seed": self.cfg.seed,
            "workers": self.workers,
            "config_path": self.config_path,
            "config_text": self.text,
            "config": self.cfg.echo(),
            "wall_seconds": time.perf_counter() - self.t0,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "artifacts": self.artifacts,
            "pass": ok,
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n")
        print(f"{self.command}: {'PASS' if ok else 'FAIL'}; artifacts in {self.out}")
        return 0 if ok else 1


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, (set, frozenset, tuple)):
        return sorted(o, key=repr) if isinstance(o, (set, frozenset)) else list(o)
    return repr(o)


def _finite_or_none(x):
    return x if isinstance(x, (int, float)) and math.isfinite(x) else None


# subcommands


def cmd_simulate(run: Run) -> bool:
    cfg = run.cfg
    g = cfg.graph.build()
    init = cfg.initial_set(g)
    grid = cfg.observe.resolve(cfg.horizon)
    rows, events, summary = [], [], []
    for lam in cfg.lambdas:
        params = ModelParams(lam)
        if cfg.record_events:
            sizes = np.zeros((cfg.replicas, len(grid)), dtype=np.int64)
            for k in range(cfg.replicas):
                tr = simulate(g, params, init, cfg.horizon, grid, seed=replica_rng(cfg.seed, k))
                sizes[k] = tr.sizes
                events += [(lam, k, t, site, kind) for t, site, kind in tr.events]
        else:
            sizes = replica_sizes(g, params, init, grid, cfg.replicas, cfg.seed, run.workers)
        for k in range(cfg.replicas):
            for t, n in zip(grid, sizes[k]):
                rows.append((lam, k, t, n))
        alive = sizes[:, -1] > 0
        p = float(alive.mean())
        summary.append(
            {
                "lambda": lam,
                "survival_at_horizon": p,
                "survival_stderr": math.sqrt(p * (1 - p) / cfg.replicas),
                "mean_infected": sizes.mean(axis=0),
            }
        )
    run.write_csv("trajectories.csv", ["lambda", "replica", "t", "n_infected"], rows)
    if cfg.record_events:
        run.write_csv("events.csv", ["lambda", "replica", "t", "site", "kind"], events)
    run.write_json("simulate.json", {"graph": repr(g), "times": grid, "runs": summary})
    return True


def _construction_seed(seed: int, k: int) -> int:
    return kernels.mix64((kernels.master_key(seed) + k) & 0xFFFFFFFFFFFFFFFF)


def cmd_couple(run: Run) -> bool:
    cfg = run.cfg
    if cfg.graph_prime is None:
        raise ConfigError("couple needs 'graph_prime'")
    g, gp = cfg.graph.build(), cfg.graph_prime.build()
    if not gp.finite:
        raise ConfigError("couple samples initial pairs on graph_prime, which must be finite")
    events = conditioning_events(g, gp)
    if not events:
        raise ConfigError("graph and graph_prime do not differ in any edge")
    pick = 2 * cfg.couple.edge + (cfg.couple.side == "v")
    if pick >= len(events):
        raise ConfigError(f"couple.edge {cfg.couple.edge} out of range; {len(events) // 2} edges differ")
    event = events[pick]
    grid = cfg.observe.resolve(cfg.horizon)
    ok = True
    reports = []
    multi = len(cfg.lambdas) > 1
    for lam in cfg.lambdas:
        params = ModelParams(lam)
        rep = {"lambda": lam, "event": {"u": event.u, "v": event.v, "zero_end": event.zero_end}}
        try:
            pairs = sample_initial_pairs(
                gp,
                params,
                event,
                cfg.couple.relax_time,
                cfg.replicas,
                seed=cfg.seed,
                batch=cfg.couple.batch,
                max_attempts=cfg.couple.max_attempts,
                floor=cfg.couple.floor,
                workers=run.workers,
            )
        except SamplingError as exc:
            rep.update(sampling_failure=str(exc), diagnostics=exc.diagnostics)
            reports.append(rep)
            ok = False
            continue
        rows = []
        violations = checked = ties = 0
        zeta_tot = np.zeros(len(grid))
        dom_tot = np.zeros(len(grid))
        for k, pair in enumerate(pairs):
            dr = joint_domination_run(
                g, gp, params, event, pair, cfg.horizon, grid, seed=_construction_seed(cfg.seed, k), strict=False
            )
            violations += dr.violations
            checked += dr.events_checked
            ties += dr.lower.ties
            zeta_tot += dr.zeta_sizes
            dom_tot += dr.dominator_sizes
            for i, t in enumerate(grid):
                dom_ok = dr.zeta_snapshots[i] <= dr.dominator.snapshots[i]
                rows.append(
                    (
                        k,
                        t,
                        len(dr.lower.snapshots[i]),
                        len(dr.upper.snapshots[i]),
                        dr.zeta_sizes[i],
                        dr.dominator_sizes[i],
                        dom_ok and dr.violations == 0,
                    )
                )
        name = f"coupling_lambda{lam:g}.csv" if multi else "coupling.csv"
        run.write_csv(name, COUPLING_HEADER, rows)
        rep.update(
            weight=pairs[0].weight,
            weight_stderr=pairs[0].weight_se,
            attempts=pairs[0].attempts,
            replicas=len(pairs),
            events_checked=checked,
            violations=violations,
            tie_anomalies=ties,
            times=grid,
            mean_discrepancy=zeta_tot / len(pairs),
            mean_dominator=dom_tot / len(pairs),
            csv=name,
        )
        ok &= violations == 0
        reports.append(rep)
    run.write_json("couple.json", {"graph": repr(g), "graph_prime": repr(gp), "runs": reports, "pass": ok})
    return ok


def cmd_exact_check(run: Run) -> bool:
    reports = [r.to_json() for r in run_exact_suite(run.cfg.seed, **run.cfg.exact.model_dump())]
    run.write_json("exact_check.json", reports)
    for r in reports:
        status = "PASS" if r["pass"] else "FAIL"
        print(f"{status} {r['check_name']}: {r['instances']} instances, max residual {r['max_residual']:.3e} < {r['tolerance']:.0e}")
    return all(r["pass"] for r in reports)


def cmd_curve(run: Run) -> bool:
    cfg = run.cfg
    g = cfg.graph.build()
    init = cfg.initial_set(g)
    grid = cfg.observe.resolve(cfg.horizon)
    rows, summary = [], []
    for lam in cfg.lambdas:
        curve = estimate_expected_infected_curve(
            g,
            ModelParams(lam),
            init,
            grid,
            cfg.replicas,
            cfg.seed,
            fit_window=cfg.curve.fit_window,
            bootstrap=cfg.curve.bootstrap,
            workers=run.workers,
        )
        integral = integrability_functional(curve)
        rows += [(lam, t, m, s) for t, m, s in zip(curve.grid, curve.mean, curve.std_error)]
        fit = curve.fit
        summary.append(
            {
                "lambda": lam,
                "fit": {
                    "rate": fit.rate,
                    "amplitude": fit.amplitude,
                    "window": fit.window,
                    "r_squared": fit.r_squared,
                    "rate_ci": fit.rate_ci,
                    "decaying": fit.decaying,
                },
                "integral": _finite_or_none(integral.value),
                "integral_stderr": integral.std_error,
                "divergent": integral.divergent,
            }
        )
    run.write_csv("curve.csv", ["lambda", "t", "mean", "stderr"], rows)
    run.write_json("curve.json", {"graph": repr(g), "replicas": cfg.replicas, "runs": summary})
    return True


def _protocol(cfg: RunConfig, g: Graph) -> CriticalProtocol:
    c = cfg.critical
    init = None if cfg.init == "origin" else tuple(cfg.initial_set(g))
    return CriticalProtocol(
        horizon=cfg.horizon,
        threshold=c.threshold,
        replicas=cfg.replicas,
        seed=cfg.seed,
        lam_lo=c.lambda_lo,
        lam_hi=c.lambda_hi,
        bootstrap=c.bootstrap,
        tol=c.tol,
        window=cfg.window,
        confidence=c.confidence,
        init=init,
    )


def _sweep_rows(est: CriticalEstimate, cfg: RunConfig, g: Graph):
    lams = np.linspace(cfg.critical.lambda_lo, cfg.critical.lambda_hi, SWEEP_POINTS)
    for lam, q, se in survival_sweep(est.thresholds, lams):
        yield (lam, g.n_vertices, cfg.horizon, cfg.replicas, q, se)


def _critical_json(est: CriticalEstimate) -> dict:
    return {
        "lambda_hat": est.lambda_hat,
        "ci_lo": est.ci_lo,
        "ci_hi": est.ci_hi,
        "half_width": est.half_width,
        "graph": est.graph,
        "protocol": est.protocol,
        "bisection": [{"lambda": a, "survival": b, "stderr": c} for a, b, c in est.steps],
    }


def cmd_critical(run: Run) -> bool:
    cfg = run.cfg
    g = cfg.graph.build()
    est = estimate_critical(g, _protocol(cfg, g), workers=run.workers)
    run.write_csv("sweep.csv", SWEEP_HEADER, _sweep_rows(est, cfg, g))
    run.write_json("critical.json", _critical_json(est))
    print(f"lambda_hat = {est.lambda_hat:.4f}  CI [{est.ci_lo:.4f}, {est.ci_hi:.4f}]")
    return True


def cmd_compare(run: Run) -> bool:
    cfg = run.cfg
    if cfg.graph_prime is None:
        raise ConfigError("compare needs 'graph_prime'")
    g, gp = cfg.graph.build(), cfg.graph_prime.build()
    cmp = compare_critical(g, gp, _protocol(cfg, g), workers=run.workers)
    run.write_csv("sweep_g.csv", SWEEP_HEADER, _sweep_rows(cmp.base, cfg, g))
    run.write_csv("sweep_g_prime.csv", SWEEP_HEADER, _sweep_rows(cmp.perturbed, cfg, gp))
    limit = cfg.critical.max_half_width
    ok = cmp.contains_zero and (limit is None or cmp.half_width <= limit)
    run.write_json(
        "compare.json",
        {
            "g": _critical_json(cmp.base),
            "g_prime": _critical_json(cmp.perturbed),
            "delta": cmp.delta,
            "delta_ci": [cmp.delta_ci_lo, cmp.delta_ci_hi],
            "half_width": cmp.half_width,
            "max_half_width": limit,
            "contains_zero": cmp.contains_zero,
            "common_random_numbers": cmp.common_random_numbers,
            "pass": ok,
        },
    )
    print(f"delta = {cmp.delta:+.4f}  CI [{cmp.delta_ci_lo:+.4f}, {cmp.delta_ci_hi:+.4f}]")
    return ok


COMMANDS = {
    "simulate": (cmd_simulate, "trajectory summaries"),
    "couple": (cmd_couple, "coupled runs with the discrepancy domination check"),
    "exact-check": (cmd_exact_check, "exact-oracle residual suites"),
    "curve": (cmd_curve, "expected infected curve, tail fit and its integral"),
    "critical": (cmd_critical, "pseudo-critical value of one graph"),
    "compare": (cmd_compare, "paired pseudo-critical values of graph and graph_prime"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="contactlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=name != "exact-check", help="YAML run config")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--workers", type=int, default=1, help="worker threads; never changes results")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<config>/<command>)")
    return ap


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    root = Path(os.environ.get(OUT_ENV, "runs"))
    stem = Path(args.config).stem if args.config else "default"
    return root / stem / args.command


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    overrides = {} if args.seed is None else {"seed": args.seed}
    try:
        if args.config:
            cfg, text = load_config(args.config, overrides)
        else:
            text = "graph: {base: ring, L: 4}\n"
            cfg, _ = parse_config(text, "<default>", overrides)
    except ConfigError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return 2
    run = Run(_out_dir(args), args.command, cfg, text, args.config or "<default>", args.workers)
    fn = COMMANDS[args.command][0]
    try:
        ok = fn(run)
    except (ConfigError, GraphError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (BracketError, FitError) as exc:
        run.write_json("error.json", {"error": type(exc).__name__, "message": str(exc), **_bracket_info(exc)})
        print(f"error: {exc}", file=sys.stderr)
        run.finish(False)
        return 1
    return run.finish(ok)


def _bracket_info(exc) -> dict:
    if isinstance(exc, BracketError):
        return {"proxy_lo": exc.proxy_lo, "proxy_hi": exc.proxy_hi}
    return {}


if __name__ == "__main__":
    sys.exit(main())
