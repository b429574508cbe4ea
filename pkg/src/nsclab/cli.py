"""Command-line entry point: ``nsclab <subcommand> [flags]``.

Every run appends one manifest line to ``<out>/manifests.jsonl``.  Exit codes:
0 when every configured check passes, 2 when a check fails, 1 on usage or
configuration errors.  Floats are written with 17 significant digits.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from . import __version__
from .errors import NSCLabError

RANGE_FLAGS = ("--j", "--omega", "--eps", "--relax-j")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n\n{self.format_help()}")


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def dumps17(obj, indent: int | None = 1, _level: int = 0) -> str:
    """JSON text with floats at 17 significant digits (non-finite floats as NaN / Infinity).

    ``indent=None`` gives a single line.
    """
    if indent is None:
        nl, pad, end = "", "", ""
    else:
        nl, pad, end = "\n", " " * (indent * (_level + 1)), " " * (indent * _level)
    sep = ", " if indent is None else ","
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps17(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{" + nl + (sep + nl).join(items) + nl + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + nl + (sep + nl).join(pad + dumps17(v, indent, _level + 1) for v in obj) + nl + end + "]"
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return format(x, ".17g")
    return json.dumps(str(obj))


def write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r[c]) for c in columns])


def parse_range(text: str, cast=int) -> list:
    """``"a..b"`` (inclusive, integers), ``"x,y,z"`` or a single value."""
    text = str(text).strip()
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [cast(v) for v in text.split(",") if v.strip()]


def parse_qr(text: str) -> tuple[float, float]:
    parts = [float(v) for v in str(text).split(",")]
    if len(parts) != 2:
        raise UsageError(f"--qr expects 'q,r', got {text!r}")
    return parts[0], parts[1]


class Run:
    """Collects artifacts and checks of one invocation and appends its manifest."""

    def __init__(self, args, settings: dict):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = self.out / "manifests.jsonl"
        n_prev = len(self.manifest.read_text().splitlines()) if self.manifest.exists() else 0
        self.run_id = f"{args.command}-{n_prev:04d}"
        self.settings = settings
        self.outputs: list[str] = []
        self.checks: dict[str, bool] = {}
        self.t0 = time.perf_counter()

    def path(self, suffix: str) -> Path:
        p = self.out / f"{self.run_id}_{suffix}"
        self.outputs.append(str(p))
        return p

    def adopt(self, paths) -> None:
        self.outputs.extend(str(p) for p in paths)

    def check(self, name: str, ok: bool) -> None:
        self.checks[name] = bool(ok)

    @property
    def config_hash(self) -> str:
        text = dumps17(self.settings)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def finish(self) -> int:
        code = 0 if all(self.checks.values()) else 2
        entry = {
            "run_id": self.run_id,
            "subcommand": self.args.command,
            "config_hash": self.config_hash,
            "code_version": __version__,
            "settings": self.settings,
            "outputs": self.outputs,
            "wall_clock_s": time.perf_counter() - self.t0,
            "checks": self.checks,
            "exit_code": code,
        }
        with open(self.manifest, "a") as fh:
            fh.write(dumps17(entry, indent=None) + "\n")
        status = "PASS" if code == 0 else "FAIL"
        for name, ok in self.checks.items():
            print(f"{'PASS' if ok else 'FAIL'} {name}")
        print(f"{status} {self.run_id} -> {self.out}")
        return code


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_verify_symbol(args) -> int:
    from .symbol import consistency_report

    run = Run(args, {"draws": args.draws, "seed": args.seed, "n_side": args.n_side})
    rep = consistency_report(args.draws, args.seed, args.n_side)
    run.path("report.json").write_text(dumps17(rep))
    run.check("quartic", rep["max_rel_err_quartic"] < 1e-10)
    run.check("spectrum", rep["max_rel_err_spectrum"] < 1e-10)
    run.check("hessian_fd", rep["max_hessian_fd_err"] < 1e-5)
    run.check("hessian_det", rep["max_rel_err_det"] < 1e-5)
    run.check("rank", rep["rank_violations"] == 0)
    print(dumps17(rep))
    return run.finish()


def cmd_decay(args) -> int:
    from .dispersion import sup_decay_fit

    js = parse_range(args.j)
    signs = ["+", "-"] if args.sign == "both" else [args.sign]
    settings = {"j": js, "signs": signs, "t_range": args.t_range, "samples": args.samples, "n_base": args.n_base}
    run = Run(args, settings)
    rows, fits = [], []
    for j in js:
        for s in signs:
            f = sup_decay_fit(
                j, s, tuple(args.t_range) if args.t_range else None, args.samples, args.n_base, args.convergence
            )
            fits.append(f.to_dict())
            rows += [{"j": j, "sign": s, "t": t, "clock": c, "value": v} for (t, v), c in zip(f.samples, f.clocks)]
            run.check(f"exponent_j{j}{s}", abs(f.exponent + 1) <= args.tol)
            if f.convergence is not None:
                run.check(f"convergence_j{j}{s}", f.convergence < 1e-2)
    write_csv(run.path("decay.csv"), ["j", "sign", "t", "clock", "value"], rows)
    run.path("fits.json").write_text(dumps17({"fits": fits, "tolerance": args.tol}))
    return run.finish()


def cmd_strichartz(args) -> int:
    from .dispersion import strichartz_high_band, strichartz_low_band

    q, r = parse_qr(args.qr)
    settings = {"band": args.band, "q": q, "r": r, "j": args.j, "omega": args.omega, "eps": args.eps}
    run = Run(args, settings)
    if args.band == "high":
        kw = {"q": q, "r": r}
        if args.j is not None:
            kw["j"] = int(args.j)
        if args.omega:
            kw["omegas"] = parse_range(args.omega, float)
        res = strichartz_high_band(**kw)
        run.check("omega_slope", abs(res.exponents["omega"] - res.expected["omega"]) <= 0.04)
    else:
        kw = {"q": q, "r": r}
        if args.j is not None:
            kw["j"] = int(args.j)
        if args.omega or args.eps:
            if not (args.omega and args.eps):
                raise UsageError("low band needs both --omega and --eps lists")
            kw["pairs"] = [(o, e) for o in parse_range(args.omega, float) for e in parse_range(args.eps, float)]
        res = strichartz_low_band(**kw)
        for k in ("omega", "eps"):
            run.check(f"{k}_exponent", abs(res.exponents[k] - res.expected[k]) <= 0.15 * abs(res.expected[k]))
    rows = [{"j": res.j, "band": args.band, **w} for w in res.rows]
    cols = ["j", "band", "omega", "eps", "T", "value"]
    write_csv(run.path("strichartz.csv"), cols, rows)
    run.path("fit.json").write_text(dumps17(res.to_dict()))
    return run.finish()


def _params(args):
    from .symbol import Params

    return Params(mu=args.mu, mu_prime=args.mu_prime, eps=args.eps, omega=args.omega, gamma=args.gamma)


def cmd_energy(args) -> int:
    from .grid import make_grid
    from .lp_besov import DyadicDecomposition
    from .propagator import block_relaxation, choose_delta, energy_identity, evolve_viscous, sandwich_ratio
    from .solver import random_band_limited
    from .symbol import calibrate_beta0

    p = _params(args)
    p.check_rescaled()
    beta0 = args.beta0 if args.beta0 is not None else calibrate_beta0(p)
    grid = make_grid(args.n, 2 * np.pi * args.L)
    dec = DyadicDecomposition.for_grid(grid)
    js = parse_range(args.j) if args.j else list(dec.js)
    settings = {"params": vars(p), "beta0": beta0, "n": args.n, "L": args.L, "j": js, "T": args.T, "seed": args.seed}
    run = Run(args, settings)
    state0 = random_band_limited(grid, 1.0, seed=args.seed, k_lo=0.0, k_hi=grid.k_axis_max)
    rows = []
    for j in js:
        res = energy_identity(state0, p, j, args.T, args.intervals)
        rows.append({"j": j, "kind": "identity", "value": res.max_relative_residual})
        run.check(f"identity_j{j}", res.max_relative_residual <= 1e-6)
    mid_js = [j for j in js if abs(p.omega) * p.eps <= 2.0**j <= beta0 / p.eps]
    if mid_js:
        samples = [evolve_viscous(state0, t, p) for t in np.linspace(0, args.T, 11)]
        delta = choose_delta([state0], mid_js, p.eps, p.mu)
        for j in mid_js:
            ratios = [sandwich_ratio(s, j, p.eps, delta) for s in samples]
            rows.append({"j": j, "kind": "vj_min", "value": min(ratios)})
            rows.append({"j": j, "kind": "vj_max", "value": max(ratios)})
            run.check(f"sandwich_j{j}", 0.5 <= min(ratios) and max(ratios) <= 1.5)
    relax_js = parse_range(args.relax_j) if args.relax_j else []
    if not relax_js:
        j0 = math.ceil(math.log2(beta0 / p.eps) - 1e-12)
        relax_js = [j0, j0 + 1, j0 + 2]
    for j in relax_js:
        if 2.0**j * p.eps < beta0:
            raise UsageError(f"--relax-j {j} is below the high band 2^j eps >= {beta0}")
        br = block_relaxation(p, j, seed=args.seed)
        rows.append({"j": j, "kind": "slow_root", "value": br.slow_root})
        rows.append({"j": j, "kind": "block_rate", "value": br.fitted_rate})
        run.check(f"slow_root_j{j}", abs(br.slow_root - br.target) <= 0.25 * abs(br.target))
        run.check(f"block_rate_j{j}", abs(br.fitted_rate - br.slow_root) <= 0.15 * abs(br.slow_root))
    write_csv(run.path("energy.csv"), ["j", "kind", "value"], rows)
    return run.finish()


def _sim_config(args):
    from .solver import SimulationConfig

    cfg = SimulationConfig.from_yaml(args.config) if args.config else SimulationConfig()
    d = cfg.to_dict()
    over = {
        ("grid", "n"): args.n,
        ("grid", "L"): args.L,
        ("params", "mu"): args.mu,
        ("params", "mu_prime"): args.mu_prime,
        ("params", "eps"): args.eps,
        ("params", "omega"): args.omega,
        ("params", "gamma"): args.gamma,
        ("ic", "profile"): args.profile,
        ("ic", "amplitude"): args.amplitude,
        ("ic", "seed"): args.seed,
        ("ic", "snapshot"): args.ic_snapshot,
        ("time", "T"): args.T,
        ("time", "dt"): args.dt,
        ("monitors", "cadence"): args.cadence,
        ("monitors", "alpha"): args.alpha,
        ("monitors", "beta0"): args.beta0,
        ("blowup", "density"): args.blowup_density,
        ("blowup", "growth"): args.blowup_growth,
    }
    if args.qr:
        q, r = parse_qr(args.qr)
        over[("monitors", "q")], over[("monitors", "r")] = q, r
    for (sec, key), val in over.items():
        if val is not None:
            d.setdefault(sec, {})[key] = val
    return SimulationConfig.from_dict(d)


def cmd_simulate(args) -> int:
    from .solver import simulate, write_run_outputs

    cfg = _sim_config(args)
    run = Run(args, cfg.to_dict())
    run.path("config.yaml").write_text(cfg.to_yaml())
    res = simulate(cfg, snapshot_every=args.snapshot_every)
    paths = write_run_outputs(res, run.out, prefix=run.run_id)
    run.adopt(paths.values())
    run.check("completed", res.classification == "completed")
    print(dumps17(res.summary()))
    return run.finish()


def cmd_sweep(args) -> int:
    from .solver import nonincreasing_within, omega_sweep

    omegas = parse_range(args.omega, float) if args.omega else [4.0, 8.0, 16.0, 32.0]
    args.omega = None
    if args.eps is not None:
        raise UsageError("sweep sets eps = 1/Omega; --eps is not accepted")
    cfg = _sim_config(args)
    run = Run(args, {"base": cfg.to_dict(), "omegas": omegas, "threshold_factor": args.threshold_factor})
    rows = omega_sweep(cfg, omegas, threshold_factor=args.threshold_factor)
    dict_rows = [vars(r) for r in rows]
    cols = list(dict_rows[0])
    write_csv(run.path("sweep.csv"), cols, dict_rows)
    run.check("A_nonincreasing", nonincreasing_within([r.max_A for r in rows], 0.1))
    run.check("no_blowup_at_largest_omega", rows[-1].classification == "completed")
    bounded = [r.omega for r in rows if r.classification == "completed"]
    summary = {"rows": dict_rows, "empirical_omega_star": min(bounded) if bounded else None}
    run.path("sweep.json").write_text(dumps17(summary))
    return run.finish()


def cmd_report(args) -> int:
    manifest = Path(args.out) / "manifests.jsonl"
    entries = [json.loads(line) for line in manifest.read_text().splitlines()] if manifest.exists() else []
    run = Run(args, {"manifests": len(entries)})
    table = [
        {
            "run_id": e["run_id"],
            "subcommand": e["subcommand"],
            "passed": all(e["checks"].values()),
            "failed_checks": sorted(k for k, v in e["checks"].items() if not v),
            "wall_clock_s": e["wall_clock_s"],
        }
        for e in entries
    ]
    run.path("report.json").write_text(dumps17({"runs": table}))
    for t in table:
        print(f"{'PASS' if t['passed'] else 'FAIL'} {t['run_id']} {' '.join(t['failed_checks'])}".rstrip())
    run.check("all_runs_pass", all(t["passed"] for t in table))
    return run.finish()


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def _common(p):
    p.add_argument("--config", help="YAML config file (simulate, sweep)")
    p.add_argument("--out", default="nsclab_out", help="output directory (default nsclab_out)")
    p.add_argument("--seed", type=int, default=None, help="random seed")
    p.add_argument("--threads", type=int, default=1, help="FFT worker threads")


def _physics(p):
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--mu-prime", type=float, default=None)
    p.add_argument("--eps", default=None)
    p.add_argument("--omega", default=None)
    p.add_argument("--gamma", type=float, default=None)


def build_parser() -> Parser:
    parser = Parser(prog="nsclab", description="Spectral laboratory for the rotating compressible system.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=Parser)
    parser.subcommands = sub.choices

    p = sub.add_parser("verify-symbol", help="symbol, quartic and Hessian consistency")
    _common(p)
    p.add_argument("--draws", type=int, default=10_000)
    p.add_argument("--n-side", type=int, default=20)

    p = sub.add_parser("decay", help="sup-norm decay fits of the oscillatory blocks")
    _common(p)
    p.add_argument("--j", default="-3..3", help="block range 'a..b' or list")
    p.add_argument("--sign", choices=["+", "-", "both"], default="both")
    p.add_argument("--t-range", type=float, nargs=2, default=None, help="explicit time window")
    p.add_argument("--samples", type=int, default=6)
    p.add_argument("--n-base", type=int, default=96)
    p.add_argument("--convergence", action="store_true", help="repeat the last sample at doubled nodes")
    p.add_argument("--tol", type=float, default=0.15, help="exponent tolerance around -1")

    p = sub.add_parser("strichartz", help="Strichartz block-norm scaling sweeps")
    _common(p)
    p.add_argument("--band", choices=["high", "low"], default="high")
    p.add_argument("--j", default=None)
    p.add_argument("--omega", default=None, help="list of Omega values")
    p.add_argument("--eps", default=None, help="list of eps values (low band)")
    p.add_argument("--qr", default="4,4", help="exponents 'q,r'")

    p = sub.add_parser("energy", help="block energy identity, V_j sandwich and high-band relaxation")
    _common(p)
    p.add_argument("--mu", type=float, default=0.5)
    p.add_argument("--mu-prime", type=float, default=0.0)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--omega", type=float, default=10.0)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--beta0", type=float, default=None, help="high-band threshold (calibrated when absent)")
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--L", type=float, default=1.0)
    p.add_argument("--j", default=None, help="blocks for the identity (default: all resolved)")
    p.add_argument("--relax-j", default=None, help="high-band blocks for the relaxation fit")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--intervals", type=int, default=2000)

    for name, hlp in (("simulate", "nonlinear run from a config"), ("sweep", "Omega sweep with eps = 1/Omega")):
        p = sub.add_parser(name, help=hlp)
        _common(p)
        _physics(p)
        p.add_argument("--n", type=int, default=None)
        p.add_argument("--L", type=float, default=None)
        p.add_argument("--profile", default=None)
        p.add_argument("--amplitude", type=float, default=None)
        p.add_argument("--ic-snapshot", default=None)
        p.add_argument("--T", type=float, default=None)
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--cadence", type=int, default=None)
        p.add_argument("--qr", default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--beta0", type=float, default=None)
        p.add_argument("--blowup-density", type=float, default=None)
        p.add_argument("--blowup-growth", type=float, default=None)
        if name == "simulate":
            p.add_argument("--snapshot-every", type=int, default=None)
        else:
            p.add_argument("--threshold-factor", type=float, default=2.0)

    p = sub.add_parser("report", help="summarise the manifests in --out")
    _common(p)
    return parser


def _merge_range_values(argv: list[str]) -> list[str]:
    """Glue ``--j -2..2`` into ``--j=-2..2`` so negative ranges are not read as flags."""
    out, i = [], 0
    while i < len(argv):
        a = argv[i]
        if a in RANGE_FLAGS and i + 1 < len(argv) and not argv[i + 1].startswith("--"):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
        else:
            out.append(a)
            i += 1
    return out


COMMANDS = {
    "verify-symbol": cmd_verify_symbol,
    "decay": cmd_decay,
    "strichartz": cmd_strichartz,
    "energy": cmd_energy,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        print(parser.format_help(), file=sys.stderr)
        return 1
    try:
        args, extra = parser.parse_known_args(_merge_range_values(argv))
        if args.command is None:
            raise UsageError(parser.format_help())
        if extra:
            helptext = parser.subcommands[args.command].format_help()
            raise UsageError(f"unrecognized arguments: {' '.join(extra)}\n\n{helptext}")
        if args.seed is None and args.command not in ("simulate", "sweep"):
            args.seed = 0
        if args.command in ("simulate", "sweep"):
            for k in ("omega", "eps"):
                v = getattr(args, k)
                if v is not None and (args.command == "simulate" or k == "eps"):
                    setattr(args, k, float(v))
        with sfft.set_workers(max(1, args.threads)):
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (NSCLabError, OSError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
