"""Command-line front end.

Subcommands::

    timely-pir capacity CONFIG [--tau 1/2,1/2]
    timely-pir solve CONFIG --metric {peak,avg} [--rmin R] [--resolution H]
    timely-pir tradeoff CONFIG [--rmin-grid START:STOP:STEP | --rmin-points K]
    timely-pir simulate CONFIG [--policy FILE | --allocation 8,6] [--epochs N] [--seed S]
    timely-pir verify CONFIG --metric {peak,avg} [--resolution H]

CONFIG is a flat ``key = value`` file (``#`` starts a comment)::

    N = 2
    M = 3
    L = 8
    mu = 1, 3
    sigma2 = 4, 1
    r_min = 1/2
    family = gamma        # optional; one name or one per server

Numbers may be decimals or exact fractions.  ``--format structured`` switches
to JSON lines with a fixed field order; exact rationals are written as
``"p/q"`` strings so they survive the round trip.

Exit codes: 0 success, 2 invalid configuration, 3 infeasible, 4 verification
failure, 1 any other solver error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import List, Optional

from . import __version__
from .api import solve
from .capacity import MAX_CORNER_SERVERS, capacity_of_traffic, corner_points
from .errors import (InfeasibleError, InvalidConfigError, SizeLimitError, TimelyPIRError)
from .model import (DownloadAllocation, MixturePolicy, ServerStats, Solution, SystemConfig,
                    avg_aoi, mixture_avg_aoi, mixture_peak_aoi, normalize_metric, pir_capacity)
from .oracle import default_resolution, verify
from .sim import FAMILIES, fit_distributions, run

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3
EXIT_VERIFY_FAILED = 4

_KEYS = {"N": "N", "M": "M", "L": "L", "mu": "mu", "sigma2": "sigma2", "r_min": "r_min",
         "rmin": "r_min", "family": "family"}


# --------------------------------------------------------------------------
# Config files
# --------------------------------------------------------------------------

@dataclass
class ConfigFile:
    N: int
    M: int
    L: Fraction
    mu: List
    sigma2: List
    r_min: Optional[Fraction]
    family: Optional[List[str]]
    path: str = "<config>"

    def system(self, r_min=None) -> SystemConfig:
        r = self.r_min if r_min is None else r_min
        if r is None:
            raise InvalidConfigError(f"{self.path}: r_min missing; set it in the file or pass --rmin")
        check_rate(r, self.N, self.M)
        servers = [ServerStats(m, s) for m, s in zip(self.mu, self.sigma2)]
        return SystemConfig(self.N, self.M, self.L, servers, r)


def check_rate(r, N, M):
    cap = pir_capacity(N, M)
    if r > cap:
        raise InfeasibleError(f"r_min={r} exceeds the PIR capacity C_PIR={cap} for N={N}, M={M}")
    if r < Fraction(1, M):
        raise InvalidConfigError(f"r_min={r} is below 1/M={Fraction(1, M)}")


def _number(text: str, where: str) -> Fraction:
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise InvalidConfigError(f"{where}: cannot parse number {text.strip()!r}") from None


def _items(value: str) -> List[str]:
    value = value.strip()
    if value.startswith("[") and value.endswith("]"):
        value = value[1:-1]
    return [v for v in value.replace(",", " ").split() if v]


def parse_config(text: str, path: str = "<config>") -> ConfigFile:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{path}:{lineno}"
        if "=" not in line:
            raise InvalidConfigError(f"{where}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise InvalidConfigError(f"{where}: unknown field {key!r}; known fields: "
                                     "N, M, L, mu, sigma2, r_min, family")
        key = _KEYS[key]
        if key in raw:
            raise InvalidConfigError(f"{where}: field {key!r} given twice")
        raw[key] = (value, where)
    for key in ("N", "M", "L", "mu"):
        if key not in raw:
            raise InvalidConfigError(f"{path}: required field {key!r} missing")

    def integer(key):
        value, where = raw[key]
        num = _number(value, f"{where}: field {key!r}")
        if num.denominator != 1:
            raise InvalidConfigError(f"{where}: field {key!r} must be an integer")
        return int(num)

    N, M = integer("N"), integer("M")
    if N < 1:
        raise InvalidConfigError(f"{raw['N'][1]}: field 'N' must be at least 1")
    if M not in (2, 3):
        raise InvalidConfigError(f"{raw['M'][1]}: field 'M' must be 2 or 3, got {M}")
    L = _number(raw["L"][0], f"{raw['L'][1]}: field 'L'")
    if L <= 0:
        raise InvalidConfigError(f"{raw['L'][1]}: field 'L' must be positive")

    def vector(key, default=None):
        if key not in raw:
            return default
        value, where = raw[key]
        vals = [_number(v, f"{where}: field {key!r}") for v in _items(value)]
        if len(vals) != N:
            raise InvalidConfigError(f"{where}: field {key!r} has {len(vals)} entries, N={N}")
        return vals

    mu = vector("mu")
    sigma2 = vector("sigma2", [Fraction(0)] * N)
    for where_key, vals, strict in (("mu", mu, True), ("sigma2", sigma2, False)):
        if any((v <= 0) if strict else (v < 0) for v in vals):
            where = raw[where_key][1] if where_key in raw else path
            raise InvalidConfigError(f"{where}: field {where_key!r} must be "
                                     f"{'positive' if strict else 'non-negative'}")
    r_min = None
    if "r_min" in raw:
        r_min = _number(raw["r_min"][0], f"{raw['r_min'][1]}: field 'r_min'")
    family = None
    if "family" in raw:
        value, where = raw["family"]
        names = _items(value)
        if len(names) == 1:
            names = names * N
        if len(names) != N or any(n not in FAMILIES for n in names):
            raise InvalidConfigError(f"{where}: field 'family' must be one of {FAMILIES}, "
                                     f"once or once per server")
        family = names
    return ConfigFile(N, M, L, mu, sigma2, r_min, family, path)


def load_config(path: str) -> ConfigFile:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path)


# --------------------------------------------------------------------------
# Output
# --------------------------------------------------------------------------

def jsonable(x):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, dict):
        return {k: jsonable(v) for k, v in x.items()}
    if hasattr(x, "item"):
        return x.item()
    return x


def human(x) -> str:
    if isinstance(x, Fraction):
        if x.denominator == 1:
            return str(x.numerator)
        return f"{x} ({float(x):.10g})"
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def short(x) -> str:
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, float):
        return f"{x:.8g}"
    return str(x)


def vec(v) -> str:
    return "(" + ", ".join(short(x) for x in v) + ")"


class Emitter:
    def __init__(self, structured: bool, stream=None):
        self.structured = structured
        self.stream = stream or sys.stdout

    def record(self, kind: str, fields: dict, text: Optional[str] = None):
        if self.structured:
            payload = {"record": kind, **jsonable(fields)}
            self.stream.write(json.dumps(payload, separators=(",", ":")) + "\n")
        elif text is not None:
            self.stream.write(text + "\n")

    def text(self, line: str):
        if not self.structured:
            self.stream.write(line + "\n")


def solution_fields(sol: Solution, config: SystemConfig) -> dict:
    return {
        "metric": sol.metric,
        "branch": sol.branch,
        "N": config.num_servers,
        "M": config.num_messages,
        "L": config.message_size,
        "r_min": config.r_min,
        "allocation": list(sol.allocation.d),
        "objective": sol.objective,
        "ideal_objective": sol.ideal_objective,
        "achieved_rate": sol.achieved_rate,
        "mixture": [{"p": p, "allocation": list(c.d)}
                    for c, p in zip(sol.mixture.components, sol.mixture.probabilities)],
    }


def emit_solution(out: Emitter, sol: Solution, config: SystemConfig):
    lines = [
        f"metric:          {sol.metric}",
        f"branch:          {sol.branch}",
        f"r_min:           {human(config.r_min)}",
        f"allocation:      {vec(sol.allocation.d)}",
        f"objective:       {human(sol.objective)}",
        f"ideal objective: {human(sol.ideal_objective)}",
        f"achieved rate:   {human(sol.achieved_rate)}",
        "mixture:",
    ]
    lines += [f"  p={short(p):<22} d={vec(c.d)}"
              for c, p in zip(sol.mixture.components, sol.mixture.probabilities)]
    out.record("solution", solution_fields(sol, config), "\n".join(lines))


def emit_report(out: Emitter, report):
    fields = {"passed": report.passed, "metric": report.metric,
              "solver_objective": report.solver_objective,
              "oracle_objective": report.oracle_objective, "gap": report.gap,
              "slack": report.slack, "resolution": report.resolution,
              "violations": report.violations, "failures": report.failures}
    out.record("verification", fields, "oracle: " + report.summary())


def _to_fraction(x):
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, int):
        return Fraction(x)
    return x


def policy_from_records(path: str, N: int) -> MixturePolicy:
    """Mixture from a structured ``solve`` output file (first solution record)."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise InvalidConfigError(f"cannot read policy {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            raise InvalidConfigError(f"{path}:{lineno}: not a JSON line") from None
        if rec.get("record") != "solution":
            continue
        try:
            comps = [DownloadAllocation(tuple(_to_fraction(v) for v in m["allocation"]))
                     for m in rec["mixture"]]
            probs = [_to_fraction(m["p"]) for m in rec["mixture"]]
            policy = MixturePolicy(tuple(comps), tuple(probs))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidConfigError(f"{path}:{lineno}: malformed solution record ({exc})") from None
        if len(policy.components[0]) != N:
            raise InvalidConfigError(f"{path}:{lineno}: policy has {len(policy.components[0])} "
                                     f"servers, config has {N}")
        return policy
    raise InvalidConfigError(f"{path}: no solution record found")


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def _resolution(text: Optional[str], config: SystemConfig):
    if text is None:
        return default_resolution(config)
    text = text.strip()
    if text.startswith("L/"):
        return config.message_size / _number(text[2:], "--resolution")
    value = _number(text, "--resolution")
    if value <= 0:
        raise InvalidConfigError("--resolution must be positive")
    return value


def _rate_arg(text: Optional[str]):
    return None if text is None else _number(text, "--rmin")


def cmd_capacity(args, out: Emitter) -> int:
    cfg = load_config(args.config)
    cap = pir_capacity(cfg.N, cfg.M)
    out.record("capacity", {"N": cfg.N, "M": cfg.M, "L": cfg.L, "C_PIR": cap},
               f"N={cfg.N} M={cfg.M} L={human(cfg.L)}\nC_PIR = {human(cap)}")
    if args.tau:
        tau = [_number(t, "--tau") for t in _items(args.tau)]
        if len(tau) != cfg.N:
            raise InvalidConfigError(f"--tau has {len(tau)} entries, N={cfg.N}")
        try:
            rate = capacity_of_traffic(tau, cfg.M)
        except ValueError as exc:
            raise InvalidConfigError(f"--tau: {exc}") from None
        out.record("traffic", {"tau": tau, "rate": rate}, f"C(tau={vec(tau)}) = {human(rate)}")
    if cfg.N > MAX_CORNER_SERVERS:
        out.text(f"corner table skipped (N > {MAX_CORNER_SERVERS})")
        return EXIT_OK
    out.text("corner points (downloads sorted non-increasing):")
    for c in corner_points(cfg.N, cfg.M, cfg.L):
        out.record("corner", {"allocation": list(c.allocation.d), "rate": c.rate},
                   f"  {vec(c.allocation.d):<28} rate {c.rate}")
    return EXIT_OK


def _verify_block(out, sol, config, resolution, skip=False):
    if skip:
        return None
    try:
        report = verify(sol, config, resolution)
    except SizeLimitError as exc:
        out.record("verification", {"passed": None, "skipped": str(exc)},
                   f"oracle: skipped ({exc})")
        return None
    emit_report(out, report)
    return report


def cmd_solve(args, out: Emitter) -> int:
    cfg = load_config(args.config)
    config = cfg.system(_rate_arg(args.rmin))
    sol = solve(config, args.metric)
    emit_solution(out, sol, config)
    report = _verify_block(out, sol, config, _resolution(args.resolution, config),
                           skip=args.no_verify)
    if report is not None and not report.passed:
        return EXIT_VERIFY_FAILED
    return EXIT_OK


def rate_grid(cfg: ConfigFile, grid_text: Optional[str], points: int) -> List[Fraction]:
    lo, hi = Fraction(1, cfg.M), pir_capacity(cfg.N, cfg.M)
    if grid_text is None:
        if points < 1:
            raise InvalidConfigError("--rmin-points must be at least 1")
        if points == 1:
            return [lo]
        return [lo + (hi - lo) * k / (points - 1) for k in range(points)]
    parts = grid_text.split(":")
    if len(parts) != 3:
        raise InvalidConfigError(f"--rmin-grid expects START:STOP:STEP, got {grid_text!r}")
    start, stop, step = (_number(p, "--rmin-grid") for p in parts)
    if step <= 0:
        raise InvalidConfigError("--rmin-grid step must be positive")
    grid = []
    r = start
    while r <= stop:
        grid.append(r)
        r = start + step * len(grid)
    if not grid:
        raise InvalidConfigError("--rmin-grid is empty")
    for r in grid:
        check_rate(r, cfg.N, cfg.M)
    return grid


_TRADEOFF_COLUMNS = ("r_min", "r_min_exact", "peak", "avg_ideal", "avg_mixture",
                     "avg_gap_rel", "peak_rate", "avg_rate")


def cmd_tradeoff(args, out: Emitter) -> int:
    cfg = load_config(args.config)
    grid = rate_grid(cfg, args.rmin_grid, args.rmin_points)
    out.text(",".join(_TRADEOFF_COLUMNS))
    for r in grid:
        config = cfg.system(r)
        peak = solve(config, "peak")
        avg = solve(config, "avg")
        gap = float((avg.objective - avg.ideal_objective) / avg.ideal_objective)
        row = {"r_min": float(r), "r_min_exact": r, "peak": peak.objective,
               "avg_ideal": avg.ideal_objective, "avg_mixture": avg.objective,
               "avg_gap_rel": gap, "peak_rate": peak.achieved_rate,
               "avg_rate": avg.achieved_rate}
        text = ",".join(str(r) if k == "r_min_exact" else f"{float(v):.12g}"
                        for k, v in row.items())
        out.record("tradeoff", row, text)
    return EXIT_OK


def cmd_simulate(args, out: Emitter) -> int:
    cfg = load_config(args.config)
    if args.policy:
        config = cfg.system(_rate_arg(args.rmin) or cfg.r_min or Fraction(1, cfg.M))
        policy = policy_from_records(args.policy, cfg.N)
        source = args.policy
    elif args.allocation:
        config = cfg.system(_rate_arg(args.rmin) or cfg.r_min or Fraction(1, cfg.M))
        d = [_number(v, "--allocation") for v in _items(args.allocation)]
        if len(d) != cfg.N:
            raise InvalidConfigError(f"--allocation has {len(d)} entries, N={cfg.N}")
        alloc = DownloadAllocation(tuple(d))
        if not alloc.is_integral():
            raise InvalidConfigError("fractional --allocation; simulate a solved mixture instead")
        policy = MixturePolicy.single(alloc)
        source = "allocation"
    else:
        config = cfg.system(_rate_arg(args.rmin))
        policy = solve(config, args.metric).mixture
        source = f"solve --metric {normalize_metric(args.metric)}"
    dists = fit_distributions(config, cfg.family)
    res = run(policy, config, dists, args.epochs, args.seed)
    peak = mixture_peak_aoi(policy, config.servers)
    avg = mixture_avg_aoi(policy, config.servers)
    ideal = avg_aoi(config.servers, policy.expected_allocation)
    zp, za = res.z_scores(peak, avg)
    fields = {"source": source, "num_epochs": res.num_epochs, "seed": res.seed,
              "rng_algorithm": res.rng_algorithm, "families": [d.family for d in dists],
              "empirical_peak": res.empirical_peak, "peak_stderr": res.peak_stderr,
              "analytic_peak": peak, "z_peak": zp,
              "empirical_avg": res.empirical_avg, "avg_stderr": res.avg_stderr,
              "analytic_avg": avg, "analytic_avg_ideal": ideal, "z_avg": za}
    text = "\n".join([
        f"policy:    {source}",
        f"epochs:    {res.num_epochs}  seed {res.seed}  ({res.rng_algorithm})",
        f"delays:    {', '.join(d.family for d in dists)}",
        f"peak age:  {res.empirical_peak:.8g} +/- {res.peak_stderr:.3g}   "
        f"analytic {float(peak):.8g}   z={zp:.3f}",
        f"avg age:   {res.empirical_avg:.8g} +/- {res.avg_stderr:.3g}   "
        f"analytic {float(avg):.8g} (no time-sharing penalty: {float(ideal):.8g})   z={za:.3f}",
    ])
    out.record("simulation", fields, text)
    return EXIT_OK


def corrupt_solution(sol: Solution) -> Solution:
    """Test hook: halve every download, which breaks the rate constraints."""
    bad = DownloadAllocation(tuple(v / 2 for v in sol.allocation.d))
    return dataclasses.replace(sol, allocation=bad)


def cmd_verify(args, out: Emitter) -> int:
    cfg = load_config(args.config)
    config = cfg.system(_rate_arg(args.rmin))
    sol = solve(config, args.metric)
    if args.corrupt:
        sol = corrupt_solution(sol)
    emit_solution(out, sol, config)
    report = verify(sol, config, _resolution(args.resolution, config))
    emit_report(out, report)
    return EXIT_OK if report.passed else EXIT_VERIFY_FAILED


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="timely-pir",
        description="Rate versus age-of-information tradeoff for private retrieval "
                    "from replicated servers.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="exit codes: 0 ok, 2 invalid config, 3 infeasible, 4 verification failure",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="path to a key = value config file")
    common.add_argument("--format", choices=("text", "structured"), default="text",
                        help="text (default) or JSON lines")
    metric = argparse.ArgumentParser(add_help=False)
    metric.add_argument("--metric", choices=("peak", "avg"), default="peak")
    metric.add_argument("--rmin", help="rate floor, overrides r_min in the config")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("capacity", parents=[common], help="capacity and corner points")
    p.add_argument("--tau", help="traffic ratio, e.g. 1/2,1/2")
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("solve", parents=[common, metric], help="optimal operating point")
    p.add_argument("--resolution", help="oracle grid step in bits, or L/k (default L/32)")
    p.add_argument("--no-verify", action="store_true", help="skip the oracle check")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("tradeoff", parents=[common], help="age versus rate floor table")
    p.add_argument("--rmin-grid", help="START:STOP:STEP, inclusive, fractions allowed")
    p.add_argument("--rmin-points", type=int, default=20,
                   help="evenly spaced points over [1/M, C_PIR] (default 20)")
    p.set_defaults(func=cmd_tradeoff)

    p = sub.add_parser("simulate", parents=[common, metric], help="Monte Carlo check")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--policy", help="structured output of 'solve'")
    src.add_argument("--allocation", help="integral allocation, e.g. 8,6")
    p.add_argument("--epochs", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", parents=[common, metric], help="solve, then check with the oracle")
    p.add_argument("--resolution", help="oracle grid step in bits, or L/k (default L/32)")
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = Emitter(args.format == "structured")
    try:
        return args.func(args, out)
    except InvalidConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SizeLimitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except TimelyPIRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
