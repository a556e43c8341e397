"""Command-line front end: configuration, dispatch, CSV/JSON emission.

All dB <-> linear conversion happens here; the library modules work in
linear scale throughout.  Every emission carries a reproducibility
header (tool version, command, resolved parameters, seed) that can be
fed back through --config to reproduce the run.

Exit codes: 0 success, 2 usage error, 3 numerical or infeasibility error.
NOMA_HARQ_THREADS caps the worker processes used for sweep grids.
"""

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence

from . import __version__
from .cellplan import build_plan
from .errors import NomaHarqError
from .fbl import CodeParams
from .markov import analyze, build_transition_matrix, oma_metrics
from .montecarlo import SimConfig, simulate_coordinated, simulate_oma_baseline, \
    simulate_uncoordinated
from .optimizer import GaParams, min_blocklength, pareto_front
from .sic import SystemConfig

SCHEMA_VERSION = 1

SIM_FIELDS = [
    "scenario", "N", "n_hat", "snr_db", "R", "n", "user", "per",
    "per_stderr", "p_s", "eta", "mean_tx_power", "cap_fraction", "seed",
]


class UsageError(NomaHarqError):
    """Invalid command-line or config-file input."""


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------

def _parse_alphas(value) -> tuple:
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    try:
        return tuple(float(v) for v in str(value).split(",") if v.strip())
    except ValueError as exc:
        raise UsageError(f"cannot parse power ratios from {value!r}") from exc


def _parse_grid(value) -> List[float]:
    """SNR grids: a comma list '0,1,2' or a range 'start:stop:count'."""
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    text = str(value)
    try:
        if ":" in text:
            start, stop, count = text.split(":")
            count = int(count)
            if count < 1:
                raise ValueError
            if count == 1:
                return [float(start)]
            step = (float(stop) - float(start)) / (count - 1)
            return [float(start) + step * i for i in range(count)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse SNR grid from {value!r}") from exc


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if isinstance(data, dict) and "meta" in data and isinstance(data["meta"], dict):
        data = data["meta"].get("config", data)
    if isinstance(data, dict) and "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return data


class Resolver:
    """Flag values override config-file values override defaults."""

    def __init__(self, args: argparse.Namespace, config: dict):
        self.args = vars(args)
        self.config = config
        self.resolved: dict = {}

    def get(self, key: str, default=None, required: bool = False, cast=None):
        value = self.args.get(key)
        if value is None:
            value = self.config.get(key, default)
        if value is None and required:
            raise UsageError(f"missing required parameter --{key.replace('_', '-')}")
        if value is not None and cast is not None:
            value = cast(value)
        self.resolved[key] = value
        return value


def _code_params(res: Resolver) -> CodeParams:
    rate = res.get("rate", required=True, cast=float)
    n = res.get("blocklength", required=True, cast=int)
    k = round(rate * n)
    if k < 1:
        raise UsageError(f"rate {rate} at blocklength {n} leaves no information bits")
    return CodeParams(k=k, n=n)


def _system_config(res: Resolver) -> SystemConfig:
    alphas = _parse_alphas(res.get("alphas", required=True))
    snr_db = res.get("snr_db", required=True, cast=float)
    code = _code_params(res)
    try:
        return SystemConfig(alphas=alphas, p0=db_to_linear(snr_db), code=code)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _ga_trace(res: Resolver):
    if not res.get("verbose", False):
        return None

    def trace(label, generation, best):
        print(f"# {label} generation {generation}: best {best:.4e}",
              file=sys.stderr)

    return trace


def _ga_params(res: Resolver) -> GaParams:
    return GaParams(
        population_size=res.get("population", 60, cast=int),
        generations=res.get("generations", 200, cast=int),
        crossover_rate=res.get("crossover_rate", 0.8, cast=float),
        mutation_rate=res.get("mutation_rate", 0.1, cast=float),
        mutation_sigma=res.get("mutation_sigma", 0.05, cast=float),
        elitism_count=res.get("elitism", 2, cast=int),
        seed=res.get("seed", 12345, cast=int),
    )


def _max_workers() -> int:
    raw = os.environ.get("NOMA_HARQ_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

def _meta(command: str, res: Resolver) -> dict:
    return {
        "tool": "noma-harq",
        "version": __version__,
        "schema": SCHEMA_VERSION,
        "command": command,
        "config": res.resolved,
    }


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ";".join(_format_cell(v) for v in value)
    return str(value)


def emit(records: List[dict], fields: List[str], meta: dict,
         out: Optional[str], fmt: str) -> None:
    if fmt == "json":
        text = json.dumps({"meta": meta, "results": records}, indent=2)
    elif fmt == "csv":
        buf = io.StringIO()
        for key in ("tool", "version", "schema", "command"):
            buf.write(f"# {key}={meta[key]}\n")
        buf.write(f"# config={json.dumps(meta['config'])}\n")
        writer = csv.writer(buf)
        writer.writerow(fields)
        for rec in records:
            writer.writerow([_format_cell(rec.get(f, "")) for f in fields])
        text = buf.getvalue().rstrip("\n")
    else:
        raise UsageError(f"unknown format {fmt!r}")
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_analyze(args: argparse.Namespace) -> int:
    res = Resolver(args, _load_config(args.config))
    cfg = _system_config(res)
    fmt = res.get("format", "csv")
    out = res.get("out")
    emit_matrix = res.get("emit_matrix")
    state_table = res.get("state_table")

    metrics = analyze(cfg)
    snr_db = res.resolved["snr_db"]
    records = [
        {
            "user": m.user + 1,
            "per": m.per,
            "p_s": m.success_prob,
            "eta": m.throughput,
            "p0_db": snr_db,
            "R": cfg.code.rate,
            "n": cfg.code.n,
            "N": cfg.n_users,
            "alphas": list(cfg.alphas),
        }
        for m in metrics
    ]
    fields = ["user", "per", "p_s", "eta", "p0_db", "R", "n", "N", "alphas"]

    if emit_matrix:
        tm = build_transition_matrix(cfg)
        with open(emit_matrix, "w") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"s{j}" for j in range(tm.dim)])
            for row in tm.matrix:
                writer.writerow([repr(float(v)) for v in row])
    if state_table:
        from .markov import stationary_distribution
        from .sic import SystemState

        tm = build_transition_matrix(cfg)
        stat = stationary_distribution(tm)
        with open(state_table, "w") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "phases", "probability"])
            for idx, prob in enumerate(stat.probs):
                phases = "".join(
                    p.name for p in SystemState.from_index(idx, cfg.n_users).phases
                )
                writer.writerow([idx, phases, repr(float(prob))])

    emit(records, fields, _meta("analyze", res), out, fmt)
    return 0


def _sweep_point(payload: dict) -> List[dict]:
    """One SNR grid point of a sweep; module-level so pools can pickle it."""
    alphas = tuple(payload["alphas"])
    code = CodeParams(k=payload["k"], n=payload["n"])
    snr_db = payload["snr_db"]
    system = SystemConfig(alphas=alphas, p0=db_to_linear(snr_db), code=code)
    rows: List[dict] = []

    def base(scenario, user, per, per_se, p_s, eta, tx, cap, n_users, n_hat):
        return {
            "scenario": scenario, "N": n_users, "n_hat": n_hat,
            "snr_db": snr_db, "R": code.rate, "n": code.n, "user": user,
            "per": per, "per_stderr": per_se, "p_s": p_s, "eta": eta,
            "mean_tx_power": tx, "cap_fraction": cap, "seed": payload["seed"],
        }

    if payload["scenario"] == "coordinated":
        for m in analyze(system):
            rows.append(base("coordinated", m.user + 1, m.per, 0.0,
                             m.success_prob, m.throughput, math.nan, 0.0,
                             system.n_users, system.n_users))
    else:
        sim = simulate_uncoordinated(SimConfig(
            system=system,
            slots=payload["slots"],
            seed=payload["seed"],
            scenario="uncoordinated",
            n_actual=payload["users"],
            n_hat=payload["n_hat"],
            warmup=payload["warmup"],
            episodes=payload["episodes"],
        ))
        for u in range(sim.n_users):
            rows.append(base("uncoordinated", u + 1, float(sim.per[u]),
                             float(sim.per_stderr[u]), float(sim.success_prob[u]),
                             float(sim.throughput[u]), float(sim.mean_tx_power[u]),
                             float(sim.cap_fraction[u]), sim.n_users, sim.n_hat))
    if payload["oma"]:
        for m in oma_metrics(system):
            rows.append(base("oma", m.user + 1, m.per, 0.0, m.success_prob,
                             m.throughput, math.nan, 0.0,
                             system.n_users, system.n_users))
    return rows


def cmd_sweep(args: argparse.Namespace) -> int:
    res = Resolver(args, _load_config(args.config))
    alphas = _parse_alphas(res.get("alphas", required=True))
    grid = _parse_grid(res.get("snr_db", required=True))
    code = _code_params(res)
    scenario = res.get("scenario", "coordinated")
    if scenario not in ("coordinated", "uncoordinated"):
        raise UsageError(f"unknown scenario {scenario!r}")
    seed = res.get("seed", 1, cast=int)
    payloads = [
        {
            "alphas": list(alphas), "k": code.k, "n": code.n,
            "snr_db": snr, "scenario": scenario, "oma": bool(res.get("oma", False)),
            "slots": res.get("slots", 200_000, cast=int),
            "seed": seed + idx,
            "users": res.get("users", len(alphas), cast=int),
            "n_hat": res.get("n_hat", len(alphas), cast=int),
            "warmup": res.get("warmup", 1000, cast=int),
            "episodes": res.get("episodes", 50, cast=int),
        }
        for idx, snr in enumerate(grid)
    ]
    workers = _max_workers()
    rows: List[dict] = []
    if workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(_sweep_point, payloads):
                rows.extend(chunk)
    else:
        for payload in payloads:
            rows.extend(_sweep_point(payload))
    emit(rows, SIM_FIELDS, _meta("sweep", res), res.get("out"),
         res.get("format", "csv"))
    return 0


def cmd_optimize_pareto(args: argparse.Namespace) -> int:
    res = Resolver(args, _load_config(args.config))
    n_users = res.get("users", required=True, cast=int)
    code = _code_params(res)
    grid = _parse_grid(res.get("snr_db", required=True))
    params = _ga_params(res)
    front = pareto_front(n_users, code, grid, params, trace=_ga_trace(res))
    fields = ["p0_db", "max_per"] + [f"alpha_{i+1}" for i in range(n_users)]
    records = []
    for pt in front:
        rec = {"p0_db": pt.p0_db, "max_per": pt.max_per}
        for i, a in enumerate(sorted(pt.alphas)):
            rec[f"alpha_{i+1}"] = a
        records.append(rec)
    emit(records, fields, _meta("optimize-pareto", res), res.get("out"),
         res.get("format", "csv"))
    return 0


def cmd_min_blocklength(args: argparse.Namespace) -> int:
    res = Resolver(args, _load_config(args.config))
    n_users = res.get("users", required=True, cast=int)
    k = res.get("bits", required=True, cast=int)
    snr_db = res.get("snr_db", required=True, cast=float)
    target = res.get("target_per", required=True, cast=float)
    cap = res.get("max_n", 4096, cast=int)
    stride = res.get("stride", 8, cast=int)
    params = _ga_params(res)
    n_min, alphas = min_blocklength(
        k, snr_db, n_users, target, params, n_cap=cap, coarse_stride=stride,
        trace=_ga_trace(res),
    )
    fields = ["n_min", "k", "snr_db", "target_per", "users"] + [
        f"alpha_{i+1}" for i in range(n_users)
    ]
    rec = {"n_min": n_min, "k": k, "snr_db": snr_db, "target_per": target,
           "users": n_users}
    for i, a in enumerate(sorted(alphas)):
        rec[f"alpha_{i+1}"] = a
    emit([rec], fields, _meta("min-blocklength", res), res.get("out"),
         res.get("format", "csv"))
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    res = Resolver(args, _load_config(args.config))
    system = _system_config(res)
    scenario = res.get("scenario", "coordinated")
    seed = res.get("seed", 1, cast=int)
    slots = res.get("slots", 1_000_000, cast=int)
    warmup = res.get("warmup", 1000, cast=int)
    snr_db = res.resolved["snr_db"]
    try:
        if scenario == "coordinated":
            sim = simulate_coordinated(SimConfig(
                system=system, slots=slots, seed=seed, warmup=warmup,
            ))
        elif scenario == "uncoordinated":
            sim = simulate_uncoordinated(SimConfig(
                system=system, slots=slots, seed=seed, warmup=warmup,
                scenario="uncoordinated",
                n_actual=res.get("users", system.n_users, cast=int),
                n_hat=res.get("n_hat", system.n_users, cast=int),
                episodes=res.get("episodes", 50, cast=int),
            ))
        else:
            raise UsageError(f"unknown scenario {scenario!r}")
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    results = [sim]
    if res.get("oma", False):
        results.append(simulate_oma_baseline(SimConfig(
            system=system, slots=slots, seed=seed, warmup=warmup,
        )))
    rows = []
    for r in results:
        for u in range(r.n_users):
            rows.append({
                "scenario": r.scenario, "N": r.n_users, "n_hat": r.n_hat,
                "snr_db": snr_db, "R": system.code.rate, "n": system.code.n,
                "user": u + 1, "per": float(r.per[u]),
                "per_stderr": float(r.per_stderr[u]),
                "p_s": float(r.success_prob[u]), "eta": float(r.throughput[u]),
                "mean_tx_power": float(r.mean_tx_power[u]),
                "cap_fraction": float(r.cap_fraction[u]), "seed": r.seed,
            })
    emit(rows, SIM_FIELDS, _meta("simulate", res), res.get("out"),
         res.get("format", "csv"))
    return 0


def cmd_cellplan(args: argparse.Namespace) -> int:
    res = Resolver(args, _load_config(args.config))
    n_hat = res.get("n_hat", required=True, cast=int)
    alphas = _parse_alphas(res.get("alphas", required=True))
    r_outer = res.get("r_outer", 1500.0, cast=float)
    rotation = res.get("rotation", 0, cast=int)
    try:
        plan = build_plan(n_hat, r_outer, alphas, rotation=rotation)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    payload = {"meta": _meta("cellplan", res), "plan": plan.to_dict()}
    text = json.dumps(payload, indent=2)
    out = res.get("out")
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON file of parameters; flags override")
    sub.add_argument("--seed", type=int, help="master seed (default 1, GA 12345)")
    sub.add_argument("--out", help="output path (default stdout)")
    sub.add_argument("--format", choices=["csv", "json"], help="output format")


def _add_code(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--rate", type=float, help="code rate R = k/n")
    sub.add_argument("--blocklength", type=int, help="codeword length n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noma-harq",
        description="Uplink NOMA with one Chase-combining retransmission: "
                    "analysis, power optimization, cell planning, simulation.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("analyze", help="per-user PER/throughput from the chain")
    p.add_argument("--alphas", help="comma list of power splitting ratios")
    p.add_argument("--snr-db", dest="snr_db", help="total received power in dB")
    _add_code(p)
    p.add_argument("--emit-matrix", dest="emit_matrix",
                   help="also write the transition matrix CSV here")
    p.add_argument("--state-table", dest="state_table",
                   help="also write the stationary state table CSV here")
    _add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = subs.add_parser("sweep", help="PER/throughput vs SNR grid")
    p.add_argument("--alphas")
    p.add_argument("--snr-db", dest="snr_db",
                   help="grid: 'a,b,c' or 'start:stop:count'")
    _add_code(p)
    p.add_argument("--scenario", choices=["coordinated", "uncoordinated"])
    p.add_argument("--oma", action="store_const", const=True,
                   help="add the matched-power orthogonal baseline")
    p.add_argument("--users", type=int, help="active users (uncoordinated)")
    p.add_argument("--n-hat", dest="n_hat", type=int, help="planned user count")
    p.add_argument("--slots", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--warmup", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = subs.add_parser("optimize-pareto", help="power-vs-PER front via the GA")
    p.add_argument("--users", type=int)
    p.add_argument("--snr-db", dest="snr_db", help="P0 grid in dB")
    _add_code(p)
    for flag, typ in [("--population", int), ("--generations", int),
                      ("--crossover-rate", float), ("--mutation-rate", float),
                      ("--mutation-sigma", float), ("--elitism", int)]:
        p.add_argument(flag, dest=flag[2:].replace("-", "_"), type=typ)
    p.add_argument("--verbose", action="store_const", const=True,
                   help="log the best value per generation to stderr")
    _add_common(p)
    p.set_defaults(func=cmd_optimize_pareto)

    p = subs.add_parser("min-blocklength",
                        help="smallest n meeting a PER target at a given SNR")
    p.add_argument("--users", type=int)
    p.add_argument("--bits", type=int, help="information bits k")
    p.add_argument("--snr-db", dest="snr_db")
    p.add_argument("--target-per", dest="target_per", type=float)
    p.add_argument("--max-n", dest="max_n", type=int, help="search cap (default 4096)")
    p.add_argument("--stride", type=int, help="coarse scan stride (default 8)")
    for flag, typ in [("--population", int), ("--generations", int),
                      ("--crossover-rate", float), ("--mutation-rate", float),
                      ("--mutation-sigma", float), ("--elitism", int)]:
        p.add_argument(flag, dest=flag[2:].replace("-", "_"), type=typ)
    p.add_argument("--verbose", action="store_const", const=True,
                   help="log the best value per generation to stderr")
    _add_common(p)
    p.set_defaults(func=cmd_min_blocklength)

    p = subs.add_parser("simulate", help="slot-level Monte Carlo run")
    p.add_argument("--alphas")
    p.add_argument("--snr-db", dest="snr_db")
    _add_code(p)
    p.add_argument("--scenario", choices=["coordinated", "uncoordinated"])
    p.add_argument("--oma", action="store_const", const=True)
    p.add_argument("--users", type=int)
    p.add_argument("--n-hat", dest="n_hat", type=int)
    p.add_argument("--slots", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--warmup", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("cellplan", help="equal-area segment plan as JSON")
    p.add_argument("--n-hat", dest="n_hat", type=int)
    p.add_argument("--alphas")
    p.add_argument("--r-outer", dest="r_outer", type=float)
    p.add_argument("--rotation", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_cellplan)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NomaHarqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
