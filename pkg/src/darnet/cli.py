"""Command-line front end: ``darnet <command> [flags]``.

Each output file starts with the fully resolved configuration, so feeding
the file back through ``--config`` reproduces it (apart from the timestamp).
Exit codes: 0 success, 2 invalid parameters, 3 event-cap abort.
"""

from __future__ import annotations

import argparse
import io
import json
import sys
from datetime import datetime, timezone
from functools import partial
from typing import Callable, Dict, List, Sequence

import numpy as np

from . import analytics as an
from . import coupling as cp
from . import engine as en
from .errors import EventCapExceeded, InvalidParameterError, ReplicaError
from .model import ModelParams, initial_state

SCHEMA = 1

COMMON = {
    "alpha": 0.96, "K": 40, "n": 200, "rho": 1, "sigma": 0, "horizon": 200.0,
    "burn_in": 20.0, "replicas": 10, "seed": 0, "sample_interval": 1.0,
    "event_cap": en.DEFAULT_EVENT_CAP, "format": "csv",
}

COMMAND_DEFAULTS: Dict[str, dict] = {
    "thresholds": {"rho_max": 6},
    "fixed-points": {},
    "simulate": {"start": "empty", "start_f": 0.5},
    "hysteresis": {"alpha_grid": "0.5,0.9,0.96,1.1,1.3"},
    "hitting": {"start": "full", "threshold": 0.15, "direction": "le", "cap": 200.0},
    "coalesce": {"n_grid": "50,100,200,400", "variant": "base", "cap": 1e4, "alpha": 0.5, "K": 20},
    "gamma": {"regime": "low", "variant": "base", "eps": cp.LOW_EPS, "xi": None,
              "time_cap": 1e3, "alpha": 0.5, "K": 200, "n": 500, "replicas": 100},
    "trunk-scan": {"sigma_grid": "0,4,8,12,16"},
}

# fields a command actually uses; everything else is dropped from its echo
USES: Dict[str, Sequence[str]] = {
    "thresholds": ("rho_max",),
    "fixed-points": ("alpha", "K", "rho", "sigma"),
    "simulate": ("alpha", "K", "n", "rho", "sigma", "horizon", "burn_in", "replicas", "seed",
                 "sample_interval", "event_cap", "start", "start_f"),
    "hysteresis": ("alpha_grid", "K", "n", "rho", "sigma", "horizon", "burn_in", "replicas",
                   "seed", "event_cap"),
    "hitting": ("alpha", "K", "n", "rho", "sigma", "replicas", "seed", "start", "threshold",
                "direction", "cap", "event_cap"),
    "coalesce": ("alpha", "K", "n_grid", "rho", "sigma", "replicas", "seed", "variant", "cap",
                 "event_cap"),
    "gamma": ("alpha", "K", "n", "rho", "sigma", "replicas", "seed", "variant", "regime", "eps",
              "xi", "burn_in", "time_cap"),
    "trunk-scan": ("alpha", "K", "n", "sigma_grid", "horizon", "burn_in", "replicas", "seed",
                   "event_cap"),
}


def _floats(text) -> List[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise InvalidParameterError(f"bad number list {text!r}")


def _ints(text) -> List[int]:
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise InvalidParameterError(f"expected integers in {text!r}")
    return [int(v) for v in vals]


def _params(cfg, **over) -> ModelParams:
    kw = {k: cfg[k] for k in ("alpha", "K", "n", "rho", "sigma") if k in cfg}
    kw.update(over)
    return ModelParams(float(kw["alpha"]), int(kw["K"]), int(kw.get("n", 2)),
                       int(kw.get("rho", 1)), int(kw.get("sigma", 0)))


def _sim_cfg(cfg, seed=None) -> en.SimConfig:
    return en.SimConfig(horizon=float(cfg["horizon"]), sample_interval=float(cfg.get("sample_interval", 1.0)),
                        burn_in=float(cfg["burn_in"]), seed=int(cfg["seed"] if seed is None else seed),
                        replicas=int(cfg["replicas"]), event_cap=int(cfg["event_cap"]))


class Table:
    """Rows under a header; rendered as CSV or a JSON list of records."""

    def __init__(self, columns: Sequence[str], rows=None, extra=None):
        self.columns = list(columns)
        self.rows = list(rows or [])
        self.extra = extra or {}

    def csv_body(self) -> str:
        out = [",".join(self.columns)]
        for r in self.rows:
            out.append(",".join(_cell(v) for v in r))
        return "\n".join(out) + "\n"

    def records(self):
        return [dict(zip(self.columns, r)) for r in self.rows]


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return en.fmt(v)
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


# -- commands --------------------------------------------------------------------

def cmd_thresholds(cfg) -> Table:
    rho_max = int(cfg["rho_max"])
    if not 1 <= rho_max <= 10:
        raise InvalidParameterError("rho-max must lie in 1..10")
    return Table(["rho", "alpha_c", "varphi", "f_sp"], an.phase_thresholds(rho_max).rows())


def cmd_fixed_points(cfg) -> Table:
    alpha, K, rho, sigma = float(cfg["alpha"]), int(cfg["K"]), int(cfg["rho"]), int(cfg["sigma"])
    _params(cfg, n=2)
    rows = []
    h = an.h_roots(alpha, rho)
    rows += [("h", r, "", s) for r, s in zip(h.roots, h.stability)]
    e = an.erlang_fixed_points(alpha, K, rho)
    rows += [("erlang", r, "", s) for r, s in zip(e.roots, e.stability)]
    if sigma > 0:
        tp = an.trunk_self_consistency(alpha, sigma, K)
        rows += [("trunk", f, g, "") for f, g in tp.points]
    return Table(["kind", "f", "g", "stability"], rows)


def _start(cfg, params):
    kind = cfg["start"]
    if kind in ("empty", "full"):
        return initial_state(kind, params)
    if kind == "f-blocking":
        return initial_state(kind, params, f=float(cfg["start_f"]))
    raise InvalidParameterError(f"unknown start {kind!r}")


def _sim_task(seed, params, init, config):
    return en.run(params, init, config.with_seed(seed))


def cmd_simulate(cfg):
    params = _params(cfg)
    config = _sim_cfg(cfg)
    init = _start(cfg, params)
    rs = en.replicate(partial(_sim_task, params=params, init=init, config=config),
                      config.replicas, config.seed)
    if cfg["format"] == "csv":
        return rs.results[0]
    per = [{"seed": s, "avg_f": t.avg_f, "avg_g": t.avg_g, "avg_mean_load": t.avg_mean_load,
            "lost": t.n_lost, "accepted": t.n_accepted, "digest": t.digest()}
           for s, t in zip(rs.seeds, rs.results)]
    return {"replicas": per, "pooled": {"avg_f": rs.summary(lambda t: t.avg_f).to_dict(),
                                        "avg_g": rs.summary(lambda t: t.avg_g).to_dict()}}


def cmd_hysteresis(cfg) -> Table:
    grid = _floats(cfg["alpha_grid"])
    if any(not 0 < a <= 2 for a in grid):
        raise InvalidParameterError("alpha grid must lie in (0, 2]")
    rows = []
    for a in grid:
        params = _params(cfg, alpha=a)
        config = _sim_cfg(cfg)
        for kind in ("empty", "full"):
            rs = en.replicate(partial(_sim_task, params=params, init=initial_state(kind, params),
                                      config=config), config.replicas, config.seed)
            s = rs.summary(lambda t: t.avg_f)
            rows.append((a, kind, s.mean, s.ci_low, s.ci_high, s.n))
    return Table(["alpha", "start", "f_mean", "ci_low", "ci_high", "replicas"], rows)


def _hit_task(seed, params, init, pred, cap, event_cap):
    return en.hitting_time(params, init, pred, cap, seed, event_cap)


def cmd_hitting(cfg) -> Table:
    params = _params(cfg)
    op = {"le": "<=", "ge": ">="}.get(cfg["direction"])
    if op is None:
        raise InvalidParameterError("direction must be 'le' or 'ge'")
    pred = en.Threshold("f", op, float(cfg["threshold"]))
    init = _start({**cfg, "start_f": 0.5}, params)
    rs = en.replicate(partial(_hit_task, params=params, init=init, pred=pred,
                              cap=float(cfg["cap"]), event_cap=int(cfg["event_cap"])),
                      int(cfg["replicas"]), int(cfg["seed"]))
    rows = [(s, r.hit, r.time, r.events) for s, r in zip(rs.seeds, rs.results)]
    frac = float(np.mean([r.hit for r in rs.results]))
    return Table(["seed", "hit", "time", "events"], rows, extra={"hit_fraction": frac})


def _coal_task(seed, variant, params, cap, event_cap):
    return cp.coalescence_time(variant, params, initial_state("empty", params),
                               initial_state("full", params), cap, seed, event_cap)


def cmd_coalesce(cfg) -> Table:
    rows = []
    for n in _ints(cfg["n_grid"]):
        params = _params(cfg, n=n)
        rs = en.replicate(partial(_coal_task, variant=cfg["variant"], params=params,
                                  cap=float(cfg["cap"]), event_cap=int(cfg["event_cap"])),
                          int(cfg["replicas"]), int(cfg["seed"]))
        ts = np.array([r.time for r in rs.results])
        rows.append((n, float(np.median(ts)), float(np.quantile(ts, 0.95)), float(ts.mean()),
                     sum(r.hit for r in rs.results)))
    return Table(["n", "median", "q95", "mean", "coalesced"], rows)


def cmd_gamma(cfg) -> dict:
    params = _params(cfg)
    est = cp.estimate_contraction(cfg["variant"], params, cfg["regime"], int(cfg["replicas"]),
                                  int(cfg["seed"]), burn_in=float(cfg["burn_in"]),
                                  time_cap=float(cfg["time_cap"]), eps=float(cfg["eps"]),
                                  xi=None if cfg["xi"] is None else float(cfg["xi"]))
    return est.to_dict()


def cmd_trunk_scan(cfg) -> Table:
    rows = []
    for sigma in _ints(cfg["sigma_grid"]):
        params = _params(cfg, sigma=sigma)
        config = _sim_cfg(cfg)
        tp = an.trunk_self_consistency(params.alpha, sigma, params.K)
        pts = sorted(f for f, _g in tp.points)
        avg = {}
        for kind in ("empty", "full"):
            rs = en.replicate(partial(_sim_task, params=params, init=initial_state(kind, params),
                                      config=config), config.replicas, config.seed)
            avg[kind] = rs.summary(lambda t: t.avg_f).mean
        verdict = "bistable" if len(pts) > 1 else "monostable"
        rows.append((sigma, ";".join(en.fmt(p) for p in pts), verdict, avg["empty"], avg["full"]))
    return Table(["sigma", "fixed_points_f", "analytic", "f_empty_start", "f_full_start"], rows)


COMMANDS: Dict[str, Callable] = {
    "thresholds": cmd_thresholds, "fixed-points": cmd_fixed_points, "simulate": cmd_simulate,
    "hysteresis": cmd_hysteresis, "hitting": cmd_hitting, "coalesce": cmd_coalesce,
    "gamma": cmd_gamma, "trunk-scan": cmd_trunk_scan,
}


# -- config resolution and output ---------------------------------------------------

def read_config(path: str) -> dict:
    """Load a JSON config, or the config echoed into an earlier output file."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    for line in text.splitlines():
        if line.startswith("# config: "):
            return json.loads(line[len("# config: "):])
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidParameterError(f"cannot read config {path}: {exc}")
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    if data.get("schema", SCHEMA) != SCHEMA:
        raise InvalidParameterError(f"unsupported config schema {data.get('schema')}")
    return data


def resolve(command: str, flags: dict, file_cfg: dict) -> dict:
    cfg = dict(COMMON)
    cfg.update(COMMAND_DEFAULTS[command])
    cfg.update({k: v for k, v in file_cfg.items() if k not in ("schema", "command")})
    cfg.update({k: v for k, v in flags.items() if v is not None})
    if cfg["format"] not in ("csv", "json"):
        raise InvalidParameterError("format must be csv or json")
    keep = set(USES[command]) | {"format"}
    out = {"schema": SCHEMA, "command": command}
    out.update({k: cfg[k] for k in sorted(keep)})
    return out


def render(cfg: dict, result, created: str) -> str:
    cfg_line = json.dumps(cfg, sort_keys=True)
    if cfg["format"] == "json":
        if isinstance(result, Table):
            body = {"columns": result.columns, "rows": _jsonable(result.records())}
            body.update(_jsonable(result.extra))
        elif isinstance(result, en.Trajectory):
            body = {"columns": en.CSV_HEADER.split(","), "rows": [list(map(_jsonable, r)) for r in result.rows()],
                    "digest": result.digest()}
        else:
            body = _jsonable(result)
        doc = {"schema": SCHEMA, "config": cfg, "created": created, "result": body}
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"
    head = [f"config: {cfg_line}", f"created: {created}"]
    if isinstance(result, en.Trajectory):
        return result.to_csv(head)
    if isinstance(result, Table):
        for k, v in sorted(result.extra.items()):
            head.append(f"{k}: {_cell(v)}")
        return "".join(f"# {h}\n" for h in head) + result.csv_body()
    buf = io.StringIO()
    for h in head:
        buf.write(f"# {h}\n")
    keys = list(result)
    buf.write(",".join(keys) + "\n")
    buf.write(",".join(_cell(result[k]) for k in keys) + "\n")
    return buf.getvalue()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="darnet", description="DAR loss-network experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--alpha", type=float)
        p.add_argument("--K", type=int)
        p.add_argument("--n", type=int)
        p.add_argument("--rho", type=int)
        p.add_argument("--sigma", type=int)
        p.add_argument("--horizon", type=float)
        p.add_argument("--burn-in", dest="burn_in", type=float)
        p.add_argument("--replicas", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--format", choices=("csv", "json"))
        p.add_argument("--config")
        p.add_argument("--sample-interval", dest="sample_interval", type=float)
        p.add_argument("--event-cap", dest="event_cap", type=int)
        if name == "thresholds":
            p.add_argument("--rho-max", dest="rho_max", type=int)
        if name in ("simulate", "hitting"):
            p.add_argument("--start", choices=("empty", "full", "f-blocking"))
        if name == "simulate":
            p.add_argument("--start-f", dest="start_f", type=float)
        if name == "hysteresis":
            p.add_argument("--alpha-grid", dest="alpha_grid")
        if name == "hitting":
            p.add_argument("--threshold", type=float)
            p.add_argument("--direction", choices=("le", "ge"))
        if name in ("hitting", "coalesce"):
            p.add_argument("--cap", type=float)
        if name in ("coalesce", "gamma"):
            p.add_argument("--variant", choices=[v.value for v in cp.CouplingVariant])
        if name == "coalesce":
            p.add_argument("--n-grid", dest="n_grid")
        if name == "gamma":
            p.add_argument("--regime", choices=("low", "high"))
            p.add_argument("--eps", type=float)
            p.add_argument("--xi", type=float)
            p.add_argument("--time-cap", dest="time_cap", type=float)
        if name == "trunk-scan":
            p.add_argument("--sigma-grid", dest="sigma_grid")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "out", "config")}
    try:
        file_cfg = read_config(args.config) if args.config else {}
        cfg = resolve(args.command, flags, file_cfg)
        result = COMMANDS[args.command](cfg)
        created = datetime.now(timezone.utc).isoformat(timespec="seconds")
        text = render(cfg, result, created)
    except (InvalidParameterError, ValueError, OSError) as exc:
        print(f"darnet: error: {exc}", file=sys.stderr)
        return 2
    except EventCapExceeded as exc:
        print(f"darnet: event cap exceeded: {exc}", file=sys.stderr)
        return 3
    except ReplicaError as exc:
        if isinstance(exc.cause, EventCapExceeded):
            print(f"darnet: event cap exceeded in replica {exc.index}", file=sys.stderr)
            return 3
        if isinstance(exc.cause, (InvalidParameterError, ValueError)):
            print(f"darnet: error: {exc}", file=sys.stderr)
            return 2
        raise
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
