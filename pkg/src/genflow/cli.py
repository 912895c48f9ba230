"""Scenario presets, JSON run configs, batch execution and report / plot-data emission.

Every run resolves one JSON config (scenario defaults, then the config file,
then the output-directory environment variable, then command-line flags),
validates it against ``config_schema.json`` before any computation, and
embeds the resolved config in ``report.json``. Exit status:

* 0  all expected-outcome assertions passed
* 1  at least one assertion failed
* 2  configuration error (schema violation or invalid parameters)
* 3  numerical failure, reported with (module, eps, t, point) context
"""
from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np

from . import __version__
from .association import (
    constant_net, fast_assoc, flow_residual_at, hierarchy_report,
    limiting_flow_report, NetFunction, pw_assoc, pwae_assoc, zero_assoc,
)
from .epsilon import EpsilonNet, ScalingLaw, make_epsilon_net
from .errors import (
    ConfigurationError, ConstructionError, DomainError, InputError, IntegrationError,
    QuadratureError, UsageError,
)
from .fields import (
    check_bounded_derivative, check_global_bound, check_linear_growth, check_logtype_derivative,
    linear_field, marsden_field, quadratic_field, torus_field, zero_field, base_grid,
)
from .flow import (
    FlowTable, IvpConfig, closed_form_marsden_limit, closed_form_torus, flow_table,
    scenario_limit, solve_ivp, torus_p_grid,
)
from .manifold import Space, distance, distances
from .mollifier import build_bump

REPORT_VERSION = "1.0"
OUT_ENV = "GENFLOW_OUT_DIR"
SCENARIOS = ("marsden", "torus", "hierarchy")
COMMANDS = ("solve", "flow", "associate", "conditions")
# keys excluded when comparing two reports for determinism
VOLATILE_KEYS = ("created",)

_CHECKS = {
    "global-bound-h": check_global_bound,
    "logtype-derivative": check_logtype_derivative,
    "bounded-derivative": check_bounded_derivative,
    "linear-growth": check_linear_growth,
}


def load_schema() -> dict:
    return json.loads(resources.files("genflow").joinpath("config_schema.json").read_text("utf-8"))


# -- configuration -------------------------------------------------------------------


def _common(out: str) -> dict:
    return {
        "schema_version": "1",
        "scaling": {"kind": "inverse-log"},
        "epsilon": {"max": 1e-2, "min": 1e-8, "count": 7},
        "tolerance": 1e-9,
        "max_step_factor": 0.25,
        "max_steps": 2_000_000,
        "output": {"dir": out, "gnuplot": True},
    }


def scenario_defaults(name: str) -> dict:
    """Full default config of a named scenario."""
    pi = math.pi
    if name == "marsden":
        return {**_common("genflow-out/marsden"), "scenario": "marsden",
                "field": {"kind": "marsden", "case": "a"},
                "t_grid": {"min": -pi, "max": pi, "count": 17, "t0": 0.0},
                "p_grid": {"count": 480},
                "trajectories": {"initial": [[-1.2], [-0.6], [0.0], [0.3], [0.9]],
                                 "t_grid": {"min": -5.0, "max": 5.0, "count": 201, "t0": 0.0}},
                "association": {"tol_zero": 0.1, "flow_tol": 1e-6},
                "conditions": {"grid": {"count": 256},
                               "checks": ["global-bound-h", "logtype-derivative"]}}
    if name == "torus":
        return {**_common("genflow-out/torus"), "scenario": "torus",
                "field": {"kind": "torus", "case": "a"},
                "t_grid": {"min": -pi, "max": pi, "count": 21, "t0": 0.0},
                "p_grid": {"count": 21},
                "trajectories": {"initial": [[0.5, -1.0], [-2.0, 0.25], [0.0, 0.0]],
                                 "t_grid": {"min": -pi, "max": pi, "count": 81, "t0": 0.0}},
                "association": {"tol_zero": 0.1, "flow_tol": 1e-6},
                "conditions": {"grid": {"count": 48},
                               "checks": ["global-bound-h", "logtype-derivative"]}}
    if name == "hierarchy":
        common = _common("genflow-out/hierarchy")
        common["epsilon"] = {"max": 1e-1, "min": 1e-4, "count": 7}
        for k in ("tolerance", "max_step_factor", "max_steps"):
            common.pop(k)
        return {**common, "scenario": "hierarchy"}
    raise ConfigurationError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")


def command_defaults(command: str, field_kind: str = "marsden") -> dict:
    """Defaults of a custom run exposing one module operation."""
    if command not in COMMANDS:
        raise ConfigurationError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    if field_kind in ("marsden", "torus"):
        base = scenario_defaults(field_kind)
    else:
        base = {**_common(f"genflow-out/{command}"),
                "field": {"kind": field_kind},
                "t_grid": {"min": -1.0, "max": 1.0, "count": 11, "t0": 0.0},
                "p_grid": {"points": [[-1.0], [0.0], [1.0]]},
                "trajectories": {"initial": [[-1.0], [0.5]],
                                 "t_grid": {"min": -1.0, "max": 1.0, "count": 21, "t0": 0.0}},
                "association": {"tol_zero": 0.1, "flow_tol": 1e-6},
                "conditions": {"grid": {"count": 201, "radius": 10.0},
                               "checks": ["global-bound-h", "logtype-derivative"]}}
        if field_kind == "zero":
            base["field"]["space"] = {"kind": "euclidean", "n": 1}
        elif field_kind in ("linear", "quadratic"):
            base["field"]["n"] = 1
    base["scenario"] = "custom"
    base["command"] = command
    base["output"] = {"dir": f"genflow-out/{command}", "gnuplot": True}
    base.setdefault("association", {})
    base["association"].update({"notion": "fast", "t": None, "reference": "closed-form"})
    base["expect"] = {}
    return base


def deep_merge(base: dict, over: dict) -> dict:
    """Recursive dict merge; lists and scalars in ``over`` replace those in ``base``."""
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate_config(cfg: dict) -> None:
    """Schema check plus the cross-field rules a schema cannot express."""
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"config invalid at {where}: {exc.message}") from None
    scen = cfg["scenario"]
    if scen == "custom" and "command" not in cfg:
        raise ConfigurationError("custom runs need a command")
    if scen != "custom" and "command" in cfg:
        raise ConfigurationError("command is only valid for custom runs")
    if scen in ("marsden", "torus") and cfg.get("field", {}).get("kind") != scen:
        raise ConfigurationError(f"the {scen} scenario runs the {scen} field")
    if scen != "hierarchy" and "field" not in cfg:
        raise ConfigurationError("a field is required")
    eps = cfg.get("epsilon")
    if eps and not eps["min"] < eps["max"]:
        raise ConfigurationError("epsilon.min must be smaller than epsilon.max")
    for key in ("t_grid",):
        g = cfg.get(key)
        if g and not g["min"] < g["max"]:
            raise ConfigurationError(f"{key}.min must be smaller than {key}.max")
    if "trajectories" in cfg:
        g = cfg["trajectories"]["t_grid"]
        if not g["min"] < g["max"]:
            raise ConfigurationError("trajectories.t_grid.min must be smaller than its max")


@dataclass(frozen=True)
class RunConfig:
    """A validated, fully resolved run configuration."""

    data: dict

    def __post_init__(self):
        validate_config(self.data)

    @classmethod
    def resolve(cls, scenario: str | None = None, command: str | None = None,
                file_config: dict | None = None, overrides: dict | None = None,
                environ=None) -> "RunConfig":
        file_config = file_config or {}
        scenario = scenario or file_config.get("scenario")
        command = command or file_config.get("command")
        if scenario is None and command is None:
            raise ConfigurationError("config names neither a scenario nor a command")
        if scenario in (None, "custom"):
            kind = (file_config.get("field") or {}).get("kind") \
                or ((overrides or {}).get("field") or {}).get("kind") or "marsden"
            if not isinstance(kind, str):
                raise ConfigurationError("field.kind must be a string")
            if command is None:
                raise ConfigurationError("custom runs need a command")
            base = command_defaults(command, kind)
        else:
            base = scenario_defaults(scenario)
        data = deep_merge(base, file_config)
        env = os.environ if environ is None else environ
        if env.get(OUT_ENV):
            data = deep_merge(data, {"output": {"dir": env[OUT_ENV]}})
        data = deep_merge(data, overrides or {})
        if scenario is not None and scenario != "custom":
            data["scenario"] = scenario
        return cls(data)

    @property
    def scenario(self) -> str:
        return self.data["scenario"]

    @property
    def command(self) -> str:
        return self.data.get("command", "run")

    @property
    def out_dir(self) -> Path:
        return Path(self.data["output"]["dir"])

    @property
    def tol(self) -> float:
        return float(self.data["tolerance"])

    def get(self, *keys, default=None):
        d = self.data
        for k in keys:
            if not isinstance(d, dict) or k not in d:
                return default
            d = d[k]
        return d

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)


def flags_to_overrides(ns: argparse.Namespace) -> dict:
    """Map the common command-line flags onto config keys."""
    over: dict = {}

    def put(path, value):
        if value is None:
            return
        d = over
        for k in path[:-1]:
            d = d.setdefault(k, {})
        d[path[-1]] = value

    put(("epsilon", "min"), getattr(ns, "epsilon_min", None))
    put(("epsilon", "max"), getattr(ns, "epsilon_max", None))
    put(("epsilon", "count"), getattr(ns, "epsilon_count", None))
    put(("tolerance",), getattr(ns, "tol", None))
    put(("t_grid", "count"), getattr(ns, "grid_t", None))
    put(("p_grid", "count"), getattr(ns, "grid_p", None))
    put(("field", "case"), getattr(ns, "case", None))
    put(("field", "kind"), getattr(ns, "field", None))
    put(("output", "dir"), getattr(ns, "out", None))
    put(("association", "notion"), getattr(ns, "notion", None))
    put(("association", "t"), getattr(ns, "t", None))
    return over


# -- building blocks -----------------------------------------------------------------


def build_net(cfg: RunConfig) -> EpsilonNet:
    e = cfg.data["epsilon"]
    return make_epsilon_net(float(e["max"]), float(e["min"]), int(e["count"]),
                            ScalingLaw.from_dict(cfg.data.get("scaling", {"kind": "inverse-log"})))


def build_field(cfg: RunConfig, net: EpsilonNet):
    spec = cfg.data["field"]
    kind = spec["kind"]
    if kind == "marsden":
        return marsden_field(spec.get("case", "a"), net)
    if kind == "torus":
        return torus_field(spec.get("case", "a"), net)
    if kind == "zero":
        return zero_field(Space.from_dict(spec.get("space", {"kind": "euclidean", "n": 1})), net)
    if kind == "linear":
        return linear_field(net, int(spec.get("n", 1)))
    return quadratic_field(net, int(spec.get("n", 1)))


def _grid1d(g: dict) -> tuple[np.ndarray, float]:
    grid = np.linspace(float(g["min"]), float(g["max"]), int(g["count"]))
    t0 = float(g.get("t0", 0.0))
    k = int(np.argmin(np.abs(grid - t0)))
    if abs(grid[k] - t0) <= 1e-12 * max(1.0, abs(t0)):
        grid[k] = t0  # land the start time exactly on the grid
    return grid, t0


def build_ivp(cfg: RunConfig, g: dict) -> IvpConfig:
    grid, t0 = _grid1d(g)
    return IvpConfig(tuple(float(x) for x in grid), t0=t0, atol=cfg.tol, rtol=cfg.tol,
                     max_step_factor=float(cfg.data["max_step_factor"]),
                     max_steps=int(cfg.data["max_steps"]))


def build_points(space: Space, spec: dict, kind: str | None = None) -> np.ndarray:
    """Points from a {count}/{points}/{count, radius} grid spec."""
    if "points" in spec:
        P = np.asarray(spec["points"], dtype=float)
        if P.ndim != 2 or P.shape[1] != space.n:
            raise ConfigurationError(f"grid points must have {space.n} coordinates each")
        return P
    n = int(spec["count"])
    if space.kind == "circle":
        return base_grid(space, n)
    if space.kind == "torus2":
        return torus_p_grid(n) if kind == "table" else base_grid(space, n)
    r = float(spec.get("radius", 1.0))
    axis = np.linspace(-r, r, n)
    mesh = np.meshgrid(*([axis] * space.n), indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


# -- output formatting ---------------------------------------------------------------


def _plain(obj):
    """JSON-safe copy: numpy to Python, tuples to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def dumps(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def _num(x: float) -> str:
    return repr(float(x))


def trajectories_csv(space: Space, runs, gnuplot: bool = False) -> str:
    """Rows (epsilon, t, start coords, coords), angles wrapped to (-π, π]."""
    dim = space.n
    header = ["epsilon", "t"] + [f"start{i}" for i in range(dim)] + [f"x{i}" for i in range(dim)]
    buf = io.StringIO()
    if gnuplot:
        buf.write("# " + " ".join(header) + "\n")
    else:
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
    for n, (eps, start, tr) in enumerate(runs):
        if gnuplot and n:
            buf.write("\n\n")
        s = [_num(v) for v in start]
        for t, y in zip(tr.times, tr.states):
            row = [_num(eps), _num(t)] + s + [_num(v) for v in space.wrap_coords(y)]
            if gnuplot:
                buf.write(" ".join(row) + "\n")
            else:
                w.writerow(row)
    return buf.getvalue()


def residuals_dat(report: dict) -> str:
    """Ψ flow residual against the base point, one gnuplot block per (s, t) pair."""
    rows = report["flow_property"]["residuals"]
    buf = io.StringIO()
    buf.write("# s t p... residual\n")
    key = None
    for r in rows:
        k = (r["s"], r["t"])
        if key is not None and k != key:
            buf.write("\n\n")
        key = k
        buf.write(" ".join([_num(r["s"]), _num(r["t"])] + [_num(x) for x in r["p"]]
                           + [_num(r["residual"])]) + "\n")
    return buf.getvalue()


def write_outputs(out_dir: Path, files: dict[str, str]) -> None:
    """Single writer: called once, after all computation has finished."""
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in sorted(files):
        with open(out_dir / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(files[name])


def strip_volatile(report: dict) -> dict:
    return {k: v for k, v in report.items() if k not in VOLATILE_KEYS}


# -- results -------------------------------------------------------------------------


@dataclass
class RunResult:
    exit_code: int
    out_dir: Path | None
    report: dict | None = None
    message: str = ""
    assertions: list = field(default_factory=list)
    # in-memory results (tables, trajectories); never serialized
    artifacts: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.exit_code == 0


def _assertion(name: str, passed: bool, **detail) -> dict:
    return {"name": name, "passed": bool(passed), "detail": _plain(detail)}


def _envelope(cfg: RunConfig, body: dict, assertions: list) -> dict:
    return {
        "report_version": REPORT_VERSION,
        "generator": {"package": "genflow", "version": __version__},
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "scenario": cfg.scenario,
        "command": cfg.command,
        "config": cfg.to_dict(),
        "assertions": assertions,
        "status": "pass" if all(a["passed"] for a in assertions) else "fail",
        **body,
    }


# -- shared pieces -------------------------------------------------------------------


def _run_trajectories(f, cfg: RunConfig):
    spec = cfg.data["trajectories"]
    ivp = build_ivp(cfg, spec["t_grid"])
    starts = [f.space.point(p) for p in spec["initial"]]
    return [(eps, p, solve_ivp(f, eps, p, ivp)) for eps in f.net for p in starts], ivp


def _conditions(f, cfg: RunConfig) -> dict:
    spec = cfg.data["conditions"]
    grid = build_points(f.space, spec["grid"])
    return {name: _CHECKS[name](f, grid).to_dict() for name in spec["checks"]}


def _table(f, cfg: RunConfig) -> tuple[FlowTable, IvpConfig]:
    ivp = build_ivp(cfg, cfg.data["t_grid"])
    P = build_points(f.space, cfg.data["p_grid"], kind="table")
    return flow_table(f, ivp, P), ivp


def _table_files(table: FlowTable, gnuplot: bool) -> dict:
    files = {"flowtable.csv": table.to_csv()}
    if gnuplot:
        files["flowtable.dat"] = table.to_csv(gnuplot=True)
    return files


def _traj_files(space: Space, runs, gnuplot: bool) -> dict:
    files = {"trajectories.csv": trajectories_csv(space, runs)}
    if gnuplot:
        files["trajectories.dat"] = trajectories_csv(space, runs, gnuplot=True)
    return files


def _traj_summary(runs) -> list:
    return [{"eps": e, "start": p.tolist(), "steps": tr.steps, "rejected": tr.rejected,
             "final": tr.states[-1].tolist()} for e, p, tr in runs]


# -- scenarios -----------------------------------------------------------------------


def _scenario_marsden(cfg: RunConfig):
    net = build_net(cfg)
    f = build_field(cfg, net)
    case = cfg.data["field"]["case"] if "case" in cfg.data["field"] else "a"
    runs, _ = _run_trajectories(f, cfg)
    table, ivp = _table(f, cfg)
    assoc = cfg.data["association"]
    report = limiting_flow_report(table, f, ivp, flow_tol=assoc["flow_tol"],
                                  tol_zero=assoc["tol_zero"])
    conditions = _conditions(f, cfg)
    tol = cfg.tol
    sig_min = net.sigma(net.eps_min)

    per_eps = []
    for eps in net:
        s = net.sigma(eps)
        worst = max(distance(f.space, y, [closed_form_marsden_limit(case, float(p[0]), t)])
                    for e, p, tr in runs if e == eps for t, y in zip(tr.times, tr.states))
        per_eps.append({"eps": eps, "sigma": s, "max_distance": worst, "bound": 2 * s + 10 * tol})
    fp = report["flow_property"]
    r0 = flow_residual_at(report, math.pi, -math.pi, [0.0], f.space)
    assertions = [
        _assertion("trajectories within 2*sigma+10*tol of the closed-form limit",
                   all(r["max_distance"] <= r["bound"] for r in per_eps), per_eps=per_eps),
        _assertion("global bound holds", conditions.get("global-bound-h", {}).get("verdict") == "holds"),
        _assertion("log-type derivative holds",
                   conditions.get("logtype-derivative", {}).get("verdict") == "holds"),
        _assertion("pw association of Phi and Psi holds",
                   report["association"]["pw"]["verdict"] == "holds"),
        _assertion("flow property of Psi fails", fp["measured"] == "fails",
                   max_residual=fp["max_residual"]),
        _assertion("residual at (s, t, alpha) = (pi, -pi, 0) is pi/2 within 2*sigma_min+20*tol",
                   r0 is not None and abs(r0 - math.pi / 2) <= 2 * sig_min + 20 * tol,
                   residual=r0, target=math.pi / 2),
        _assertion("report states: pw-association held, flow property failed",
                   "pw-association held, flow property failed" in report["messages"]),
    ]
    body = {"field": f.to_dict(), "conditions": conditions, "limiting_flow": report,
            "flow_table": table.sidecar(), "trajectories": _traj_summary(runs),
            "closed_form_check": per_eps,
            "flow_violation": {"s": math.pi, "t": -math.pi, "alpha": 0.0, "residual": r0}}
    gnuplot = cfg.data["output"].get("gnuplot", True)
    files = {**_table_files(table, gnuplot), **_traj_files(f.space, runs, gnuplot)}
    if gnuplot:
        files["flow_residual.dat"] = residuals_dat(report)
    return body, assertions, files, {"field": f, "table": table, "ivp": ivp, "trajectories": runs,
                                     "limiting_flow": report}


def _scenario_torus(cfg: RunConfig):
    net = build_net(cfg)
    f = build_field(cfg, net)
    bump = build_bump(cfg.data["field"].get("case", "a"))
    runs, _ = _run_trajectories(f, cfg)
    table, ivp = _table(f, cfg)
    assoc = cfg.data["association"]
    report = limiting_flow_report(table, f, ivp, flow_tol=assoc["flow_tol"],
                                  tol_zero=assoc["tol_zero"])
    conditions = _conditions(f, cfg)
    tol = cfg.tol

    worst_table = 0.0
    for ke, eps in enumerate(table.eps):
        s = table.sigmas[ke]
        for kt, t in enumerate(table.t_grid):
            exact = np.array([closed_form_torus(bump, s, float(t), p[0], p[1]) for p in table.p_grid])
            worst_table = max(worst_table, float(distances(f.space, table.values[ke, kt], exact).max()))
    worst_traj = 0.0
    for eps, p, tr in runs:
        s = net.sigma(eps)
        exact = np.array([closed_form_torus(bump, s, float(t), p[0], p[1]) for t in tr.times])
        worst_traj = max(worst_traj, float(distances(f.space, tr.states, exact).max()))
    fp = report["flow_property"]
    gb = conditions.get("global-bound-h", {})
    assertions = [
        _assertion("flow table matches the closed form within 10*tol",
                   worst_table <= 10 * tol, max_error=worst_table, bound=10 * tol),
        _assertion("trajectories match the closed form within 10*tol",
                   worst_traj <= 10 * tol, max_error=worst_traj),
        _assertion("global bound fails with log-type growth",
                   gb.get("verdict") == "fails" and gb.get("growth", {}).get("class") == "log-type",
                   verdict=gb.get("verdict"), growth=gb.get("growth", {}).get("class")),
        _assertion("fast association of Phi and Psi holds",
                   report["association"]["fast"]["verdict"] == "holds"),
        _assertion("flow property of Psi holds", fp["measured"] == "holds",
                   max_residual=fp["max_residual"], flow_tol=fp["flow_tol"]),
        _assertion("report states: limit discontinuous, flow property holds",
                   "limit discontinuous, flow property holds" in report["messages"]),
    ]
    body = {"field": f.to_dict(), "conditions": conditions, "limiting_flow": report,
            "flow_table": table.sidecar(), "trajectories": _traj_summary(runs),
            "closed_form_check": {"table_max_error": worst_table, "trajectory_max_error": worst_traj}}
    gnuplot = cfg.data["output"].get("gnuplot", True)
    files = {**_table_files(table, gnuplot), **_traj_files(f.space, runs, gnuplot)}
    if gnuplot:
        files["flow_residual.dat"] = residuals_dat(report)
    return body, assertions, files, {"field": f, "table": table, "ivp": ivp, "trajectories": runs,
                                     "limiting_flow": report}


def _scenario_hierarchy(cfg: RunConfig):
    rep = hierarchy_report(build_net(cfg))
    ni = rep["non_implications"]
    assertions = [_assertion("hierarchy status PASS", rep["status"] == "PASS")]
    assertions += [_assertion(f"witness confirmed: {k}", v) for k, v in ni.items()]
    files = {}
    if cfg.data["output"].get("gnuplot", True):
        buf = io.StringIO()
        buf.write("# eps sup|sin(x/eps)| sup|comb_eps| on K\n")
        zs = rep["cases"]["sin"]["details"]["zero"]["evidence"]
        zc = rep["cases"]["comb"]["details"]["zero"]["evidence"]
        for e, a, b in zip(zs["eps"], zs["sup_distance"], zc["sup_distance"]):
            buf.write(f"{_num(e)} {_num(a)} {_num(b)}\n")
        files["hierarchy.dat"] = buf.getvalue()
    return {"hierarchy": rep}, assertions, files, {"hierarchy": rep}


# -- custom commands -----------------------------------------------------------------


def _expectations(cfg: RunConfig, checks: dict) -> list:
    out = []
    for name, want in sorted(cfg.data.get("expect", {}).items()):
        got = checks.get(name)
        out.append(_assertion(f"expect {name} == {want!r}", got == want, got=got))
    return out


def _command_solve(cfg: RunConfig):
    f = build_field(cfg, build_net(cfg))
    runs, _ = _run_trajectories(f, cfg)
    drift = max(float(distances(f.space, tr.states, tr.states[0][None, :]).max()) for _, _, tr in runs)
    checks = {"max_drift_from_start": drift}
    body = {"field": f.to_dict(), "trajectories": _traj_summary(runs), "checks": checks}
    files = _traj_files(f.space, runs, cfg.data["output"].get("gnuplot", True))
    return body, _expectations(cfg, checks), files, {"field": f, "trajectories": runs}


def _command_flow(cfg: RunConfig):
    f = build_field(cfg, build_net(cfg))
    table, _ = _table(f, cfg)
    checks = {"non_cauchy_nodes": table.diagnostics["non_cauchy_nodes"]}
    body = {"field": f.to_dict(), "flow_table": table.sidecar(), "checks": checks}
    files = _table_files(table, cfg.data["output"].get("gnuplot", True))
    return body, _expectations(cfg, checks), files, {"field": f, "table": table}


def _table_net(table: FlowTable, f, i_t: int) -> NetFunction:
    index = {e: k for k, e in enumerate(table.eps)}
    return NetFunction(f.space, f.space,
                       lambda eps, p: table.values[index[float(eps)], i_t, table.p_index(p)],
                       f.net, f"Phi(t={table.t_grid[i_t]:.6g})")


def _command_associate(cfg: RunConfig):
    f = build_field(cfg, build_net(cfg))
    table, _ = _table(f, cfg)
    a = cfg.data["association"]
    t = table.t_grid[-1] if a.get("t") is None else float(a["t"])
    i_t = table.t_index(t)
    u = _table_net(table, f, i_t)
    eps = list(table.eps)
    if a["reference"] == "closed-form":
        ref = scenario_limit(f)
        if ref is None:
            raise ConfigurationError(f"no closed-form limit is known for the {f.label} field")
        v = constant_net(f.space, f.space, lambda p: ref(float(table.t_grid[i_t]), p), f.net, "limit")
    else:
        v = constant_net(f.space, f.space, lambda p: table.limit[i_t, table.p_index(p)], f.net, "Psi")
        eps = eps[:-1]  # Ψ is the smallest-ε value
    floor = 10 * cfg.tol
    P = table.p_grid
    notion = a["notion"]
    if notion == "fast":
        verdict = fast_assoc(u, v, P, eps=eps, noise_floor=floor)
    elif notion == "pw":
        verdict = pw_assoc(u, v, P, eps=eps, tol_zero=a["tol_zero"], noise_floor=floor)
    elif notion == "pwae":
        verdict = pwae_assoc(u, v, P, eps=eps, tol_zero=a["tol_zero"], noise_floor=floor)
    else:
        verdict = zero_assoc(u, v, P, eps=eps, tol_zero=a["tol_zero"], noise_floor=floor)
    checks = {"verdict": verdict.verdict}
    body = {"field": f.to_dict(), "flow_table": table.sidecar(),
            "association": {"t": float(table.t_grid[i_t]), "reference": a["reference"],
                            **verdict.to_dict()},
            "checks": checks}
    files = _table_files(table, cfg.data["output"].get("gnuplot", True))
    return body, _expectations(cfg, checks), files, {"field": f, "table": table, "verdict": verdict}


def _command_conditions(cfg: RunConfig):
    f = build_field(cfg, build_net(cfg))
    conditions = _conditions(f, cfg)
    checks = {k: v["verdict"] for k, v in conditions.items()}
    body = {"field": f.to_dict(), "conditions": conditions, "checks": checks}
    return body, _expectations(cfg, checks), {}, {"field": f}


_SCENARIOS = {"marsden": _scenario_marsden, "torus": _scenario_torus, "hierarchy": _scenario_hierarchy}
_COMMANDS = {"solve": _command_solve, "flow": _command_flow, "associate": _command_associate,
             "conditions": _command_conditions}


# -- execution -----------------------------------------------------------------------

_NUMERICAL = (IntegrationError, QuadratureError, ConstructionError)
_CONFIG = (ConfigurationError, UsageError, InputError, DomainError)


def _module_of(exc: Exception) -> str:
    if isinstance(exc, IntegrationError):
        return "flow"
    if isinstance(exc, QuadratureError):
        return "association"
    if isinstance(exc, ConstructionError):
        return "mollifier"
    return "numerics"


def execute(cfg: RunConfig) -> RunResult:
    """Run a resolved config, write its artifacts and map failures onto exit codes."""
    try:
        if cfg.scenario == "custom":
            body, assertions, files, artifacts = _COMMANDS[cfg.command](cfg)
        else:
            body, assertions, files, artifacts = _SCENARIOS[cfg.scenario](cfg)
    except _NUMERICAL as exc:
        ctx = exc.context() if isinstance(exc, IntegrationError) else {}
        ctx = {"module": _module_of(exc), **ctx}
        msg = f"numerical failure in {ctx['module']}: {exc}"
        if len(ctx) > 1:
            msg += " (" + ", ".join(f"{k}={v}" for k, v in ctx.items() if k != "module") + ")"
        return RunResult(3, None, None, msg)
    except _CONFIG as exc:
        return RunResult(2, None, None, f"configuration error: {exc}")
    report = _envelope(cfg, body, assertions)
    files["report.json"] = dumps(report)
    write_outputs(cfg.out_dir, files)
    code = 0 if report["status"] == "pass" else 1
    return RunResult(code, cfg.out_dir, report, f"status {report['status']}", assertions, artifacts)


def _resolve_or_fail(**kw) -> RunConfig | RunResult:
    try:
        return RunConfig.resolve(**kw)
    except _CONFIG as exc:
        return RunResult(2, None, None, f"configuration error: {exc}")


def run_scenario(name: str, overrides: dict | None = None, environ=None) -> RunResult:
    """Run a named scenario with config ``overrides`` merged onto its defaults."""
    if name not in SCENARIOS:
        return RunResult(2, None, None, f"configuration error: unknown scenario {name!r}")
    cfg = _resolve_or_fail(scenario=name, overrides=overrides, environ=environ)
    return cfg if isinstance(cfg, RunResult) else execute(cfg)


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError("a config file must hold a JSON object")
    return data


def run_custom(path, overrides: dict | None = None, environ=None) -> RunResult:
    """Run whatever a config file describes: a named scenario or a custom command."""
    try:
        data = load_config(path)
    except ConfigurationError as exc:
        return RunResult(2, None, None, f"configuration error: {exc}")
    cfg = _resolve_or_fail(file_config=data, overrides=overrides, environ=environ)
    return cfg if isinstance(cfg, RunResult) else execute(cfg)


def run_command(command: str, file_config: dict | None = None, overrides: dict | None = None,
                environ=None) -> RunResult:
    """Run one module operation (solve / flow / associate / conditions)."""
    if command not in COMMANDS:
        return RunResult(2, None, None, f"configuration error: unknown command {command!r}")
    data = dict(file_config or {})
    data.setdefault("scenario", "custom")
    data["command"] = command
    cfg = _resolve_or_fail(file_config=data, overrides=overrides, environ=environ)
    return cfg if isinstance(cfg, RunResult) else execute(cfg)


# -- argument parsing ----------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file merged over the defaults")
    p.add_argument("--epsilon-min", type=float)
    p.add_argument("--epsilon-max", type=float)
    p.add_argument("--epsilon-count", type=int)
    p.add_argument("--tol", type=float, help="integrator atol = rtol")
    p.add_argument("--grid-t", type=int, help="number of t-grid nodes")
    p.add_argument("--grid-p", type=int, help="number of p-grid nodes (per angle)")
    p.add_argument("--case", choices=("a", "b", "c"), help="mollifier case")
    p.add_argument("--out", help=f"output directory (overrides ${OUT_ENV})")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="genflow", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"genflow {__version__}")
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run", help="run a named scenario")
    p.add_argument("scenario", choices=SCENARIOS)
    _add_common(p)
    p = sub.add_parser("custom", help="run a config file")
    p.add_argument("config_file")
    _add_common(p)
    for name, text in (("solve", "integrate trajectories for every eps"),
                       ("flow", "fill a flow table"),
                       ("associate", "test one association notion against a limit"),
                       ("conditions", "check the hypotheses of the limit theorems")):
        p = sub.add_parser(name, help=text)
        _add_common(p)
        p.add_argument("--field", choices=("marsden", "torus", "zero", "linear", "quadratic"))
        if name == "associate":
            p.add_argument("--notion", choices=("zero", "pw", "pwae", "fast"))
            p.add_argument("--t", type=float, help="time slice (default: last t-grid node)")
    sub.add_parser("schema", help="print the config JSON schema")
    return ap


def _report(res: RunResult, stream=None) -> int:
    stream = stream or sys.stdout
    for a in res.assertions:
        stream.write(f"{'PASS' if a['passed'] else 'FAIL'}  {a['name']}\n")
    if res.exit_code in (2, 3):
        sys.stderr.write(res.message + "\n")
    else:
        stream.write(f"{res.message}; artifacts in {res.out_dir}\n")
    return res.exit_code


def main(argv: Sequence[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    if ns.cmd == "schema":
        sys.stdout.write(json.dumps(load_schema(), indent=2) + "\n")
        return 0
    over = flags_to_overrides(ns)
    file_cfg = None
    if getattr(ns, "config", None):
        try:
            file_cfg = load_config(ns.config)
        except ConfigurationError as exc:
            return _report(RunResult(2, None, None, f"configuration error: {exc}"))
    if ns.cmd == "run":
        if file_cfg:
            file_cfg = {**file_cfg, "scenario": ns.scenario}
            cfg = _resolve_or_fail(scenario=ns.scenario, file_config=file_cfg, overrides=over)
            res = cfg if isinstance(cfg, RunResult) else execute(cfg)
        else:
            res = run_scenario(ns.scenario, over)
    elif ns.cmd == "custom":
        res = run_custom(ns.config_file, over)
    else:
        res = run_command(ns.cmd, file_cfg, over)
    return _report(res)


if __name__ == "__main__":
    raise SystemExit(main())
