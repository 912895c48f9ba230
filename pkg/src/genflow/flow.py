"""Per-ε flows: adaptive integration, flow tables, group-law residuals and oracles.

The stepper is an explicit embedded Runge–Kutta method of order 8 with the
Dormand–Prince 8(5,3) coefficients and their error estimator. Two things
are specific to this package:

* steps are clipped so that they land exactly on the requested output
  times (no interpolation anywhere), and
* inside declared transition layers, where the right-hand side changes on
  the scale σ(ε), the step is capped at ``max_step_factor * σ(ε)``; outside
  a layer the step may not run into one faster than the field can move.

All states are in cover coordinates; wrapping happens only in distances
and output.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
# coefficient tables only; the stepping logic below is our own
from scipy.integrate._ivp import dop853_coefficients as _dop

from .epsilon import classify_growth
from .errors import ConfigurationError, IntegrationError, UsageError
from .fields import HALF_PI, VectorFieldNet
from .manifold import TWO_PI, Space, distance, distances, wrap
from .mollifier import Bump, SmoothedStep, canonical_case

_S = _dop.N_STAGES
_A_ROWS = [[float(a) for a in _dop.A[s, :s]] for s in range(_S)]
_B = [float(b) for b in _dop.B]
_E3 = [float(e) for e in _dop.E3]
_E5 = [float(e) for e in _dop.E5]

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_ERR_EXPONENT = -1.0 / 8.0

# the controller works at tol * _TIGHTEN: global error after a layer crossing
# and a re-integration must still come in under the 10*tol / 20*tol budgets
_TIGHTEN = 1e-3


@dataclass(frozen=True)
class IvpConfig:
    """Output times and tolerances for :func:`solve_ivp`."""

    t_grid: tuple[float, ...]
    t0: float = 0.0
    atol: float = 1e-9
    rtol: float = 1e-9
    max_step_factor: float = 0.25
    max_steps: int = 2_000_000

    def __post_init__(self):
        grid = tuple(float(t) for t in self.t_grid)
        object.__setattr__(self, "t_grid", grid)
        if not (self.atol > 0 and self.rtol > 0):
            raise ConfigurationError("tolerances must be positive")
        if not self.max_step_factor > 0:
            raise ConfigurationError("max_step_factor must be positive")
        if not grid:
            raise ConfigurationError("t_grid must not be empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigurationError("t_grid must be strictly increasing")
        if self.t0 not in grid:
            raise ConfigurationError(f"t_grid must contain t0={self.t0!r}")

    @property
    def tol(self) -> float:
        return max(self.atol, self.rtol)

    def with_grid(self, t_grid) -> "IvpConfig":
        return IvpConfig(tuple(t_grid), self.t0, self.atol, self.rtol, self.max_step_factor,
                         self.max_steps)

    @classmethod
    def uniform(cls, t_min: float, t_max: float, count: int, t0: float = 0.0,
                tol: float = 1e-9, **kw) -> "IvpConfig":
        """``count`` equispaced times from ``t_min`` to ``t_max`` with ``t0`` inserted."""
        grid = set(np.round(np.linspace(t_min, t_max, count), 12).tolist())
        grid.add(float(t0))
        return cls(tuple(sorted(grid)), t0, tol, tol, **kw)

    def to_dict(self) -> dict:
        return {"t0": self.t0, "t_grid": list(self.t_grid), "atol": self.atol, "rtol": self.rtol,
                "max_step_factor": self.max_step_factor}


@dataclass(frozen=True)
class Trajectory:
    eps: float
    initial: np.ndarray
    times: np.ndarray
    states: np.ndarray  # (len(times), dim), cover coordinates
    steps: int
    rejected: int

    @property
    def samples(self) -> list[tuple[float, np.ndarray]]:
        return list(zip(self.times.tolist(), self.states))

    def at(self, t: float) -> np.ndarray:
        k = np.flatnonzero(self.times == t)
        if not k.size:
            raise UsageError(f"t={t!r} is not an output time of this trajectory")
        return self.states[k[0]]


# -- stepper -------------------------------------------------------------------------


class _Stepper:
    """Stepping state for one ε; states are plain float lists (dimensions here are tiny)."""

    def __init__(self, f: VectorFieldNet, eps: float, atol: float, rtol: float,
                 max_step_factor: float, max_steps: int, rhs=None):
        self.f = f
        self.eps = eps
        self.rhs, self.jac = f.bound(eps)
        if rhs is not None:
            self.rhs = rhs
        self.atol = atol * _TIGHTEN
        self.rtol = rtol * _TIGHTEN
        self.sig = f.sigma(eps)
        self.floor_step = max_step_factor * self.sig
        self.layers = f.layer_list(eps)
        self.speed = tuple(f.speed(eps)) if f.speed is not None else None
        self.periodic = f.space.periodic
        self.probe = f.layers is None and f.needs_resolution
        self.n = f.space.n
        self.max_steps = max_steps
        self.steps = 0
        self.rejected = 0

    def cap(self, y) -> float:
        cap = math.inf
        for lay in self.layers:
            c = y[lay.component]
            if self.periodic[lay.component]:
                dist = min(abs(wrap(c - x)) for x in lay.centers)
            else:
                dist = min(abs(c - x) for x in lay.centers)
            if dist < 2.0 * lay.halfwidth:
                return self.floor_step
            v = self.speed[lay.component] if self.speed else 1.0
            cap = min(cap, max((dist - lay.halfwidth) / max(v, 1e-300), self.floor_step))
        if self.probe:
            nrm = float(np.linalg.norm(np.asarray(self.jac(y[: self.n]), dtype=float), 2))
            if nrm > 0:
                cap = min(cap, max(1.0 / nrm, self.floor_step))
        return cap

    def step(self, y, fy, h):
        """One trial step of signed size h; returns (y_new, f_new, error_norm)."""
        rhs = self.rhs
        m = len(y)
        K = [fy]
        for s in range(1, _S):
            row = _A_ROWS[s]
            K.append(rhs([y[i] + h * sum(a * k[i] for a, k in zip(row, K)) for i in range(m)]))
        y_new = [y[i] + h * sum(b * k[i] for b, k in zip(_B, K)) for i in range(m)]
        f_new = rhs(y_new)
        K.append(f_new)
        n5 = n3 = 0.0
        for i in range(m):
            sc = self.atol + max(abs(y[i]), abs(y_new[i])) * self.rtol
            e5 = sum(e * k[i] for e, k in zip(_E5, K)) / sc
            e3 = sum(e * k[i] for e, k in zip(_E3, K)) / sc
            n5 += e5 * e5
            n3 += e3 * e3
        if n5 == 0.0 and n3 == 0.0:
            return y_new, f_new, 0.0
        return y_new, f_new, abs(h) * n5 / math.sqrt((n5 + 0.01 * n3) * m)

    def march(self, t: float, y, targets: Sequence[float], out: list):
        """Integrate from (t, y) through ``targets`` (monotone), appending states to ``out``."""
        if not targets:
            return
        y = [float(v) for v in y]
        direction = 1.0 if targets[0] > t else -1.0
        fy = self.rhs(y)
        h_free = min(self.cap(y), 0.01, abs(targets[-1] - t))
        for target in targets:
            while t != target:
                remaining = abs(target - t)
                h = min(h_free, self.cap(y))
                clipped = h >= remaining * (1.0 - 1e-12)
                if clipped:
                    h = remaining
                y_new, f_new, err = self.step(y, fy, direction * h)
                if not (all(math.isfinite(v) for v in y_new) and math.isfinite(err)):
                    raise IntegrationError("non-finite state", self.eps, t, y)
                self.steps += 1
                if self.steps > self.max_steps:
                    raise IntegrationError("step budget exhausted", self.eps, t, y)
                if err <= 1.0:
                    t = target if clipped else t + direction * h
                    y, fy = y_new, f_new
                    grow = _MAX_FACTOR if err == 0 else min(_MAX_FACTOR, _SAFETY * err ** _ERR_EXPONENT)
                    h_new = h * grow
                    h_free = max(h_new, h_free) if clipped else h_new
                else:
                    self.rejected += 1
                    h_free = h * max(_MIN_FACTOR, _SAFETY * err ** _ERR_EXPONENT)
                    if h_free < 1e-14 * max(1.0, abs(t)):
                        raise IntegrationError("step size underflow", self.eps, t, y)
            out.append(list(y))


def _run(stepper: _Stepper, y0: np.ndarray, t0: float, grid: Sequence[float]) -> np.ndarray:
    fwd = [t for t in grid if t > t0]
    bwd = [t for t in reversed(grid) if t < t0]
    out_f: list = []
    out_b: list = []
    stepper.march(t0, y0, fwd, out_f)
    stepper.march(t0, y0, bwd, out_b)
    rows = list(reversed(out_b)) + ([list(y0)] if t0 in grid else []) + out_f
    return np.array(rows, dtype=float)


def _check_eps(f: VectorFieldNet, eps: float) -> float:
    eps = float(eps)
    if eps not in f.net.values:
        raise UsageError(f"eps={eps!r} is not in the field's net")
    return eps


def solve_ivp(f: VectorFieldNet, eps: float, p0, cfg: IvpConfig, check_net: bool = True) -> Trajectory:
    """Integrate ξ_ε from ``p0`` at ``cfg.t0`` and sample at every time of ``cfg.t_grid``."""
    if check_net:
        eps = _check_eps(f, eps)
    y0 = f.space.point(p0)
    st = _Stepper(f, eps, cfg.atol, cfg.rtol, cfg.max_step_factor, cfg.max_steps)
    try:
        states = _run(st, y0, cfg.t0, cfg.t_grid)
    except IntegrationError as exc:
        if exc.point is None:
            exc.point = y0
        raise
    return Trajectory(eps, y0, np.array(cfg.t_grid), states, st.steps, st.rejected)


def flow_point(f: VectorFieldNet, eps: float, t: float, p, cfg: IvpConfig) -> np.ndarray:
    """Φ^ε(t, p) by a fresh integration (cover coordinates, start wrapped)."""
    grid = sorted({cfg.t0, cfg.t0 + float(t)})
    sub = cfg.with_grid(grid)
    tr = solve_ivp(f, eps, p, sub, check_net=False)
    return tr.at(cfg.t0 + float(t))


def flow_identity_residual(f: VectorFieldNet, eps: float, s: float, t: float, p,
                           cfg: IvpConfig) -> float:
    """distance(Φ^ε(t+s, p), Φ^ε(t, Φ^ε(s, p))) with every flow value freshly integrated."""
    eps = _check_eps(f, eps)
    direct = flow_point(f, eps, s + t, p, cfg)
    mid = flow_point(f, eps, s, p, cfg)
    composed = flow_point(f, eps, t, mid, cfg)
    return distance(f.space, direct, composed)


# -- variational equation ------------------------------------------------------------


@dataclass(frozen=True)
class VariationalResult:
    eps: float
    t: float
    p: np.ndarray
    matrix: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))

    def to_dict(self) -> dict:
        return {"eps": self.eps, "t": self.t, "p": self.p.tolist(),
                "matrix": self.matrix.tolist(), "norm": self.norm}


def variational_derivative(f: VectorFieldNet, eps: float, t: float, p, cfg: IvpConfig) -> VariationalResult:
    """DΦ^ε(t, p) from the matrix variational equation d/dt J = Dξ_ε(Φ) J, J(t0) = I."""
    eps = _check_eps(f, eps)
    n = f.space.n
    y0 = f.space.point(p)

    frhs, fjac = f.bound(eps)

    def rhs(z):
        y = z[:n]
        D = fjac(y)
        dJ = [sum(D[i][k] * z[n + k * n + j] for k in range(n)) for i in range(n) for j in range(n)]
        return list(frhs(y)) + dJ

    z0 = list(y0) + np.eye(n).ravel().tolist()
    st = _Stepper(f, eps, cfg.atol, cfg.rtol, cfg.max_step_factor, cfg.max_steps, rhs=rhs)
    t_end = cfg.t0 + float(t)
    if t_end == cfg.t0:
        return VariationalResult(eps, float(t), y0, np.eye(n))
    out: list = []
    st.march(cfg.t0, z0, [t_end], out)
    return VariationalResult(eps, float(t), y0, np.array(out[0][n:]).reshape(n, n))


# -- closed forms --------------------------------------------------------------------


def closed_form_marsden_limit(case: str, alpha0: float, t: float) -> float:
    """Pointwise limit of the regularized Marsden flow, as an angle in (-π, π]."""
    case = canonical_case(case)
    a = wrap(float(alpha0))
    inside = -HALF_PI < a < HALF_PI
    if a == HALF_PI:
        inside = case in ("symmetric-a", "right-b")
    elif a == -HALF_PI:
        inside = case in ("symmetric-a", "left-c")
    if not inside:
        return a
    return min(max(a + float(t), -HALF_PI), HALF_PI)


def _heaviside0(case: str) -> float:
    return {"symmetric-a": 0.5, "right-b": 0.0, "left-c": 1.0}[canonical_case(case)]


def _periodic_cumulative(x: float, step) -> float:
    """∫_{-π}^{x} of the 2π-periodic extension of a density supported in (-π, π)."""
    r = wrap(x)
    k = round((x - r) / TWO_PI)
    return k + step(r)


def closed_form_torus(bump: Bump, sig: float, t: float, alpha: float, beta: float) -> np.ndarray:
    """Exact torus flow (cover coordinates) for width σ."""
    st = SmoothedStep(bump, sig)
    a1 = alpha + t
    jump = _periodic_cumulative(a1, st) - _periodic_cumulative(alpha, st)
    return np.array([a1, beta + t - jump])


def closed_form_torus_limit(case: str, t: float, alpha: float, beta: float) -> np.ndarray:
    """ε → 0 limit of :func:`closed_form_torus`, with H(0) fixed by the bump case."""
    h0 = _heaviside0(case)

    def H(r):
        return 1.0 if r > 0 else (0.0 if r < 0 else h0)

    a1 = alpha + t
    jump = _periodic_cumulative(a1, H) - _periodic_cumulative(alpha, H)
    return np.array([a1, beta + t - jump])


# -- flow tables ---------------------------------------------------------------------


@dataclass
class FlowTable:
    """Φ^ε(t, p) over ε × t_grid × p_grid, plus a limit candidate and Cauchy diagnostics."""

    label: str
    space: Space
    eps: tuple[float, ...]
    sigmas: tuple[float, ...]
    t_grid: np.ndarray
    p_grid: np.ndarray  # (P, dim)
    values: np.ndarray  # (E, T, P, dim), cover coordinates
    cfg: IvpConfig
    limit: np.ndarray | None = None  # (T, P, dim)
    cauchy: np.ndarray | None = None  # (E-1, T, P)
    diagnostics: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def t_index(self, t: float) -> int:
        k = np.flatnonzero(np.isclose(self.t_grid, t, rtol=0, atol=1e-12))
        if not k.size:
            raise UsageError(f"t={t!r} is not on the table's t-grid")
        return int(k[0])

    def p_index(self, p) -> int:
        p = np.atleast_1d(np.asarray(p, dtype=float))
        d = distances(self.space, self.p_grid, p[None, :])
        k = int(np.argmin(d))
        if d[k] > 1e-12:
            raise UsageError(f"point {p.tolist()} is not on the table's p-grid")
        return k

    def nearest_p(self, p) -> tuple[int, float]:
        p = np.atleast_1d(np.asarray(p, dtype=float))
        d = distances(self.space, self.p_grid, p[None, :])
        k = int(np.argmin(d))
        return k, float(d[k])

    def phi(self, k_eps: int, t: float, p) -> np.ndarray:
        return self.values[k_eps, self.t_index(t), self.p_index(p)]

    def psi(self, t: float, p) -> np.ndarray:
        return self.limit[self.t_index(t), self.p_index(p)]

    # serialization ------------------------------------------------------------------

    def rows(self, wrapped: bool = True):
        dim = self.space.n
        for ke, e in enumerate(self.eps):
            for kt, t in enumerate(self.t_grid):
                for kp in range(len(self.p_grid)):
                    p = self.p_grid[kp]
                    v = self.values[ke, kt, kp]
                    if wrapped:
                        v = self.space.wrap_coords(v)
                    yield [e, float(t)] + [float(p[i]) for i in range(dim)] + [float(v[i]) for i in range(dim)]

    def header(self) -> list[str]:
        dim = self.space.n
        return (["epsilon", "t"] + [f"p{i}" for i in range(dim)]
                + [f"phi{i}" for i in range(dim)])

    def to_csv(self, gnuplot: bool = False) -> str:
        buf = io.StringIO()
        if gnuplot:
            buf.write("# " + " ".join(self.header()) + "\n")
            prev = None
            for row in self.rows():
                if prev is not None and row[0] != prev:
                    buf.write("\n\n")  # gnuplot data-set separator between eps blocks
                prev = row[0]
                buf.write(" ".join(_fmt(x) for x in row) + "\n")
            return buf.getvalue()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for row in self.rows():
            w.writerow([_fmt(x) for x in row])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {"label": self.label, "space": self.space.to_dict(), "eps": list(self.eps),
                "sigma": list(self.sigmas), "t_grid": self.t_grid.tolist(),
                "p_count": int(len(self.p_grid)), "ivp": self.cfg.to_dict(),
                "diagnostics": self.diagnostics, "stats": self.stats}


def _fmt(x: float) -> str:
    return repr(float(x))


def flow_table(f: VectorFieldNet, cfg: IvpConfig, p_grid) -> FlowTable:
    """Fill Φ^ε(t, p) by independent integrations for every ε of the net and every p."""
    P = np.asarray(p_grid, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.shape[1] != f.space.n:
        raise UsageError(f"p_grid points must have {f.space.n} coordinates")
    _check_t_spacing(f, cfg)
    P = np.array([f.space.point(p) for p in P])
    E, T = len(f.net), len(cfg.t_grid)
    values = np.empty((E, T, len(P), f.space.n))
    steps = rejected = 0
    for ke, eps in enumerate(f.net):
        for kp, p in enumerate(P):
            try:
                tr = solve_ivp(f, eps, p, cfg)
            except IntegrationError as exc:
                exc.point = p
                raise
            values[ke, :, kp] = tr.states
            steps += tr.steps
            rejected += tr.rejected
    table = FlowTable(f.label, f.space, tuple(f.net.values), tuple(f.net.sigmas),
                      np.array(cfg.t_grid), P, values, cfg,
                      stats={"steps": steps, "rejected": rejected})
    extract_limit(table)
    return table


def _check_t_spacing(f: VectorFieldNet, cfg: IvpConfig) -> None:
    if not any(f.space.periodic) or len(cfg.t_grid) < 2 or f.speed is None:
        return
    # only the coordinates we lift must be sampled finer than half a turn
    sp = max(f.speed(f.net.eps_max)[0], 1e-300)
    gap = float(np.max(np.diff(cfg.t_grid)))
    if gap > HALF_PI / sp:
        raise ConfigurationError(
            f"t-grid spacing {gap:.3g} exceeds pi/2 over the field speed ({HALF_PI / sp:.3g})")


def extract_limit(table: FlowTable) -> tuple[np.ndarray, dict]:
    """Ψ := values at the smallest ε; Cauchy differences between consecutive ε as diagnostics."""
    E = len(table.eps)
    table.limit = table.values[-1].copy()
    cauchy = np.empty((E - 1,) + table.values.shape[1:3])
    for k in range(E - 1):
        cauchy[k] = distances(table.space, table.values[k], table.values[k + 1])
    table.cauchy = cauchy
    tol = table.cfg.tol
    floor = 10 * tol
    last = cauchy[-1]
    stalled = (last > floor) & (last > 0.5 * cauchy.max(axis=0))
    flagged = np.argwhere(stalled)
    table.diagnostics = {
        "limit_rule": "value at smallest eps",
        "noise_floor": floor,
        "max_last_cauchy": float(last.max()),
        "nodes_at_noise_floor": int(np.sum(last <= floor)),
        "non_cauchy_nodes": int(len(flagged)),
        "non_cauchy_examples": [
            {"t": float(table.t_grid[i]), "p": table.p_grid[j].tolist(),
             "differences": cauchy[:, i, j].tolist()} for i, j in flagged[:10]],
    }
    return table.limit, table.diagnostics


def cauchy_growth(table: FlowTable, t: float, p):
    """Growth class of the Cauchy difference series at one node (ε_k paired with ε_{k+1})."""
    i, j = table.t_index(t), table.p_index(p)
    return classify_growth(list(zip(table.eps[:-1], table.cauchy[:, i, j].tolist())))


# -- grids ---------------------------------------------------------------------------


def marsden_p_grid(count: int = 480) -> np.ndarray:
    """Uniform circle grid; counts divisible by 4 contain 0, ±π/2 and π."""
    from .fields import circle_grid
    return circle_grid(count)[:, None]


def torus_p_grid(count: int = 21) -> np.ndarray:
    a = np.linspace(-math.pi, math.pi, count)
    A, B = np.meshgrid(a, a, indexing="ij")
    return np.column_stack([A.ravel(), B.ravel()])


def scenario_limit(f: VectorFieldNet) -> Callable | None:
    """Closed-form pointwise limit (t, p) -> cover point for the scenario fields, if known."""
    kind = f.spec.get("kind")
    case = f.spec.get("case")
    if kind == "marsden":
        return lambda t, p: np.array([closed_form_marsden_limit(case, float(p[0]), t)])
    if kind == "torus":
        return lambda t, p: closed_form_torus_limit(case, t, float(p[0]), float(p[1]))
    if kind == "zero":
        return lambda t, p: np.asarray(p, dtype=float)
    return None


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)
