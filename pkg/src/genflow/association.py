"""Finite-sample verdicts for association notions and for limiting flows.

Every notion quantifies over infinitely many objects (all compacta, all
points, all smooth test functions, all powers of ε). Here each quantifier
is replaced by a declared finite witness family, and every verdict records
its witnesses and the decision rule that produced it, so "holds" always
means "holds for the recorded witnesses".

Convergence to zero along a net is judged by :func:`trend_rule`, which is
built for the slow 1/|ln ε| rates of the scenarios: a plain threshold on
the last value would misjudge them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .epsilon import EpsilonNet, GrowthClass, ScalingLaw, classify_growth, sigma
from .errors import ConfigurationError, InputError, QuadratureError, UsageError
from .fields import VectorFieldNet, grid_spacing
from .flow import FlowTable, IvpConfig, flow_point, variational_derivative
from .manifold import Space, distance, distances
from .mollifier import build_bump, comb_scaled

NOTIONS = ("zero", "pw", "pwae", "model", "assoc-Rn", "fast")

TOL_ZERO = 0.1
MONOTONE_SLACK = 0.10
# wiggles smaller than this fraction of the threshold never break monotonicity
ABSOLUTE_SLACK = 0.01
M_PROBE = 6.0
FAST_FIT_RESIDUAL = 0.05
DEFAULT_NOISE_FLOOR = 1e-8  # 10 * the default integrator tolerance

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


# -- net functions -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NetFunction:
    """u_ε : X → Y for every ε of ``net`` (plus any per-point subnets callers use).

    ``fn(eps, p)`` returns a point of ``y_space``. With ``vectorized=True``
    and a one-dimensional ``x_space`` it may also be called on an array of
    real coordinates and must return an array of the same shape.
    ``features(eps, a, b)`` optionally lists the intervals of [a, b] off which
    ``fn`` is locally constant, which lets quadrature concentrate there.
    """

    x_space: Space
    y_space: Space
    fn: Callable
    net: EpsilonNet
    label: str = "u"
    vectorized: bool = False
    features: Callable | None = None

    def __call__(self, eps: float, p) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.fn(eps, np.atleast_1d(np.asarray(p, dtype=float))),
                                        dtype=float))

    def scalar_values(self, eps: float, x: np.ndarray) -> np.ndarray:
        """Values on an array of real coordinates (1-d spaces only)."""
        if self.vectorized:
            return np.asarray(self.fn(eps, x), dtype=float)
        return np.array([float(self.fn(eps, np.array([xi]))[0]) for xi in x])


def constant_net(x_space: Space, y_space: Space, g: Callable, net: EpsilonNet,
                 label: str = "v", vectorized: bool = False) -> NetFunction:
    """The ε-independent net u_ε = g."""
    return NetFunction(x_space, y_space, lambda eps, p: g(p), net, label, vectorized)


def _as_net(v, like: NetFunction) -> NetFunction:
    if isinstance(v, NetFunction):
        if v.y_space != like.y_space:
            raise UsageError("compared net functions must take values in the same space")
        return v
    if callable(v):
        return constant_net(like.x_space, like.y_space, v, like.net, "v")
    raise UsageError("v must be a NetFunction or a callable point map")


# -- verdicts ------------------------------------------------------------------------


@dataclass(frozen=True)
class AssociationVerdict:
    notion: str
    verdict: str  # holds | fails | ambiguous
    evidence: dict
    rate: GrowthClass | None = None
    exceptional_fraction: float | None = None
    rule: dict = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.notion not in NOTIONS:
            raise InputError(f"unknown notion {self.notion!r}")
        if self.verdict not in ("holds", "fails", "ambiguous"):
            raise InputError(f"unknown verdict {self.verdict!r}")
        if self.exceptional_fraction is not None and not 0 <= self.exceptional_fraction <= 1:
            raise InputError("exceptional fraction must lie in [0, 1]")

    @property
    def holds(self) -> bool:
        return self.verdict == "holds"

    def to_dict(self) -> dict:
        return {"notion": self.notion, "verdict": self.verdict, "rule": self.rule,
                "witnesses": self.witnesses, "evidence": self.evidence,
                "rate": None if self.rate is None else self.rate.to_dict(),
                "exceptional_fraction": self.exceptional_fraction}


def trend_rule(eps: Sequence[float], values: Sequence[float], scaling: ScalingLaw,
               tol_zero: float = TOL_ZERO, noise_floor: float = DEFAULT_NOISE_FLOOR) -> tuple[str, dict]:
    """Decide whether a nonnegative ε-series tends to 0.

    With thr = tol_zero·(1 + σ(ε_last)/σ(ε_first)) and values below the noise
    floor clamped to it: ``holds`` if the last value is ≤ thr and the series
    is nonincreasing over the last half of the net (10% relative slack plus
    1% of thr absolute slack); ``fails`` if
    even the smallest value of the last half exceeds thr; else ``ambiguous``.
    """
    e = [float(x) for x in eps]
    s = [max(float(v), noise_floor) for v in values]
    if len(s) < 2:
        raise InputError("the trend rule needs at least two values")
    sig_ref = sigma(scaling, e[0])
    sig_last = sigma(scaling, e[-1])
    thr = tol_zero * (1.0 + sig_last / sig_ref)
    half = s[len(s) // 2:] if len(s) >= 4 else s[-2:]
    monotone = all(b <= a * (1.0 + MONOTONE_SLACK) + ABSOLUTE_SLACK * thr
                   for a, b in zip(half, half[1:]))
    if s[-1] <= thr and monotone:
        verdict = "holds"
    elif min(half) > thr:
        verdict = "fails"
    else:
        verdict = "ambiguous"
    return verdict, {"threshold": thr, "monotone_last_half": monotone, "last": s[-1],
                     "min_last_half": min(half)}


def _rate(eps, values) -> GrowthClass | None:
    if len(eps) < 4:
        return None
    return classify_growth(list(zip(eps, values)))


def _rule_doc(tol_zero, noise_floor) -> dict:
    return {"trend": "last <= tol_zero*(1+sigma_last/sigma_first) and nonincreasing over "
                     "the last half (10% slack) => holds; min over last half above the "
                     "threshold => fails; otherwise ambiguous",
            "tol_zero": tol_zero, "noise_floor": noise_floor, "slack": MONOTONE_SLACK,
            "absolute_slack_fraction": ABSOLUTE_SLACK}


def _combine(verdicts: Sequence[str]) -> str:
    if all(v == "holds" for v in verdicts):
        return "holds"
    if any(v == "fails" for v in verdicts):
        return "fails"
    return "ambiguous"


def _eps_list(u: NetFunction, eps) -> list[float]:
    return list(u.net.values) if eps is None else [float(e) for e in eps]


def _grid(u: NetFunction, grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    if g.shape[1] != u.x_space.n:
        raise UsageError(f"grid points must have {u.x_space.n} coordinates")
    return g


def _dist(u: NetFunction, a, b) -> float:
    return distance(u.y_space, a, b)


# -- the notions ---------------------------------------------------------------------


def zero_assoc(u: NetFunction, v, K_grid, eps=None, tol_zero: float = TOL_ZERO,
               noise_floor: float = DEFAULT_NOISE_FLOOR,
               check_resolution: bool = True) -> AssociationVerdict:
    """Uniform convergence on the compact set sampled by ``K_grid``."""
    v = _as_net(v, u)
    K = _grid(u, K_grid)
    es = _eps_list(u, eps)
    spacing = grid_spacing(u.x_space, K)
    limit = sigma(u.net.scaling, min(es)) / 4
    if check_resolution and spacing > limit:
        raise ConfigurationError(
            f"K grid spacing {spacing:.3g} exceeds sigma(eps_min)/4 = {limit:.3g}")
    sup, where = [], []
    for e in es:
        d = [_dist(u, u(e, p), v(e, p)) for p in K]
        k = int(np.argmax(d))
        sup.append(float(d[k]))
        where.append(K[k].tolist())
    verdict, trace = trend_rule(es, sup, u.net.scaling, tol_zero, noise_floor)
    return AssociationVerdict(
        "zero", verdict, {"eps": es, "sup_distance": sup, "argmax": where},
        _rate(es, sup), rule={**_rule_doc(tol_zero, noise_floor), **trace},
        witnesses={"K_points": len(K), "grid_spacing": spacing})


def _point_series(u, v, p, es) -> list[float]:
    return [_dist(u, u(e, p), v(e, p)) for e in es]


def pw_assoc(u: NetFunction, v, points, eps=None, subnets=None, tol_zero: float = TOL_ZERO,
             noise_floor: float = DEFAULT_NOISE_FLOOR) -> AssociationVerdict:
    """Convergence at each sampled point.

    ``subnets`` (optional) maps a point to its own decreasing ε-sequence,
    e.g. ε_n = x/n for a comb; otherwise the shared net is used.
    """
    v = _as_net(v, u)
    P = _grid(u, points)
    per_point = []
    for p in P:
        es = [float(e) for e in subnets(p)] if subnets is not None else _eps_list(u, eps)
        s = _point_series(u, v, p, es)
        verdict, trace = trend_rule(es, s, u.net.scaling, tol_zero, noise_floor)
        per_point.append({"point": p.tolist(), "verdict": verdict, "eps": es, "distance": s,
                          "threshold": trace["threshold"]})
    verdict = _combine([r["verdict"] for r in per_point])
    worst = max(per_point, key=lambda r: r["distance"][-1])
    return AssociationVerdict(
        "pw", verdict, {"points": per_point}, _rate(worst["eps"], worst["distance"]),
        rule=_rule_doc(tol_zero, noise_floor),
        witnesses={"points": len(P), "subnets": subnets is not None})


def pwae_assoc(u: NetFunction, v, grid, eps=None, subnets=None, null_threshold: float | None = None,
               tol_zero: float = TOL_ZERO, noise_floor: float = DEFAULT_NOISE_FLOOR) -> AssociationVerdict:
    """Pointwise convergence off a set whose grid fraction is at most the null threshold."""
    inner = pw_assoc(u, v, grid, eps, subnets, tol_zero, noise_floor)
    nodes = inner.evidence["points"]
    n = len(nodes)
    thr = 2.0 / n if null_threshold is None else float(null_threshold)
    exceptional = [r for r in nodes if r["verdict"] != "holds"]
    failing = [r for r in nodes if r["verdict"] == "fails"]
    frac = len(exceptional) / n
    if frac <= thr:
        verdict = "holds"
    elif len(failing) / n > thr:
        verdict = "fails"
    else:
        verdict = "ambiguous"
    return AssociationVerdict(
        "pwae", verdict,
        {"exceptional_points": [r["point"] for r in exceptional[:50]],
         "exceptional_count": len(exceptional), "failing_count": len(failing), "grid_size": n},
        inner.rate, frac,
        rule={**inner.rule, "null_threshold": thr,
              "pwae": "exceptional fraction <= null threshold => holds"},
        witnesses={"grid_size": n})


# quadrature ---------------------------------------------------------------------


def _gl(g, a: float, b: float, panels: int) -> float:
    edges = np.linspace(a, b, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    x = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    vals = g(x).reshape(panels, -1)
    return float(np.sum(half * (vals @ _GL_WEIGHTS)))


def _segments(a: float, b: float, eps: float, feats) -> list[tuple[float, float, int]]:
    """Split [a, b] at feature intervals; base panel count follows the scale ε."""
    cuts = {a, b}
    for lo, hi in feats:
        lo, hi = max(lo, a), min(hi, b)
        if lo < hi:
            cuts.update((lo, hi))
    cuts = sorted(cuts)
    out = []
    for lo, hi in zip(cuts, cuts[1:]):
        if hi > lo:
            out.append((lo, hi, max(4, math.ceil((hi - lo) / eps))))
    return out


def integrate_weak(g, a: float, b: float, eps: float, feats=(), rtol: float = 1e-10,
                   atol: float = 1e-14, max_doublings: int = 8, context=None) -> float:
    """∫_a^b g by composite Gauss–Legendre, doubling panels until two passes agree."""
    segs = _segments(a, b, eps, feats)
    total_prev = None
    for k in range(max_doublings + 1):
        total = sum(_gl(g, lo, hi, n << k) for lo, hi, n in segs)
        if total_prev is not None and abs(total - total_prev) <= atol + rtol * abs(total):
            return total
        total_prev = total
    raise QuadratureError(f"quadrature did not converge for {context!r} at eps={eps!r}")


@dataclass(frozen=True)
class TestFunction:
    name: str
    f: Callable  # vectorized on arrays
    grad_sup: float  # sup |f'| on [0, 1], for the comb bound


@dataclass(frozen=True)
class Density:
    name: str
    phi: Callable  # vectorized on arrays
    support: tuple[float, float]
    sup: float


def default_tests() -> list[TestFunction]:
    return [TestFunction("x", lambda y: y, 1.0),
            TestFunction("x^2", lambda y: y * y, 2.0),
            TestFunction("sin", np.sin, 1.0)]


def default_densities() -> list[Density]:
    """Two smooth densities whose integrals against the scenario nets do not cancel."""
    rho = build_bump("a")
    centered = Density("bump[0.1,0.9]", lambda x: rho(np.asarray((x - 0.5) / 0.4)) / 0.4,
                       (0.1, 0.9), rho.sup_norm / 0.4)
    xs = np.linspace(0, 1, 4001)
    skew_vals = (1 + 2 * xs) * rho(2 * xs - 1)
    skew = Density("(1+2x)bump[0,1]", lambda x: (1 + 2 * np.asarray(x)) * rho(np.asarray(2 * x - 1)),
                   (0.0, 1.0), float(skew_vals.max()))
    return [centered, skew]


def model_assoc(u: NetFunction, v, tests: Sequence[TestFunction] | None = None,
                densities: Sequence[Density] | None = None, eps=None,
                tol_zero: float = TOL_ZERO, noise_floor: float = 1e-14,
                notion: str = "model") -> AssociationVerdict:
    """∫ (f∘u_ε − f∘v_ε) φ → 0 for every declared f and φ (X = R, Y = R)."""
    v = _as_net(v, u)
    if u.x_space != Space.euclidean(1) or u.y_space != Space.euclidean(1):
        raise UsageError("model association is implemented for nets R -> R")
    tests = default_tests() if tests is None else list(tests)
    dens = default_densities() if densities is None else list(densities)
    es = _eps_list(u, eps)
    rows = []
    for t in tests:
        for d in dens:
            a, b = d.support
            I = []
            for e in es:
                feats = list(u.features(e, a, b)) if u.features else []
                if v.features:
                    feats += list(v.features(e, a, b))

                def g(x, e=e, t=t, d=d):
                    return (t.f(u.scalar_values(e, x)) - t.f(v.scalar_values(e, x))) * d.phi(x)

                I.append(integrate_weak(g, a, b, e, feats, context=(t.name, d.name)))
            mags = [abs(x) for x in I]
            verdict, trace = trend_rule(es, mags, u.net.scaling, tol_zero, noise_floor)
            rows.append({"f": t.name, "phi": d.name, "eps": es, "integral": I,
                         "verdict": verdict, "threshold": trace["threshold"]})
    verdict = _combine([r["verdict"] for r in rows])
    worst = max(rows, key=lambda r: abs(r["integral"][-1]))
    return AssociationVerdict(
        notion, verdict, {"integrals": rows},
        _rate(es, [abs(x) for x in worst["integral"]]),
        rule={**_rule_doc(tol_zero, noise_floor),
              "quantifier": "finite witness family stands in for all smooth f and test densities"},
        witnesses={"f": [t.name for t in tests], "phi": [d.name for d in dens]})


def assoc_Rn(u: NetFunction, v, densities: Sequence[Density] | None = None, eps=None,
             tol_zero: float = TOL_ZERO) -> AssociationVerdict:
    """Weak convergence of u_ε − v_ε: model association with f = identity only."""
    return model_assoc(u, v, [TestFunction("x", lambda y: y, 1.0)], densities, eps, tol_zero,
                       notion="assoc-Rn")


def fast_point(eps: Sequence[float], d: Sequence[float], noise_floor: float,
               m_probe: float = M_PROBE) -> tuple[bool, dict]:
    """Per-point rule for fast association: (i) noise-floor tail or (ii) steep log-log decay."""
    d = [float(x) for x in d]
    tail = 0
    for x in reversed(d):
        if x <= noise_floor:
            tail += 1
        else:
            break
    if tail >= 1:
        return True, {"clause": "i", "tail_length": tail}
    le = np.log(np.asarray(eps, dtype=float))
    ld = np.log(np.asarray(d))
    slope, icpt = np.polyfit(le, ld, 1)
    res = float(np.sqrt(np.mean((ld - (icpt + slope * le)) ** 2)))
    ok = slope > m_probe and res < FAST_FIT_RESIDUAL
    return bool(ok), {"clause": "ii" if ok else None, "slope": float(slope), "residual": res}


def fast_assoc(u: NetFunction, v, points, eps=None, noise_floor: float = DEFAULT_NOISE_FLOOR,
               m_probe: float = M_PROBE) -> AssociationVerdict:
    """d(u_ε(p), v_ε(p)) = O(ε^m) for all m, certified up to ``m_probe`` at each point."""
    v = _as_net(v, u)
    P = _grid(u, points)
    es = _eps_list(u, eps)
    per_point = []
    for p in P:
        s = _point_series(u, v, p, es)
        ok, trace = fast_point(es, s, noise_floor, m_probe)
        per_point.append({"point": p.tolist(), "holds": ok, "distance": s, **trace})
    verdict = "holds" if all(r["holds"] for r in per_point) else "fails"
    worst = max(per_point, key=lambda r: r["distance"][-1])
    return AssociationVerdict(
        "fast", verdict, {"eps": es, "points": per_point}, _rate(es, worst["distance"]),
        rule={"fast": "(i) tail at or below the noise floor, or (ii) log-log slope > m_probe "
                      "with RMS residual < 5%", "m_probe": m_probe, "noise_floor": noise_floor},
        witnesses={"points": len(P)})


# -- hierarchy counterexamples -------------------------------------------------------

# comb terms with |n| above this are dropped from quadrature features; their
# total mass is below 2 * 2**-60 * eps
COMB_TERMS = 60


def sin_net(net: EpsilonNet) -> NetFunction:
    R = Space.euclidean(1)
    return NetFunction(R, R, lambda e, x: np.sin(np.asarray(x) / e), net, "sin(x/eps)", True)


def comb_net(net: EpsilonNet) -> NetFunction:
    R = Space.euclidean(1)
    rho0 = build_bump("a", plateau=True)
    r = rho0.support[1]

    def feats(e, a, b):
        lo = max(math.ceil(a / e - r), -COMB_TERMS)
        hi = min(math.floor(b / e + r), COMB_TERMS)
        return [(e * (n - r * 2.0 ** -abs(n)), e * (n + r * 2.0 ** -abs(n))) for n in range(lo, hi + 1)]

    return NetFunction(R, R, lambda e, x: comb_scaled(rho0, e, np.asarray(x, dtype=float)), net,
                       "comb(x/eps)", True, feats)


def comb_l1_norm(window: float = 40.0) -> float:
    """∫ comb over [-window, window] by feature-split quadrature."""
    u = comb_net(_unit_net())
    g = lambda x: u.scalar_values(1.0, x)
    return integrate_weak(g, -window, window, 1.0, u.features(1.0, -window, window),
                          rtol=1e-13, atol=1e-16, context="comb L1")


def _unit_net() -> EpsilonNet:
    return EpsilonNet((1.0, 0.5, 0.25, 0.125), ScalingLaw.power(1.0))


def comb_subnet(x, count: int = 8) -> list[float]:
    """ε_n = |x|/n for n beyond 2|x| (so ε < 1/2); comb(x/ε_n) = comb(±n) = 1."""
    ax = abs(float(np.atleast_1d(x)[0]))
    if ax == 0:
        return [2.0 ** -(k + 1) for k in range(count)]  # comb(0) = 1 for every ε
    n0 = math.floor(2 * ax) + 1
    return [ax / n for n in range(n0, n0 + count)]


def hierarchy_report(net: EpsilonNet | None = None, grid_points: int | None = None) -> dict:
    """Run every notion on the two counterexample nets and check the expected pattern."""
    from .epsilon import make_epsilon_net
    if net is None:
        net = make_epsilon_net(1e-1, 1e-4, 7)
    R = Space.euclidean(1)
    zero = lambda p: np.zeros_like(np.asarray(p, dtype=float))
    sig_min = net.sigma(net.eps_min)
    n = grid_points or (math.ceil(1.0 / (sig_min / 4)) + 1)
    K = np.linspace(0.0, 1.0, n)
    points = np.array([0.5, 1.0, 2.0])
    out = {"net": net.to_dict(), "K": {"interval": [0.0, 1.0], "points": n}, "cases": {}}
    status = "PASS"

    for name, u, subnets in (("sin", sin_net(net), None), ("comb", comb_net(net), comb_subnet)):
        v = constant_net(R, R, zero, net, "0", vectorized=True)
        verdicts = {
            "zero": zero_assoc(u, v, K),
            "pw": pw_assoc(u, v, points, subnets=subnets),
            "pwae": pwae_assoc(u, v, K, subnets=subnets),
            "model": model_assoc(u, v),
            "assoc-Rn": assoc_Rn(u, v),
        }
        expected = ({"assoc-Rn": "holds", "model": "fails", "zero": "fails"} if name == "sin"
                    else {"model": "holds", "pwae": "fails", "pw": "fails", "zero": "fails"})
        mismatches = {k: verdicts[k].verdict for k, want in expected.items()
                      if verdicts[k].verdict != want}
        if mismatches:
            status = "FAILED"
        out["cases"][name] = {
            "label": u.label,
            "verdicts": {k: x.verdict for k, x in verdicts.items()},
            "expected": expected,
            "mismatches": mismatches,
            "details": {k: x.to_dict() for k, x in verdicts.items()},
        }
    out["non_implications"] = {
        "assoc-Rn does not imply model": out["cases"]["sin"]["mismatches"] == {},
        "model does not imply pwae/pw": out["cases"]["comb"]["mismatches"] == {},
    }
    out["status"] = status
    return out


# -- limiting flows ------------------------------------------------------------------


class LimitFlow:
    """Ψ from a flow table, extended off the grid.

    Ψ(t, q) is looked up, in this order:

    1. at the node nearest to q, if q is within 100·tol of it;
    2. after collapsing q onto a declared layer center when q lies within
       2σ(ε_min) of it (inside a layer the extracted value is only known up
       to the layer width, and the layer shrinks onto its center), again by
       node lookup if that lands on a node;
    3. otherwise by a fresh integration at ε_min from q.
    """

    def __init__(self, table: FlowTable, f: VectorFieldNet, cfg: IvpConfig | None = None):
        if table.limit is None:
            raise UsageError("table has no limit candidate")
        self.table = table
        self.f = f
        self.cfg = cfg or table.cfg
        self.node_radius = 100 * table.cfg.tol
        self.layers = f.layer_list(table.eps[-1])
        self.layer_radius = 2.0 * table.sigmas[-1]
        self.lookups = {"node": 0, "layer-center": 0, "fresh": 0}

    def collapse(self, q) -> np.ndarray:
        q = np.array(q, dtype=float)
        for lay in self.layers:
            c = lay.component
            for x in lay.centers:
                off = q[c] - x
                if self.table.space.periodic[c]:
                    from .manifold import wrap
                    off = wrap(float(off))
                if 0 < abs(off) < self.layer_radius:
                    q[c] -= off
        return q

    def __call__(self, t: float, q) -> np.ndarray:
        tab = self.table
        i = tab.t_index(t)
        k, d = tab.nearest_p(q)
        if d <= self.node_radius:
            self.lookups["node"] += 1
            return tab.limit[i, k]
        q2 = self.collapse(q)
        k, d = tab.nearest_p(q2)
        if d <= self.node_radius:
            self.lookups["layer-center"] += 1
            return tab.limit[i, k]
        self.lookups["fresh"] += 1
        return flow_point(self.f, tab.eps[-1], t, q2, self.cfg)


def resolved_nodes(table: FlowTable, f: VectorFieldNet) -> np.ndarray:
    """Nodes the net can resolve: on a layer center, or farther from it than the layer
    width at the second-smallest ε (closer nodes sit inside every layer but the last)."""
    P = table.p_grid
    ok = np.ones(len(P), dtype=bool)
    if len(table.eps) < 2:
        return ok
    for lay in f.layer_list(table.eps[-2]):
        c = lay.component
        for x in lay.centers:
            off = P[:, c] - x
            if table.space.periodic[c]:
                from .manifold import wrap
                off = wrap(off)
            off = np.abs(off)
            ok &= (off <= 1e-12) | (off >= lay.halfwidth)
    return ok


def _default_pairs(t_grid: np.ndarray) -> list[tuple[float, float]]:
    tm = float(np.max(np.abs(t_grid)))
    cand = [tm, -tm, tm / 2, -tm / 2]
    on = lambda x: bool(np.any(np.isclose(t_grid, x, rtol=0, atol=1e-9)))
    snap = lambda x: float(t_grid[np.argmin(np.abs(t_grid - x))])
    pairs = []
    for s in cand:
        for t in cand:
            if on(s) and on(t) and on(s + t) and (s, t) not in pairs:
                pairs.append((snap(s), snap(t)))
    return pairs


def _neighbour_pairs(space: Space, P: np.ndarray) -> list[tuple[int, int]]:
    D = distances(space, P[:, None, :], P[None, :, :])
    D[D <= 1e-12] = np.inf  # self pairs and duplicated nodes (e.g. -pi and pi)
    h = float(D.min())
    ii, jj = np.nonzero(D <= 1.01 * h)
    return [(int(i), int(j)) for i, j in zip(ii, jj) if i < j]


def continuity_probe(table: FlowTable, f: VectorFieldNet, t: float, psi: LimitFlow,
                     cfg: IvpConfig) -> dict:
    """Bisect the worst neighbour jump of Ψ(t, ·) down to width σ(ε_min)/2.

    A jump that survives at that width, larger than ten times what the
    grid's typical difference quotient allows, is reported as a
    discontinuity at the resolution of the net.
    """
    i = table.t_index(t)
    P = table.p_grid
    pairs = _neighbour_pairs(table.space, P)
    if not pairs:
        return {"t": t, "discontinuous": False, "note": "no neighbours"}
    L = table.limit[i]
    jumps = np.array([distance(table.space, L[a], L[b]) for a, b in pairs])
    widths = np.array([distance(table.space, P[a], P[b]) for a, b in pairs])
    quot = float(np.median(jumps / widths))
    k = int(np.argmax(jumps))
    a, b = P[pairs[k][0]].copy(), P[pairs[k][1]].copy()
    # move along the short way in cover coordinates
    step = b - a
    if any(table.space.periodic):
        from .manifold import wrap
        step = wrap(step)
    b = a + step
    target = table.sigmas[-1] / 2
    ya, yb = L[pairs[k][0]], L[pairs[k][1]]
    eps_min = table.eps[-1]
    while distance(table.space, a, b) > target:
        m = 0.5 * (a + b)
        ym = flow_point(f, eps_min, t, m, cfg)
        if distance(table.space, ya, ym) >= distance(table.space, ym, yb):
            b, yb = m, ym
        else:
            a, ya = m, ym
    w = distance(table.space, a, b)
    J = distance(table.space, ya, yb)
    disc = J > 0.1 and J > 10.0 * max(quot, 1.0) * w
    return {"t": float(t), "grid_jump": float(jumps[k]), "jump": J, "width": w,
            "typical_quotient": quot, "discontinuous": bool(disc),
            "between": [a.tolist(), b.tolist()]}


def _derivative_points(f: VectorFieldNet, eps: float, P: np.ndarray, stride: int) -> np.ndarray:
    pts = [P[::stride]]
    base = P[0]
    for lay in f.layer_list(eps):
        for c in lay.centers:
            for u in np.linspace(-2 * lay.halfwidth, 2 * lay.halfwidth, 33):
                q = base.copy()
                q[lay.component] = c + u
                pts.append(q[None, :])
    return np.vstack(pts)


def bounded_derivative_series(f: VectorFieldNet, t: float, P: np.ndarray, cfg: IvpConfig,
                              stride: int = 20) -> tuple[list, GrowthClass]:
    """sup_p ‖DΦ^ε(t, p)‖ over sample points, as an ε-series, with its growth class."""
    series = []
    for eps in f.net:
        pts = _derivative_points(f, eps, P, stride)
        series.append((eps, max(variational_derivative(f, eps, t, p, cfg).norm for p in pts)))
    return series, classify_growth(series)


def limiting_flow_report(table: FlowTable, f: VectorFieldNet, cfg: IvpConfig | None = None,
                         t_sample: Sequence[float] | None = None, pairs=None,
                         flow_tol: float = 1e-6, tol_zero: float = TOL_ZERO,
                         derivative_times: Sequence[float] | None = None) -> dict:
    """Association between Φ^ε(t, ·) and Ψ(t, ·), Ψ's flow property, and what theory predicts."""
    cfg = cfg or table.cfg
    tol = table.cfg.tol
    floor = 10 * tol
    scaling = f.net.scaling
    E = len(table.eps)
    es = list(table.eps[:-1])  # Ψ is the smallest-ε value, so leave that ε out
    t_sample = list(table.t_grid) if t_sample is None else list(t_sample)
    T_idx = [table.t_index(t) for t in t_sample]
    P = table.p_grid
    nP = len(P)
    resolved = resolved_nodes(table, f)

    # (1) association per t
    pw_ok = np.zeros((len(T_idx), nP), dtype=object)
    fast_ok = np.zeros((len(T_idx), nP), dtype=bool)
    zero_rows = []
    zero_checkable = grid_spacing(table.space, P) <= table.sigmas[-1] / 4
    for a, i in enumerate(T_idx):
        d = np.array([distances(table.space, table.values[k, i], table.limit[i]) for k in range(E - 1)])
        for j in range(nP):
            pw_ok[a, j] = trend_rule(es, d[:, j], scaling, tol_zero, floor)[0]
            fast_ok[a, j] = fast_point(es, d[:, j], floor)[0]
        sup = d.max(axis=1)
        zv, trace = trend_rule(es, sup, scaling, tol_zero, floor)
        zero_rows.append({"t": float(table.t_grid[i]), "verdict": zv, "sup_distance": sup.tolist(),
                          "threshold": trace["threshold"]})
    pw_verdict = _combine(list(pw_ok[:, resolved].ravel()))
    fast_verdict = "holds" if fast_ok[:, resolved].all() else "fails"
    if zero_checkable:
        zero_verdict = _combine([r["verdict"] for r in zero_rows])
    else:
        zero_verdict = "not-tested"
    association = {
        "pw": {"verdict": pw_verdict,
               "failing_nodes": int(np.sum(pw_ok[:, resolved] == "fails")),
               "ambiguous_nodes": int(np.sum(pw_ok[:, resolved] == "ambiguous"))},
        "fast": {"verdict": fast_verdict, "nodes_holding": int(fast_ok[:, resolved].sum()),
                 "nodes": int(fast_ok[:, resolved].size)},
        "resolved_points": int(resolved.sum()),
        "unresolved_points": [P[j].tolist() for j in np.flatnonzero(~resolved)],
        "zero": {"verdict": zero_verdict, "per_t": zero_rows,
                 "note": None if zero_checkable else
                 "p-grid coarser than sigma(eps_min)/4; uniform convergence not assessed"},
        "eps_used": es,
        "limit_rule": "Psi = value at smallest eps; that eps is left out of the series",
    }

    # (2) bounded derivative along the variational equation
    if derivative_times is None:
        derivative_times = sorted({float(table.t_grid[np.argmin(np.abs(table.t_grid - x))])
                                   for x in (-1.0, 1.0)})
    stride = max(1, nP // 24)
    deriv = []
    klass = []
    for t in derivative_times:
        series, g = bounded_derivative_series(f, t, P, cfg, stride)
        deriv.append({"t": t, "series": series, "growth": g.to_dict()})
        klass.append(g.kind in ("bounded", "negligible-like"))
    bounded_derivative = "holds" if all(klass) else "fails"

    # (3) flow property of Ψ
    psi = LimitFlow(table, f, cfg)
    pairs = _default_pairs(table.t_grid) if pairs is None else [tuple(map(float, x)) for x in pairs]
    residuals = []
    for s_, t in pairs:
        for j in range(nP):
            p = P[j]
            r = distance(table.space, psi(s_ + t, p), psi(s_, psi(t, p)))
            residuals.append((s_, t, j, r, bool(resolved[j])))
    worst = max(residuals, key=lambda r: r[3])
    res_all = worst[3]
    res_resolved = max([r[3] for r in residuals if r[4]], default=0.0)
    measured = "holds" if res_all <= flow_tol else "fails"

    # limit continuity at the resolution of the net
    probe_t = [s for s, _ in pairs[:2]]
    probes = [continuity_probe(table, f, t, psi, cfg) for t in sorted(set(probe_t))]
    discontinuous = any(p["discontinuous"] for p in probes)

    # (4) prediction
    if fast_verdict == "holds":
        predicted, basis = "holds", "fast association (limit theorem, part i)"
    elif zero_verdict == "holds":
        predicted, basis = "holds", "uniform association (limit theorem, part ii)"
    elif pw_verdict == "holds" and bounded_derivative == "holds":
        predicted, basis = "holds", "pw association plus locally bounded derivative"
    else:
        predicted, basis = "no guarantee", "none of the sufficient conditions was verified"
    agrees = predicted == "no guarantee" or measured != "fails"

    messages = []
    if pw_verdict == "holds" and measured == "fails":
        messages.append("pw-association alone did NOT guarantee the flow property")
        messages.append("pw-association held, flow property failed")
    if discontinuous and measured == "holds":
        messages.append("limit discontinuous, flow property holds")
    if not agrees:
        messages.append("measurement contradicts the theorem-implied prediction")

    return {
        "field": f.label,
        "association": association,
        "bounded_derivative": {"verdict": bounded_derivative, "series": deriv},
        "flow_property": {
            "measured": measured,
            "flow_tol": flow_tol,
            "max_residual": res_all,
            "max_residual_resolved_nodes": res_resolved,
            "worst": {"s": worst[0], "t": worst[1], "p": P[worst[2]].tolist(), "residual": worst[3]},
            "pairs": [list(x) for x in pairs],
            "residuals": [{"s": s_, "t": t, "p": P[j].tolist(), "residual": r, "resolved": res}
                          for (s_, t, j, r, res) in residuals],
            "psi_lookups": dict(psi.lookups),
        },
        "limit_continuity": {"discontinuous": discontinuous, "probes": probes},
        "prediction": {"flow_property": predicted, "basis": basis, "agrees": agrees},
        "messages": messages,
    }


def flow_residual_at(report: dict, s: float, t: float, p, space: Space) -> float | None:
    """Look up the measured Ψ flow residual at one (s, t, p) of a limiting-flow report."""
    for row in report["flow_property"]["residuals"]:
        if (math.isclose(row["s"], s, abs_tol=1e-9) and math.isclose(row["t"], t, abs_tol=1e-9)
                and distance(space, row["p"], p) < 1e-12):
            return row["residual"]
    return None
