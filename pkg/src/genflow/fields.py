"""ε-indexed smooth vector fields and checkers for the hypotheses imposed on them.

A :class:`VectorFieldNet` is one representative (ξ_ε) of a generalized
vector field, sampled on a finite :class:`~genflow.epsilon.EpsilonNet`.
Right-hand sides and Jacobians work in cover coordinates.

Sup-norms over a compact space are estimated on explicit grids. Fields with
declared transition layers get each per-ε grid refined inside the layers
to spacing σ(ε)/8, so layer peaks are never missed; for fields without
such a declaration the base grid itself must already be finer than
σ(ε_min)/4.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .epsilon import EpsilonNet, GrowthClass, classify_growth
from .errors import ConfigurationError, UsageError
from .manifold import TWO_PI, Space, Tangent, wrap
from .mollifier import SmoothedStep, build_bump, canonical_case

HALF_PI = 0.5 * math.pi

# classes under which each condition is satisfied
ADMISSIBLE = {
    "linear-growth": ("bounded", "negligible-like"),
    "global-bound-h": ("bounded", "negligible-like"),
    "logtype-derivative": ("bounded", "negligible-like", "log-type"),
    "bounded-derivative": ("bounded", "negligible-like"),
}

# exponent (in |x|) above which sup|F| is deemed to outgrow C(1 + |x|)
LINEAR_GROWTH_EXPONENT_LIMIT = 1.05


@dataclass(frozen=True)
class Layer:
    """Transition layer of coordinate ``component``: |y - c| < halfwidth for c in centers."""

    component: int
    centers: tuple[float, ...]
    halfwidth: float


@dataclass(frozen=True, eq=False)
class VectorFieldNet:
    """A smooth vector field for every ε of ``net``.

    ``rhs(eps, y)`` returns the components at cover coordinates ``y`` and
    ``jac(eps, y)`` the matrix of first partials. ``layers(eps)`` (optional)
    lists the transition layers where the field varies on the scale σ(ε);
    ``speed(eps)`` bounds |component| so that steppers can see a layer coming.
    ``bind(eps)`` (optional) returns ``(rhs, jac)`` for that fixed ε acting on
    plain float sequences; integrators use it on their hot path.
    """

    space: Space
    net: EpsilonNet
    rhs: Callable[[float, np.ndarray], np.ndarray]
    jac: Callable[[float, np.ndarray], np.ndarray]
    label: str
    layers: Callable[[float], list] | None = None
    speed: Callable[[float], Sequence[float]] | None = None
    spec: dict = field(default_factory=dict)
    needs_resolution: bool = True
    bind: Callable | None = None

    def bound(self, eps: float):
        """(rhs, jac) at fixed ε on float sequences, returning lists."""
        if self.bind is not None:
            return self.bind(eps)
        rhs, jac = self.rhs, self.jac
        return (lambda y: rhs(eps, np.asarray(y, dtype=float)).tolist(),
                lambda y: np.asarray(jac(eps, np.asarray(y, dtype=float)), dtype=float).tolist())

    def __call__(self, eps: float, y) -> np.ndarray:
        return self.rhs(eps, np.asarray(y, dtype=float))

    def tangent(self, eps: float, p) -> Tangent:
        p = self.space.point(p)
        return Tangent(p, np.asarray(self.rhs(eps, p), dtype=float))

    def derivative(self, eps: float, y) -> np.ndarray:
        return np.asarray(self.jac(eps, np.asarray(y, dtype=float)), dtype=float)

    def sigma(self, eps: float) -> float:
        return self.net.sigma(eps)

    def layer_list(self, eps: float) -> list:
        return [] if self.layers is None else list(self.layers(eps))

    def to_dict(self) -> dict:
        return {"label": self.label, "space": self.space.to_dict(), "net": self.net.to_dict(),
                **self.spec}


@functools.lru_cache(maxsize=4096)
def _step(case: str, sig: float) -> SmoothedStep:
    return SmoothedStep(build_bump(case), sig)


def marsden_field(case: str = "a", net: EpsilonNet | None = None) -> VectorFieldNet:
    """Regularized circle field ξ_ε(α) = H_ε(α + π/2) − H_ε(α − π/2).

    The angle is folded into (-π, π] before evaluation, so the right-hand
    side is 2π-periodic in the cover coordinate.
    """
    from .epsilon import make_epsilon_net
    case = canonical_case(case)
    if net is None:
        net = make_epsilon_net(1e-2, 1e-8, 7)
    if not net.sigma(net.eps_max) < HALF_PI:
        raise ConfigurationError(
            f"marsden field needs sigma(eps_max) < pi/2, got {net.sigma(net.eps_max)!r}")
    bump = build_bump(case)

    def rhs(eps, y):
        st = _step(case, net.sigma(eps))
        a = wrap(float(y[0]))
        return np.array([st(a + HALF_PI) - st(a - HALF_PI)])

    def jac(eps, y):
        st = _step(case, net.sigma(eps))
        a = wrap(float(y[0]))
        return np.array([[st.density(a + HALF_PI) - st.density(a - HALF_PI)]])

    def layers(eps):
        return [Layer(0, (-HALF_PI, HALF_PI), net.sigma(eps))]

    def speed(eps):
        return (1.0,)

    def bind(eps):
        sig = net.sigma(eps)
        H, rho = bump._cdf_scalar, bump._rho

        def r(y):
            a = wrap(float(y[0]))
            return [H((a + HALF_PI) / sig) - H((a - HALF_PI) / sig)]

        def j(y):
            a = wrap(float(y[0]))
            return [[(rho((a + HALF_PI) / sig) - rho((a - HALF_PI) / sig)) / sig]]

        return r, j

    return VectorFieldNet(Space.circle(), net, rhs, jac, f"marsden[{case}]", layers, speed,
                          {"kind": "marsden", "case": case, "bump": bump.to_dict()}, bind=bind)


def marsden_zero_set(case: str, sig: float) -> tuple[float, float]:
    """Arc [lo, hi] (cover coordinates, lo in (π/2, π]) where the Marsden component vanishes.

    The endpoints are the equilibria e^{±i(π/2 + σ)} for the symmetric kernel.
    """
    lo_s, hi_s = build_bump(case).support
    return HALF_PI + hi_s * sig, 3 * HALF_PI + lo_s * sig


def torus_field(case: str = "a", net: EpsilonNet | None = None) -> VectorFieldNet:
    """Torus field ξ_ε(α, β) = (1, 1 − ρ_σ(α))."""
    from .epsilon import make_epsilon_net
    case = canonical_case(case)
    if net is None:
        net = make_epsilon_net(1e-2, 1e-8, 7)
    if not net.sigma(net.eps_max) < math.pi:
        raise ConfigurationError("torus field needs sigma(eps_max) < pi")
    bump = build_bump(case)

    def rhs(eps, y):
        st = _step(case, net.sigma(eps))
        return np.array([1.0, 1.0 - st.density(wrap(float(y[0])))])

    def jac(eps, y):
        st = _step(case, net.sigma(eps))
        return np.array([[0.0, 0.0], [-st.density_derivative(wrap(float(y[0]))), 0.0]])

    def layers(eps):
        return [Layer(0, (0.0,), net.sigma(eps))]

    def speed(eps):
        return (1.0, 1.0 + bump.sup_norm / net.sigma(eps))

    def bind(eps):
        sig = net.sigma(eps)
        rho, drho = bump._rho, bump._drho

        def r(y):
            return [1.0, 1.0 - rho(wrap(float(y[0])) / sig) / sig]

        def j(y):
            return [[0.0, 0.0], [-drho(wrap(float(y[0])) / sig) / (sig * sig), 0.0]]

        return r, j

    return VectorFieldNet(Space.torus2(), net, rhs, jac, f"torus[{case}]", layers, speed,
                          {"kind": "torus", "case": case, "bump": bump.to_dict()}, bind=bind)


def zero_field(space: Space, net: EpsilonNet) -> VectorFieldNet:
    n = space.n

    def rhs(eps, y):
        return np.zeros(n)

    def jac(eps, y):
        return np.zeros((n, n))

    def bind(eps):
        return (lambda y: [0.0] * n), (lambda y: [[0.0] * n for _ in range(n)])

    return VectorFieldNet(space, net, rhs, jac, "zero", None, lambda eps: (0.0,) * n,
                          {"kind": "zero"}, needs_resolution=False, bind=bind)


def custom_field(space: Space, net: EpsilonNet, rhs, jac, label: str = "custom",
                 needs_resolution: bool = False, layers=None, speed=None) -> VectorFieldNet:
    """Wrap user callables ``rhs(eps, y)`` and ``jac(eps, y)`` as a field net."""
    return VectorFieldNet(space, net, rhs, jac, label, layers, speed,
                          {"kind": "custom", "name": label}, needs_resolution)


def linear_field(net: EpsilonNet, n: int = 1) -> VectorFieldNet:
    """F_ε(x) = x on R^n."""
    return custom_field(Space.euclidean(n), net, lambda eps, y: np.array(y, dtype=float),
                        lambda eps, y: np.eye(n), "linear")


def quadratic_field(net: EpsilonNet, n: int = 1) -> VectorFieldNet:
    """F_ε(x) = x*x componentwise on R^n."""
    return custom_field(Space.euclidean(n), net, lambda eps, y: np.asarray(y, dtype=float) ** 2,
                        lambda eps, y: np.diag(2.0 * np.asarray(y, dtype=float)), "quadratic")


# -- grids ---------------------------------------------------------------------------


def circle_grid(n: int) -> np.ndarray:
    """``n`` equispaced angles covering (-π, π], including 0 and π when n is even."""
    return wrap(-math.pi + TWO_PI * (np.arange(n) + 1) / n)


def base_grid(space: Space, n: int) -> np.ndarray:
    """Uniform grid of a compact space, shape (N, dim)."""
    if space.kind == "circle":
        return circle_grid(n)[:, None]
    if space.kind == "torus2":
        a = circle_grid(n)
        A, B = np.meshgrid(a, a, indexing="ij")
        return np.column_stack([A.ravel(), B.ravel()])
    raise UsageError("base_grid only covers compact spaces; pass explicit points for R^n")


def grid_spacing(space: Space, grid: np.ndarray) -> float:
    worst = 0.0
    for k in range(space.n):
        v = np.unique(np.round(grid[:, k], 15))
        if len(v) < 2:
            continue
        gaps = np.diff(v)
        if space.periodic[k]:
            gaps = np.append(gaps, TWO_PI - (v[-1] - v[0]))
        worst = max(worst, float(gaps.max()))
    return worst


def sample_grid(f: VectorFieldNet, eps: float, grid: np.ndarray) -> np.ndarray:
    """The grid actually used at ``eps``: ``grid`` plus layer refinement points."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    layers = f.layer_list(eps)
    if not layers:
        return grid
    extra = []
    for lay in layers:
        h = lay.halfwidth
        local = np.linspace(-2 * h, 2 * h, 33)  # spacing h/8
        others = [np.unique(grid[:, k]) for k in range(f.space.n)]
        for c in lay.centers:
            axes = list(others)
            axes[lay.component] = c + local
            mesh = np.meshgrid(*axes, indexing="ij")
            extra.append(np.column_stack([m.ravel() for m in mesh]))
    return np.vstack([grid] + extra)


def _check_resolution(f: VectorFieldNet, grid: np.ndarray) -> float:
    spacing = grid_spacing(f.space, grid)
    if f.needs_resolution and f.layers is None:
        limit = f.sigma(f.net.eps_min) / 4
        if spacing > limit:
            raise ConfigurationError(
                f"grid spacing {spacing:.3g} exceeds sigma(eps_min)/4 = {limit:.3g}")
    return spacing


# -- condition checks ----------------------------------------------------------------


@dataclass(frozen=True)
class ConditionReport:
    condition: str
    verdict: str  # holds | fails | ambiguous
    growth: GrowthClass
    witness: tuple  # (eps, point, value) attaining the overall sup
    constant: float
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        eps, point, value = self.witness
        return {
            "condition": self.condition,
            "verdict": self.verdict,
            "constant": self.constant,
            "admissible": list(ADMISSIBLE[self.condition]),
            "growth": self.growth.to_dict(),
            "witness": {"eps": eps, "point": [float(x) for x in point], "value": value},
            **self.details,
        }


def verdict_from_growth(condition: str, growth: GrowthClass) -> str:
    ok = ADMISSIBLE[condition]
    first = growth.kind in ok
    if growth.ambiguous and growth.runner_up is not None and (growth.runner_up in ok) != first:
        return "ambiguous"
    return "holds" if first else "fails"


def _sup_series(f: VectorFieldNet, grid: np.ndarray, value) -> tuple[list, tuple]:
    samples = []
    witness = (None, None, -1.0)
    for eps in f.net:
        pts = sample_grid(f, eps, grid)
        vals = np.array([value(eps, p) for p in pts])
        k = int(np.argmax(vals))
        samples.append((eps, float(vals[k])))
        if vals[k] > witness[2]:
            witness = (eps, tuple(float(x) for x in pts[k]), float(vals[k]))
    return samples, witness


def check_global_bound(f: VectorFieldNet, grid) -> ConditionReport:
    """sup_p ‖ξ_ε(p)‖ must stay bounded as ε → 0."""
    grid = _as_grid(f, grid)
    spacing = _check_resolution(f, grid)
    samples, witness = _sup_series(f, grid, lambda e, p: float(np.linalg.norm(f.rhs(e, p))))
    g = classify_growth(samples)
    return ConditionReport("global-bound-h", verdict_from_growth("global-bound-h", g), g,
                           witness, witness[2], {"grid_points": len(grid), "grid_spacing": spacing})


def check_logtype_derivative(f: VectorFieldNet, grid) -> ConditionReport:
    """sup_p ‖Dξ_ε(p)‖ must be O(|log ε|).

    The family of first-order operators used is the set of coordinate
    partials in cover coordinates (orthonormal for the flat metrics here),
    combined into the spectral norm of the Jacobian.
    """
    grid = _as_grid(f, grid)
    spacing = _check_resolution(f, grid)
    samples, witness = _sup_series(f, grid, lambda e, p: float(np.linalg.norm(f.jac(e, p), 2)))
    g = classify_growth(samples)
    return ConditionReport("logtype-derivative", verdict_from_growth("logtype-derivative", g), g,
                           witness, g.constant,
                           {"grid_points": len(grid), "grid_spacing": spacing,
                            "operator_family": "coordinate partials (Jacobian spectral norm)"})


def check_bounded_derivative(f: VectorFieldNet, grid) -> ConditionReport:
    grid = _as_grid(f, grid)
    spacing = _check_resolution(f, grid)
    samples, witness = _sup_series(f, grid, lambda e, p: float(np.linalg.norm(f.jac(e, p), 2)))
    g = classify_growth(samples)
    return ConditionReport("bounded-derivative", verdict_from_growth("bounded-derivative", g), g,
                           witness, witness[2], {"grid_points": len(grid), "grid_spacing": spacing})


def check_linear_growth(f: VectorFieldNet, grid) -> ConditionReport:
    """|F_ε(x)| ≤ C(1 + |x|) uniformly in ε.

    Two finite surrogates must both pass: the ε-series of
    sup_x |F_ε(x)|/(1+|x|) classifies as bounded, and the radial growth
    exponent of sup|F_ε| over the two outermost dyadic shells of the grid
    does not exceed :data:`LINEAR_GROWTH_EXPONENT_LIMIT`.
    """
    if f.space.kind != "euclidean":
        raise UsageError("linear growth is a condition on fields over R^n")
    grid = _as_grid(f, grid)
    radius = np.linalg.norm(grid, axis=1)
    R = float(radius.max())
    if R <= 0:
        raise ConfigurationError("linear-growth grid must reach beyond the origin")
    outer = radius > R / 2
    inner = (radius > R / 4) & ~outer
    samples, witness = _sup_series(
        f, grid, lambda e, p: float(np.linalg.norm(f.rhs(e, p))) / (1.0 + float(np.linalg.norm(p))))
    g = classify_growth(samples)
    exponents = []
    for eps in f.net:
        mags = np.array([np.linalg.norm(f.rhs(eps, p)) for p in grid])
        hi, lo = mags[outer].max(), (mags[inner].max() if inner.any() else 0.0)
        if hi <= 0:
            exponents.append(0.0)
        elif lo <= 0:
            exponents.append(math.inf)
        else:
            exponents.append(math.log(hi / lo) / math.log(2.0))
    radial = max(exponents)
    verdict = verdict_from_growth("linear-growth", g)
    if radial > LINEAR_GROWTH_EXPONENT_LIMIT:
        verdict = "fails"
    return ConditionReport("linear-growth", verdict, g, witness, witness[2],
                           {"radial_exponent": radial if math.isfinite(radial) else "inf",
                            "radial_exponent_limit": LINEAR_GROWTH_EXPONENT_LIMIT,
                            "grid_radius": R})


def _as_grid(f: VectorFieldNet, grid) -> np.ndarray:
    if isinstance(grid, int):
        return base_grid(f.space, grid)
    g = np.asarray(grid, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    if g.shape[1] != f.space.n:
        raise UsageError(f"grid points must have {f.space.n} coordinates")
    return g
