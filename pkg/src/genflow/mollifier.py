"""Smooth compactly supported kernels, smoothed Heaviside steps and the comb.

The basic profile is the classical ``exp(-1/(1-x^2))`` bump on (-1, 1),
normalized by quadrature. The one-sided kernels are affine images of it:
``right-b`` lives on [0, 1] and ``left-c`` on [-1, 0], which forces
``H(0) = 0`` resp. ``H(0) = 1`` for the smoothed step.

Antiderivatives are tabulated once per bump on a uniform grid and evaluated
with quintic Hermite interpolation (value, first and second derivative are
all known exactly), so ``H`` costs a handful of flops per call.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import ConfigurationError, ConstructionError

CASES = ("symmetric-a", "right-b", "left-c")
_CASE_ALIASES = {"a": "symmetric-a", "b": "right-b", "c": "left-c"}

# plateau bump: width of each smooth ramp; the flat-top half-width is solved for
PLATEAU_RAMP_WIDTH = 0.5

_FLAT_MASS = 1e-20
_TABLE_INTERVALS = 2048
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


def canonical_case(case: str) -> str:
    case = _CASE_ALIASES.get(case, case)
    if case not in CASES:
        raise ConfigurationError(f"unknown bump case {case!r}; expected one of {CASES} or a/b/c")
    return case


def _exp_profile(u: float) -> float:
    """Unnormalized exp(-1/(1-u^2)) on (-1, 1)."""
    if -1.0 < u < 1.0:
        return math.exp(-1.0 / (1.0 - u * u))
    return 0.0


def _exp_profile_d(u: float) -> float:
    if -1.0 < u < 1.0:
        w = 1.0 - u * u
        return math.exp(-1.0 / w) * (-2.0 * u / (w * w))
    return 0.0


def _exp_profile_np(u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u)
    m = np.abs(u) < 1.0
    out[m] = np.exp(-1.0 / (1.0 - u[m] * u[m]))
    return out


def _gl_integrate(fn, a: float, b: float, panels: int = 512) -> float:
    """Composite 20-point Gauss-Legendre; ample for these C-infinity integrands."""
    h = (b - a) / panels
    half = 0.5 * h
    total = 0.0
    for i in range(panels):
        mid = a + (i + 0.5) * h
        total += half * sum(w * fn(mid + half * u) for u, w in zip(_GL_NODES, _GL_WEIGHTS))
    return total


_EXP_MASS = _gl_integrate(_exp_profile, -1.0, 1.0)


def _ramp(u: float) -> float:
    """Smooth monotone transition from 1 (u <= 0) to 0 (u >= 1)."""
    if u <= 0.0:
        return 1.0
    if u >= 1.0:
        return 0.0
    a = math.exp(-1.0 / u)
    b = math.exp(-1.0 / (1.0 - u))
    return b / (a + b)


def _ramp_np(u: np.ndarray) -> np.ndarray:
    out = np.where(u <= 0.0, 1.0, 0.0)
    m = (u > 0.0) & (u < 1.0)
    a = np.exp(-1.0 / u[m])
    b = np.exp(-1.0 / (1.0 - u[m]))
    out[m] = b / (a + b)
    return out


def _ramp_d(u: float) -> float:
    if u <= 0.0 or u >= 1.0:
        return 0.0
    a = math.exp(-1.0 / u)
    b = math.exp(-1.0 / (1.0 - u))
    da = a / (u * u)
    db = b / ((1.0 - u) ** 2)
    return (db * (a + b) - b * (da + db)) / (a + b) ** 2


def _plateau_mass(a: float, w: float) -> float:
    top = 2.0 * a
    ramps = 2.0 * _gl_integrate(lambda x: _ramp((x - a) / w), a, a + w, panels=64)
    return top + ramps


@dataclass(frozen=True, eq=False)
class Bump:
    """A nonnegative smooth kernel with compact support and unit mass.

    Instances are immutable and built by :func:`build_bump`. Calling the bump
    evaluates ρ; :meth:`derivative` gives ρ′ and :meth:`cdf` the
    antiderivative ∫_{-∞}^x ρ.
    """

    case: str
    plateau: bool
    support: tuple[float, float]
    sup_norm: float
    shape: dict
    _rho: object = field(repr=False)
    _drho: object = field(repr=False)
    _table: tuple = field(repr=False, default=())
    _rho_np: object = field(repr=False, default=None)

    def __call__(self, x):
        if isinstance(x, (float, int)):
            return self._rho(float(x))
        x = np.asarray(x, dtype=float)
        if self._rho_np is not None:
            return self._rho_np(x)
        return np.vectorize(self._rho, otypes=[float])(x)

    def derivative(self, x):
        if isinstance(x, (float, int)):
            return self._drho(float(x))
        x = np.asarray(x, dtype=float)
        return np.vectorize(self._drho, otypes=[float])(x)

    def cdf(self, x):
        """∫_{-∞}^x ρ(s) ds from the cached quintic Hermite table."""
        if isinstance(x, (float, int)):
            return self._cdf_scalar(float(x))
        x = np.asarray(x, dtype=float)
        return np.vectorize(self._cdf_scalar, otypes=[float])(x)

    def _cdf_scalar(self, x: float) -> float:
        lo, hi = self.support
        if x <= lo:
            return 0.0
        if x >= hi:
            return 1.0
        h, F, G, f, df = self._table
        s = (x - lo) / h
        i = int(s)
        if i >= len(F) - 1:
            i = len(F) - 2
        t = s - i
        # quintic Hermite basis on [0, 1]
        t2 = t * t
        t3 = t2 * t
        t4 = t3 * t
        t5 = t4 * t
        h00 = 1 - 10 * t3 + 15 * t4 - 6 * t5
        h10 = t - 6 * t3 + 8 * t4 - 3 * t5
        h20 = 0.5 * (t2 - 3 * t3 + 3 * t4 - t5)
        h01 = 10 * t3 - 15 * t4 + 6 * t5
        h11 = -4 * t3 + 7 * t4 - 3 * t5
        h21 = 0.5 * (t3 - 2 * t4 + t5)
        slope = h * (h10 * f[i] + h11 * f[i + 1]) + h * h * (h20 * df[i] + h21 * df[i + 1])
        if F[i + 1] - F[i] < _FLAT_MASS:
            # the kernel is numerically flat here; linear interpolation is monotone and exact to this mass
            v = F[i] + t * (F[i + 1] - F[i]) if F[i] <= 0.5 else 1.0 - (G[i] - t * (G[i] - G[i + 1]))
        elif F[i] <= 0.5:
            v = h00 * F[i] + h01 * F[i + 1] + slope
        else:
            # interpolate the upper tail mass so rounding near 1 stays monotone
            v = 1.0 - (h00 * G[i] + h01 * G[i + 1] - slope)
        return min(1.0, max(0.0, v))

    def to_dict(self) -> dict:
        return {"case": self.case, "plateau": self.plateau, "support": list(self.support),
                "sup_norm": self.sup_norm, "shape": dict(self.shape)}


def _tabulate(rho, drho, support):
    lo, hi = support
    n = _TABLE_INTERVALS
    h = (hi - lo) / n
    xs = lo + h * np.arange(n + 1)
    F = np.zeros(n + 1)
    half = 0.5 * h
    for i in range(n):
        mid = xs[i] + half
        F[i + 1] = F[i] + half * sum(w * rho(mid + half * u) for u, w in zip(_GL_NODES, _GL_WEIGHTS))
    G = np.zeros(n + 1)
    for i in range(n - 1, -1, -1):
        G[i] = G[i + 1] + (F[i + 1] - F[i])
    f = np.array([rho(x) for x in xs])
    df = np.array([drho(x) for x in xs])
    return h, tuple(F.tolist()), tuple(G.tolist()), tuple(f.tolist()), tuple(df.tolist())


def build_bump(case: str = "symmetric-a", plateau: bool = False) -> Bump:
    """Construct the kernel for ``case`` (``symmetric-a``, ``right-b``, ``left-c``).

    With ``plateau=True`` the result is the flat-topped kernel used for the
    comb: values in [0, 1], equal to 1 on a neighbourhood of 0, with smooth
    ramps of fixed width and a top half-width chosen by root finding so that
    the total mass is 1.
    """
    return _build_bump(canonical_case(case), bool(plateau))


@functools.lru_cache(maxsize=None)
def _build_bump(case: str, plateau: bool) -> Bump:
    if plateau:
        if case != "symmetric-a":
            raise ConfigurationError("the plateau kernel is only defined for the symmetric case")
        w = PLATEAU_RAMP_WIDTH
        lo_a, hi_a = 0.0, 1.0 - w
        m_lo, m_hi = _plateau_mass(lo_a, w) - 1.0, _plateau_mass(hi_a, w) - 1.0
        if m_lo * m_hi > 0:
            raise ConstructionError(
                f"plateau normalization does not bracket 1: mass in [{m_lo + 1}, {m_hi + 1}]")
        a = optimize.brentq(lambda a: _plateau_mass(a, w) - 1.0, lo_a, hi_a, xtol=1e-15, rtol=1e-15)
        achieved = _plateau_mass(a, w)
        if abs(achieved - 1.0) > 1e-12:
            raise ConstructionError(f"plateau normalization reached mass {achieved!r}")

        def rho(x, a=a, w=w):
            return _ramp((abs(x) - a) / w)

        def drho(x, a=a, w=w):
            if x == 0.0:
                return 0.0
            return math.copysign(_ramp_d((abs(x) - a) / w) / w, x)

        def rho_np(x, a=a, w=w):
            return _ramp_np((np.abs(x) - a) / w)

        support = (-(a + w), a + w)
        shape = {"profile": "flat top + exp-transition ramps", "top_half_width": a, "ramp_width": w}
        return Bump(case, True, support, 1.0, shape, rho, drho, _tabulate(rho, drho, support),
                    rho_np)

    Z = _EXP_MASS
    if case == "symmetric-a":
        def rho(x):
            return _exp_profile(x) / Z

        def drho(x):
            return _exp_profile_d(x) / Z

        def rho_np(x):
            return _exp_profile_np(x) / Z

        support = (-1.0, 1.0)
        peak = math.exp(-1.0) / Z
    elif case == "right-b":
        def rho(x):
            return 2.0 * _exp_profile(2.0 * x - 1.0) / Z

        def drho(x):
            return 4.0 * _exp_profile_d(2.0 * x - 1.0) / Z

        def rho_np(x):
            return 2.0 * _exp_profile_np(2.0 * x - 1.0) / Z

        support = (0.0, 1.0)
        peak = 2.0 * math.exp(-1.0) / Z
    else:
        def rho(x):
            return 2.0 * _exp_profile(2.0 * x + 1.0) / Z

        def drho(x):
            return 4.0 * _exp_profile_d(2.0 * x + 1.0) / Z

        def rho_np(x):
            return 2.0 * _exp_profile_np(2.0 * x + 1.0) / Z

        support = (-1.0, 0.0)
        peak = 2.0 * math.exp(-1.0) / Z
    shape = {"profile": "exp(-1/(1-u^2))", "normalization": Z}
    return Bump(case, False, support, peak, shape, rho, drho, _tabulate(rho, drho, support), rho_np)


@dataclass(frozen=True, eq=False)
class SmoothedStep:
    """H_σ(x) = ∫_{-∞}^x ρ_σ with ρ_σ(x) = ρ(x/σ)/σ."""

    bump: Bump
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigurationError(f"sigma must be positive, got {self.sigma!r}")

    def __call__(self, x):
        if isinstance(x, (float, int)):
            return self.bump._cdf_scalar(x / self.sigma)
        return self.bump.cdf(np.asarray(x, dtype=float) / self.sigma)

    def density(self, x):
        """ρ_σ(x), the derivative of H_σ."""
        if isinstance(x, (float, int)):
            return self.bump._rho(x / self.sigma) / self.sigma
        return self.bump(np.asarray(x) / self.sigma) / self.sigma

    def density_derivative(self, x):
        if isinstance(x, (float, int)):
            return self.bump._drho(x / self.sigma) / (self.sigma * self.sigma)
        return self.bump.derivative(np.asarray(x) / self.sigma) / self.sigma ** 2

    @property
    def sup_density(self) -> float:
        return self.bump.sup_norm / self.sigma


def smoothed_heaviside(step: SmoothedStep, x):
    return step(x)


def comb(rho0: Bump, x):
    """Σ_n ρ0(2^{|n|}(x - n)), summing only the terms whose support contains x."""
    if not rho0.plateau:
        raise ConfigurationError("comb needs the plateau kernel")
    if isinstance(x, (float, int)):
        return _comb_scalar(rho0, float(x))
    x = np.asarray(x, dtype=float)
    k = np.floor(x)
    total = np.zeros_like(x)
    with np.errstate(over="ignore"):
        for n in (k, k + 1.0):
            scale = np.minimum(np.abs(n), 2000.0).astype(int)
            total += rho0(np.ldexp(x - n, scale))
    return total


def _comb_scalar(rho0: Bump, x: float) -> float:
    # support of term n is n + [-r, r] * 2^-|n| with r < 1, so only floor/ceil matter
    k = math.floor(x)
    total = 0.0
    for n in (k, k + 1):
        d = x - n
        if d == 0.0:
            total += rho0._rho(0.0)
            continue
        try:
            total += rho0._rho(math.ldexp(d, abs(n)))
        except OverflowError:
            pass
    return total


def comb_scaled(rho0: Bump, eps: float, x):
    """ρ_ε(x) = comb(x/ε)."""
    if isinstance(x, (float, int)):
        return _comb_scalar(rho0, x / eps)
    return comb(rho0, np.asarray(x, dtype=float) / eps)
