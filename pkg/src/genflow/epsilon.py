"""Regularization-parameter nets, scaling laws and growth classification.

Finite ε-samples cannot certify an asymptotic O(.) statement. What we do
instead is fit a small family of growth models to a scalar series
``[(eps, value), ...]`` and report the weakest model that fits about as
well as the best one (within :data:`DOMINANCE_MARGIN`).

All fits are done in log-value space, so residuals are relative errors
and multiplying a series by a positive constant never changes its class.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, InputError

#: absolute margin (in relative-residual units) a stronger growth model must
#: win by before it is preferred over a weaker one
DOMINANCE_MARGIN = 0.05

# order matters: earlier means "weaker growth claim", preferred on ties
_MODEL_ORDER = ("bounded", "log-type", "loglinear")


@dataclass(frozen=True)
class ScalingLaw:
    """Map ε ↦ σ(ε), the width of the mollification layer.

    ``kind`` is one of ``"inverse-log"`` (σ = 1/|ln ε|), ``"power"``
    (σ = ε**q) or ``"custom"`` (tabulated, log-log interpolated).
    """

    kind: str = "inverse-log"
    q: float = 1.0
    table: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.kind not in ("inverse-log", "power", "custom"):
            raise ConfigurationError(f"unknown scaling law kind {self.kind!r}")
        if self.kind == "power" and self.q <= 0:
            raise ConfigurationError("power scaling needs q > 0")
        if self.kind == "custom":
            if len(self.table) < 2:
                raise ConfigurationError("custom scaling needs at least two (eps, sigma) rows")
            eps = [e for e, _ in self.table]
            if any(b <= a for a, b in zip(eps, eps[1:])):
                raise ConfigurationError("custom scaling table must be sorted by increasing eps")
            if any(s <= 0 for _, s in self.table):
                raise ConfigurationError("custom scaling values must be positive")

    def __call__(self, eps: float) -> float:
        return sigma(self, eps)

    @classmethod
    def inverse_log(cls) -> "ScalingLaw":
        return cls("inverse-log")

    @classmethod
    def power(cls, q: float = 1.0) -> "ScalingLaw":
        return cls("power", q=float(q))

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "power":
            d["q"] = self.q
        if self.kind == "custom":
            d["table"] = [list(r) for r in self.table]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingLaw":
        return cls(d.get("kind", "inverse-log"), q=float(d.get("q", 1.0)),
                   table=tuple(tuple(map(float, r)) for r in d.get("table", ())))


def sigma(law: ScalingLaw, eps: float) -> float:
    """Evaluate the scaling function of ``law`` at ``eps``."""
    if not eps > 0:
        raise DomainError(f"sigma needs eps > 0, got {eps!r}")
    if law.kind == "inverse-log":
        if eps >= 1:
            raise DomainError(f"inverse-log scaling is undefined at eps={eps!r} >= 1")
        return 1.0 / abs(math.log(eps))
    if law.kind == "power":
        return eps ** law.q
    e = np.log([r[0] for r in law.table])
    s = np.log([r[1] for r in law.table])
    return float(np.exp(np.interp(math.log(eps), e, s)))


@dataclass(frozen=True)
class EpsilonNet:
    """A strictly decreasing, finite family of ε in (0, 1] plus its scaling law."""

    values: tuple[float, ...]
    scaling: ScalingLaw = field(default_factory=ScalingLaw)

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) < 4:
            raise ConfigurationError("an epsilon net needs at least 4 entries")
        if any(not (0 < v <= 1) for v in vals):
            raise ConfigurationError("epsilon values must lie in (0, 1]")
        if any(b >= a for a, b in zip(vals, vals[1:])):
            raise ConfigurationError("epsilon values must be strictly decreasing")
        try:
            sig = self.sigmas
        except DomainError as exc:
            raise ConfigurationError(str(exc)) from None
        if any(s <= 0 for s in sig):
            raise ConfigurationError("sigma must be positive on the net")
        if any(b > a for a, b in zip(sig, sig[1:])):
            raise ConfigurationError("sigma must be nonincreasing along the net")
        if not sig[-1] < sig[0]:
            raise ConfigurationError("sigma must decrease from the first to the last net value")

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, i):
        return self.values[i]

    @property
    def sigmas(self) -> tuple[float, ...]:
        return tuple(sigma(self.scaling, e) for e in self.values)

    def sigma(self, eps: float) -> float:
        return sigma(self.scaling, eps)

    @property
    def eps_min(self) -> float:
        return self.values[-1]

    @property
    def eps_max(self) -> float:
        return self.values[0]

    def to_dict(self) -> dict:
        return {"values": list(self.values), "scaling": self.scaling.to_dict()}


def make_epsilon_net(eps_max: float, eps_min: float, count: int,
                     scaling: ScalingLaw | None = None) -> EpsilonNet:
    """Geometric net from ``eps_max`` down to ``eps_min`` (both included)."""
    if scaling is None:
        scaling = ScalingLaw()
    if not (0 < eps_min < eps_max <= 1):
        raise ConfigurationError(
            f"need 0 < eps_min < eps_max <= 1, got eps_min={eps_min}, eps_max={eps_max}")
    if count < 4:
        raise ConfigurationError(f"count must be >= 4, got {count}")
    vals = [float(f"{v:.15g}") for v in np.geomspace(eps_max, eps_min, int(count))]
    vals[0], vals[-1] = float(eps_max), float(eps_min)
    return EpsilonNet(tuple(vals), scaling)


@dataclass(frozen=True)
class GrowthClass:
    """Outcome of :func:`classify_growth`.

    ``kind`` is ``bounded`` (``constant`` = sup of the sample), ``log-type``
    (value ≈ offset + constant·|ln ε|), ``power`` (value ≈ constant·ε**-exponent)
    or ``negligible-like`` (value ≈ constant·ε**exponent, exponent = m_max).
    """

    kind: str
    constant: float
    residual: float
    evidence: tuple[tuple[float, float], ...]
    exponent: float | None = None
    offset: float | None = None
    ambiguous: bool = False
    runner_up: str | None = None
    residuals: dict = field(default_factory=dict)
    note: str = ""

    @property
    def power_exponent(self) -> float | None:
        return self.exponent if self.kind == "power" else None

    @property
    def m_max(self) -> float | None:
        return self.exponent if self.kind == "negligible-like" else None

    def label(self) -> str:
        if self.kind in ("power", "negligible-like"):
            return f"{self.kind}({self.exponent:.4g})"
        return f"{self.kind}({self.constant:.4g})"

    def to_dict(self) -> dict:
        return {
            "class": self.kind,
            "constant": _json_float(self.constant),
            "exponent": _json_float(self.exponent),
            "offset": _json_float(self.offset),
            "residual": _json_float(self.residual),
            "ambiguous": self.ambiguous,
            "runner_up": self.runner_up,
            "residuals": {k: _json_float(v) for k, v in self.residuals.items()},
            "margin": DOMINANCE_MARGIN,
            "note": self.note,
            "evidence": [[e, _json_float(v)] for e, v in self.evidence],
        }


def _json_float(x):
    if x is None:
        return None
    x = float(x)
    if math.isfinite(x):
        return x
    return "inf" if x > 0 else ("-inf" if x < 0 else "nan")


def _rms(r: np.ndarray, dof: int) -> float:
    return float(math.sqrt(float(np.sum(r * r)) / max(dof, 1)))


def _fit_models(eps: np.ndarray, v: np.ndarray) -> dict:
    """Fit every growth model; return name -> (residual, params, log-prediction)."""
    n = len(v)
    lv = np.log(v)
    le = np.log(eps)
    L = -le  # |ln eps| for eps < 1 (eps == 1 gives L = 0, harmless)
    out = {}

    lc = float(np.mean(lv))
    pred = np.full(n, lc)
    out["bounded"] = (_rms(lv - pred, n - 1), {"C": math.exp(lc)}, pred)

    # value ~ a + c*L, weighted so that the misfit is relative
    W = np.column_stack([np.ones(n), L]) / v[:, None]
    (a, c), *_ = np.linalg.lstsq(W, np.ones(n), rcond=None)
    fit = a + c * L
    if c > 0 and np.all(fit > 0):
        out["log-type"] = (_rms(lv - np.log(fit), n - 2), {"a": float(a), "c": float(c)}, np.log(fit))
    else:
        out["log-type"] = (math.inf, {"a": float(a), "c": float(c)}, None)

    A = np.column_stack([np.ones(n), le])
    (b, s), *_ = np.linalg.lstsq(A, lv, rcond=None)
    pred = b + s * le
    out["loglinear"] = (_rms(lv - pred, n - 2), {"A": math.exp(b), "slope": float(s)}, pred)
    return out


def _model_class(name: str, params: dict) -> str:
    if name != "loglinear":
        return name
    return "negligible-like" if params["slope"] > 0 else "power"


def classify_growth(samples: Sequence[tuple[float, float]],
                    margin: float = DOMINANCE_MARGIN) -> GrowthClass:
    """Classify the growth of a scalar ε-series as ε → 0.

    Each model is fitted by least squares in log-value coordinates and scored
    by its dof-adjusted RMS relative residual. The chosen class is the weakest
    (bounded < log-type < power/negligible) whose residual is within
    ``margin`` of the best one. If a materially different model of another
    class also sits inside that window, the result is flagged ambiguous and
    that model is named as runner-up.
    """
    pts = sorted(((float(e), float(x)) for e, x in samples), key=lambda p: -p[0])
    if len(pts) < 4:
        raise InputError("classify_growth needs at least 4 samples")
    eps = np.array([p[0] for p in pts])
    v = np.array([p[1] for p in pts])
    if len(set(eps.tolist())) != len(eps):
        raise InputError("samples must be at distinct eps")
    if np.any(~np.isfinite(v)):
        raise InputError("sample values must be finite")
    if np.any(v < 0):
        raise InputError("sample values must be nonnegative")
    if np.any(eps <= 0) or np.any(eps > 1):
        raise InputError("eps must lie in (0, 1]")
    evidence = tuple(zip(eps.tolist(), v.tolist()))

    if np.all(v == 0):
        return GrowthClass("bounded", 0.0, 0.0, evidence, note="all values zero")
    zero = v == 0
    if np.any(zero):
        first = int(np.argmax(zero))
        if np.all(zero[first:]):
            return GrowthClass("negligible-like", float(v.max()), 0.0, evidence,
                               exponent=math.inf, note="exact-zero tail")
        keep = ~zero
        if keep.sum() < 4:
            return GrowthClass("bounded", float(v.max()), 0.0, evidence,
                               note="scattered zeros, too few positive samples to fit")
        sub = classify_growth(list(zip(eps[keep], v[keep])), margin)
        return GrowthClass(sub.kind, sub.constant if sub.kind != "bounded" else float(v.max()),
                           sub.residual, evidence, sub.exponent, sub.offset, sub.ambiguous,
                           sub.runner_up, sub.residuals, "fitted on positive samples only")

    fits = _fit_models(eps, v)
    best = min(r for r, _, _ in fits.values())
    chosen = next(m for m in _MODEL_ORDER if fits[m][0] <= best + margin)
    r, params, pred = fits[chosen]
    kind = _model_class(chosen, params)

    runner_up = None
    for m in _MODEL_ORDER:
        if m == chosen:
            continue
        rm, pm, predm = fits[m]
        if rm > best + margin or predm is None:
            continue
        if _model_class(m, pm) == kind:
            continue
        if np.max(np.abs(predm - pred)) > margin:
            runner_up = _model_class(m, pm)
            break

    residuals = {m: fits[m][0] for m in _MODEL_ORDER}
    if kind == "bounded":
        return GrowthClass(kind, float(v.max()), r, evidence, ambiguous=runner_up is not None,
                           runner_up=runner_up, residuals=residuals)
    if kind == "log-type":
        return GrowthClass(kind, params["c"], r, evidence, offset=params["a"],
                           ambiguous=runner_up is not None, runner_up=runner_up,
                           residuals=residuals)
    slope = params["slope"]
    return GrowthClass(kind, params["A"], r, evidence, exponent=abs(slope),
                       ambiguous=runner_up is not None, runner_up=runner_up,
                       residuals=residuals)


def series(net: Sequence[float], fn: Callable[[float], float]) -> list[tuple[float, float]]:
    """Evaluate ``fn`` on every ε of ``net`` and pair the results up."""
    return [(float(e), float(fn(e))) for e in net]
