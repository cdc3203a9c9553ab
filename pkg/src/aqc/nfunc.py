"""Young functions and N-functions.

An :class:`NFunction` bundles a value map with its first (and optionally
second) derivative and a JSON-serializable descriptor. Constructors cover
power functions, ``t log(1+t)``, the exponential pair, shifted functions,
numeric Legendre transforms and piecewise branches. Growth constants
(doubling of the function and of its conjugate) are estimated by scanning a
log-spaced grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._quad import cumulative_integral
from .errors import (
    ClassViolationError,
    DegenerateConjugateError,
    DomainError,
    InvalidNFunctionError,
    UnsupportedFunctionError,
)
from .reports import Report

ArrayFn = Callable[[np.ndarray], np.ndarray]

SHIFT_RTOL = 1e-10
_LOG_BRACKET = 700.0
_BISECT_ITERS = 64


class NFunction:
    """A convex gauge ``psi: [0, inf) -> [0, inf]`` with derivatives.

    Parameters
    ----------
    value, deriv : callable
        Vectorized maps on non-negative arrays.
    deriv2 : callable, optional
        Second derivative on ``t > 0``.
    kind : str
        Tag such as ``"power"`` or ``"shifted"``.
    params : dict
        Descriptor fields besides ``kind`` (used for serialization).
    slope_limit : float
        ``lim psi'(t)`` as ``t -> inf``; finite for linear-growth functions,
        whose conjugate is then degenerate.
    """

    def __init__(self, value: ArrayFn, deriv: ArrayFn | None, deriv2: ArrayFn | None = None,
                 kind: str = "custom", params: dict | None = None, slope_limit: float = math.inf,
                 breaks: Sequence[float] = ()):
        self._value = value
        self._deriv = deriv
        self._deriv2 = deriv2
        self.kind = kind
        self.params = dict(params or {})
        self.slope_limit = float(slope_limit)
        self.breaks = tuple(float(b) for b in breaks)

    @property
    def has_deriv(self) -> bool:
        return self._deriv is not None

    @property
    def has_deriv2(self) -> bool:
        return self._deriv2 is not None

    def value(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            return self._value(t)

    __call__ = value

    def deriv(self, t):
        if self._deriv is None:
            raise UnsupportedFunctionError(f"{self.kind} function has no derivative")
        t = np.asarray(t, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            return self._deriv(t)

    def deriv2(self, t):
        if self._deriv2 is None:
            raise UnsupportedFunctionError(f"{self.kind} function has no second derivative")
        t = np.asarray(t, dtype=float)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return self._deriv2(t)

    def to_dict(self) -> dict:
        if self.kind == "custom":
            raise UnsupportedFunctionError("custom functions have no JSON descriptor")
        out = {"kind": self.kind}
        out.update(self.params)
        return out

    def __repr__(self):
        try:
            return f"NFunction({self.to_dict()})"
        except UnsupportedFunctionError:
            return "NFunction(custom)"


# ---------------------------------------------------------------------------
# elementary families


def _series(t, coeffs):
    # Horner evaluation of sum_k coeffs[k] t^k
    out = np.zeros_like(t)
    for c in coeffs[::-1]:
        out = out * t + c
    return out


_EXP_COEF = np.array([0.0, 0.0] + [1.0 / math.factorial(k) for k in range(2, 26)])
_XLOG_COEF = np.array([0.0, 0.0] + [(-1.0) ** k / (k * (k - 1)) for k in range(2, 40)])


def power(p: float, coef: float = 1.0) -> NFunction:
    """``coef * t**p`` for ``p > 1``."""
    p = float(p)
    c = float(coef)
    if not p > 1.0 or not c > 0.0:
        raise DomainError("power N-function needs p > 1 and coef > 0")
    return NFunction(
        lambda t: c * t ** p,
        lambda t: c * p * t ** (p - 1.0),
        lambda t: c * p * (p - 1.0) * t ** (p - 2.0),
        kind="power", params={"p": p, "coef": c},
    )


def llogl() -> NFunction:
    """``t log(1+t)``: Delta_2 but not nabla_2."""
    return NFunction(
        lambda t: t * np.log1p(t),
        lambda t: np.log1p(t) + t / (1.0 + t),
        lambda t: 1.0 / (1.0 + t) + 1.0 / (1.0 + t) ** 2,
        kind="llogl",
    )


def _exp_value(t):
    small = t < 0.5
    out = np.empty_like(t)
    out[small] = _series(t[small], _EXP_COEF)
    out[~small] = np.expm1(t[~small]) - t[~small]
    return out


def exp_nf() -> NFunction:
    """``e^t - t - 1``."""
    return NFunction(_exp_value, lambda t: np.expm1(t), lambda t: np.exp(t), kind="exp")


def _xlog_value(t):
    small = t < 0.1
    out = np.empty_like(t)
    out[small] = _series(t[small], _XLOG_COEF)
    ts = t[~small]
    out[~small] = (1.0 + ts) * np.log1p(ts) - ts
    return out


def exp_conjugate() -> NFunction:
    """``(1+t) log(1+t) - t``, the conjugate of ``e^t - t - 1``."""
    return NFunction(_xlog_value, lambda t: np.log1p(t), lambda t: 1.0 / (1.0 + t),
                     kind="exp_conjugate")


def linear(coef: float = 1.0) -> NFunction:
    """``coef * t``. Not an N-function; used for ``V_1`` and as a degenerate test case."""
    c = float(coef)
    return NFunction(lambda t: c * t, lambda t: np.full_like(t, c), lambda t: np.zeros_like(t),
                     kind="linear", params={"coef": c}, slope_limit=c)


def sqrt1p() -> NFunction:
    """``sqrt(1+t^2) - 1``: quadratic at 0, linear at infinity."""
    return NFunction(
        lambda t: np.where(t < 1.0, t * t / (np.hypot(1.0, t) + 1.0), np.hypot(1.0, t) - 1.0),
        lambda t: t / np.hypot(1.0, t),
        lambda t: np.hypot(1.0, t) ** -3,
        kind="sqrt1p", slope_limit=1.0,
    )


def _capped(fn_inside, threshold):
    def f(t):
        out = np.full_like(t, np.inf)
        ok = t <= threshold
        out[ok] = fn_inside(t[ok])
        return out
    return f


def _power_conjugate(psi: NFunction) -> NFunction:
    p, c = psi.params["p"], psi.params["coef"]
    q = p / (p - 1.0)
    return power(q, (p - 1.0) / p * (c * p) ** (-1.0 / (p - 1.0)))


def _closed_conjugate(psi: NFunction) -> NFunction | None:
    if psi.kind == "power":
        return _power_conjugate(psi)
    if psi.kind == "exp":
        return exp_conjugate()
    if psi.kind == "exp_conjugate":
        return exp_nf()
    if psi.kind == "linear":
        c = psi.params["coef"]
        return NFunction(_capped(np.zeros_like, c), _capped(np.zeros_like, c),
                         kind="numeric_conjugate", params={"base": psi.to_dict()}, slope_limit=math.inf)
    if psi.kind == "sqrt1p":
        return NFunction(
            _capped(lambda t: t * t / (1.0 + np.sqrt(1.0 - t * t)), 1.0),
            _capped(lambda t: t / np.sqrt(1.0 - t * t), 1.0),
            _capped(lambda t: (1.0 - t * t) ** -1.5, 1.0),
            kind="numeric_conjugate", params={"base": psi.to_dict()},
        )
    return None


# ---------------------------------------------------------------------------
# shift


def shift(phi: NFunction, a: float) -> NFunction:
    """Shifted function ``phi_a(t) = int_0^t phi'(a+s) s/(a+s) ds``.

    Values come from adaptive quadrature (relative tolerance 1e-10); the
    derivative ``phi'(a+t) t/(a+t)`` is exact. ``a = 0`` returns ``phi``,
    and so does any shift of ``c t^2`` (its shifts coincide with it).
    """
    a = float(a)
    if not a >= 0.0:
        raise DomainError(f"shift parameter must be non-negative, got {a}")
    if not phi.has_deriv:
        raise UnsupportedFunctionError("shift needs the derivative of the base function")
    if a == 0.0 or (phi.kind == "power" and phi.params.get("p") == 2.0):
        return phi

    def deriv(t):
        return phi.deriv(a + t) * t / (a + t)

    def value(t):
        return cumulative_integral(deriv, t, rtol=SHIFT_RTOL)

    deriv2 = None
    if phi.has_deriv2:
        def deriv2(t):
            s = a + t
            return phi.deriv2(s) * t / s + phi.deriv(s) * a / (s * s)

    params = {"a": a}
    if phi.kind != "custom":
        params["base"] = phi.to_dict()
    return NFunction(value, deriv, deriv2, kind="shifted", params=params,
                     slope_limit=phi.slope_limit)


# ---------------------------------------------------------------------------
# conjugation


def _solve_deriv(psi: NFunction, t: np.ndarray) -> np.ndarray:
    """Solve ``psi'(s) = t`` for ``s >= 0`` by bisection in ``log s``.

    Entries whose root lies beyond ``exp(700)`` return ``inf``.
    """
    lo = np.full(t.shape, -_LOG_BRACKET)
    hi = np.full(t.shape, _LOG_BRACKET)
    top = psi.deriv(np.exp(hi))
    beyond = ~(top >= t)
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        below = psi.deriv(np.exp(mid)) < t
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    s = np.exp(0.5 * (lo + hi))
    s[beyond] = np.inf
    s[t <= 0] = 0.0
    return s


def numeric_conjugate(psi: NFunction, allow_degenerate: bool = True) -> NFunction:
    """Legendre transform by solving the optimality condition per evaluation.

    ``psi*(t) = s t - psi(s)`` with ``psi'(s) = t`` located by monotone
    bisection; ``psi*'(t) = s`` and ``psi*''(t) = 1/psi''(s``). For
    ``t >= slope_limit`` (or when the maximizer overflows) the value is
    ``+inf``.
    """
    if not psi.has_deriv:
        raise UnsupportedFunctionError("conjugation needs the derivative")
    limit = psi.slope_limit
    if math.isfinite(limit) and not allow_degenerate:
        raise DegenerateConjugateError(limit)

    def argmax(t):
        t = np.asarray(t, dtype=float)
        flat = t.ravel()
        s = np.full(flat.shape, np.inf)
        ok = flat < limit
        s[ok] = _solve_deriv(psi, flat[ok])
        return s.reshape(t.shape)

    def value(t):
        t = np.asarray(t, dtype=float)
        s = argmax(t)
        out = np.full(t.shape, np.inf)
        fin = np.isfinite(s)
        out[fin] = s[fin] * t[fin] - psi.value(s[fin])
        return np.maximum(out, 0.0)

    deriv2 = None
    if psi.has_deriv2:
        def deriv2(t):
            return 1.0 / psi.deriv2(argmax(t))

    params = {}
    if psi.kind != "custom":
        params["base"] = psi.to_dict()
    return NFunction(value, argmax, deriv2, kind="numeric_conjugate", params=params)


def conjugate(psi: NFunction, allow_degenerate: bool = False, numeric: bool = False) -> NFunction:
    """Fenchel conjugate ``psi*(t) = sup_{s >= 0} (s t - psi(s))``.

    Closed forms are used for the power family and the exponential pair
    unless ``numeric`` is set. A function with finite ``slope_limit`` has a
    conjugate that is ``+inf`` above that threshold; this raises
    :class:`DegenerateConjugateError` unless ``allow_degenerate`` is true.
    """
    if math.isfinite(psi.slope_limit) and not allow_degenerate:
        raise DegenerateConjugateError(psi.slope_limit)
    if not numeric:
        closed = _closed_conjugate(psi)
        if closed is not None:
            return closed
    return numeric_conjugate(psi, allow_degenerate=True)


# ---------------------------------------------------------------------------
# piecewise


@dataclass(frozen=True)
class Branch:
    """``scale * fn(t + arg_shift) + offset`` on one interval."""

    fn: NFunction
    scale: float = 1.0
    arg_shift: float = 0.0
    offset: float = 0.0

    def value(self, t):
        return self.scale * self.fn.value(t + self.arg_shift) + self.offset

    def deriv(self, t):
        return self.scale * self.fn.deriv(t + self.arg_shift)

    def deriv2(self, t):
        return self.scale * self.fn.deriv2(t + self.arg_shift)

    def to_dict(self):
        return {"fn": self.fn.to_dict(), "scale": self.scale, "arg_shift": self.arg_shift,
                "offset": self.offset}


def piecewise(breaks: Sequence[float], branches: Sequence[Branch]) -> NFunction:
    """Glue branches; branch ``k`` is used on ``[breaks[k-1], breaks[k])``."""
    breaks = np.asarray(breaks, dtype=float)
    if len(branches) != breaks.size + 1:
        raise DomainError("piecewise needs len(branches) == len(breaks) + 1")
    if np.any(np.diff(breaks) <= 0):
        raise DomainError("breakpoints must increase")

    def dispatch(method):
        def f(t):
            idx = np.searchsorted(breaks, t, side="right")
            out = np.empty_like(t)
            for k, br in enumerate(branches):
                m = idx == k
                if m.any():
                    out[m] = getattr(br, method)(t[m])
            return out
        return f

    has2 = all(b.fn.has_deriv2 for b in branches)
    last = branches[-1]
    params = {"breaks": breaks.tolist()}
    try:
        params["branches"] = [b.to_dict() for b in branches]
    except UnsupportedFunctionError:
        pass
    return NFunction(dispatch("value"), dispatch("deriv"), dispatch("deriv2") if has2 else None,
                     kind="piecewise", params=params,
                     slope_limit=last.scale * last.fn.slope_limit, breaks=breaks)


# ---------------------------------------------------------------------------
# descriptors


_NAMED = {
    "llogl": llogl,
    "exp": exp_nf,
    "exp_conjugate": exp_conjugate,
    "sqrt1p": sqrt1p,
}


def from_dict(desc: dict) -> NFunction:
    """Build an N-function from a JSON descriptor such as ``{"kind": "power", "p": 3}``."""
    if not isinstance(desc, dict) or "kind" not in desc:
        raise DomainError(f"malformed N-function descriptor: {desc!r}")
    kind = desc["kind"]
    if kind == "power":
        return power(desc["p"], desc.get("coef", 1.0))
    if kind == "linear":
        return linear(desc.get("coef", 1.0))
    if kind in _NAMED:
        return _NAMED[kind]()
    if kind == "shifted":
        return shift(from_dict(desc["base"]), desc["a"])
    if kind == "numeric_conjugate":
        return conjugate(from_dict(desc["base"]), allow_degenerate=True, numeric=True)
    if kind == "piecewise":
        branches = [Branch(from_dict(b["fn"]), b.get("scale", 1.0), b.get("arg_shift", 0.0),
                           b.get("offset", 0.0)) for b in desc["branches"]]
        return piecewise(desc["breaks"], branches)
    raise DomainError(f"unknown N-function kind {kind!r}")


# ---------------------------------------------------------------------------
# V-functions


def v_function(phi: NFunction, z) -> np.ndarray:
    """``V_phi(z) = phi(sqrt(1+|z|^2)) - phi(1)``; ``z`` has its vector axis last."""
    z = np.asarray(z, dtype=float)
    r2 = np.sum(z * z, axis=-1) if z.ndim else z * z
    return phi.value(np.sqrt(1.0 + r2)) - phi.value(np.float64(1.0))


def v_function_grad(phi: NFunction, z) -> np.ndarray:
    """Gradient ``phi'(<z>) z / <z>`` with ``<z> = sqrt(1+|z|^2)``."""
    z = np.asarray(z, dtype=float)
    r = np.sqrt(1.0 + np.sum(z * z, axis=-1, keepdims=True))
    return phi.deriv(r) * z / r


def v1(z) -> np.ndarray:
    """``V_1(z) = sqrt(1+|z|^2) - 1`` evaluated without cancellation."""
    z = np.asarray(z, dtype=float)
    r2 = np.sum(z * z, axis=-1)
    return r2 / (np.sqrt(1.0 + r2) + 1.0)


# ---------------------------------------------------------------------------
# growth constants


@dataclass(frozen=True)
class GrowthReport:
    """Doubling constants found on a sampled range.

    ``delta2``/``nabla2`` hold the sampled supremum (``inf`` when flagged
    unbounded) or ``None`` when not computed.
    """

    delta2: float | None = None
    nabla2: float | None = None
    delta2_unbounded: bool = False
    nabla2_unbounded: bool = False
    scan_range: tuple = (math.nan, math.nan)
    sup_attained_at: float = math.nan

    def to_dict(self):
        return {"delta2": self.delta2, "nabla2": self.nabla2,
                "delta2_unbounded": self.delta2_unbounded, "nabla2_unbounded": self.nabla2_unbounded,
                "scan_range": list(self.scan_range), "sup_attained_at": self.sup_attained_at}


def _doubling_scan(psi, t_range, samples, tail_growth):
    t_min, t_max = map(float, t_range)
    if not (0 < t_min < t_max):
        raise DomainError("t_range must satisfy 0 < t_min < t_max")
    t = np.logspace(math.log10(t_min), math.log10(t_max), int(samples))
    v1_ = psi.value(t)
    if np.any(v1_ == 0):
        raise InvalidNFunctionError(f"psi vanishes at t = {t[np.argmax(v1_ == 0)]:g} > 0")
    with np.errstate(all="ignore"):
        r = psi.value(2.0 * t) / v1_
    bad = ~np.isfinite(r)
    if bad.any():
        return math.inf, True, float(t[np.argmax(bad)])
    k = int(np.argmax(r))
    sup = float(r[k])
    # tail test at both ends: does the ratio still grow over the outermost decade?
    hi_ref = np.searchsorted(t, t_max / 10.0)
    lo_ref = np.searchsorted(t, t_min * 10.0)
    grows_hi = r[-1] > (1.0 + tail_growth) * r[min(hi_ref, t.size - 1)]
    grows_lo = r[0] > (1.0 + tail_growth) * r[min(lo_ref, t.size - 1)]
    unbounded = bool(grows_hi or grows_lo)
    return (math.inf if unbounded else sup), unbounded, float(t[k])


def delta2_estimate(psi: NFunction, t_range=(1e-8, 1e8), samples: int = 10_000,
                    tail_growth: float = 0.01) -> GrowthReport:
    """Sampled supremum of ``psi(2t)/psi(t)`` with a tail-growth unboundedness test."""
    val, unb, at = _doubling_scan(psi, t_range, samples, tail_growth)
    if not unb and val < 1.0 - 1e-12:
        raise InvalidNFunctionError("doubling ratio below 1: psi is not non-decreasing")
    return GrowthReport(delta2=val, delta2_unbounded=unb, scan_range=tuple(map(float, t_range)),
                        sup_attained_at=at)


def nabla2_estimate(psi: NFunction, t_range=(1e-8, 1e8), samples: int = 10_000,
                    tail_growth: float = 0.01) -> GrowthReport:
    """Doubling constant of the conjugate."""
    val, unb, at = _doubling_scan(conjugate(psi), t_range, samples, tail_growth)
    return GrowthReport(nabla2=val, nabla2_unbounded=unb, scan_range=tuple(map(float, t_range)),
                        sup_attained_at=at)


def shift_comparability_scan(phi: NFunction, a_samples: Sequence[float], t_range=(1e-8, 1e8),
                             samples: int = 10_000) -> Report:
    """Compare doubling constants of the shifts ``phi_a`` with that of ``phi``.

    Raises
    ------
    ClassViolationError
        If ``phi`` fails either doubling condition on the scan.
    """
    base = delta2_estimate(phi, t_range, samples)
    dual = nabla2_estimate(phi, t_range, samples)
    if base.delta2_unbounded or dual.nabla2_unbounded:
        raise ClassViolationError("shift comparability needs a function with both doubling constants")
    per_a = []
    for a in a_samples:
        rep = delta2_estimate(shift(phi, a), t_range, samples)
        per_a.append({"a": float(a), "delta2": rep.delta2, "unbounded": rep.delta2_unbounded})
    worst = max(p["delta2"] for p in per_a)
    ratio = worst / base.delta2
    return Report("shift_comparability", holds=bool(math.isfinite(ratio)),
                  data={"base_delta2": base.delta2, "base_nabla2": dual.nabla2,
                        "max_shift_delta2": worst, "ratio": ratio, "per_a": per_a})


# ---------------------------------------------------------------------------
# axioms


def check_axioms(psi: NFunction, t=None, tol: float = 1e-9) -> Report:
    """Sample the N-function axioms: zero at zero, monotone positive derivative,
    convexity and ``value = int deriv``."""
    if t is None:
        t = np.logspace(-4, 4, 400)
    t = np.sort(np.asarray(t, dtype=float))
    zero_ok = abs(float(psi.value(np.array([0.0]))[0])) <= tol and abs(float(psi.deriv(np.array([0.0]))[0])) <= tol
    v = psi.value(t)
    d = psi.deriv(t)
    fin = np.isfinite(v) & np.isfinite(d)
    t, v, d = t[fin], v[fin], d[fin]
    mono_ok = bool(np.all(d[1:] >= d[:-1] - tol * np.maximum(1.0, np.abs(d[1:]))) and np.all(d > 0))
    lam = 0.37
    mix = psi.value(lam * t[:-1] + (1 - lam) * t[1:])
    conv_ok = bool(np.all(mix <= lam * v[:-1] + (1 - lam) * v[1:] + tol * np.maximum(1.0, v[1:])))
    integ = cumulative_integral(psi.deriv, t, rtol=1e-11)
    int_err = float(np.max(np.abs(integ - v) / np.maximum(np.abs(v), 1e-300)))
    return Report("nfunction_axioms", holds=bool(zero_ok and mono_ok and conv_ok and int_err < 1e-8),
                  data={"zero": zero_ok, "monotone_derivative": mono_ok, "convex": conv_ok,
                        "integral_rel_err": int_err})
