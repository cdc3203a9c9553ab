"""Numerical evidence for Korn, Poincare, Hardy and rearrangement inequalities.

Every check returns an :class:`InequalityReport`. Fitted constants are
lower bounds obtained from finitely many samples; the ``config_digest``
identifies the sample set.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import fieldlab as fl
from . import nfunc as nf
from ._quad import cumulative_integral, integrate_intervals
from .errors import DomainError, SingularSymbolError
from .opsym import DiffOp, Multiplier, analyze, staircase
from .reports import digest, to_jsonable

# relative size below which a denominator counts as zero
ZERO_RTOL = 1e-20


@dataclass
class InequalityReport:
    """Outcome of an inequality check.

    ``status`` is ``"ok"``, ``"trivial"`` (both sides vanish),
    ``"degenerate"`` (vanishing right-hand side) or ``"violated"``.
    """

    lhs: float
    rhs: float
    ratio: float
    fitted_constant: float
    holds: bool
    config_digest: str = ""
    status: str = "ok"
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return to_jsonable({"lhs": self.lhs, "rhs": self.rhs, "ratio": self.ratio,
                            "fitted_constant": self.fitted_constant, "holds": self.holds,
                            "config_digest": self.config_digest, "status": self.status,
                            "details": self.details})


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("AQC_THREADS", os.cpu_count() or 1)))
    except ValueError:
        return 1


def _ratio_report(lhs: float, rhs: float, dig: str, details=None) -> InequalityReport:
    if lhs == 0.0 and rhs == 0.0:
        return InequalityReport(0.0, 0.0, math.nan, math.nan, True, dig, "trivial", details or {})
    if rhs <= ZERO_RTOL * lhs:
        return InequalityReport(lhs, rhs, math.inf, math.inf, False, dig, "degenerate", details or {})
    r = lhs / rhs
    return InequalityReport(lhs, rhs, r, r, True, dig, "ok", details or {})


def _require_compact(u: fl.Field, cells: int = 2):
    if not fl.is_compactly_supported(u, cells):
        raise DomainError(f"field must vanish on the outer {cells} cell layers")


def _jac_flat(u: fl.Field) -> np.ndarray:
    jac = fl.gradient_fd(u)
    return jac.reshape(jac.shape[:-2] + (-1,))


def _norm(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(a * a, axis=-1))


# ---------------------------------------------------------------------------
# Korn


def _korn_parts(psi, op, u):
    h = u.grid.cell_volume
    lhs = float(np.sum(psi.value(_norm(_jac_flat(u)))) * h)
    rhs = float(np.sum(psi.value(fl.apply_op_fd(op, u).norm())) * h)
    return lhs, rhs


def korn_ratio(psi: nf.NFunction, op: DiffOp, u: fl.Field, check_support: bool = True) -> InequalityReport:
    """``int psi(|D_h u|) / int psi(|A_h u|)`` for a compactly supported field."""
    if check_support:
        _require_compact(u)
    lhs, rhs = _korn_parts(psi, op, u)
    return _ratio_report(lhs, rhs, digest(u.values, op=op.coeffs.tolist(), psi=repr(psi)))


def _energy_and_grad(psi, op, u_vals, grid, use_op):
    u = fl.Field(grid, u_vals)
    if use_op:
        z = fl.apply_op_fd(op, u).values
    else:
        z = _jac_flat(u)
    r = _norm(z)
    h = grid.cell_volume
    val = float(np.sum(psi.value(r)) * h)
    w = psi.deriv(r) / np.maximum(r, 1e-300)
    sigma = w[..., None] * z * h
    if use_op:
        g = fl.apply_op_fd_adjoint(op, sigma, grid)
    else:
        g = fl.gradient_fd_adjoint(grid, sigma.reshape(sigma.shape[:-1] + (u.codim, grid.n)))
    return val, g


def _ascend(psi, op, grid, u0, mask, evals, step0=0.1):
    """Backtracking ascent of the Korn quotient; returns (best ratio, field, trace)."""
    u = u0.copy()
    L, gL = _energy_and_grad(psi, op, u, grid, False)
    R, gR = _energy_and_grad(psi, op, u, grid, True)
    ratio = L / R
    used = 1
    step = step0
    trace = [ratio]
    while used < evals:
        g = (gL - ratio * gR) / R
        g = g * mask[..., None]
        gn = np.linalg.norm(g)
        if gn == 0:
            break
        direction = g / gn * np.linalg.norm(u)
        accepted = False
        while used < evals:
            cand = u + step * direction
            Lc, gLc = _energy_and_grad(psi, op, cand, grid, False)
            Rc, gRc = _energy_and_grad(psi, op, cand, grid, True)
            used += 1
            if Rc > 0 and Lc / Rc > ratio:
                u, L, gL, R, gR, ratio = cand, Lc, gLc, Rc, gRc, Lc / Rc
                step = min(step * 2.0, 1.0)
                accepted = True
                break
            step *= 0.5
            if step < 1e-12:
                break
        trace.append(ratio)
        if not accepted:
            break
    return ratio, u, trace


def korn_search(psi: nf.NFunction, op: DiffOp, grid: fl.Grid, budget: int = 400, seed: int = 0,
                restarts: int = 4, band: int = 3, collar: float = 0.125) -> InequalityReport:
    """Maximize the Korn quotient over compactly supported fields.

    Each restart draws a random band-limited compact field and climbs the
    quotient with backtracking gradient ascent restricted to the support
    region. The evaluation budget is split evenly between restarts, which
    run in a thread pool (size from ``AQC_THREADS``); the result is the
    maximum, so it does not depend on scheduling.

    Raises
    ------
    SingularSymbolError
        For non-elliptic operators, whose quotient is unbounded
        (see :func:`aqc.opsym.kernel_field`).
    """
    an = analyze(op)
    if not an.elliptic:
        raise SingularSymbolError(an.witnesses[0][0],
                                  "operator is not elliptic; the Korn quotient is unbounded "
                                  "(use kernel_field / staircase_korn for a witness family)")
    if grid.n != op.n:
        raise DomainError("grid dimension does not match the operator")
    mask = fl.support_mask(grid, collar)
    per = max(1, budget // restarts)

    def run(r):
        u0 = fl.random_field(grid, op.dimV, band=band, seed=seed * 1000 + r, collar=collar).values
        return _ascend(psi, op, grid, u0, mask, per)

    with ThreadPoolExecutor(max_workers=min(_threads(), restarts)) as ex:
        results = list(ex.map(run, range(restarts)))
    best = max(range(restarts), key=lambda r: results[r][0])
    ratio, u, _ = results[best]
    lhs, rhs = _korn_parts(psi, op, fl.Field(grid, u))
    rep = _ratio_report(lhs, rhs, digest(psi=repr(psi), op=op.coeffs.tolist(), grid=grid.to_dict(),
                                         budget=budget, seed=seed, restarts=restarts, band=band))
    rep.details = {"per_restart": [res[0] for res in results], "best_restart": best,
                   "evaluations": per * restarts}
    rep.fitted_constant = max(res[0] for res in results)
    return rep


def staircase_korn(psi: nf.NFunction, grid: fl.Grid, frequencies: Sequence[int] = (2, 4, 8), depth: int = 3,
                   op: DiffOp | None = None, collar: float = 0.125) -> list[InequalityReport]:
    """Korn quotients for ``d_1`` on ``u = g(f x_2) w(x_1) w(x_2)``.

    ``g`` is the dyadic staircase of the given depth, compressed by each
    frequency ``f``, and ``w`` the smooth bump window. ``D_2 u`` picks up
    every jump while ``d_1 u`` only sees the window, so the quotient grows
    roughly linearly in ``f``. ``details["resolved"]`` records whether the
    finest jump spacing spans at least two cells.
    """
    from .opsym import d1
    op = op or d1(grid.n)
    x = grid.coords()
    L = np.asarray(grid.extent)
    win = fl.bump_window(grid, collar)
    g = staircase(depth)
    out = []
    for f in frequencies:
        u = fl.Field(grid, g(f * x[..., 1] / L[1]) * win)
        rep = korn_ratio(psi, op, u)
        spacing = 1.0 / (f * 2.0 ** depth)
        rep.details.update({"frequency": float(f), "depth": int(depth),
                            "resolved": bool(spacing >= 2.0 * grid.h[1] / L[1])})
        out.append(rep)
    return out


# ---------------------------------------------------------------------------
# Poincare


def poincare_ratio(phi: nf.NFunction, op: DiffOp, u: fl.Field, check_support: bool = True) -> InequalityReport:
    """``int phi(|u|) / int phi(|A_h u|)`` for a compactly supported field."""
    if check_support:
        _require_compact(u)
    h = u.grid.cell_volume
    lhs = float(np.sum(phi.value(u.norm())) * h)
    rhs = float(np.sum(phi.value(fl.apply_op_fd(op, u).norm())) * h)
    return _ratio_report(lhs, rhs, digest(u.values, op=op.coeffs.tolist(), phi=repr(phi)))


def divergence_free_field(grid: fl.Grid, seed: int = 0, band: int = 3, collar: float = 0.125) -> fl.Field:
    """``u = (-D_2 s, D_1 s)`` for a compact scalar ``s``; its discrete divergence vanishes
    up to rounding on periodic grids."""
    if grid.n != 2:
        raise DomainError("divergence-free construction is two-dimensional")
    s = fl.random_field(grid, 1, band=band, seed=seed, collar=collar)
    jac = fl.gradient_fd(s)[..., 0, :]
    return fl.Field(grid, np.stack([-jac[..., 1], jac[..., 0]], axis=-1))


# ---------------------------------------------------------------------------
# Hardy-type conditions


def invert_increasing(fn, y, lo: float = -700.0, hi: float = 700.0, iters: int = 64) -> np.ndarray:
    """Solve ``fn(x) = y`` for increasing ``fn`` by bisection in ``log x``.

    Returns the smallest ``x`` (to bisection accuracy) with ``fn(x) >= y``;
    ``inf`` where even ``fn(exp(hi)) < y``.
    """
    y = np.asarray(y, dtype=float)
    a = np.full(y.shape, lo)
    b = np.full(y.shape, hi)
    with np.errstate(all="ignore"):
        beyond = ~(fn(np.exp(b)) >= y)
        for _ in range(iters):
            m = 0.5 * (a + b)
            below = fn(np.exp(m)) < y
            a = np.where(below, m, a)
            b = np.where(below, b, m)
    x = np.exp(b)
    x[beyond] = np.inf
    x[y <= 0] = 0.0
    return x


def _hardy_integral(fn, t, breaks, rtol=1e-10):
    """``t * int_0^t fn(s)/s^2 ds`` with quadrature nodes including ``breaks``."""
    nodes = np.unique(np.concatenate([t, [b for b in breaks if 0 < b < t[-1]]]))
    with np.errstate(all="ignore"):
        cum = cumulative_integral(lambda s: fn(s) / (s * s), nodes, rtol=rtol)
    idx = np.searchsorted(nodes, t)
    return t * cum[idx]


def _near_zero_divergent(fn, t0, decades=4):
    """Decade contributions of ``int fn(s)/s^2`` below ``t0``; divergent when they stop decaying."""
    edges = t0 * 10.0 ** -np.arange(decades + 1.0)
    with np.errstate(all="ignore"):
        parts = integrate_intervals(lambda s: fn(s) / (s * s), edges[1:], edges[:-1])
    parts = np.abs(parts)
    if not np.all(np.isfinite(parts)):
        return True, parts
    q = parts[1:] / np.maximum(parts[:-1], 1e-300)
    return bool(np.any(q > 0.5)), parts


def _growth_per_decade(t, c, decades=1.0, offset=0.0):
    """Relative growth of ``c`` over a window of ``decades`` ending ``offset`` decades before the grid end."""
    fin = np.isfinite(c)
    t, c = t[fin], c[fin]
    if t.size < 2:
        return math.nan
    end = np.searchsorted(t, t[-1] / 10.0 ** offset, side="right") - 1
    ref = np.searchsorted(t, t[end] / 10.0 ** decades)
    ref = min(ref, end - 1)
    if ref < 0:
        return math.nan
    return float((c[end] - c[ref]) / max(abs(c[ref]), 1e-300))


def _keeps_growing(t, c, tol):
    """Growth above ``tol`` in the last decade that is not decaying relative to the decade before."""
    last = _growth_per_decade(t, c)
    prev = _growth_per_decade(t, c, offset=1.0)
    grows = bool(last > tol and not (prev > 0 and last < 0.5 * prev))
    return grows, last, prev


def hardy_check(Phi: nf.NFunction, Psi: nf.NFunction, t_grid=None, growth_tol: float = 0.05) -> InequalityReport:
    """Fit the least ``c`` with

    ``t int_0^t Phi(s)/s^2 ds <= Psi(c t)`` and
    ``t int_0^t Psi*(s)/s^2 ds <= Phi*(c t)`` on a log grid.

    The per-point constants are found by inverting ``Psi`` and ``Phi*``.
    A condition is declared violated when its inner integral diverges at 0
    or its per-point constant still grows by more than ``growth_tol``
    over the last decade of the grid without slowing down (less than half
    the growth of the decade before counts as converging). Points where the second integral
    overflows are excluded and counted.
    """
    if t_grid is None:
        t_grid = np.logspace(-6, 6, 1000)
    t = np.sort(np.asarray(t_grid, dtype=float))
    if t[0] <= 0:
        raise DomainError("t_grid must be positive")
    Psi_star = nf.conjugate(Psi, allow_degenerate=True)
    Phi_star = nf.conjugate(Phi, allow_degenerate=True)
    breaks = sorted(set(Phi.breaks) | set(Psi.breaks))

    div1, parts1 = _near_zero_divergent(Phi.value, t[0])
    div2, parts2 = _near_zero_divergent(Psi_star.value, t[0])

    L1 = _hardy_integral(Phi.value, t, breaks)
    c1 = invert_increasing(Psi.value, L1) / t

    L2 = _hardy_integral(Psi_star.value, t, breaks)
    fin2 = np.isfinite(L2)
    c2 = np.full(t.shape, np.nan)
    thr = Phi_star_threshold = Phi.slope_limit
    if math.isfinite(thr):
        cap = float(Phi_star.value(np.array([thr]))[0])
        above = fin2 & (L2 > cap)
        c2[above] = thr / t[above]
        inner = fin2 & ~above
        c2[inner] = invert_increasing(lambda x: np.where(x <= thr, Phi_star.value(np.minimum(x, thr)), np.inf),
                                      L2[inner]) / t[inner]
    else:
        c2[fin2] = invert_increasing(Phi_star.value, L2[fin2]) / t[fin2]

    grows1, g1, g1p = _keeps_growing(t, c1, growth_tol)
    grows2, g2, g2p = _keeps_growing(t[fin2], c2[fin2], growth_tol) if fin2.sum() > 1 else (False, math.nan, math.nan)
    cond1 = not (div1 or grows1 or not np.all(np.isfinite(c1)))
    cond2 = not (div2 or grows2)
    c_fit = float(max(np.nanmax(c1), np.nanmax(c2[fin2]) if fin2.any() else 0.0))
    holds = cond1 and cond2
    details = {
        "condition1_holds": cond1, "condition2_holds": cond2,
        "c1_max": float(np.nanmax(c1)), "c2_max": float(np.nanmax(c2[fin2])) if fin2.any() else math.nan,
        "c1_growth_last_decade": g1, "c2_growth_last_decade": g2,
        "c1_growth_previous_decade": g1p, "c2_growth_previous_decade": g2p,
        "near_zero_divergent": [div1, div2],
        "near_zero_decades": [parts1.tolist(), parts2.tolist()],
        "condition2_overflow_points": int((~fin2).sum()),
        "phi_star_threshold": Phi_star_threshold,
        "t": t.tolist(), "c1": c1.tolist(), "c2": c2.tolist(),
    }
    fitted = c_fit if holds else math.inf
    return InequalityReport(lhs=float(c_fit), rhs=1.0, ratio=float(c_fit), fitted_constant=fitted,
                            holds=holds, config_digest=digest(t, Phi=repr(Phi), Psi=repr(Psi)),
                            status="ok" if holds else "violated", details=details)


# ---------------------------------------------------------------------------
# logarithmic Korn


def _loglog_parts(op, u, alpha):
    h = u.grid.cell_volume
    a = _norm(_jac_flat(u))
    b = fl.apply_op_fd(op, u).norm()
    lhs = float(np.sum(a * np.log1p(a) ** alpha) * h)
    rhs = float(np.sum(b * np.log1p(b) ** (alpha + 1.0)) * h)
    return lhs, rhs


def loglog_korn_check(op: DiffOp, alpha: float, u: fl.Field, check_support: bool = True) -> InequalityReport:
    """``int |Du| log^a(1+|Du|) / int |Au| log^{a+1}(1+|Au|)``."""
    if alpha < 0:
        raise DomainError("alpha must be non-negative")
    if check_support:
        _require_compact(u)
    lhs, rhs = _loglog_parts(op, u, alpha)
    return _ratio_report(lhs, rhs, digest(u.values, op=op.coeffs.tolist(), alpha=alpha))


def loglog_korn_sweep(op: DiffOp, alpha: float, u: fl.Field, amplitudes: Sequence[float]) -> InequalityReport:
    """Amplitude sweep of :func:`loglog_korn_check`; fits the slope of log ratio vs log amplitude."""
    amps = np.asarray(amplitudes, dtype=float)
    ratios = np.array([loglog_korn_check(op, alpha, u * a).ratio for a in amps])
    slope = float(np.polyfit(np.log(amps), np.log(ratios), 1)[0])
    holds = bool(np.all(np.isfinite(ratios)) and slope <= 0.05)
    return InequalityReport(lhs=float(ratios.max()), rhs=1.0, ratio=float(ratios.max()),
                            fitted_constant=float(ratios.max()), holds=holds,
                            config_digest=digest(u.values, amps, alpha=alpha),
                            status="ok" if holds else "violated",
                            details={"amplitudes": amps.tolist(), "ratios": ratios.tolist(), "log_slope": slope})


# ---------------------------------------------------------------------------
# rearrangement bound


def bagby_rhs(fstar: fl.RearrangedProfile) -> np.ndarray:
    """``(1/t) int_0^t f* + int_t^|Omega| f*/s`` at the right cell endpoints ``t = s_k``."""
    f = fstar.thresholds
    k = np.arange(1, f.size + 1)
    avg = np.cumsum(f) / k
    # int over (s_{l-1}, s_l] of f_l / s = f_l log(l/(l-1)); the first cell never appears in a tail
    logs = np.log(k[1:] / (k[1:] - 1.0))
    terms = f[1:] * logs
    tail = np.concatenate((np.cumsum(terms[::-1])[::-1], [0.0]))
    return avg + tail


def bagby_check(m: Multiplier, f: fl.Field) -> InequalityReport:
    """Least ``C`` with ``g*(t) <= C RHS(t)`` for ``g = T_m f`` over the profile points.

    Both sides are step/decreasing functions, so testing right endpoints
    of the cells is exact.
    """
    g = fl.apply_multiplier(m, f)
    gs = fl.rearrangement(g)
    fs = fl.rearrangement(f)
    rhs = bagby_rhs(fs)
    dig = digest(f.values, multiplier=m.name)
    if not np.any(gs.thresholds):
        return InequalityReport(0.0, float(rhs.max()) if rhs.size else 0.0, 0.0, 0.0, True, dig, "trivial",
                                {"t": [], "g_star": [], "rhs": []})
    if not np.any(rhs):
        return InequalityReport(float(gs.thresholds.max()), 0.0, math.inf, math.inf, False, dig, "degenerate")
    ratios = gs.thresholds / rhs
    C = float(ratios.max())
    return InequalityReport(lhs=float(gs.thresholds[np.argmax(ratios)]), rhs=float(rhs[np.argmax(ratios)]),
                            ratio=C, fitted_constant=C, holds=bool(np.isfinite(C)), config_digest=dig,
                            details={"t": gs.measures.tolist(), "g_star": gs.thresholds.tolist(),
                                     "rhs": rhs.tolist()})
