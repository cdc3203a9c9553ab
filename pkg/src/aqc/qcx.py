"""Quantitative quasiconvexity tools.

Integrands on the target space ``W``, the gap functional measured against
shifted N-functions, the comparison between ``V_phi`` excess and shifted
energies, the auxiliary sandwich constants behind that comparison, the
quadratic/linear-growth auxiliary pair used for ``t log(1+t)`` growth, and a
lower bound for the Taylor remainder of ``V_1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fieldlab as fl
from . import nfunc as nf
from .errors import DomainError, UnsupportedFunctionError
from .opsym import DiffOp
from .reports import Report, digest, to_jsonable


# ---------------------------------------------------------------------------
# integrands


class Integrand:
    """``F: W -> R`` with gradient; arrays carry the ``W`` axis last.

    Parameters
    ----------
    dimW : int
    value, grad : callable
    growth : NFunction, optional
        Reference function for the growth bound ``|F(z)| <= c (1 + growth(|z|))``.
    hess : callable, optional
    descriptor : dict, optional
        JSON form used by the command line.
    """

    def __init__(self, dimW: int, value: Callable, grad: Callable | None = None,
                 growth: nf.NFunction | None = None, hess: Callable | None = None,
                 descriptor: dict | None = None, name: str = "custom"):
        self.dimW = int(dimW)
        self._value = value
        self._grad = grad
        self.growth = growth
        self.hess = hess
        self.descriptor = descriptor
        self.name = name

    def value(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self._value(z)

    __call__ = value

    @property
    def has_grad(self) -> bool:
        return self._grad is not None

    def grad(self, z) -> np.ndarray:
        if self._grad is None:
            raise UnsupportedFunctionError(f"integrand {self.name} has no gradient")
        return self._grad(np.asarray(z, dtype=float))

    def __repr__(self):
        return f"Integrand({self.name}, dimW={self.dimW})"


def _sq(z):
    return np.sum(z * z, axis=-1)


def quadratic(dimW: int, coef: float = 1.0) -> Integrand:
    """``coef |z|^2``."""
    c = float(coef)
    return Integrand(dimW, lambda z: c * _sq(z), lambda z: 2.0 * c * z, nf.power(2.0),
                     descriptor={"kind": "quadratic", "coef": c}, name="quadratic")


def power_integrand(dimW: int, p: float) -> Integrand:
    """``|z|^p`` for ``p >= 2``."""
    p = float(p)
    if p < 2:
        raise DomainError("power integrand needs p >= 2 (smooth gradient)")

    def grad(z):
        r2 = _sq(z)[..., None]
        return p * r2 ** (0.5 * p - 1.0) * z

    return Integrand(dimW, lambda z: _sq(z) ** (0.5 * p), grad, nf.power(p),
                     descriptor={"kind": "power", "p": p}, name=f"power{p:g}")


def v_integrand(phi: nf.NFunction, dimW: int) -> Integrand:
    """``V_phi(z) = phi(sqrt(1+|z|^2)) - phi(1)``."""
    desc = None
    try:
        desc = {"kind": "v", "phi": phi.to_dict()}
    except UnsupportedFunctionError:
        pass
    return Integrand(dimW, lambda z: nf.v_function(phi, z), lambda z: nf.v_function_grad(phi, z), phi,
                     descriptor=desc, name="V_phi")


def v1_integrand(dimW: int) -> Integrand:
    """``V_1(z) = sqrt(1+|z|^2) - 1``."""
    return Integrand(dimW, nf.v1, lambda z: z / np.sqrt(1.0 + _sq(z))[..., None], nf.sqrt1p(),
                     descriptor={"kind": "v1"}, name="V_1")


def constant_integrand(dimW: int, c: float) -> Integrand:
    c = float(c)
    return Integrand(dimW, lambda z: np.full(z.shape[:-1], c), lambda z: np.zeros_like(z), nf.power(2.0),
                     descriptor={"kind": "constant", "c": c}, name="constant")


def integrand_from_dict(desc: dict, dimW: int) -> Integrand:
    """Build an integrand from ``{"kind": "quadratic" | "power" | "v" | "v1" | "constant", ...}``."""
    kind = desc.get("kind") if isinstance(desc, dict) else None
    if kind == "quadratic":
        return quadratic(dimW, desc.get("coef", 1.0))
    if kind == "power":
        return power_integrand(dimW, desc["p"])
    if kind == "v":
        return v_integrand(nf.from_dict(desc["phi"]), dimW)
    if kind == "v1":
        return v1_integrand(dimW)
    if kind == "constant":
        return constant_integrand(dimW, desc["c"])
    raise DomainError(f"unknown integrand descriptor {desc!r}")


def check_integrand(F: Integrand, samples: int = 200, seed: int = 0, radius: float = 100.0) -> Report:
    """Fit the growth constant and compare the gradient with central differences."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((samples, F.dimW))
    z *= (radius ** rng.random((samples, 1))) / np.linalg.norm(z, axis=1, keepdims=True)
    r = np.linalg.norm(z, axis=1)
    growth_c = float(np.max(np.abs(F.value(z)) / (1.0 + F.growth.value(r)))) if F.growth else math.nan
    grad_err = math.nan
    if F.has_grad:
        g = F.grad(z)
        d = rng.standard_normal(z.shape)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        eps = 1e-6 * np.maximum(1.0, r)[:, None]
        fd = (F.value(z + eps * d) - F.value(z - eps * d)) / (2.0 * eps[:, 0])
        an = np.sum(g * d, axis=1)
        grad_err = float(np.max(np.abs(fd - an) / np.maximum(np.abs(an), np.linalg.norm(g, axis=1) + 1e-300)))
    return Report("integrand_check", holds=bool(np.isfinite(growth_c) and grad_err < 1e-6),
                  data={"growth_constant": growth_c, "grad_rel_err": grad_err})


# ---------------------------------------------------------------------------
# quasiconvexity gap


@dataclass
class QCReport:
    """Gap against shifted energy for one test field.

    ``nu_hat`` is only an upper bound for the best quasiconvexity constant.
    """

    lhs_gap: float
    rhs_energy: float
    nu_hat: float
    z0: list
    M: float
    test_field_digest: str
    status: str = "ok"

    def to_dict(self):
        return to_jsonable(self.__dict__)


def _require_support(zeta: fl.Field, cells: int = 2):
    if not fl.is_compactly_supported(zeta, cells):
        raise DomainError("test field is not supported inside the cube")


def qc_gap(F: Integrand, op: DiffOp, phi: nf.NFunction, z0, zeta: fl.Field, M: float | None = None) -> QCReport:
    """``int F(z0 + A zeta) - F(z0)`` against ``int phi_{1+|z0|}(|A zeta|)``."""
    _require_support(zeta)
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (op.dimW,):
        raise DomainError(f"z0 must have {op.dimW} components")
    Az = fl.apply_op_fd(op, zeta).values
    h = zeta.grid.cell_volume
    lhs = float(np.sum(F.value(z0 + Az) - F.value(z0[None, :])[0]) * h)
    a = 1.0 + float(np.linalg.norm(z0))
    rhs = float(np.sum(nf.shift(phi, a).value(np.linalg.norm(Az, axis=-1))) * h)
    dig = digest(zeta.values, z0=z0.tolist())
    Mv = float(np.linalg.norm(z0)) if M is None else float(M)
    if rhs == 0.0:
        status = "trivial" if lhs == 0.0 else "degenerate"
        return QCReport(lhs, rhs, math.nan, z0.tolist(), Mv, dig, status)
    return QCReport(lhs, rhs, lhs / rhs, z0.tolist(), Mv, dig)


def v_equivalence(phi: nf.NFunction, op: DiffOp, z0, zeta: fl.Field) -> float:
    """``int V_phi(z0 + A zeta) - V_phi(z0)`` over ``int phi_{1+|z0|}(|A zeta|)``.

    Returns ``nan`` when both integrals vanish.

    Raises
    ------
    DomainError
        If only the denominator vanishes.
    """
    rep = qc_gap(v_integrand(phi, op.dimW), op, phi, z0, zeta)
    if rep.status == "trivial":
        return math.nan
    if rep.status == "degenerate":
        raise DomainError("shifted energy vanishes while the V-excess does not")
    return rep.nu_hat


def random_z0(rng: np.random.Generator, dim: int, M: float) -> np.ndarray:
    """Uniform direction, radius uniform in ``[0, M]``."""
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v) * M * rng.random()


def normalized_test_field(op: DiffOp, grid: fl.Grid, seed: int, amplitude: float, band: int = 3) -> fl.Field:
    """Random compact field scaled so that ``max |A_h zeta| = amplitude``."""
    z = fl.random_field(grid, op.dimV, band=band, seed=seed)
    peak = float(np.max(fl.apply_op_fd(op, z).norm()))
    return z * (amplitude / peak)


def v_equivalence_scan(phi: nf.NFunction, op: DiffOp, grid: fl.Grid, M: float, n_fields: int = 40,
                       amplitudes=(0.1, 50.0), seed: int = 0, band: int = 3) -> Report:
    """Ratios of :func:`v_equivalence` over a family of test fields.

    Fields are split evenly between the amplitudes (peak ``|A zeta|``); each
    gets its own random ``z0`` with ``|z0| <= M``.
    """
    rng = np.random.default_rng(seed)
    rows = []
    per = max(1, n_fields // len(amplitudes))
    for amp in amplitudes:
        for k in range(per):
            z0 = random_z0(rng, op.dimW, M)
            zeta = normalized_test_field(op, grid, int(rng.integers(2 ** 31)), amp, band)
            rows.append({"amplitude": float(amp), "z0_norm": float(np.linalg.norm(z0)),
                         "ratio": v_equivalence(phi, op, z0, zeta)})
    r = np.array([row["ratio"] for row in rows])
    rmin, rmax = float(r.min()), float(r.max())
    spread = rmax / rmin if rmin > 0 else math.inf
    return Report("v_equivalence_scan", holds=bool(rmin > 0 and spread < 1e3),
                  data={"r_min": rmin, "r_max": rmax, "spread": spread, "seed": seed, "M": M, "rows": rows})


# ---------------------------------------------------------------------------
# auxiliary constants


def _random_dirs(rng, n, dim):
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def aux_radius(phi: nf.NFunction, M: float, factor: float = 2.0) -> float:
    """Least ``S`` with ``factor * phi(1+M) <= phi(1+S)``, then at least ``3M``."""
    from .ineq import invert_increasing
    target = factor * float(phi.value(np.array([1.0 + M]))[0])
    s0 = float(invert_increasing(phi.value, np.array([target]))[0]) - 1.0
    return max(s0, 3.0 * M)


def log_ratio_sup(t_max: float = 1e12, samples: int = 20000) -> dict:
    """``f(t) = log(1+t)/log(1+t/12)`` on ``[1, t_max]``: supremum and tail value."""
    t = np.logspace(0, math.log10(t_max), samples)
    f = np.log1p(t) / np.log1p(t / 12.0)
    return {"sup": float(f.max()), "argsup": float(t[np.argmax(f)]), "tail": float(f[-1]),
            "monotone_decreasing": bool(np.all(np.diff(f) <= 0))}


def aux_bounds_scan(phi: nf.NFunction, M: float, dim: int = 2, samples: int = 4000, seed: int = 0) -> Report:
    """Fit the sandwich constants for large and small increments.

    * ``|xi| >= S``: ``N = phi(1+|z0|+|xi|) - phi(1+|z0|)`` against
      ``D = phi(<z0+xi>) - phi(<z0>)`` with ``<z> = sqrt(1+|z|^2)``; the
      lower constant ``min N/D`` must reach ``1/2`` once ``S`` follows the
      doubling recipe, the upper constant ``max N/D`` must be finite.
    * ``|xi| <= S``: the Taylor remainder of ``V_phi`` at ``z0`` against
      ``|xi|^2`` (two positive constants). The bare difference
      ``V(z0+xi) - V(z0)`` takes negative values there, which is recorded.
    * the ratio ``|xi|^2 / phi_{1+|z0|}(|xi|)`` for ``|xi| <= S``.
    """
    if M <= 0:
        raise DomainError("M must be positive")
    tt = np.linspace(0.0, 50.0, 501)
    if np.any(np.diff(phi.value(tt)) <= 0):
        raise DomainError("phi is not strictly increasing")
    rng = np.random.default_rng(seed)
    S = aux_radius(phi, M)
    one = lambda x: phi.value(np.asarray(x, dtype=float))

    # K with phi(t/12) >= K phi(t) for t >= 1
    tk = np.logspace(0, 12, 20000)
    K = float(np.min(one(tk / 12.0) / one(tk)))
    S2 = aux_radius(phi, M, factor=2.0 / K)

    # large increments
    z0 = _random_dirs(rng, samples, dim) * (M * rng.random((samples, 1)))
    xi_norm = S * 10.0 ** (6.0 * rng.random(samples))
    dirs = _random_dirs(rng, samples, dim)
    # half the samples point against z0, the worst case for D
    anti = np.arange(samples) % 2 == 0
    zn = np.linalg.norm(z0, axis=1, keepdims=True)
    dirs[anti] = np.where(zn[anti] > 0, -z0[anti] / np.maximum(zn[anti], 1e-300), dirs[anti])
    xi = dirs * xi_norm[:, None]
    a0 = np.linalg.norm(z0, axis=1)
    N = one(1.0 + a0 + xi_norm) - one(1.0 + a0)
    D = one(np.sqrt(1.0 + _sq(z0 + xi))) - one(np.sqrt(1.0 + a0 ** 2))
    large = N / D
    C1, C2 = float(large.min()), float(large.max())

    # small increments
    z0s = _random_dirs(rng, samples, dim) * (M * rng.random((samples, 1)))
    xs = _random_dirs(rng, samples, dim) * (S * rng.random((samples, 1)) ** 0.5)
    xs_n2 = _sq(xs)
    V = v_integrand(phi, dim)
    diff = V.value(z0s + xs) - V.value(z0s)
    remainder = diff - np.sum(V.grad(z0s) * xs, axis=1)
    small = remainder / xs_n2
    C3, C4 = float(small.min()), float(small.max())

    # quadratic comparison of the shifted function
    an = np.linalg.norm(z0s, axis=1)
    ratio_q = np.empty(samples)
    for a in np.unique(np.round(an, 12)):
        m = np.round(an, 12) == a
        ratio_q[m] = xs_n2[m] / nf.shift(phi, 1.0 + a).value(np.sqrt(xs_n2[m]))
    Q1, Q2 = float(ratio_q.min()), float(ratio_q.max())

    zero_branch = float(V.value(z0s[:1])[0] - V.value(z0s[:1])[0]) == 0.0 and \
        float(nf.shift(phi, 1.0 + an[0]).value(np.array([0.0]))[0]) == 0.0

    data = {
        "S": S, "S_upper_recipe": S2, "K": K,
        "C1": C1, "C2_upper": C2, "C1_paper": 0.5, "C2_bound": 2.0 / K,
        "C3": C3, "C4": C4, "bare_difference_negative_count": int(np.count_nonzero(diff < 0)),
        "quadr_lower": Q1, "quadr_upper": Q2, "zero_branch": bool(zero_branch),
    }
    if phi.kind == "llogl":
        data["log_ratio"] = log_ratio_sup()
    holds = (C1 >= 0.5 - 1e-12 and math.isfinite(C2) and C3 > 0 and math.isfinite(C4)
             and Q1 > 0 and math.isfinite(Q2) and zero_branch)
    return Report("aux_bounds", holds=bool(holds), data=data)


# ---------------------------------------------------------------------------
# comparison lemma for V_1


def comp_lower_bound(z0, z):
    """Taylor remainder ``E(z)`` of ``V_1`` at ``z0`` and the bound ``(1/4)<z0>^{-3} V_1(z)``.

    Works on batches (vector axis last). The remainder is evaluated in a
    cancellation-free form. Returns ``(lhs, rhs, holds)`` with
    ``holds = lhs >= rhs - 1e-12``.
    """
    z0 = np.asarray(z0, dtype=float)
    z = np.asarray(z, dtype=float)
    B = np.sqrt(1.0 + _sq(z0))
    A = np.sqrt(1.0 + _sq(z0 + z))
    zz = _sq(z)
    p = np.sum(z0 * z, axis=-1)
    lhs = (B * zz - p * (2.0 * p + zz) / (A + B)) / ((A + B) * B)
    rhs = 0.25 * B ** -3 * nf.v1(z)
    return lhs, rhs, lhs >= rhs - 1e-12


def comp_scan(samples: int = 100_000, dim: int = 4, radius: float = 1e3, seed: int = 0) -> Report:
    """Random check of :func:`comp_lower_bound` with log-uniform norms up to ``radius``."""
    rng = np.random.default_rng(seed)
    r0 = radius * 10.0 ** (-6.0 * rng.random(samples))
    r1 = radius * 10.0 ** (-6.0 * rng.random(samples))
    z0 = _random_dirs(rng, samples, dim) * r0[:, None]
    d = _random_dirs(rng, samples, dim)
    # a quarter of the increments point back through the origin
    back = rng.random(samples) < 0.25
    d[back] = -z0[back] / r0[back, None]
    z = d * r1[:, None]
    lhs, rhs, ok = comp_lower_bound(z0, z)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(rhs > 0, lhs / rhs, np.inf)
    return Report("comparison_lemma", holds=bool(ok.all()),
                  data={"samples": samples, "violations": int(np.count_nonzero(~ok)),
                        "min_ratio": float(q.min())})


# ---------------------------------------------------------------------------
# auxiliary pair for L log L growth


def build_psi_phi(M: float, z0_norm: float = 0.0, pi_norm: float = 1.0,
                  phi: nf.NFunction | None = None) -> tuple[nf.NFunction, nf.NFunction]:
    """Quadratic-near-zero pair ``(Psi, Phi)`` glued at ``S = max(3M, 1)``.

    ``Psi = d1 t^2`` below ``S`` and ``phi(1+a+t) - phi(1+a) - d2`` above;
    ``Phi = d3 t^2`` below ``S`` and ``(1+a^2)^{-3/2} (sqrt(1+t^2) - 1) - d4``
    above, where ``a = pi_norm * z0_norm``. ``d1, d3`` make the derivatives
    agree at ``S`` (the largest quadratic coefficients for which the glued
    function stays convex); ``d2, d4`` make the values agree.
    """
    if not M > 0:
        raise DomainError("M must be positive")
    if z0_norm > M + 1e-12:
        raise DomainError("z0_norm must not exceed M")
    phi = phi or nf.llogl()
    a = float(pi_norm) * float(z0_norm)
    S = max(3.0 * M, 1.0)
    ev = lambda f, x: float(np.asarray(f(np.array([x])))[0])

    d1 = ev(phi.deriv, 1.0 + a + S) / (2.0 * S)
    d2 = ev(phi.value, 1.0 + a + S) - ev(phi.value, 1.0 + a) - d1 * S * S
    k = (1.0 + a * a) ** -1.5
    d3 = k / (2.0 * math.sqrt(1.0 + S * S))
    d4 = k * (math.sqrt(1.0 + S * S) - 1.0) - d3 * S * S
    if not (d1 > 0 and d3 > 0):
        raise DomainError("gluing system is infeasible")
    Psi = nf.piecewise([S], [nf.Branch(nf.power(2.0, d1)),
                             nf.Branch(phi, 1.0, 1.0 + a, -ev(phi.value, 1.0 + a) - d2)])
    Phi = nf.piecewise([S], [nf.Branch(nf.power(2.0, d3)),
                             nf.Branch(nf.sqrt1p(), k, 0.0, -d4)])
    Psi.params["meta"] = Phi.params["meta"] = {"S": S, "a": a, "delta": [d1, d2, d3, d4]}
    return Psi, Phi


def conjugate_bounds_check(Psi: nf.NFunction, Phi: nf.NFunction, t_max: float = 600.0) -> Report:
    """Check that ``Phi*`` is finite below the slope threshold and infinite above, and fit
    the largest ``c`` (tightest bound) with ``Psi*(t) <= max(t^2/4, c exp(t/c - 1))`` on a grid."""
    thr = Phi.slope_limit
    Phi_s = nf.conjugate(Phi, allow_degenerate=True)
    Psi_s = nf.conjugate(Psi, allow_degenerate=True)
    below = np.linspace(0.0, thr, 200)[1:-1]
    above = thr * np.array([1.0001, 1.5, 10.0])
    phi_ok = bool(np.all(np.isfinite(Phi_s.value(below))) and np.all(np.isinf(Phi_s.value(above))))
    t = np.logspace(-3, math.log10(t_max), 400)
    ps = Psi_s.value(t)
    fin = np.isfinite(ps)
    t, ps = t[fin], ps[fin]
    c_fit = math.inf
    for c in np.logspace(3, -2, 2001):
        with np.errstate(over="ignore"):
            bound = np.maximum(t * t / 4.0, c * np.exp(t / c - 1.0))
        if np.all(ps <= bound):
            c_fit = float(c)
            break
    return Report("conjugate_bounds", holds=bool(phi_ok and math.isfinite(c_fit)),
                  data={"phi_star_threshold": thr, "phi_star_finite_below_inf_above": phi_ok,
                        "psi_star_c": c_fit, "t_max": float(t[-1]) if t.size else math.nan})


# ---------------------------------------------------------------------------
# Lipschitz-type bound


def _lipschitz_sample(F, phi, rng, samples, radius):
    dim = F.dimW
    z = _random_dirs(rng, samples, dim) * (radius ** rng.random((samples, 1)))
    w = _random_dirs(rng, samples, dim) * (radius ** rng.random((samples, 1)))
    # a third of the pairs are close to each other
    close = rng.random(samples) < 1.0 / 3.0
    w[close] = z[close] + _random_dirs(rng, int(close.sum()), dim) * 10.0 ** (-6 * rng.random((int(close.sum()), 1)))
    s = 1.0 + np.linalg.norm(z, axis=1) + np.linalg.norm(w, axis=1)
    dz = np.linalg.norm(z - w, axis=1)
    lhs = np.abs(F.value(z) - F.value(w))
    rhs = phi.value(s) / s * dz
    keep = rhs > 0
    return float(np.max(lhs[keep] / rhs[keep]))


def lipschitz_bound_check(F: Integrand, phi: nf.NFunction, samples: int = 20000, seed: int = 0,
                          radius: float = 1e3) -> Report:
    """Least ``L`` with ``|F(z)-F(w)| <= L phi(s)/s |z-w|``, ``s = 1+|z|+|w|``; the fit is
    repeated with twice as many samples and must agree within 10 %."""
    L1 = _lipschitz_sample(F, phi, np.random.default_rng(seed), samples, radius)
    L2 = max(L1, _lipschitz_sample(F, phi, np.random.default_rng(seed + 1), samples, radius))
    stable = math.isfinite(L2) and L2 <= 1.1 * L1
    return Report("lipschitz_bound", holds=bool(stable),
                  data={"L": L1, "L_doubled": L2, "samples": samples, "radius": radius})
