"""Direct-method minimization of discretized operator functionals.

The discrete functional is ``E[u] = sum_k F(A_h u(x_k)) h^n`` on a grid
whose outer Dirichlet layer is pinned to boundary data. Besides the
minimizer this module carries a sparse linear-solve oracle for quadratic
integrands, coercivity probes, the reduction ``G = F o pi_A`` to full
gradients and ball-excess diagnostics.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from . import fieldlab as fl
from . import nfunc as nf
from . import opsym
from .errors import (ClassViolationError, ConfigError, DomainError, NoKernelError,
                     UnsupportedBoundaryError, UnsupportedFunctionError)
from .opsym import DiffOp
from .qcx import Integrand
from .reports import Report, to_jsonable


@dataclass
class MinimizeOptions:
    """Settings for :func:`minimize`.

    Parameters
    ----------
    max_iters : int
    grad_tol : float
        Stop when ``max |energy_grad| <= grad_tol`` over free cells.
    armijo_c1 : float
        Sufficient-decrease constant of the backtracking line search.
    max_halvings : int
        Line-search failure threshold.
    history_depth : int
        Number of stored curvature pairs.
    seed : int
        Recorded in outputs; the descent itself is deterministic.
    checkpoint_path : str, optional
        Save the iterate in the binary field format every ``checkpoint_every``
        iterations (0 means only at the end).
    """

    max_iters: int = 5000
    grad_tol: float = 1e-10
    armijo_c1: float = 1e-4
    max_halvings: int = 60
    history_depth: int = 10
    seed: int = 0
    checkpoint_path: str | None = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ConfigError("grad_tol must be positive")
        if self.history_depth < 1 or self.max_iters < 0 or self.max_halvings < 1:
            raise ConfigError("history_depth, max_halvings must be >= 1 and max_iters >= 0")


@dataclass
class MinimizeTrace:
    """Iteration log of :func:`minimize`; rows are ``(iter, energy, grad_norm, step)``."""

    rows: list = field(default_factory=list)
    status: str = "max_iters"
    seed: int = 0

    @property
    def energies(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def iterations(self) -> int:
        return self.rows[-1][0] if self.rows else 0

    @property
    def monotone(self) -> bool:
        e = self.energies
        return bool(np.all(np.diff(e) <= 0))

    def to_dict(self):
        return to_jsonable({"status": self.status, "seed": self.seed, "iterations": self.iterations,
                            "final_energy": self.rows[-1][1] if self.rows else math.nan,
                            "final_grad_norm": self.rows[-1][2] if self.rows else math.nan,
                            "monotone": self.monotone})

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "energy", "grad_norm", "step"])
            for it, e, g, s in self.rows:
                w.writerow([it, repr(float(e)), repr(float(g)), repr(float(s))])


# ---------------------------------------------------------------------------
# energy


def energy(F: Integrand, op: DiffOp, u: fl.Field) -> float:
    """``sum_k F(A_h u(x_k)) h^n`` over all cells."""
    Au = fl.apply_op_fd(op, u).values
    return float(np.sum(F.value(Au)) * u.grid.cell_volume)


def energy_grad(F: Integrand, op: DiffOp, u: fl.Field) -> fl.Field:
    """Gradient of :func:`energy` with respect to the sample values.

    Entries in the Dirichlet layer are zero.
    """
    if not F.has_grad:
        raise UnsupportedFunctionError(f"integrand {F.name} has no gradient")
    Au = fl.apply_op_fd(op, u).values
    g = fl.apply_op_fd_adjoint(op, F.grad(Au), u.grid) * u.grid.cell_volume
    if u.grid.boundary == "dirichlet":
        g[~u.grid.interior_mask()] = 0.0
    return fl.Field(u.grid, g)


def extend_inward(boundary: fl.Field) -> fl.Field:
    """Copy each free cell from the nearest Dirichlet-layer cell."""
    grid = boundary.grid
    if grid.boundary != "dirichlet":
        raise UnsupportedBoundaryError("boundary data needs a Dirichlet grid")
    free = grid.interior_mask()
    _, idx = ndimage.distance_transform_edt(free, sampling=grid.h, return_indices=True)
    vals = boundary.values[tuple(idx)]
    return fl.Field(grid, np.where(free[..., None], vals, boundary.values))


def _check_growth(F: Integrand):
    if F.growth is None:
        return
    rep = nf.delta2_estimate(F.growth, samples=2000)
    if rep.delta2_unbounded:
        raise ClassViolationError(f"growth function of {F.name} is not doubling")


def minimize(F: Integrand, op: DiffOp, grid: fl.Grid, boundary: fl.Field,
             opts: MinimizeOptions | None = None, init: fl.Field | None = None):
    """Limited-memory quasi-Newton descent with Armijo backtracking.

    Starts from the boundary data extended inward (or ``init``, whose layer
    is overwritten by the boundary data).

    Returns
    -------
    u : Field
    trace : MinimizeTrace
        ``status`` is ``"converged"``, ``"max_iters"`` or ``"stagnation"``
        (line search failed after ``max_halvings`` halvings; ``u`` is the
        last accepted iterate).
    """
    opts = opts or MinimizeOptions()
    if grid.boundary != "dirichlet":
        raise UnsupportedBoundaryError("minimize needs a Dirichlet grid")
    if boundary.grid != grid or boundary.codim != op.dimV:
        raise DomainError("boundary field does not match the grid and operator")
    _check_growth(F)
    free = grid.interior_mask()
    u = extend_inward(boundary)
    if init is not None:
        u = fl.Field(grid, np.where(free[..., None], init.values, boundary.values))
    base = u.values.copy()

    def unpack(x):
        v = base.copy()
        v[free] = x.reshape(-1, op.dimV)
        return fl.Field(grid, v)

    def fg(x):
        w = unpack(x)
        return energy(F, op, w), energy_grad(F, op, w).values[free].ravel()

    x = u.values[free].ravel().copy()
    f, g = fg(x)
    trace = MinimizeTrace(seed=opts.seed)
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    trace.rows.append((0, f, gnorm, 0.0))
    S, Y = [], []
    eps = np.finfo(float).eps

    for it in range(1, opts.max_iters + 1):
        if gnorm <= opts.grad_tol:
            trace.status = "converged"
            break
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(S), reversed(Y)):
            a = (s @ q) / (y @ s)
            alphas.append(a)
            q -= a * y
        if S:
            q *= (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
        else:
            q /= max(np.linalg.norm(g), 1e-300)
        for (s, y), a in zip(zip(S, Y), reversed(alphas)):
            q += s * (a - (y @ q) / (y @ s))
        d = -q
        slope = g @ d
        if not slope < 0:
            S.clear()
            Y.clear()
            d = -g / max(np.linalg.norm(g), 1e-300)
            slope = g @ d
        step = 1.0
        for _ in range(opts.max_halvings):
            xn = x + step * d
            fn, gn = fg(xn)
            dec = opts.armijo_c1 * step * slope
            if fn < f and (fn <= f + dec or -dec <= 8 * eps * abs(f)):
                break
            step *= 0.5
        else:
            trace.status = "stagnation"
            break
        s_k, y_k = xn - x, gn - g
        if s_k @ y_k > 1e-12 * np.linalg.norm(s_k) * np.linalg.norm(y_k):
            S.append(s_k)
            Y.append(y_k)
            if len(S) > opts.history_depth:
                S.pop(0)
                Y.pop(0)
        x, f, g = xn, fn, gn
        gnorm = float(np.max(np.abs(g)))
        trace.rows.append((it, f, gnorm, step))
        if opts.checkpoint_path and opts.checkpoint_every and it % opts.checkpoint_every == 0:
            fl.save_field(opts.checkpoint_path, unpack(x))
    else:
        if gnorm <= opts.grad_tol:
            trace.status = "converged"
    u = unpack(x)
    if opts.checkpoint_path:
        fl.save_field(opts.checkpoint_path, u)
    return u, trace


# ---------------------------------------------------------------------------
# linear-solve oracle


def _diff_matrix_1d(m: int, h: float, periodic: bool) -> sp.csr_matrix:
    eye = np.eye(m)
    return sp.csr_matrix(fl._diff_axis(eye, 0, h, periodic))


def operator_matrix(op: DiffOp, grid: fl.Grid) -> sp.csr_matrix:
    """Sparse matrix of ``u -> A_h u`` on C-ordered ``(*shape, codim)`` arrays."""
    periodic = grid.boundary == "periodic"
    total = None
    for i in range(grid.n):
        mats = [sp.identity(m, format="csr") for m in grid.shape]
        mats[i] = _diff_matrix_1d(grid.shape[i], grid.h[i], periodic)
        Di = mats[0]
        for M in mats[1:]:
            Di = sp.kron(Di, M, format="csr")
        term = sp.kron(Di, sp.csr_matrix(op.coeffs[i]), format="csr")
        total = term if total is None else total + term
    return total.tocsr()


def direct_solve(op: DiffOp, grid: fl.Grid, boundary: fl.Field) -> fl.Field:
    """Exact discrete minimizer of ``sum |A_h u|^2 h^n`` with pinned Dirichlet layer."""
    if grid.boundary != "dirichlet":
        raise UnsupportedBoundaryError("direct_solve needs a Dirichlet grid")
    K = operator_matrix(op, grid)
    H = (K.T @ K).tocsr()
    free = np.repeat(grid.interior_mask().ravel(), op.dimV)
    ub = boundary.values.ravel().copy()
    ub[free] = 0.0
    rhs = -(H[free][:, ~free] @ ub[~free])
    sol = spla.spsolve(H[free][:, free].tocsc(), rhs)
    ub[free] = sol
    return fl.Field(grid, ub.reshape(boundary.values.shape))


def competitor_check(F: Integrand, op: DiffOp, u: fl.Field, samples: int = 100, seed: int = 0,
                     amplitudes=(1e-3, 1.0), band: int = 3) -> Report:
    """Compare ``E[u]`` with ``E[u + zeta]`` for random compactly supported ``zeta``.

    Amplitudes are log-uniform in ``amplitudes`` relative to ``max |u|``.
    """
    rng = np.random.default_rng(seed)
    E0 = energy(F, op, u)
    scale = max(float(np.max(np.abs(u.values))), 1.0)
    lo, hi = np.log10(amplitudes[0]), np.log10(amplitudes[1])
    worst = math.inf
    energies = []
    for _ in range(samples):
        amp = scale * 10.0 ** rng.uniform(lo, hi)
        z = fl.random_field(u.grid, op.dimV, band=band, seed=int(rng.integers(2 ** 31)), amplitude=amp)
        Ez = energy(F, op, u + z)
        energies.append(Ez)
        worst = min(worst, Ez - E0)
    tol = 1e-12 * max(abs(E0), 1.0)
    return Report("competitors", holds=bool(worst >= -tol),
                  data={"energy": E0, "min_excess_energy": worst, "samples": samples, "seed": seed})


# ---------------------------------------------------------------------------
# coercivity


def coercivity_probe(F: Integrand, op: DiffOp, grid: fl.Grid, boundary: fl.Field, scales,
                     seed: int = 0, band: int = 3) -> Report:
    """Energy along ``u0 + lam zeta`` for a fixed random compact ``zeta``.

    Fits the log-log slope of ``E(lam) - E(0)`` over the upper half of the
    scales and compares it with the slope of the growth function over the
    same scales. The split ``E = I + II`` with ``II = int F(lam A zeta)``
    is recorded; ``|I| <= II / 2`` is required at the largest scale.
    """
    u0 = extend_inward(boundary) if grid.boundary == "dirichlet" else boundary
    zeta = fl.random_field(grid, op.dimV, band=band, seed=seed)
    A0 = fl.apply_op_fd(op, u0).values
    Az = fl.apply_op_fd(op, zeta).values
    hv = grid.cell_volume
    scales = np.asarray(scales, dtype=float)
    E = np.array([float(np.sum(F.value(A0 + lam * Az)) * hv) for lam in scales])
    II = np.array([float(np.sum(F.value(lam * Az)) * hv) for lam in scales])
    I = E - II
    E0 = energy(F, op, u0)
    top = scales.size // 2
    sel = slice(top, None)
    rise = E - E0
    exponent = math.nan
    if np.all(rise[sel] > 0) and scales[sel].size >= 2:
        exponent = float(np.polyfit(np.log(scales[sel]), np.log(rise[sel]), 1)[0])
    ref = math.nan
    if F.growth is not None and scales[sel].size >= 2:
        ref = float(np.polyfit(np.log(scales[sel]), np.log(F.growth.value(scales[sel])), 1)[0])
    increasing = bool(np.all(np.diff(E[sel]) > 0))
    split_ok = bool(abs(I[-1]) <= 0.5 * II[-1])
    holds = increasing and math.isfinite(exponent) and split_ok and \
        (not math.isfinite(ref) or abs(exponent - ref) <= 0.1)
    return Report("coercivity", holds=holds,
                  data={"scales": scales.tolist(), "energies": E.tolist(), "baseline": E0,
                        "exponent": exponent, "growth_exponent": ref, "split_I": I.tolist(),
                        "split_II": II.tolist(), "split_holds": split_ok, "seed": seed})


# ---------------------------------------------------------------------------
# reduction to full gradients


def reduce(F: Integrand, op: DiffOp) -> Integrand:
    """``G(M) = F(pi_A M)`` on flattened Jacobians (entry ``j*n + i`` is ``D_i u_j``).

    The operator norm of ``pi_A`` is stored as ``G.operator_norm``; it is the
    factor by which the growth bound of ``F`` is inflated.
    """
    P = opsym.projection_pi(op)
    if P.shape[0] != F.dimW:
        raise DomainError(f"integrand acts on R^{F.dimW}, operator maps into R^{P.shape[0]}")
    if np.array_equal(P, np.eye(P.shape[0])):
        G = Integrand(F.dimW, F._value, F._grad, F.growth, descriptor=F.descriptor, name=F.name)
        G.operator_norm = 1.0
        return G

    def value(M):
        return F.value(M @ P.T)

    grad = None
    if F.has_grad:
        def grad(M):
            return F.grad(M @ P.T) @ P

    G = Integrand(P.shape[1], value, grad, F.growth, name=f"{F.name}_reduced")
    G.operator_norm = float(np.linalg.norm(P, 2))
    return G


def growth_transfer(F: Integrand, op: DiffOp, samples: int = 2000, seed: int = 0, radius: float = 1e3) -> Report:
    """Growth constants of ``F`` and of its reduction.

    ``|G(M)| <= c_F (1 + phi(|pi| |M|))`` follows from the bound for ``F``;
    both constants are fitted and the inequality is checked on samples.
    """
    if F.growth is None:
        raise UnsupportedFunctionError("integrand has no growth function")
    G = reduce(F, op)
    rng = np.random.default_rng(seed)
    norm = G.operator_norm

    def sample(dim, r):
        v = rng.standard_normal((samples, dim))
        return v / np.linalg.norm(v, axis=1, keepdims=True) * (r ** rng.random((samples, 1)))

    z = sample(F.dimW, radius * max(norm, 1.0))
    cF = float(np.max(np.abs(F.value(z)) / (1.0 + F.growth.value(np.linalg.norm(z, axis=1)))))
    M = sample(G.dimW, radius)
    Mn = np.linalg.norm(M, axis=1)
    gv = np.abs(G.value(M))
    cG = float(np.max(gv / (1.0 + F.growth.value(Mn))))
    ok = bool(np.all(gv <= cF * (1.0 + F.growth.value(norm * Mn)) * (1 + 1e-12)))
    return Report("growth_transfer", holds=ok, data={"c_F": cF, "c_G": cG, "operator_norm": norm})


# ---------------------------------------------------------------------------
# excess


@dataclass
class ExcessMap:
    """Ball excess on a subsample of centres.

    ``excess[c, r]`` is the average of ``phi_{1+|m|}(|Du - m|)`` over the ball
    of radius ``radii[r]`` around centre ``c`` with ``m`` the ball mean of ``Du``.
    A centre counts as irregular when no radius certifies it regular.
    """

    radii: list
    centers: np.ndarray
    mean_gradients: np.ndarray
    excess: np.ndarray
    epsilon: float
    M_tilde: float
    regular_mask: np.ndarray

    @property
    def irregular_fraction(self) -> float:
        if self.centers.shape[0] == 0:
            return math.nan
        return float(np.mean(~np.any(self.regular_mask, axis=1)))

    def to_dict(self):
        return to_jsonable({"radii": self.radii, "epsilon": self.epsilon, "M_tilde": self.M_tilde,
                            "centers": self.centers, "excess": self.excess,
                            "regular_mask": self.regular_mask,
                            "irregular_fraction": self.irregular_fraction})

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(self.centers.shape[1])] + ["radius", "mean_norm", "excess", "regular"])
            for c in range(self.centers.shape[0]):
                for r, rad in enumerate(self.radii):
                    w.writerow([*map(repr, map(float, self.centers[c])), repr(float(rad)),
                                repr(float(np.linalg.norm(self.mean_gradients[c, r]))),
                                repr(float(self.excess[c, r])), int(self.regular_mask[c, r])])


def _shifted_mean(phi: nf.NFunction, a: np.ndarray, dev: np.ndarray) -> np.ndarray:
    """Row means of ``phi_{1+a_c}(dev[c])``."""
    out = np.empty(a.shape[0])
    key = np.round(a, 12)
    for val in np.unique(key):
        rows = key == val
        out[rows] = nf.shift(phi, 1.0 + float(val)).value(dev[rows].ravel()).reshape(-1, dev.shape[1]).mean(axis=1)
    return out


def excess_map(u: fl.Field, phi: nf.NFunction, M_tilde: float, radii, epsilon: float,
               stride: int | None = None, op: DiffOp | None = None) -> ExcessMap:
    """Ball excess of the discrete gradient (or of ``A_h u`` when ``op`` is given).

    Centres are taken every ``stride`` cells (default: about 32 per axis)
    among those whose balls fit in the domain for every radius.
    """
    grid = u.grid
    h = float(np.min(grid.h))
    radii = [float(r) for r in radii]
    if not radii or min(radii) < 2.0 * h * (1 - 1e-9):
        raise DomainError(f"radii must be at least 2h = {2 * h:g}")
    if op is None:
        Du = fl.gradient_fd(u).reshape(*grid.shape, -1)
    else:
        Du = fl.apply_op_fd(op, u).values
    stride = stride or max(1, min(grid.shape) // 32)
    rmax = max(radii)
    axes = grid.axes()
    keep = []
    for ax, (m, hi) in enumerate(zip(grid.shape, grid.h)):
        c = np.arange(0, m, stride)
        x = axes[ax][c]
        ok = (x - rmax >= -1e-12) & (x + rmax <= grid.extent[ax] + 1e-12)
        keep.append(c[ok])
    mesh = np.stack(np.meshgrid(*keep, indexing="ij"), axis=-1).reshape(-1, grid.n)
    coords = np.stack([axes[ax][mesh[:, ax]] for ax in range(grid.n)], axis=-1) if mesh.size else \
        np.zeros((0, grid.n))
    nc = mesh.shape[0]
    means = np.zeros((nc, len(radii), Du.shape[-1]))
    exc = np.zeros((nc, len(radii)))
    for r, rad in enumerate(radii):
        span = [int(math.floor(rad / hi + 1e-9)) for hi in grid.h]
        offs = np.stack(np.meshgrid(*[np.arange(-s, s + 1) for s in span], indexing="ij"), -1).reshape(-1, grid.n)
        offs = offs[np.sum((offs * grid.h) ** 2, axis=1) <= rad * rad * (1 + 1e-9)]
        if nc == 0:
            continue
        idx = mesh[:, None, :] + offs[None, :, :]
        idx = np.clip(idx, 0, np.array(grid.shape) - 1)
        vals = Du[tuple(idx[..., ax] for ax in range(grid.n))]
        m = vals.mean(axis=1)
        dev = np.linalg.norm(vals - m[:, None, :], axis=-1)
        means[:, r] = m
        exc[:, r] = _shifted_mean(phi, np.linalg.norm(m, axis=-1), dev)
    regular = (exc <= epsilon) & (np.linalg.norm(means, axis=-1) <= M_tilde)
    return ExcessMap(radii, coords, means, exc, float(epsilon), float(M_tilde), regular)


# ---------------------------------------------------------------------------
# non-elliptic demonstration


def resolved_depth(grid: fl.Grid, axis: int, min_cells: int = 4) -> int:
    """Largest staircase depth whose jumps are at least ``min_cells`` cells apart."""
    return max(1, int(math.floor(math.log2(grid.shape[axis] / min_cells))))


def nonelliptic_demo(op: DiffOp, F: Integrand, grid: fl.Grid, boundary: fl.Field,
                     depth: int | None = None, amplitude: float = 1.0, radii=None,
                     epsilon: float = 1.0, M_tilde: float = math.inf,
                     opts: MinimizeOptions | None = None, minimizer: fl.Field | None = None) -> Report:
    """Minimize, then add a staircase kernel field ``v`` along a symbol kernel direction.

    The energy is unchanged (``A_h v = 0``) while the excess of ``u + v``
    exposes the jumps. ``depth`` defaults to the finest staircase whose
    jumps stay four cells apart, so the jump set refines with the grid.
    A precomputed ``minimizer`` skips the descent.
    """
    an = opsym.analyze(op)
    if an.elliptic:
        raise NoKernelError(f"{op!r} is elliptic; no kernel field exists")
    xi0, v0 = an.witnesses[0]
    axis = int(np.argmax(np.abs(xi0)))
    depth = resolved_depth(grid, axis) if depth is None else int(depth)
    if minimizer is None:
        u, trace = minimize(F, op, grid, boundary, opts)
        status = trace.status
    else:
        u, status = minimizer, "given"
    v = opsym.kernel_field(op, opsym.staircase(depth), grid, analysis=an) * amplitude
    w = u + v
    Eu, Ew = energy(F, op, u), energy(F, op, w)
    h = float(np.min(grid.h))
    radii = radii or [2 * h, 4 * h]
    phi = F.growth or nf.power(2.0)
    xu = excess_map(u, phi, M_tilde, radii, epsilon)
    xw = excess_map(w, phi, M_tilde, radii, epsilon)
    dE = Ew - Eu
    holds = abs(dE) <= 1e-10 * max(1.0, abs(Eu)) and xw.irregular_fraction > xu.irregular_fraction
    return Report("nonelliptic_demo", holds=bool(holds),
                  data={"energy_u": Eu, "energy_u_plus_v": Ew, "delta_energy": dE, "depth": depth,
                        "kernel_direction": list(map(float, xi0)), "irregular_fraction_u": xu.irregular_fraction,
                        "irregular_fraction_u_plus_v": xw.irregular_fraction, "minimize_status": status,
                        "radii": radii, "epsilon": epsilon})
