"""Symbols of first-order constant-coefficient operators.

An operator ``A u = sum_i A_i d_i u`` maps ``V``-valued fields on ``R^n`` to
``W``-valued fields. Its symbol ``A[xi] = sum_i A_i xi_i`` decides
ellipticity (injective for ``xi != 0``), constant rank, the essential range
and the Fourier multipliers that recover ``D u`` from ``A u``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatchError, DomainError, NoKernelError, SingularSymbolError, UnknownPresetError


class DiffOp:
    """First-order homogeneous operator given by coefficient matrices.

    Parameters
    ----------
    coeffs : array_like, shape (n, dimW, dimV)
        ``coeffs[i]`` is ``A_i``.
    name : str, optional
        Label used in reports.
    """

    def __init__(self, coeffs, name: str | None = None):
        c = np.asarray(coeffs, dtype=float)
        if c.ndim != 3 or c.shape[0] < 1:
            raise DimensionMismatchError("coeffs must have shape (n, dimW, dimV) with n >= 1")
        self.coeffs = c
        self.coeffs.setflags(write=False)
        self.name = name

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    @property
    def dimW(self) -> int:
        return self.coeffs.shape[1]

    @property
    def dimV(self) -> int:
        return self.coeffs.shape[2]

    def symbol(self, xi) -> np.ndarray:
        """``sum_i A_i xi_i``; ``xi`` may carry leading batch axes."""
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1] != self.n:
            raise DimensionMismatchError(f"xi has {xi.shape[-1]} components, operator acts on R^{self.n}")
        return np.einsum("...i,iwv->...wv", xi, self.coeffs)

    def to_dict(self) -> dict:
        return {"n": self.n, "dimV": self.dimV, "dimW": self.dimW, "coeffs": self.coeffs.tolist()}

    @classmethod
    def from_dict(cls, d: dict, name: str | None = None) -> "DiffOp":
        try:
            op = cls(d["coeffs"], name=name)
        except KeyError as exc:
            raise DomainError(f"operator descriptor lacks {exc}") from None
        for key, got in (("n", op.n), ("dimV", op.dimV), ("dimW", op.dimW)):
            if key in d and int(d[key]) != got:
                raise DimensionMismatchError(f"descriptor says {key}={d[key]} but coeffs give {got}")
        return op

    def __repr__(self):
        label = self.name or "DiffOp"
        return f"{label}(n={self.n}, dimV={self.dimV}, dimW={self.dimW})"


# ---------------------------------------------------------------------------
# presets


def grad(n: int = 2, N: int = 1) -> DiffOp:
    """Full gradient of ``R^N``-valued maps; ``W = R^{N x n}`` flattened row-major."""
    c = np.zeros((n, N * n, N))
    for i in range(n):
        for j in range(N):
            c[i, j * n + i, j] = 1.0
    return DiffOp(c, name="grad")


def _sym_full(n: int) -> np.ndarray:
    c = np.zeros((n, n * n, n))
    for i in range(n):
        for j in range(n):
            # (d_i u_j) contributes to entries (j,i) and (i,j)
            c[i, j * n + i, j] += 0.5
            c[i, i * n + j, j] += 0.5
    return c


def _compress(c: np.ndarray) -> np.ndarray:
    basis = essential_range(DiffOp(c))
    return np.einsum("wr,iwv->irv", basis, c)


def sym_basis(n: int) -> np.ndarray:
    """Orthonormal basis of symmetric matrices as columns in ``R^{n*n}``.

    Diagonal units first, then ``(e_k e_l^T + e_l e_k^T)/sqrt(2)`` for ``k < l``.
    """
    cols = []
    for k in range(n):
        e = np.zeros((n, n))
        e[k, k] = 1.0
        cols.append(e.ravel())
    for k, l in itertools.combinations(range(n), 2):
        e = np.zeros((n, n))
        e[k, l] = e[l, k] = 1.0 / math.sqrt(2.0)
        cols.append(e.ravel())
    return np.array(cols).T


def sym_grad(n: int = 2, full: bool = False) -> DiffOp:
    """Symmetric gradient.

    By default ``W`` is the space of symmetric matrices in orthonormal
    coordinates (``dimW = n(n+1)/2``). With ``full`` the target is
    ``R^{n x n}`` flattened row-major.
    """
    c = _sym_full(n)
    if full:
        return DiffOp(c, name="sym_grad_full")
    return DiffOp(np.einsum("wr,iwv->irv", sym_basis(n), c), name="sym_grad")


def dev_sym_grad(n: int = 2, full: bool = False) -> DiffOp:
    """Trace-free symmetric gradient, compressed onto its essential range unless ``full``."""
    c = _sym_full(n)
    eye = np.eye(n).ravel()
    for i in range(n):
        for j in range(n):
            if i == j:
                c[i, :, j] -= eye / n
    if full:
        return DiffOp(c, name="dev_sym_grad_full")
    return DiffOp(_compress(c), name="dev_sym_grad")


def div(n: int = 2) -> DiffOp:
    """Divergence of vector fields, ``W = R``."""
    c = np.zeros((n, 1, n))
    for i in range(n):
        c[i, 0, i] = 1.0
    return DiffOp(c, name="div")


def d1(n: int = 2) -> DiffOp:
    """Partial derivative in the first coordinate of scalar fields."""
    c = np.zeros((n, 1, 1))
    c[0, 0, 0] = 1.0
    return DiffOp(c, name="d1")


PRESETS: dict[str, Callable[..., DiffOp]] = {
    "grad": grad,
    "sym_grad": sym_grad,
    "dev_sym_grad": dev_sym_grad,
    "div": div,
    "d1": d1,
}


def preset(name: str, n: int = 2, **kwargs) -> DiffOp:
    """Look up a named operator."""
    if name not in PRESETS:
        raise UnknownPresetError(f"unknown operator preset {name!r}; known: {sorted(PRESETS)}")
    return PRESETS[name](n=n, **kwargs)


def operator_from_spec(spec, n: int = 2) -> DiffOp:
    """Accept a preset name, a ``{"preset": ...}`` dict or a coefficient descriptor."""
    if isinstance(spec, str):
        return preset(spec, n=n)
    if isinstance(spec, dict):
        if "preset" in spec:
            kw = {k: v for k, v in spec.items() if k not in ("preset", "n")}
            return preset(spec["preset"], n=int(spec.get("n", n)), **kw)
        return DiffOp.from_dict(spec)
    raise DomainError(f"cannot interpret operator {spec!r}")


# ---------------------------------------------------------------------------
# algebra


def tensor_a(op: DiffOp, a, b) -> np.ndarray:
    """``a (x)_A b = A[b] a``."""
    a = np.asarray(a, dtype=float)
    if a.shape[-1] != op.dimV:
        raise DimensionMismatchError(f"a has {a.shape[-1]} components, dimV={op.dimV}")
    return np.einsum("...wv,...v->...w", op.symbol(b), a)


def projection_pi(op: DiffOp) -> np.ndarray:
    """Matrix ``P`` (dimW x dimV*n) with ``A v = P vec(D v)``; column ``j*n+i`` is ``A_i e_j``."""
    return np.ascontiguousarray(op.coeffs.transpose(1, 2, 0).reshape(op.dimW, op.dimV * op.n))


def essential_range(op: DiffOp, tol: float = 1e-12) -> np.ndarray:
    """Orthonormal basis (columns) of ``span{A_i e_j}``; threshold relative to the top singular value."""
    P = projection_pi(op)
    if not np.any(P):
        return np.zeros((op.dimW, 0))
    U, s, _ = np.linalg.svd(P, full_matrices=False)
    r = int(np.count_nonzero(s > tol * s[0]))
    return U[:, :r]


# ---------------------------------------------------------------------------
# symbol analysis


@dataclass
class SymbolAnalysis:
    """Sampled spectral picture of a symbol on the unit sphere."""

    elliptic: bool
    min_singular_on_sphere: float
    rank_profile: list
    constant_rank: bool
    witnesses: list = field(default_factory=list)
    sample_count: int = 0
    rank_drop_count: int = 0
    argmin_xi: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "elliptic": self.elliptic,
            "min_singular_on_sphere": self.min_singular_on_sphere,
            "rank_profile": list(self.rank_profile),
            "constant_rank": self.constant_rank,
            "witnesses": [{"xi": list(map(float, x)), "kernel": list(map(float, v))} for x, v in self.witnesses],
            "sample_count": self.sample_count,
            "rank_drop_count": self.rank_drop_count,
            "argmin_xi": list(map(float, self.argmin_xi)),
        }


def sphere_directions(n: int, count: int = 4096, seed: int = 0, rationals: int = 64) -> np.ndarray:
    """Coordinate directions, then ``count`` quasi-uniform sphere points, then
    normalized small-integer directions."""
    dirs = [np.eye(n)]
    if n == 1:
        dirs.append(np.array([[1.0], [-1.0]]))
    elif n == 2:
        th = 2.0 * np.pi * (np.arange(count) + 0.5) / count
        dirs.append(np.stack([np.cos(th), np.sin(th)], axis=1))
    else:
        g = np.random.default_rng(seed).standard_normal((count, n))
        dirs.append(g / np.linalg.norm(g, axis=1, keepdims=True))
    rng = np.random.default_rng(seed + 1)
    q = rng.integers(-5, 6, size=(rationals, n)).astype(float)
    q = q[np.any(q != 0, axis=1)]
    dirs.append(q / np.linalg.norm(q, axis=1, keepdims=True))
    return np.concatenate(dirs, axis=0)


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(v) > 1e-12 * np.max(np.abs(v))))
    return v if v[k] >= 0 else -v


def analyze(op: DiffOp, sphere_samples: int = 4096, tol: float = 1e-9, seed: int = 0,
            max_witnesses: int = 32) -> SymbolAnalysis:
    """Classify ellipticity and constant rank from sampled singular values.

    The numerical rank at each sample counts singular values above
    ``tol * sigma_max``. Kernel vectors are recorded where the rank falls
    below ``dimV`` (coordinate directions are examined first).
    """
    if sphere_samples < 2 * op.n ** 2:
        raise DomainError(f"need at least 2 n^2 = {2 * op.n ** 2} sphere samples")
    xi = sphere_directions(op.n, sphere_samples, seed)
    S = op.symbol(xi)
    U, s, Vt = np.linalg.svd(S, full_matrices=True)
    k = min(op.dimV, op.dimW)
    smax = s[:, 0] if k else np.zeros(len(xi))
    if op.dimW >= op.dimV:
        smin = s[:, op.dimV - 1]
    else:
        smin = np.zeros(len(xi))
    ranks = np.count_nonzero(s > tol * smax[:, None], axis=1) if k else np.zeros(len(xi), dtype=int)
    ranks[smax == 0] = 0
    drops = np.flatnonzero(ranks < op.dimV)
    witnesses = []
    for idx in drops[:max_witnesses]:
        v = _canonical_sign(Vt[idx, -1])
        witnesses.append((xi[idx].copy(), v.copy()))
    rel = np.where(smax > 0, smin, 0.0)
    amin = int(np.argmin(rel))
    profile = sorted(set(int(r) for r in ranks))
    elliptic = bool(drops.size == 0)
    return SymbolAnalysis(
        elliptic=elliptic,
        min_singular_on_sphere=float(rel[amin]),
        rank_profile=profile,
        constant_rank=len(profile) == 1,
        witnesses=witnesses,
        sample_count=len(xi),
        rank_drop_count=int(drops.size),
        argmin_xi=xi[amin].tolist(),
    )


# ---------------------------------------------------------------------------
# multipliers


class Multiplier:
    """Matrix-valued Fourier multiplier ``xi -> m(xi)`` of shape ``(dim_out, dim_in)``.

    ``mean_value`` is the matrix used at ``xi = 0``.
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], dim_in: int, dim_out: int,
                 mean_value: np.ndarray | None = None, name: str = "multiplier"):
        self._fn = fn
        self.dim_in = int(dim_in)
        self.dim_out = int(dim_out)
        self.mean_value = (np.zeros((dim_out, dim_in)) if mean_value is None
                           else np.asarray(mean_value, dtype=float))
        self.name = name

    def __call__(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        r = np.linalg.norm(xi, axis=-1)
        out = np.empty(xi.shape[:-1] + (self.dim_out, self.dim_in))
        nz = r > 0
        out[~nz] = self.mean_value
        if np.any(nz):
            out[nz] = self._fn(xi[nz])
        return out

    @classmethod
    def identity(cls, dim: int) -> "Multiplier":
        eye = np.eye(dim)
        return cls(lambda xi: np.broadcast_to(eye, xi.shape[:-1] + (dim, dim)).copy(), dim, dim,
                   mean_value=eye, name="identity")


def multiplier(op: DiffOp, j: int, analysis: SymbolAnalysis | None = None) -> Multiplier:
    """``m_j(xi) = xi_j (A[xi]^T A[xi])^{-1} A[xi]^T``, homogeneous of degree 0.

    The symbol is evaluated at ``xi/|xi|`` so that scaling ``xi`` by a power
    of two leaves the result bit-identical. ``m_j(0) = 0``.

    Raises
    ------
    SingularSymbolError
        If the operator is not elliptic (carries a witness direction).
    """
    if not 0 <= j < op.n:
        raise DomainError(f"axis {j} out of range for n={op.n}")
    an = analysis or analyze(op)
    if not an.elliptic:
        raise SingularSymbolError(an.witnesses[0][0] if an.witnesses else an.argmin_xi)

    def fn(xi):
        r = np.linalg.norm(xi, axis=-1, keepdims=True)
        e = xi / r
        S = op.symbol(e)
        St = np.swapaxes(S, -1, -2)
        return e[..., j, None, None] * np.linalg.solve(St @ S, St)

    return Multiplier(fn, op.dimW, op.dimV, name=f"m_{j}")


def gradient_recovery_error(op: DiffOp, u, j: int) -> float:
    """Max error of ``T_{m_j}(A u)`` against the spectral ``d_j u``.

    The identity is exact for fields without content at the Nyquist
    frequency; there the derivative of a real mode is not real and the
    intermediate real part loses it.
    """
    from . import fieldlab as fl
    Au = fl.apply_op_spectral(op, u)
    rec = fl.apply_multiplier(multiplier(op, j), Au)
    ref = fl.derivative_spectral(u, j)
    return float(np.max(np.abs(rec.values - ref.values)))


# ---------------------------------------------------------------------------
# kernel fields


def staircase(depth: int, amplitudes: Sequence[float] | None = None) -> Callable[[np.ndarray], np.ndarray]:
    """Sum of dyadic square waves ``sum_k a_k sq(2^k s)`` for ``k < depth``.

    ``sq`` is the unit-period square wave with values ``+-1``. The result is
    piecewise constant with jumps on a dyadic set that refines with depth.
    """
    amps = np.ones(depth) if amplitudes is None else np.asarray(amplitudes, dtype=float)

    def g(s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        for k, a in enumerate(amps):
            out += a * np.where(np.floor(2.0 ** (k + 1) * s) % 2 == 0, 1.0, -1.0)
        return out

    return g


def kernel_field(op: DiffOp, profile: Callable[[np.ndarray], np.ndarray], grid, xi=None, v0=None,
                 analysis: SymbolAnalysis | None = None):
    """``v(x) = v0 g(<x, xi0>)`` for a symbol kernel pair ``(xi0, v0)``.

    By default the first recorded witness of :func:`analyze` is used
    (coordinate directions come first).
    """
    from .fieldlab import Field
    if xi is None or v0 is None:
        an = analysis or analyze(op)
        if an.elliptic:
            raise NoKernelError(f"{op!r} is elliptic; its symbol has trivial kernel")
        xi0, k0 = an.witnesses[0]
        xi = xi0 if xi is None else xi
        v0 = k0 if v0 is None else v0
    xi = np.asarray(xi, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    if np.linalg.norm(op.symbol(xi) @ v0) > 1e-9 * max(1.0, np.linalg.norm(v0) * np.linalg.norm(xi)):
        raise NoKernelError("supplied (xi, v0) is not a symbol kernel pair")
    s = grid.coords() @ xi
    g = np.asarray(profile(s), dtype=float)
    return Field(grid, g[..., None] * v0)
