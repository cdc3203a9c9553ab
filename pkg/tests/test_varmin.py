import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aqc import fieldlab as fl
from aqc import nfunc as nf
from aqc import opsym as O
from aqc import qcx
from aqc import varmin as V
from aqc.cli import boundary_field
from aqc.errors import ClassViolationError, ConfigError, DomainError, NoKernelError


def dgrid(m):
    return fl.Grid((m, m), boundary="dirichlet")


def affine_boundary(grid, dimV):
    rng = np.random.default_rng(0)
    return boundary_field(grid, dimV, {"kind": "affine", "offset": rng.standard_normal(dimV).tolist(),
                                       "matrix": rng.standard_normal((dimV, 2)).tolist()})


def test_options_validation():
    with pytest.raises(ConfigError):
        V.MinimizeOptions(grad_tol=0.0)


@pytest.mark.parametrize("op", [O.grad(2, 1), O.sym_grad(2)], ids=["grad", "sym_grad"])
def test_affine_data_is_reproduced(op):
    g = dgrid(16)
    b = affine_boundary(g, op.dimV)
    u, tr = V.minimize(qcx.power_integrand(op.dimW, 4.0), op, g, b)
    assert np.max(np.abs(u.values - b.values)) < 1e-8
    assert np.max(np.abs(V.direct_solve(op, g, b).values - b.values)) < 1e-10


@pytest.mark.parametrize("m", [8, 64])
def test_quadratic_minimizer_matches_sparse_solve(m):
    g = dgrid(m)
    b = boundary_field(g, 1, {"kind": "harmonic"})
    u, tr = V.minimize(qcx.quadratic(2), O.grad(2, 1), g, b)
    ref = V.direct_solve(O.grad(2, 1), g, b)
    assert np.max(np.abs(u.values - ref.values)) < 1e-8
    assert tr.monotone


def test_operator_matrix_matches_difference_stencil():
    g = dgrid(12)
    op = O.sym_grad(2)
    u = fl.random_field(g, 2, seed=3, compact=False)
    K = V.operator_matrix(op, g)
    assert np.allclose(K @ u.values.ravel(), fl.apply_op_fd(op, u).values.ravel(), atol=1e-12)


INTEGRANDS = {
    "quadratic": lambda d: qcx.quadratic(d),
    "power3": lambda d: qcx.power_integrand(d, 3.0),
    "v_llogl": lambda d: qcx.v_integrand(nf.llogl(), d),
    "v1": lambda d: qcx.v1_integrand(d),
}


@pytest.mark.parametrize("name", sorted(INTEGRANDS))
@pytest.mark.parametrize("op", [O.grad(2, 2), O.sym_grad(2), O.d1(2)], ids=["grad", "sym_grad", "d1"])
def test_energy_gradient_against_differences(name, op):
    g = dgrid(12)
    F = INTEGRANDS[name](op.dimW)
    rng = np.random.default_rng(1)
    u = fl.Field(g, rng.standard_normal(g.shape + (op.dimV,)))
    G = V.energy_grad(F, op, u).values
    d = rng.standard_normal(u.values.shape)
    d[~g.interior_mask()] = 0.0
    eps = 1e-6
    fd = (V.energy(F, op, u + fl.Field(g, eps * d)) - V.energy(F, op, u + fl.Field(g, -eps * d))) / (2 * eps)
    assert abs(fd - np.sum(G * d)) <= 1e-5 * max(1.0, abs(fd))
    assert np.all(G[~g.interior_mask()] == 0.0)


def test_quadratic_gradient_is_wide_laplacian():
    g = fl.Grid((16, 16))
    u = fl.random_field(g, 1, seed=4, compact=False)
    x = u.values[..., 0]
    h = g.h[0]
    lap = sum((np.roll(x, -2, a) - 2 * x + np.roll(x, 2, a)) / (4 * h * h) for a in (0, 1))
    G = V.energy_grad(qcx.quadratic(2), O.grad(2, 1), u).values[..., 0]
    assert np.allclose(G, -2.0 * lap * g.cell_volume, atol=1e-10)


@pytest.mark.parametrize("k", [1, 3])
def test_energy_of_sine_mode(k):
    # central differences see the modified wavenumber sin(2 pi k h) / h
    m = 128
    g = fl.Grid((m, m))
    u = fl.from_function(g, lambda x: np.sin(2 * np.pi * k * x[..., 0]))
    h = 1.0 / m
    expected = 0.5 * (math.sin(2 * math.pi * k * h) / h) ** 2
    assert V.energy(qcx.quadratic(2), O.grad(2, 1), u) == pytest.approx(expected, rel=1e-12)


def test_power4_minimizer_beats_competitors():
    g = dgrid(32)
    op = O.sym_grad(2)
    b = boundary_field(g, 2, {"kind": "smooth"})
    u, tr = V.minimize(qcx.power_integrand(op.dimW, 4.0), op, g, b)
    assert tr.monotone and tr.status in ("converged", "stagnation")
    rep = V.competitor_check(qcx.power_integrand(op.dimW, 4.0), op, u, samples=100)
    assert rep.holds


def test_trace_export(tmp_path):
    g = dgrid(8)
    b = boundary_field(g, 1, {"kind": "harmonic"})
    _, tr = V.minimize(qcx.quadratic(2), O.grad(2, 1), g, b, V.MinimizeOptions(max_iters=3))
    assert tr.status in ("max_iters", "converged")
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iter,energy,grad_norm,step" and len(lines) == len(tr.rows) + 1


def test_checkpoint(tmp_path):
    g = dgrid(8)
    b = boundary_field(g, 1, {"kind": "harmonic"})
    p = tmp_path / "ck.aqcf"
    u, _ = V.minimize(qcx.quadratic(2), O.grad(2, 1), g, b, V.MinimizeOptions(checkpoint_path=str(p)))
    assert np.array_equal(fl.load_field(p).values, u.values)


def test_growth_outside_doubling_class_is_rejected():
    g = dgrid(8)
    F = qcx.Integrand(2, lambda z: np.exp(np.sum(z * z, axis=-1)), growth=nf.exp_nf(), name="exp")
    with pytest.raises(ClassViolationError):
        V.minimize(F, O.grad(2, 1), g, fl.zeros(g, 1))


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_coercivity_exponent(p):
    g = dgrid(32)
    op = O.sym_grad(2)
    rep = V.coercivity_probe(qcx.power_integrand(op.dimW, p), op, g, boundary_field(g, 2, None),
                             np.logspace(0, 4, 9))
    assert rep.holds
    assert rep.data["exponent"] == pytest.approx(p, abs=0.1)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_reduction_agrees_on_symmetric_gradients(seed):
    op = O.sym_grad(2)
    F = qcx.power_integrand(op.dimW, 3.0)
    G = V.reduce(F, op)
    g = fl.Grid((8, 8))
    u = fl.random_field(g, 2, seed=seed, compact=False)
    Du = fl.gradient_fd(u).reshape(*g.shape, -1)
    Au = fl.apply_op_fd(op, u).values
    assert np.allclose(G.value(Du), F.value(Au), rtol=1e-12, atol=1e-12)


def test_growth_transfer():
    op = O.sym_grad(2)
    rep = V.growth_transfer(qcx.power_integrand(op.dimW, 3.0), op)
    assert rep.holds


def test_excess_of_affine_field_vanishes():
    g = dgrid(32)
    u = fl.from_function(g, lambda x: np.stack([1 + 2 * x[..., 0] - x[..., 1], 3 * x[..., 1]], -1))
    h = g.h[0]
    ex = V.excess_map(u, nf.power(2.0), math.inf, [2 * h, 4 * h], 1e-12)
    assert np.max(ex.excess) < 1e-20
    assert ex.irregular_fraction == 0.0


def test_excess_with_gradient_operator_matches_default():
    g = fl.Grid((32, 32))
    u = fl.random_field(g, 2, seed=0)
    h = g.h[0]
    a = V.excess_map(u, nf.power(3.0), math.inf, [2 * h], 1.0)
    b = V.excess_map(u, nf.power(3.0), math.inf, [2 * h], 1.0, op=O.grad(2, 2))
    assert np.allclose(a.excess, b.excess, rtol=1e-12)


def test_excess_radius_must_cover_two_cells():
    g = fl.Grid((32, 32))
    with pytest.raises(DomainError):
        V.excess_map(fl.zeros(g, 1), nf.power(2.0), 1.0, [g.h[0]], 1.0)


def test_excess_export(tmp_path):
    g = fl.Grid((16, 16))
    ex = V.excess_map(fl.random_field(g, 1, seed=0), nf.power(2.0), 1.0, [2 / 16], 0.1)
    ex.to_csv(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().count("\n") == ex.centers.shape[0] + 1


@pytest.fixture(scope="module")
def demo_setup():
    g = dgrid(64)
    op = O.d1(2)
    F = qcx.quadratic(op.dimW)
    b = boundary_field(g, op.dimV, None)
    u, tr = V.minimize(F, op, g, b)
    return g, op, F, b, u


def test_nonelliptic_demo(demo_setup):
    g, op, F, b, u = demo_setup
    rep = V.nonelliptic_demo(op, F, g, b, minimizer=u, epsilon=1e-2)
    assert rep.holds
    assert abs(rep.data["delta_energy"]) <= 1e-10 * max(1.0, rep.data["energy_u"])
    assert rep.data["irregular_fraction_u_plus_v"] > rep.data["irregular_fraction_u"]


def test_nonelliptic_demo_without_kernel_field_is_unchanged(demo_setup):
    g, op, F, b, u = demo_setup
    rep = V.nonelliptic_demo(op, F, g, b, minimizer=u, amplitude=0.0, epsilon=1e-2)
    assert rep.data["energy_u_plus_v"] == rep.data["energy_u"]
    assert rep.data["irregular_fraction_u_plus_v"] == rep.data["irregular_fraction_u"]
    assert not rep.holds


def test_nonelliptic_depth_sweep_is_monotone(demo_setup):
    g, op, F, b, u = demo_setup
    fr = [V.nonelliptic_demo(op, F, g, b, minimizer=u, depth=d, epsilon=1e-2).data["irregular_fraction_u_plus_v"]
          for d in (1, 2, 3, 4)]
    assert all(a <= b for a, b in zip(fr, fr[1:]))


def test_nonelliptic_demo_rejects_elliptic():
    g = dgrid(8)
    with pytest.raises(NoKernelError):
        V.nonelliptic_demo(O.grad(2, 1), qcx.quadratic(2), g, fl.zeros(g, 1))


def test_resolved_depth():
    assert [V.resolved_depth(fl.Grid((m, m)), 0) for m in (16, 32, 64, 128)] == [2, 3, 4, 5]
