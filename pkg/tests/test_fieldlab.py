import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aqc import fieldlab as fl
from aqc import nfunc as nf
from aqc import opsym as O
from aqc.errors import DimensionMismatchError, MemoryCapError, UnsupportedBoundaryError


def test_grid_geometry():
    g = fl.Grid((8, 16), extent=(2.0, 1.0))
    assert np.allclose(g.h, [0.25, 1 / 16])
    assert g.cell_volume == pytest.approx(0.25 / 16)
    assert g.volume == pytest.approx(2.0)
    assert g.coords().shape == (8, 16, 2)
    assert g.refine().shape == (16, 32)
    assert fl.Grid.from_dict(g.to_dict()) == g


def test_dirichlet_layer_mask():
    g = fl.Grid((8, 8), boundary="dirichlet", layer=2)
    assert g.interior_mask().sum() == 16


def test_memory_cap(monkeypatch):
    monkeypatch.setenv("AQC_MAX_CELLS", "100")
    with pytest.raises(MemoryCapError):
        fl.Grid((11, 10))


@pytest.mark.parametrize("boundary", ["periodic", "dirichlet"])
def test_differences_are_exact_on_affine_fields(boundary):
    g = fl.Grid((16, 12), boundary=boundary)
    if boundary == "periodic":
        u = fl.Field(g, np.full((16, 12, 1), 3.0))
        assert np.max(np.abs(fl.gradient_fd(u))) == 0.0
        return
    B = np.array([[1.5, -2.0], [0.25, 3.0]])
    u = fl.from_function(g, lambda x: x @ B.T + 1.0)
    jac = fl.gradient_fd(u)
    assert np.allclose(jac, np.broadcast_to(B, jac.shape), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["periodic", "dirichlet"]),
       st.sampled_from(["grad", "sym_grad", "dev_sym_grad", "div", "d1"]))
def test_discrete_adjoint_identity(seed, boundary, name):
    op = O.preset(name, 2)
    g = fl.Grid((10, 14), boundary=boundary)
    rng = np.random.default_rng(seed)
    u = fl.Field(g, rng.standard_normal((10, 14, op.dimV)))
    s = rng.standard_normal((10, 14, op.dimW))
    lhs = np.sum(fl.apply_op_fd(op, u).values * s)
    rhs = np.sum(u.values * fl.apply_op_fd_adjoint(op, s, g))
    assert lhs == pytest.approx(rhs, rel=1e-11, abs=1e-11)


def test_spectral_derivative_exact_for_trig_polynomial():
    g = fl.Grid((32, 32))
    u = fl.from_function(g, lambda x: np.sin(2 * np.pi * 3 * x[..., 0]) * np.cos(2 * np.pi * x[..., 1]))
    d = fl.derivative_spectral(u, 0)
    x = g.coords()
    ref = 6 * np.pi * np.cos(6 * np.pi * x[..., 0]) * np.cos(2 * np.pi * x[..., 1])
    assert np.max(np.abs(d.values[..., 0] - ref)) < 1e-11


def test_spectral_ops_need_periodic_grid():
    g = fl.Grid((8, 8), boundary="dirichlet")
    with pytest.raises(UnsupportedBoundaryError):
        fl.derivative_spectral(fl.zeros(g, 1), 0)


def test_operator_dimension_mismatch():
    g = fl.Grid((8, 8))
    with pytest.raises(DimensionMismatchError):
        fl.apply_op_fd(O.sym_grad(2), fl.zeros(g, 1))


def test_rearrangement_is_equimeasurable():
    g = fl.Grid((64, 64))
    f = fl.random_field(g, 2, seed=4, compact=False)
    fs = fl.rearrangement(f)
    vals = f.norm().ravel()
    for lam in np.quantile(vals, [0.0, 0.1, 0.5, 0.9, 0.999]):
        assert np.count_nonzero(vals > lam) * g.cell_volume == pytest.approx(
            np.count_nonzero(fs.thresholds > lam) * fs.cell_measure, abs=0.0)
    for phi in (nf.power(2.0), nf.power(3.0), nf.llogl()):
        a, b = fl.integrate_phi(phi, f), fs.integrate_phi(phi)
        assert abs(a - b) <= 1e-12 * abs(a)
    assert np.all(np.diff(fs.thresholds) <= 0)


def test_random_field_is_deterministic_and_compact():
    g = fl.Grid((48, 48))
    a = fl.random_field(g, 2, seed=7)
    b = fl.random_field(g, 2, seed=7)
    assert np.array_equal(a.values, b.values)
    assert fl.is_compactly_supported(a, cells=2)
    assert not fl.is_compactly_supported(fl.random_field(g, 2, seed=7, compact=False), cells=2)


def test_binary_roundtrip(tmp_path):
    g = fl.Grid((6, 5), extent=(1.0, 2.0), boundary="dirichlet")
    f = fl.random_field(g, 3, seed=1, compact=False)
    fl.save_field(tmp_path / "f.aqcf", f)
    back = fl.load_field(tmp_path / "f.aqcf")
    assert back.grid == g and np.array_equal(back.values, f.values)


def test_csv_export(tmp_path):
    g = fl.Grid((4, 3))
    f = fl.from_function(g, lambda x: x[..., :1] + 2 * x[..., 1:])
    fl.export_csv(tmp_path / "f.csv", f)
    data = np.loadtxt(tmp_path / "f.csv", delimiter=",", skiprows=1)
    assert data.shape == (12, 3)
    assert np.allclose(data[:, 2], data[:, 0] + 2 * data[:, 1])
