"""One test per acceptance criterion; each prints a single PASS/FAIL line."""

import math
import time

import numpy as np

from aqc import fieldlab as fl
from aqc import ineq as I
from aqc import nfunc as nf
from aqc import opsym as O
from aqc import qcx
from aqc import varmin as V


def _finish(record, index, title, checks, t0, limit):
    elapsed = time.perf_counter() - t0
    checks["runtime"] = elapsed < limit
    failed = [k for k, ok in checks.items() if not ok]
    record(index, title, not failed, f"{elapsed:.1f}s" + (f"; failed: {', '.join(failed)}" if failed else ""))
    assert not failed, failed


def test_criterion_1_nfunction_calculus(acceptance_record):
    t0 = time.perf_counter()
    c = {}
    t = np.logspace(-4, 4, 200)
    for p in (2.0, 3.0):
        psi = nf.power(p, coef=1 / p)
        bic = nf.numeric_conjugate(nf.numeric_conjugate(psi))
        c[f"biconjugate_p{p:g}"] = bool(np.allclose(bic(t), psi(t), rtol=1e-6, atol=0))
    s = np.logspace(-3, 1.5, 100)
    c["exp_pair"] = bool(np.allclose(nf.numeric_conjugate(nf.exp_nf())(s), nf.exp_conjugate()(s), rtol=1e-8, atol=0))
    c["delta2_powers_exact"] = all(nf.delta2_estimate(nf.power(p)).delta2 == 2.0 ** p for p in (2.0, 3.0, 4.0))
    c["delta2_llogl"] = abs(nf.delta2_estimate(nf.llogl()).delta2 - 4.0) <= 1e-3
    c["nabla2_llogl_unbounded"] = nf.nabla2_estimate(nf.llogl()).nabla2_unbounded
    _finish(acceptance_record, 1, "N-function calculus", c, t0, 10.0)


def test_criterion_2_symbol_analysis(acceptance_record):
    t0 = time.perf_counter()
    c = {}
    expected = {"grad": 1.0, "sym_grad": 2 ** -0.5, "dev_sym_grad": None}
    for name, sigma in expected.items():
        an = O.analyze(O.preset(name, 2))
        c[f"{name}_elliptic"] = an.elliptic and an.constant_rank
        if sigma is not None:
            c[f"{name}_sigma"] = math.isclose(an.min_singular_on_sphere, sigma, rel_tol=1e-9)
        else:
            c[f"{name}_sigma"] = an.min_singular_on_sphere > 0
    for name in ("div", "d1"):
        op = O.preset(name, 2)
        an = O.analyze(op)
        xi, v = an.witnesses[0]
        c[f"{name}_nonelliptic"] = (not an.elliptic) and \
            float(np.linalg.norm(O.tensor_a(op, v, xi))) <= 1e-12 and float(np.linalg.norm(v)) > 0.5
    c["essential_range_dim"] = O.essential_range(O.sym_grad(2)).shape[1] == 3
    _finish(acceptance_record, 2, "symbol analysis", c, t0, 5.0)


def test_criterion_3_korn(acceptance_record):
    t0 = time.perf_counter()
    c = {}
    g = fl.Grid((64, 64))
    u = fl.random_field(g, 2, seed=0)
    c["grad_ratio_one"] = all(abs(I.korn_ratio(psi, O.grad(2, 2), u).ratio - 1.0) <= 1e-14
                              for psi in (nf.power(2.0), nf.power(3.0), nf.llogl()))
    C = I.korn_search(nf.power(2.0), O.sym_grad(2), g, budget=200, seed=0).fitted_constant
    c["sym_grad_constant_in_range"] = 1.5 <= C <= 2.0
    reps = I.staircase_korn(nf.power(2.0), fl.Grid((128, 128)), frequencies=(2, 4, 8), depth=3, op=O.d1(2))
    r = [x.ratio for x in reps]
    c["staircase_above_100"] = min(r) > 100
    c["staircase_growing"] = r[0] < r[1] < r[2]
    _finish(acceptance_record, 3, f"Korn (C={C:.3f}, staircase={[round(x) for x in r]})", c, t0, 120.0)


def test_criterion_4_llogl_pipeline(acceptance_record):
    t0 = time.perf_counter()
    c = {}
    Psi, Phi = qcx.build_psi_phi(1.0)
    good = I.hardy_check(Phi, Psi)
    c["constructed_pair_finite"] = good.holds and math.isfinite(good.fitted_constant)
    bad = I.hardy_check(nf.llogl(), nf.llogl())
    c["naive_pair_divergent"] = (not bad.holds) and math.isinf(bad.fitted_constant)
    u = fl.random_field(fl.Grid((64, 64)), 2, seed=0)
    sweep = I.loglog_korn_sweep(O.sym_grad(2), 1.0, u, np.logspace(0, 3, 7))
    c["loglog_slope"] = sweep.details["log_slope"] <= 0.05
    _finish(acceptance_record, 4, f"L log L pipeline (c={good.fitted_constant:.3f}, "
            f"slope={sweep.details['log_slope']:.3g})", c, t0, 60.0)


def test_criterion_5_quasiconvexity_equivalence(acceptance_record):
    t0 = time.perf_counter()
    c = {}
    g = fl.Grid((32, 32))
    op = O.sym_grad(2)
    spans = []
    for name, phi in (("t2", nf.power(2.0)), ("t3", nf.power(3.0))):
        reps = [qcx.v_equivalence_scan(phi, op, g, 2.0, n_fields=40, seed=s) for s in (0, 1, 2)]
        c[f"{name}_two_sided"] = all(r.data["r_min"] > 0 and r.data["spread"] < 1e3 for r in reps)
        lo = min(r.data["r_min"] for r in reps)
        hi = max(r.data["r_max"] for r in reps)
        worst = max(r.data["spread"] for r in reps)
        c[f"{name}_seed_stable"] = (hi / lo) / worst < 2.0
        spans.append(f"{name}:[{lo:.3f},{hi:.3f}]")
    comp = qcx.comp_scan(samples=100_000)
    c["comp_zero_violations"] = comp.data["violations"] == 0
    _finish(acceptance_record, 5, "quasiconvexity equivalence " + " ".join(spans), c, t0, 60.0)


def test_criterion_6_minimizer(acceptance_record):
    t0 = time.perf_counter()
    c = {}
    g = fl.Grid((64, 64), boundary="dirichlet")
    x = g.coords()
    b = fl.Field(g, (x[..., 0] ** 2 - x[..., 1] ** 2)[..., None])
    u, tr = V.minimize(qcx.quadratic(2), O.grad(2, 1), g, b)
    err = float(np.max(np.abs(u.values - V.direct_solve(O.grad(2, 1), g, b).values)))
    c["oracle_match"] = err <= 1e-6
    c["trace_monotone"] = tr.monotone

    gs = fl.Grid((12, 12), boundary="dirichlet")
    rng = np.random.default_rng(0)
    worst = 0.0
    for op in (O.grad(2, 2), O.sym_grad(2), O.d1(2)):
        for F in (qcx.quadratic(op.dimW), qcx.power_integrand(op.dimW, 3.0),
                  qcx.v_integrand(nf.llogl(), op.dimW), qcx.v1_integrand(op.dimW)):
            w = fl.Field(gs, rng.standard_normal(gs.shape + (op.dimV,)))
            G = V.energy_grad(F, op, w).values
            d = rng.standard_normal(G.shape)
            d[~gs.interior_mask()] = 0.0
            eps = 1e-6
            fd = (V.energy(F, op, w + fl.Field(gs, eps * d)) - V.energy(F, op, w + fl.Field(gs, -eps * d))) / (2 * eps)
            worst = max(worst, abs(fd - np.sum(G * d)) / max(abs(fd), 1e-300))
    c["gradient_check"] = worst < 1e-5

    op = O.sym_grad(2)
    F = qcx.power_integrand(op.dimW, 3.0)
    Gr = V.reduce(F, op)
    gp = fl.Grid((16, 16))
    rel = 0.0
    for seed in range(50):
        w = fl.random_field(gp, 2, seed=seed, compact=False)
        a, b_ = V.energy(Gr, O.grad(2, 2), w), V.energy(F, op, w)
        rel = max(rel, abs(a - b_) / abs(b_))
    c["reduction_identity"] = rel <= 1e-12
    _finish(acceptance_record, 6, f"minimizer (oracle err {err:.1e}, grad err {worst:.1e}, "
            f"reduction {rel:.1e})", c, t0, 120.0)


def _elliptic_boundary(x):
    return np.stack([2 * np.sin(2 * np.pi * x[..., 0]) * x[..., 1] ** 2, np.cos(3 * x[..., 1]) * x[..., 0]], -1)


def test_criterion_7_ellipticity_and_regularity(acceptance_record):
    t0 = time.perf_counter()
    c = {}
    op = O.sym_grad(2)
    F = qcx.v_integrand(nf.power(2.0), op.dimW)
    frac = []
    for m in (32, 64):
        g = fl.Grid((m, m), boundary="dirichlet")
        u, _ = V.minimize(F, op, g, fl.from_function(g, _elliptic_boundary))
        h = g.h[0]
        frac.append(V.excess_map(u, nf.power(2.0), 10.0, [2 * h, 4 * h], 1e-2).irregular_fraction)
    c["elliptic_fraction_decreases"] = frac[1] < frac[0]

    op = O.d1(2)
    Fq = qcx.quadratic(op.dimW)
    dE, nfrac = [], []
    for m in (32, 64, 128):
        g = fl.Grid((m, m), boundary="dirichlet")
        b = fl.from_function(g, lambda x: (np.sin(np.pi * x[..., 0]) + x[..., 1] ** 2)[..., None])
        rep = V.nonelliptic_demo(op, Fq, g, b)
        dE.append(abs(rep.data["delta_energy"]))
        nfrac.append(rep.data["irregular_fraction_u_plus_v"])
    c["kernel_energy_invariant"] = max(dE) < 1e-10
    c["nonelliptic_fraction_above_0.2"] = min(nfrac) > 0.2
    _finish(acceptance_record, 7, f"ellipticity vs regularity (elliptic {frac[0]:.2f}->{frac[1]:.2f}, "
            f"non-elliptic {', '.join(f'{v:.2f}' for v in nfrac)}, max|dE| {max(dE):.1e})", c, t0, 180.0)


def test_criterion_8_rearrangement(acceptance_record):
    t0 = time.perf_counter()
    c = {}
    g = fl.Grid((128, 128))
    f = fl.random_field(g, 1, seed=0, compact=False)
    prof = fl.rearrangement(f)
    ok = True
    for phi in (nf.power(2.0), nf.llogl(), nf.power(3.0)):
        a, b = fl.integrate_phi(phi, f), prof.integrate_phi(phi)
        ok &= abs(a - b) <= 1e-12 * abs(a)
    levels = np.quantile(f.norm(), [0.1, 0.5, 0.9])
    ok &= all(np.count_nonzero(f.norm() > s) == np.count_nonzero(prof.thresholds > s) for s in levels)
    c["equimeasurable"] = bool(ok)

    m = O.multiplier(O.sym_grad(2), 0)
    f2 = fl.random_field(g, m.dim_in, seed=0, compact=False)
    c["scale_invariant"] = I.bagby_check(m, 4.0 * f2).fitted_constant == I.bagby_check(m, f2).fitted_constant
    Cs = [I.bagby_check(m, fl.random_field(g, m.dim_in, seed=s, compact=False)).fitted_constant for s in (0, 1, 2)]
    mean = float(np.mean(Cs))
    c["seed_stable"] = all(abs(x - mean) <= 0.2 * mean for x in Cs)
    _finish(acceptance_record, 8, f"rearrangement (C={', '.join(f'{x:.3f}' for x in Cs)})", c, t0, 60.0)
