"""Command-line experiment runner.

``aqc <experiment> --config <file> [--out <dir>] [--seed N]`` runs one
experiment from a JSON config and writes ``report.json`` plus CSV tables
(and binary fields where the experiment produces them).
``aqc render <report.json>`` prints a text table and writes the sweep CSV.

Exit status: 0 when the checked property holds, 2 when it is violated,
1 on usage, configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import fieldlab as fl
from . import ineq
from . import nfunc as nf
from . import opsym
from . import qcx
from . import varmin
from .errors import AqcError, ConfigError, MemoryCapError, SchemaError, UnknownPresetError
from .reports import SCHEMA_VERSION, to_jsonable

EXPERIMENTS = ("op_check", "korn", "poincare", "hardy", "bagby", "qc_scan", "minimize",
               "nonelliptic_demo", "excess")


# ---------------------------------------------------------------------------
# config helpers


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("malformed config: top level must be an object")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"malformed config: schema_version must be {SCHEMA_VERSION}")
    return cfg


def _grid(cfg, default_boundary="periodic") -> fl.Grid:
    g = dict(cfg.get("grid", {}))
    g.setdefault("shape", [64, 64])
    g.setdefault("boundary", default_boundary)
    try:
        return fl.Grid.from_dict(g)
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"malformed grid section: {exc}") from exc


def _operator(cfg, n: int) -> opsym.DiffOp:
    spec = cfg.get("operator", "grad")
    try:
        return opsym.operator_from_spec(spec, n=n)
    except (TypeError, KeyError) as exc:
        if isinstance(exc, UnknownPresetError):
            raise
        raise ConfigError(f"malformed operator section: {exc}") from exc


def _nfunction(desc, default=None) -> nf.NFunction:
    if desc is None:
        desc = default
    if isinstance(desc, str):
        desc = {"kind": desc}
    try:
        return nf.from_dict(desc)
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"malformed N-function descriptor: {exc}") from exc


def _integrand(desc, dimW: int) -> qcx.Integrand:
    if desc is None:
        desc = {"kind": "quadratic"}
    try:
        return qcx.integrand_from_dict(desc, dimW)
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"malformed integrand descriptor: {exc}") from exc


def boundary_field(grid: fl.Grid, dimV: int, desc: dict | None) -> fl.Field:
    """Boundary data from ``{"kind": "affine" | "harmonic" | "smooth", ...}``.

    ``affine`` takes ``offset`` (length dimV) and ``matrix`` (dimV x n);
    ``harmonic`` is ``x1^2 - x2^2`` in every component; ``smooth`` mixes
    trigonometric and polynomial terms per component.
    """
    desc = desc or {"kind": "smooth"}
    kind = desc.get("kind")
    x = grid.coords()
    if kind == "affine":
        off = np.asarray(desc.get("offset", np.zeros(dimV)), dtype=float)
        B = np.asarray(desc.get("matrix", np.eye(dimV, grid.n)), dtype=float)
        if off.shape != (dimV,) or B.shape != (dimV, grid.n):
            raise ConfigError("affine boundary needs offset (dimV,) and matrix (dimV, n)")
        vals = off + x @ B.T
    elif kind == "harmonic":
        vals = np.repeat((x[..., 0] ** 2 - x[..., 1] ** 2)[..., None], dimV, axis=-1)
    elif kind == "smooth":
        vals = np.stack([np.sin(np.pi * (j + 1) * x[..., 0]) + x[..., -1] ** 2 * (j + 1)
                         for j in range(dimV)], axis=-1)
    else:
        raise ConfigError(f"unknown boundary kind {kind!r}")
    return fl.Field(grid, vals * float(desc.get("scale", 1.0)))


def _table(columns, rows) -> dict:
    return {"columns": list(columns), "rows": [list(r) for r in rows]}


# ---------------------------------------------------------------------------
# experiments; each returns (holds, result dict, artifacts)


def run_op_check(cfg, seed, out):
    op = _operator(cfg, int(cfg.get("n", 2)))
    p = dict(cfg.get("params", {}))
    expect = p.pop("expect", {})
    an = opsym.analyze(op, seed=seed, sphere_samples=int(p.get("sphere_samples", 4096)))
    res = an.to_dict()
    res["essential_range_dim"] = int(opsym.essential_range(op).shape[1])
    res["operator"] = repr(op)
    holds = all(res.get(k) == v for k, v in expect.items())
    return holds, res, {}


def run_korn(cfg, seed, out):
    grid = _grid(cfg)
    op = _operator(cfg, grid.n)
    p = cfg.get("params", {})
    mode = p.get("mode", "search")
    if mode == "search":
        psi = _nfunction(cfg.get("nfunction"), {"kind": "power", "p": 2})
        rep = ineq.korn_search(psi, op, grid, budget=int(p.get("budget", 200)), seed=seed,
                               restarts=int(p.get("restarts", 4)))
        return rep.holds, rep.to_dict(), {}
    if mode == "staircase":
        psi = _nfunction(cfg.get("nfunction"), {"kind": "power", "p": 2})
        reps = ineq.staircase_korn(psi, grid, frequencies=p.get("frequencies", (2, 4, 8)),
                                   depth=int(p.get("depth", 3)), op=op)
        rows = [(r.details["frequency"], r.ratio) for r in reps]
        ratios = [r[1] for r in rows]
        grows = all(b > a for a, b in zip(ratios, ratios[1:]))
        return grows, {"reports": [r.to_dict() for r in reps], "ratios_increasing": grows,
                       "table": _table(["frequency", "ratio"], rows)}, {}
    if mode == "sweep":
        rows = []
        for pw in p.get("powers", [2, 3, 4]):
            rep = ineq.korn_search(nf.power(float(pw)), op, grid, budget=int(p.get("budget", 200)),
                                   seed=seed, restarts=int(p.get("restarts", 4)))
            rows.append((float(pw), rep.fitted_constant))
        holds = all(math.isfinite(r[1]) for r in rows)
        return holds, {"table": _table(["p", "fitted_constant"], rows)}, {}
    raise ConfigError(f"unknown korn mode {mode!r}")


def run_poincare(cfg, seed, out):
    grid = _grid(cfg)
    op = _operator(cfg, grid.n)
    phi = _nfunction(cfg.get("nfunction"), {"kind": "power", "p": 2})
    p = cfg.get("params", {})
    if p.get("field", "random") == "divergence_free":
        u = ineq.divergence_free_field(grid, seed=seed)
    else:
        u = fl.random_field(grid, op.dimV, seed=seed, band=int(p.get("band", 3)))
    rep = ineq.poincare_ratio(phi, op, u)
    return rep.holds, rep.to_dict(), {}


def run_hardy(cfg, seed, out):
    p = cfg.get("params", {})
    if p.get("pair", "naive") == "constructed":
        Psi, Phi = qcx.build_psi_phi(float(p.get("M", 1.0)), float(p.get("z0_norm", 0.0)),
                                     float(p.get("pi_norm", 1.0)),
                                     _nfunction(cfg.get("nfunction"), {"kind": "llogl"}))
    else:
        Phi = _nfunction(p.get("Phi", cfg.get("nfunction")), {"kind": "llogl"})
        Psi = _nfunction(p.get("Psi", cfg.get("nfunction")), {"kind": "llogl"})
    t = np.logspace(float(p.get("log_t_min", -6)), float(p.get("log_t_max", 6)), int(p.get("points", 1000)))
    rep = ineq.hardy_check(Phi, Psi, t, growth_tol=float(p.get("growth_tol", 0.05)))
    d = rep.to_dict()
    det = d.pop("details")
    rows = list(zip(det.pop("t"), det.pop("c1"), det.pop("c2")))
    d["diagnostics"] = det
    d["table"] = _table(["t", "c1", "c2"], rows)
    return rep.holds, d, {}


def run_bagby(cfg, seed, out):
    grid = _grid(cfg)
    p = cfg.get("params", {})
    m_spec = p.get("multiplier", "identity")
    if m_spec == "identity":
        m = opsym.Multiplier.identity(int(p.get("codim", 1)))
    else:
        m = opsym.multiplier(_operator(cfg, grid.n), int(m_spec.get("component", 0)))
    f = fl.random_field(grid, m.dim_in, seed=seed, band=int(p.get("band", 3)), compact=bool(p.get("compact", False)))
    rep = ineq.bagby_check(m, f)
    d = rep.to_dict()
    det = d.pop("details")
    C = rep.fitted_constant
    rows = [(t, g, C * r) for t, g, r in zip(det.get("t", []), det.get("g_star", []), det.get("rhs", []))]
    d["table"] = _table(["t", "g_star", "C_rhs"], rows)
    return rep.holds, d, {}


def run_qc_scan(cfg, seed, out):
    grid = _grid(cfg)
    op = _operator(cfg, grid.n)
    phi = _nfunction(cfg.get("nfunction"), {"kind": "power", "p": 2})
    p = cfg.get("params", {})
    rep = qcx.v_equivalence_scan(phi, op, grid, M=float(p.get("M", 1.0)), n_fields=int(p.get("n_fields", 40)),
                                 amplitudes=tuple(p.get("amplitudes", (0.1, 50.0))), seed=seed,
                                 band=int(p.get("band", 3)))
    d = dict(rep.data)
    rows = d.pop("rows")
    d["table"] = _table(["amplitude", "z0_norm", "ratio"], [(r["amplitude"], r["z0_norm"], r["ratio"]) for r in rows])
    return rep.holds, d, {}


def _minimize_setup(cfg, seed):
    grid = _grid(cfg, "dirichlet")
    op = _operator(cfg, grid.n)
    F = _integrand(cfg.get("integrand"), op.dimW)
    b = boundary_field(grid, op.dimV, cfg.get("boundary"))
    p = dict(cfg.get("params", {}))
    opts = varmin.MinimizeOptions(max_iters=int(p.get("max_iters", 5000)), grad_tol=float(p.get("grad_tol", 1e-10)),
                                  history_depth=int(p.get("history_depth", 10)), seed=seed)
    return grid, op, F, b, opts, p


def run_minimize(cfg, seed, out):
    grid, op, F, b, opts, p = _minimize_setup(cfg, seed)
    u, trace = varmin.minimize(F, op, grid, b, opts)
    res = trace.to_dict()
    res["energy"] = varmin.energy(F, op, u)
    holds = trace.monotone and trace.status != "max_iters"
    return holds, res, {"field": u, "trace": trace}


def run_nonelliptic_demo(cfg, seed, out):
    grid, op, F, b, opts, p = _minimize_setup(cfg, seed)
    rep = varmin.nonelliptic_demo(op, F, grid, b, depth=p.get("depth"), amplitude=float(p.get("amplitude", 1.0)),
                                  epsilon=float(p.get("epsilon", 1.0)), opts=opts)
    return rep.holds, rep.data, {}


def run_excess(cfg, seed, out):
    grid, op, F, b, opts, p = _minimize_setup(cfg, seed)
    u, trace = varmin.minimize(F, op, grid, b, opts)
    h = float(np.min(grid.h))
    radii = [c * h for c in p.get("radii_cells", [2, 4])]
    phi = F.growth or nf.power(2.0)
    em = varmin.excess_map(u, phi, float(p.get("M_tilde", math.inf)), radii, float(p.get("epsilon", 1e-2)))
    res = {"irregular_fraction": em.irregular_fraction, "radii": radii, "epsilon": em.epsilon,
           "minimize": trace.to_dict()}
    limit = float(p.get("max_irregular_fraction", 1.0))
    return em.irregular_fraction <= limit, res, {"excess": em, "field": u}


RUNNERS = {name: globals()[f"run_{name}"] for name in EXPERIMENTS}


# ---------------------------------------------------------------------------
# output


def _write_table(path: Path, table: dict | None) -> None:
    table = table or {"columns": [], "rows": []}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(table["columns"])
        for row in table["rows"]:
            w.writerow([repr(float(v)) if isinstance(v, (int, float)) else v for v in row])


def report_bytes(report: dict) -> bytes:
    return (json.dumps(to_jsonable(report), sort_keys=True, indent=2) + "\n").encode()


def run(experiment: str, config_path, out=None, seed=None) -> int:
    """Run one experiment; returns the exit status."""
    cfg = load_config(config_path)
    exp = cfg.get("experiment", experiment)
    if exp != experiment:
        raise ConfigError(f"config is for experiment {exp!r}, not {experiment!r}")
    if experiment not in RUNNERS:
        raise ConfigError(f"unknown experiment {experiment!r}; known: {list(EXPERIMENTS)}")
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    out = Path(out or cfg.get("output_dir") or f"aqc_{experiment}")
    out.mkdir(parents=True, exist_ok=True)
    holds, result, artifacts = RUNNERS[experiment](cfg, seed, out)
    table = result.pop("table", None) if isinstance(result, dict) else None
    report = {
        "schema_version": SCHEMA_VERSION,
        "experiment": experiment,
        "seed": seed,
        "config": cfg,
        "holds": bool(holds),
        "result": result,
        "table": table,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    (out / "report.json").write_bytes(report_bytes(report))
    if table is not None:
        _write_table(out / "table.csv", table)
    if "field" in artifacts:
        fl.save_field(out / "field.aqcf", artifacts["field"])
    if "trace" in artifacts:
        artifacts["trace"].to_csv(out / "trace.csv")
    if "excess" in artifacts:
        artifacts["excess"].to_csv(out / "excess.csv")
    return 0 if holds else 2


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def render(report_path, out=None, stream=None) -> str:
    """Text table of the scalar results; writes ``plot_data.csv`` into ``out`` (default: the report directory)."""
    stream = stream or sys.stdout
    try:
        with open(report_path) as fh:
            rep = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read report {report_path}: {exc}") from exc
    if not isinstance(rep, dict) or rep.get("schema_version") != SCHEMA_VERSION or \
            not {"experiment", "holds", "result"} <= rep.keys():
        raise SchemaError(f"report schema mismatch (expected schema_version {SCHEMA_VERSION})")
    lines = [f"experiment  {rep.get('experiment')}", f"seed        {rep.get('seed')}",
             f"holds       {rep.get('holds')}"]
    result = rep.get("result") or {}
    for k in sorted(result):
        v = result[k]
        if isinstance(v, (int, float, str, bool)) or v is None:
            lines.append(f"{k:<28}{_fmt(v)}")
    table = rep.get("table")
    if table and table.get("rows"):
        cols = table["columns"]
        lines.append("")
        lines.append("  ".join(f"{c:>14}" for c in cols))
        for row in table["rows"]:
            lines.append("  ".join(f"{_fmt(v):>14}" for v in row))
    text = "\n".join(lines) + "\n"
    stream.write(text)
    out = Path(out) if out else Path(report_path).parent
    out.mkdir(parents=True, exist_ok=True)
    _write_table(out / "plot_data.csv", table)
    return text


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aqc", description="Operator-functional experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="override the config seed")
    rp = sub.add_parser("render", help="render a report.json as text and CSV")
    rp.add_argument("report")
    rp.add_argument("--out", help="directory for plot_data.csv")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        if args.command == "render":
            render(args.report, args.out)
            return 0
        return run(args.command, args.config, args.out, args.seed)
    except UnknownPresetError as exc:
        print(f"aqc: unknown preset: {exc}", file=sys.stderr)
    except MemoryCapError as exc:
        print(f"aqc: memory cap exceeded: {exc}", file=sys.stderr)
    except SchemaError as exc:
        print(f"aqc: schema mismatch: {exc}", file=sys.stderr)
    except ConfigError as exc:
        print(f"aqc: {exc}", file=sys.stderr)
    except AqcError as exc:
        print(f"aqc: error: {type(exc).__name__}: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"aqc: I/O error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
