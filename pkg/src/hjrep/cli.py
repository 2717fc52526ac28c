"""Batch front-end: ``hjrep <subcommand> --config <path> [--out <dir>] [--seed <u64>]``.

The config is an INI file. Sections and keys (defaults in brackets):

``[model]``       ``name`` [quadratic]; remaining keys are model parameters.
``[terminal]``    ``name`` [quadratic]; remaining keys are cost parameters.
``[problem]``     ``horizon`` [1.0], ``radius`` M [1.0].
``[grid]``        ``N`` [32], ``x_lo`` [-2], ``x_hi`` [2], ``hx`` [1/64],
                  ``instance_t`` [0, 0.5], ``instance_x`` [-1, 0, 1].
``[conjugate]``   ``x_values`` [2], ``v_step`` [0.01].
``[represent]``   ``pairs`` [200], ``radius`` [2], ``extra_samples`` [200],
                  ``residual_x`` [5], ``residual_p`` [5], ``v_step`` [1e-3].
``[value]``       ``pairs`` [1000], ``starts`` [4], ``control_starts`` [2], ``control_maxfun`` [15].
``[stability]``   ``shifts`` [1, 2, 4, 8].
``[invariance]``  ``trajectories`` [100], ``x_lo`` [-4], ``x_hi`` [4], ``witness_drop`` [0.05].
``[tolerances]``  ``conjugate`` [1e-6], ``equality_rel`` [0.02], ``fd_abs`` [0.05],
                  ``lipschitz_slack`` [0.05], ``extra`` [1e-6], ``residual`` [1e-3],
                  ``stability`` [1e-3], ``invariance`` [1e-2], ``regularity_fraction`` [0.01].
``[run]``         ``seed`` [0], ``out`` [results].

Exit status: 0 when every audit passes, 1 when some audit fails (failing
records go to stderr), 2 on usage or configuration errors.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from .hamiltonian import banded_interval, builtin, builtin_names, conjugate, conjugate_numeric, domain_interval
from .representation import (
    AuditRecord, anchor_box_radius, banded_grid, extra_property_audit, growth_audit, lipschitz_audit,
    parameterize_many, representation_residual, shift_equivariance_gap,
)
from .tube_invariance import (
    Tube, invariance_audit, invariance_records, tangency_probe, tangency_threshold, tight_direction,
)
from .value_function import (
    control_bound_audit, equality_audit, regularity_audit, regularity_constants, shift_identity_error,
    solve_hj_fd, solve_variational, terminal_cost, terminal_cost_names, value_lower_bound,
    value_stability_audit,
)

SCHEMA_VERSION = 1
SUBCOMMANDS = ("conjugate-table", "represent", "value", "stability", "invariance")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


# ---------------------------------------------------------------------------
# configuration


def _floats(text: str) -> list[float]:
    return [float(s) for s in text.replace(";", ",").split(",") if s.strip()]


def _param(value: str):
    try:
        return float(value)
    except ValueError:
        return value


class ExperimentConfig:
    """Parsed and validated experiment configuration."""

    def __init__(self, parser: configparser.ConfigParser, seed: int | None = None, out: str | None = None):
        self.parser = parser
        get = parser.get
        self.model_name = get("model", "name", fallback="quadratic")
        self.model_params = {k: _param(v) for k, v in parser.items("model") if k != "name"} \
            if parser.has_section("model") else {}
        self.cost_name = get("terminal", "name", fallback="quadratic")
        self.cost_params = {k: v for k, v in parser.items("terminal") if k != "name"} \
            if parser.has_section("terminal") else {}
        self.T = parser.getfloat("problem", "horizon", fallback=1.0)
        self.M = parser.getfloat("problem", "radius", fallback=1.0)
        self.N = parser.getint("grid", "N", fallback=32)
        self.x_lo = parser.getfloat("grid", "x_lo", fallback=-2.0)
        self.x_hi = parser.getfloat("grid", "x_hi", fallback=2.0)
        self.hx = parser.getfloat("grid", "hx", fallback=1 / 64)
        self.instance_t = _floats(get("grid", "instance_t", fallback="0, 0.5"))
        self.instance_x = _floats(get("grid", "instance_x", fallback="-1, 0, 1"))
        self.seed = int(seed) if seed is not None else parser.getint("run", "seed", fallback=0)
        self.out = Path(out if out is not None else get("run", "out", fallback="results"))
        self.tol = {k: parser.getfloat("tolerances", k, fallback=v) for k, v in {
            "conjugate": 1e-6, "equality_rel": 0.02, "fd_abs": 5e-2, "lipschitz_slack": 0.05, "extra": 1e-6,
            "residual": 1e-3, "stability": 1e-3, "invariance": 1e-2, "regularity_fraction": 0.01}.items()}
        self.validate()

    def section(self, name: str) -> dict:
        return dict(self.parser.items(name)) if self.parser.has_section(name) else {}

    def getfloat(self, section, key, default):
        return self.parser.getfloat(section, key, fallback=default)

    def getint(self, section, key, default):
        return self.parser.getint(section, key, fallback=default)

    def validate(self):
        if self.model_name not in builtin_names():
            raise ConfigError(f"unknown model {self.model_name!r}")
        if self.cost_name not in terminal_cost_names():
            raise ConfigError(f"unknown terminal cost {self.cost_name!r}")
        if not self.T > 0:
            raise ConfigError("horizon must be positive")
        if any(not v > 0 for v in self.tol.values()):
            raise ConfigError("tolerances must be positive")
        if self.N < 2 or self.hx <= 0 or self.x_hi <= self.x_lo:
            raise ConfigError("grid sizes must be >= 2 and ranges nonempty")
        if not self.instance_t or not self.instance_x:
            raise ConfigError("instance grid is empty")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def model(self):
        return builtin(self.model_name, **self.model_params)

    def cost(self):
        return terminal_cost(self.cost_name, **self.cost_params)

    def echo(self) -> str:
        """Normalized config text with the effective seed; input to the config hash."""
        cp = configparser.ConfigParser()
        cp.optionxform = str
        for sec in sorted(self.parser.sections()):
            cp.add_section(sec)
            for k, v in sorted(self.parser.items(sec)):
                cp.set(sec, k, v)
        if not cp.has_section("run"):
            cp.add_section("run")
        cp.set("run", "seed", str(self.seed))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue().replace("\r\n", "\n")

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.echo().encode()).hexdigest()[:16]


def load_config(path, seed=None, out=None) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(str(exc)) from exc
    try:
        return ExperimentConfig(parser, seed, out)
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def write_csv(path: Path, schema: str, columns, rows) -> None:
    """CSV with LF line ends; the first line names the schema and its version."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# schema: {schema}/v{SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _json_safe(v):
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v) or math.isinf(v):
            return _fmt(v)
        return v
    return v


def write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_json_safe(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def audit_json(records, config_hash: str) -> list[dict]:
    return [{"name": r.name, "bound": r.bound, "observed": r.observed, "pass": bool(r.passed),
             "config_hash": config_hash} for r in records]


# ---------------------------------------------------------------------------
# subcommands


def run_conjugate_table(cfg: ExperimentConfig):
    model = cfg.model()
    xs = _floats(cfg.section("conjugate").get("x_values", "2"))
    step = cfg.getfloat("conjugate", "v_step", 0.01)
    rows = []
    worst = 0.0
    outside_ok = True
    for x in xs:
        lo, hi = domain_interval(model, 0.0, x)
        blo, bhi = banded_interval(lo, hi)
        k0, k1 = math.ceil(blo / step), math.floor(bhi / step)
        vs = step * np.arange(k0, k1 + 1) if k1 >= k0 else np.array([0.5 * (lo + hi)])
        num = np.asarray(conjugate_numeric(model, 0.0, x, vs), dtype=float)
        closed = np.asarray(conjugate(model, 0.0, x, vs, "closed"), dtype=float) \
            if model.closed_conjugate is not None else np.full(vs.shape, np.nan)
        delta = np.abs(num - closed)
        if model.closed_conjugate is not None and delta.size:
            worst = max(worst, float(np.nanmax(delta)))
        for v, a, b, d in zip(vs, num, closed, delta):
            rows.append({"x": x, "v": v, "numeric": a, "closed": b, "delta": d})
        span = max(hi - lo, 1.0)
        outside = np.array([lo - 0.25 * span, hi + 0.25 * span])
        outside_ok &= bool(np.all(np.isinf(np.asarray(conjugate_numeric(model, 0.0, x, outside)))))
    records = [AuditRecord("conjugate_closed_form", cfg.tol["conjugate"], worst, worst <= cfg.tol["conjugate"],
                           len(rows)),
               AuditRecord("conjugate_outside_domain", 0.0, 0.0 if outside_ok else 1.0, outside_ok, 2 * len(xs))]
    write_csv(cfg.out / "conjugate_table.csv", "conjugate-table", ["x", "v", "numeric", "closed", "delta"], rows)
    return records, {}


def run_represent(cfg: ExperimentConfig):
    model = cfg.model()
    if model.n != 1:
        raise ConfigError("represent runs for one-dimensional models")
    sec = cfg.section("represent")
    pairs = int(sec.get("pairs", 200))
    radius = float(sec.get("radius", 2.0))
    n_extra = int(sec.get("extra_samples", 200))
    rng = np.random.default_rng(cfg.seed)
    box = anchor_box_radius(model, [0.0, cfg.T], radius)
    rows = []
    extra_worst = 0.0
    growth_bad = 0
    evaluated = 0
    for t in cfg.instance_t:
        for x in cfg.instance_x:
            lo, hi = domain_interval(model, t, x)
            blo, bhi = banded_interval(lo, hi)
            v = rng.uniform(blo, bhi, n_extra) if bhi > blo else np.full(n_extra, lo)
            rec = extra_property_audit(model, t, x, np.column_stack([v, rng.exponential(1.0, n_extra)]))
            extra_worst = max(extra_worst, rec.observed)
            anchors = rng.uniform(-1, 1, (16, 2)) * box * 10.0 ** rng.uniform(-3, 0, (16, 1))
            e = parameterize_many(model, t, x, anchors)
            g = growth_audit(model, t, x, anchors, e)
            growth_bad += int(g.observed)
            evaluated += g.samples
            for a, ea in zip(anchors, e):
                rows.append({"t": t, "x": x, "a_v": a[0], "a_eta": a[1], "f": ea[0], "l": ea[1]})
    lip = lipschitz_audit(model, radius, pairs, cfg.seed, cfg.T, box)
    nres_x = int(sec.get("residual_x", 5))
    nres_p = int(sec.get("residual_p", 5))
    res = 0.0
    for x in np.linspace(-radius, radius, nres_x):
        grid = banded_grid(model, 0.0, x, float(sec.get("v_step", 1e-3)))
        for p in np.linspace(-3, 3, nres_p):
            res = max(res, representation_residual(model, 0.0, x, p, grid))
    records = [AuditRecord("extra_property", cfg.tol["extra"], extra_worst, extra_worst <= cfg.tol["extra"]),
               AuditRecord("growth", 0.0, float(growth_bad), growth_bad == 0, evaluated),
               AuditRecord("lipschitz", lip.bound * (1 + cfg.tol["lipschitz_slack"]), lip.observed,
                           lip.observed <= lip.bound * (1 + cfg.tol["lipschitz_slack"]), pairs, cfg.seed),
               AuditRecord("representation_residual", cfg.tol["residual"], res, res <= cfg.tol["residual"])]
    write_csv(cfg.out / "represent.csv", "represent", ["t", "x", "a_v", "a_eta", "f", "l"], rows)
    return records, {}


def _instances(cfg):
    return [(t, x) for t in cfg.instance_t for x in cfg.instance_x if t <= cfg.T]


def _field(cfg, model, g, hx=None, x_lo=None, x_hi=None):
    return solve_hj_fd(model, g, T=cfg.T, x_lo=cfg.x_lo if x_lo is None else x_lo,
                       x_hi=cfg.x_hi if x_hi is None else x_hi, hx=cfg.hx if hx is None else hx)


def run_value(cfg: ExperimentConfig):
    model, g = cfg.model(), cfg.cost()
    field = _field(cfg, model, g)
    rows, records = equality_audit(model, g, _instances(cfg), T=cfg.T, N=cfg.N, seed=cfg.seed, field=field,
                                   tol_rel=cfg.tol["equality_rel"], tol_fd=cfg.tol["fd_abs"],
                                   starts=cfg.getint("value", "starts", 4),
                                   control_starts=cfg.getint("value", "control_starts", 2),
                                   control_maxfun=cfg.getint("value", "control_maxfun", 15))
    consts = regularity_constants(model, g, cfg.M, cfg.T)
    inside = [r for r in rows if abs(r["x0"]) <= cfg.M]
    if inside:
        records.append(control_bound_audit(inside, consts))
    lb = value_lower_bound(model, g, cfg.M, cfg.T)
    low = min((r["V_var"] for r in inside), default=math.inf)
    records.append(AuditRecord("value_lower_bound", lb, low, low >= lb, len(inside)))
    records.append(regularity_audit(model, g, cfg.M, field, T=cfg.T, pairs=cfg.getint("value", "pairs", 1000),
                                    seed=cfg.seed, max_fraction=cfg.tol["regularity_fraction"],
                                    refine=lambda: _field(cfg, model, g, hx=cfg.hx / 2)))
    columns = ["t0", "x0", "V_var", "V_ctrl", "V_fd", "sup_a", "gap_ctrl", "gap_fd"]
    write_csv(cfg.out / "value.csv", "value", columns, rows)
    return records, {}


def run_stability(cfg: ExperimentConfig):
    model, g = cfg.model(), cfg.cost()
    shifts = [int(s) for s in _floats(cfg.section("stability").get("shifts", "1, 2, 4, 8"))]
    base = _field(cfg, model, g)
    t0, x0 = cfg.instance_t[0], cfg.instance_x[0]
    _, v_base = solve_variational(model, g, t0, x0, max(cfg.N, 8), T=cfg.T, starts=4, seed=cfg.seed)
    rows = []
    fields = []
    worst_id = 0.0
    for i in shifts:
        other = builtin("shifted", base=model, delta=1.0 / i)
        f_i = _field(cfg, other, g)
        fields.append(f_i)
        err_fd = shift_identity_error(base, f_i, 1.0 / i, cfg.T)
        _, v_i = solve_variational(other, g, t0, x0, max(cfg.N, 8), T=cfg.T, starts=4, seed=cfg.seed)
        err_var = abs(v_i - (v_base - (cfg.T - t0) / i))
        worst_id = max(worst_id, err_fd, err_var)
        rows.append({"i": i, "delta": 1.0 / i, "identity_error_fd": err_fd, "identity_error_var": err_var,
                     "V_var": v_i})
    # the sequence should approach the base value, so list the gaps from the largest shift down
    order = np.argsort([1.0 / i for i in shifts])[::-1]
    stab = value_stability_audit(base, [fields[j] for j in order], tol=1.0 / max(shifts) * cfg.T * 1.001,
                                 x_range=(cfg.x_lo, cfg.x_hi))
    anchors = np.random.default_rng(cfg.seed).normal(size=(32, 2)) * 3.0
    eq = shift_equivariance_gap(model, 0.5, cfg.instance_t, cfg.instance_x, anchors)
    records = [AuditRecord("shift_identity", cfg.tol["stability"], worst_id, worst_id <= cfg.tol["stability"],
                           len(shifts)),
               stab,
               AuditRecord("representation_shift_equivariance", 1e-6, eq, eq <= 1e-6)]
    write_csv(cfg.out / "stability.csv", "stability",
              ["i", "delta", "identity_error_fd", "identity_error_var", "V_var"], rows)
    return records, {}


def run_invariance(cfg: ExperimentConfig):
    model, g = cfg.model(), cfg.cost()
    sec = cfg.section("invariance")
    K = int(sec.get("trajectories", 100))
    field = _field(cfg, model, g, x_lo=float(sec.get("x_lo", -4.0)), x_hi=float(sec.get("x_hi", 4.0)))
    tube = Tube(field)
    report = invariance_audit(model, g, tube, K, cfg.seed, T=cfg.T, M=cfg.M, N=cfg.N,
                              eps_inv=cfg.tol["invariance"])
    records = invariance_records(report)
    # tangency at a boundary point: best graph direction passes, a lowered one must fail clearly
    t, x = 0.25 * cfg.T, 0.5 * cfg.M
    u = -field(t, x)
    lo, hi = domain_interval(model, t, x)
    blo, bhi = banded_interval(lo, hi)
    vs = np.linspace(blo, bhi, 401) if bhi > blo else np.array([lo])
    tight = tight_direction(model, tube, t, x, vs)
    best = tangency_probe(model, tube, t, (x, u), tight[None])[0]
    drop = float(sec.get("witness_drop", 0.05))
    witness = tangency_probe(model, tube, t, (x, u), tight[None] - [0.0, drop])[0]
    thr = tangency_threshold(tube)
    records.append(AuditRecord("tangency_best_direction", thr, best.min_ratio, best.passed))
    records.append(AuditRecord("tangency_witness_factor", 10.0, witness.min_ratio / thr,
                               witness.min_ratio >= 10 * thr))
    summary = {"trajectories": report["trajectories"], "min_margin": report["min_margin"],
               "failures": report["failures"], "seed": report["seed"]}
    write_json(cfg.out / "invariance_report.json", summary)
    return records, summary


DISPATCH = {
    "conjugate-table": run_conjugate_table,
    "represent": run_represent,
    "value": run_value,
    "stability": run_stability,
    "invariance": run_invariance,
}


def run(subcommand: str, cfg: ExperimentConfig) -> int:
    """Run one subcommand, write artifacts under ``cfg.out`` and return the exit code."""
    if subcommand not in DISPATCH:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    cfg.out.mkdir(parents=True, exist_ok=True)
    records, _ = DISPATCH[subcommand](cfg)
    tag = subcommand.replace("-", "_")
    with open(cfg.out / "config_echo.ini", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(cfg.echo())
    write_json(cfg.out / f"{tag}_audits.json", audit_json(records, cfg.config_hash))
    failing = [r for r in records if not r.passed]
    if failing:
        sys.stderr.write(json.dumps(_json_safe(audit_json(failing, cfg.config_hash)), indent=2) + "\n")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hjrep", description="Audits for value functions and epigraph parameterizations.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="INI experiment configuration")
    p.add_argument("--out", default=None, help="output directory (overrides [run] out)")
    p.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed (overrides [run] seed)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = load_config(args.config, args.seed, args.out)
        return run(args.subcommand, cfg)
    except ConfigError as exc:
        sys.stderr.write(f"hjrep: configuration error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
