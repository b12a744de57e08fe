"""Command-line runner: config parsing, pipelines and file emission.

Usage::

    bosepair {verify-lemma,solve-hartree,solve-pairex,check-cancellation,sweep,norms}
             [--config PATH] [--set key=value ...] [--jobs K] [--out DIR]

Exit status: 0 when every check passes, 1 when an invariant or validity gate
fails, 2 for usage and configuration errors.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .commutators import verify_lemma
from .experiment import (
    NORM_NAMES,
    RunConfig,
    cancellation_check,
    ltilde_check,
    make_field,
    norm_series,
    phase_series,
    run_sweep,
    solve_trajectories,
)
from .fock import BASIS_ORDER_TAG, FockSpace
from .hartree import solve_hartree
from .lattice import GridError, PotentialError, build_potential, make_grid
from .pairex import coeff_residual, hyperbolic_residual, kernel_g, kernel_m, quotient_residual

log = logging.getLogger("bosepair")

COMMANDS = ("verify-lemma", "solve-hartree", "solve-pairex", "check-cancellation", "sweep", "norms")

DEFAULTS = {
    "grid": {"M": 4, "L": 2 * math.pi},
    "potential": {"kind": "symmetrized-product", "params": {"profile": {"name": "cos", "amplitude": 0.4}}},
    "phi0": {"kind": "trig", "params": {"cos": [1.0, 0.5, 0.2], "sin": [0.0, [0.0, 0.3]]}},
    "run": {
        "N_list": [2, 4, 8, 16],
        "T": 0.5,
        "dt": 1e-3,
        "report_every": 100,
        "norm_stride": 1,
        "norm_n_max": 10,
        "cutoff_sigmas": 6.0,
        "cutoff_extra": 4,
        "max_dim": 2_000_000,
    },
    "lemma": {"M": 2, "n_max": 8, "trials": 5, "seed": 0},
    "cancellation": {"n_max": 10, "every": 50, "ltilde_M": 3, "ltilde_n_max": 9, "ltilde_T": 0.1, "ltilde_N": 4.0},
    "tol": {
        "krylov": 1e-12,
        "coherent_tail": 1e-8,
        "state_tail": 1e-6,
        "lemma_rel": 1e-9,
        "lemma_scalar": 1e-8,
        "hartree_mass": 1e-10,
        "hartree_energy": 1e-8,
        "hyperbolic": 1e-9,
        "coeff": 1e-6,
        "quotient": 1e-6,
        "slope_per_dt": 10.0,
        "cancel_kernel": 1e-6,
        "cancel_operator": 1e-8,
        "fd_order_low": 3.0,
        "fd_order_high": 5.0,
        "ltilde": 1e-8,
        "slope_max": -0.4,
    },
    "out": {"dir": "out", "tag": ""},
}

# free-form sub-tables handed to the potential / field builders, which validate them
_OPEN_TABLES = {("potential", "params"), ("phi0", "params")}


class ConfigError(ValueError):
    pass


def _merge(base: dict, update: dict, path=()) -> dict:
    for key, val in update.items():
        where = path + (key,)
        if key not in base:
            raise ConfigError(f"unknown config key {'.'.join(where)!r}")
        if where in _OPEN_TABLES:
            if not isinstance(val, dict):
                raise ConfigError(f"{'.'.join(where)} must be a table")
            base[key] = copy.deepcopy(val)
        elif isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{'.'.join(where)} must be a table")
            _merge(base[key], val, where)
        else:
            base[key] = val
    return base


def _parse_override(item: str) -> dict:
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    out = val
    for part in reversed(key.split(".")):
        out = {part: out}
    return out


def load_config(path: str | None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be a table")
        _merge(cfg, user)
    for item in overrides:
        _merge(cfg, _parse_override(item))
    for key, val in cfg["tol"].items():
        if key != "slope_max" and not (isinstance(val, (int, float)) and val > 0):
            raise ConfigError(f"tol.{key} must be a positive number")
    return cfg


def run_config(cfg: dict) -> RunConfig:
    run, tol = cfg["run"], cfg["tol"]
    try:
        rc = RunConfig(
            M=int(cfg["grid"]["M"]),
            L=float(cfg["grid"]["L"]),
            potential={"kind": cfg["potential"]["kind"], **cfg["potential"]["params"]},
            phi0={"kind": cfg["phi0"]["kind"], **cfg["phi0"]["params"]},
            N_list=tuple(float(n) if not float(n).is_integer() else int(n) for n in run["N_list"]),
            T=float(run["T"]),
            dt=float(run["dt"]),
            report_every=int(run["report_every"]),
            norm_stride=int(run["norm_stride"]),
            norm_n_max=int(run["norm_n_max"]),
            cutoff_extra=int(run["cutoff_extra"]),
            cutoff_sigmas=float(run["cutoff_sigmas"]),
            max_dim=int(run["max_dim"]),
            tail_coherent=float(tol["coherent_tail"]),
            tail_state=float(tol["state_tail"]),
            krylov_tol=float(tol["krylov"]),
            slope_max=float(tol["slope_max"]),
        )
        # validate the builders before any long computation starts
        grid = rc.grid
        build_potential(grid, rc.potential)
        make_field(grid, rc.phi0)
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return rc


# ---------------------------------------------------------------- emission


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


class Emitter:
    def __init__(self, out_dir: Path, tag: str):
        self.dir = Path(out_dir)
        self.tag = tag
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        return self.dir / (f"{self.tag}_{name}" if self.tag else name)

    def _open(self, name: str):
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.path(name)
        self.written.append(p)
        return p

    def csv(self, name: str, columns, rows) -> Path:
        p = self._open(name)
        try:
            with p.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(columns)
                for row in rows:
                    w.writerow([_fmt(row[c]) for c in columns])
        except OSError as exc:
            raise OSError(f"cannot write {p}: {exc}") from exc
        return p

    def json(self, name: str, obj) -> Path:
        p = self._open(name)
        try:
            p.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")
        except OSError as exc:
            raise OSError(f"cannot write {p}: {exc}") from exc
        return p

    def text(self, name: str, body: str) -> Path:
        p = self._open(name)
        p.write_text(body)
        return p


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    return obj


class Checks:
    """Named pass/fail records: ``value`` compared against ``limit``."""

    def __init__(self):
        self.items: dict[str, dict] = {}

    def le(self, name, value, limit):
        self.items[name] = {"value": value, "limit": limit, "relation": "<=", "pass": bool(value <= limit)}

    def within(self, name, value, lo, hi):
        self.items[name] = {"value": value, "limit": [lo, hi], "relation": "in", "pass": bool(lo <= value <= hi)}

    def flag(self, name, ok: bool, note: str = ""):
        self.items[name] = {"value": note, "limit": None, "relation": "flag", "pass": bool(ok)}

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.items.values())


# ---------------------------------------------------------------- pipelines


def cmd_verify_lemma(cfg, rc, em, checks, jobs):
    lc, tol = cfg["lemma"], cfg["tol"]
    grid = make_grid(int(lc["M"]), rc.L)
    space = FockSpace(grid.M, int(lc["n_max"]))
    rng = np.random.default_rng(int(lc["seed"]))
    trials = []
    for n in range(int(lc["trials"])):
        phi = rng.standard_normal(grid.M) + 1j * rng.standard_normal(grid.M)
        v = build_potential(grid, {"kind": "random-symmetric", "seed": int(rng.integers(2**31))})
        rep = verify_lemma(space, grid, phi, v)
        rep["trial"] = n
        trials.append(rep)
        checks.le(f"trial{n}.max_rel_deviation", rep["max_rel_deviation"], tol["lemma_rel"])
        scale = max(1.0, abs(rep["level6_oracle_scalar_real"]))
        checks.le(f"trial{n}.level6_identity_residual", rep["level6_identity_residual"] / scale, tol["lemma_scalar"])
        checks.le(f"trial{n}.level6_scalar_imag", abs(rep["level6_oracle_scalar_imag"]) / scale, tol["lemma_scalar"])
    phi = rng.standard_normal(grid.M) + 1j * rng.standard_normal(grid.M)
    phi /= np.linalg.norm(phi)
    unit = verify_lemma(space, grid, phi, build_potential(grid, {"kind": "constant", "value": 1.0}))
    checks.le("unit_potential.level6_scalar_minus_720", abs(unit["level6_oracle_scalar_real"] - 720.0), tol["lemma_scalar"])
    checks.le("unit_potential.max_rel_deviation", unit["max_rel_deviation"], tol["lemma_rel"])
    em.json("lemma_report.json", {"trials": trials, "unit_potential": unit, "basis_order": BASIS_ORDER_TAG})
    return {}


def cmd_solve_hartree(cfg, rc, em, checks, jobs):
    grid = rc.grid
    pot = build_potential(grid, rc.potential)
    tr = solve_hartree(grid, make_field(grid, rc.phi0), pot, rc.T, rc.dt, mass_tol=math.inf)
    cols = ["t", "mass", "energy"] + [f"{p}{i}" for i in range(grid.M) for p in ("re", "im")]
    rows = []
    for t, s, m, e in zip(tr.times, tr.states, tr.mass, tr.energy):
        row = {"t": t, "mass": m, "energy": e}
        for i in range(grid.M):
            row[f"re{i}"], row[f"im{i}"] = s[i].real, s[i].imag
        rows.append(row)
    em.csv("hartree.csv", cols, rows)
    checks.le("mass_drift", tr.mass_drift(), cfg["tol"]["hartree_mass"])
    checks.le("energy_drift", tr.energy_drift(), cfg["tol"]["hartree_energy"])
    return {}


def _pair_rows(trj):
    grid, pot = trj.grid, trj.potential
    phases = phase_series(trj)
    rows = []
    for n, phi in enumerate(trj.phis):
        ps = trj.pair.state(n)
        g, m = kernel_g(grid, phi, pot), kernel_m(grid, phi, pot)
        rows.append(
            {
                "t": trj.times[n],
                "k_norm": float(np.linalg.norm(ps.k)),
                "hyperbolic_residual": hyperbolic_residual(ps.u, ps.c),
                "coeff_residual": float(np.max(np.abs(coeff_residual(ps.k, ps.kdot, g, m, ps.u, ps.c)))),
                "quotient_residual": float(np.max(np.abs(quotient_residual(ps.k, ps.kdot, g, m, ps.u, ps.c)))),
                "symmetry_defect": float(trj.pair.symmetry_defect[n]),
                "chi0": phases["chi0"][n],
                "chi1": phases["chi1"][n],
                "trace_d_imag": phases["trace_d_imag"][n],
            }
        )
    return rows


PAIR_COLUMNS = [
    "t",
    "k_norm",
    "hyperbolic_residual",
    "coeff_residual",
    "quotient_residual",
    "symmetry_defect",
    "chi0",
    "chi1",
    "trace_d_imag",
]


def cmd_solve_pairex(cfg, rc, em, checks, jobs):
    trj = solve_trajectories(rc)
    rows = _pair_rows(trj)
    em.csv("pairex.csv", PAIR_COLUMNS, rows)
    tol = cfg["tol"]
    checks.le("max_hyperbolic_residual", max(r["hyperbolic_residual"] for r in rows), tol["hyperbolic"])
    checks.le("max_coeff_residual", max(r["coeff_residual"] for r in rows), tol["coeff"])
    checks.le("max_quotient_residual", max(r["quotient_residual"] for r in rows), tol["quotient"])
    m0 = kernel_m(trj.grid, trj.phis[0], trj.potential)
    slope_err = float(np.linalg.norm(trj.pair.k[1] / rc.dt + 1j * m0))
    checks.le("initial_slope_error", slope_err, tol["slope_per_dt"] * rc.dt)
    return {"initial_slope_error": slope_err}


CANCEL_COLUMNS = [
    "t",
    "kernel_residual",
    "operator_residual_h",
    "operator_residual_2h",
    "operator_residual_richardson",
    "vacuum_expectation",
    "chi1",
]


def cmd_check_cancellation(cfg, rc, em, checks, jobs):
    cc, tol = cfg["cancellation"], cfg["tol"]
    trj = solve_trajectories(rc)
    space = FockSpace(rc.M, int(cc["n_max"]))
    n_last = len(trj.times) - 1
    idx = [n for n in range(2, n_last - 1, int(cc["every"]))] + [n_last - 2]
    rows = [cancellation_check(space, trj, n, 1, rc.krylov_tol) for n in sorted(set(idx))]
    em.csv("cancellation.csv", CANCEL_COLUMNS, rows)
    checks.le("max_kernel_residual", max(r["kernel_residual"] for r in rows), tol["cancel_kernel"])
    checks.le("max_operator_residual_richardson", max(r["operator_residual_richardson"] for r in rows), tol["cancel_operator"])
    # second-order finite differences: doubling the step multiplies the residual by ~4
    ratios = [r["operator_residual_2h"] / r["operator_residual_h"] for r in rows if r["operator_residual_h"] > 1e-10]
    if ratios:
        checks.within("min_fd_ratio", min(ratios), tol["fd_order_low"], tol["fd_order_high"])
        checks.within("max_fd_ratio", max(ratios), tol["fd_order_low"], tol["fd_order_high"])
    checks.le(
        "max_vacuum_plus_chi1", max(abs(r["vacuum_expectation"] + r["chi1"]) for r in rows), tol["cancel_operator"]
    )
    # L~ Omega identity on a separate small grid
    small = RunConfig(
        M=int(cc["ltilde_M"]),
        L=rc.L,
        potential=rc.potential,
        phi0=rc.phi0,
        N_list=rc.N_list,
        T=float(cc["ltilde_T"]),
        dt=rc.dt,
    )
    strj = solve_trajectories(small)
    lspace = FockSpace(small.M, int(cc["ltilde_n_max"]))
    lt = ltilde_check(lspace, strj.grid, strj.potential, strj.phis[-1], strj.pair.state(len(strj.times) - 1), float(cc["ltilde_N"]), rc.krylov_tol)
    lt.update({"M": small.M, "n_max": lspace.n_max, "t": float(strj.times[-1]), "N": float(cc["ltilde_N"])})
    em.json("ltilde_report.json", lt)
    checks.le("ltilde_omega_residual", lt["ltilde_omega_residual"], tol["ltilde"])
    checks.le("ltilde_quadratic_hermitian_residual", lt["quadratic_hermitian_residual"], tol["ltilde"])
    checks.le("ltilde_quadratic_on_vacuum", lt["quadratic_on_vacuum"], tol["ltilde"])
    return {}


NORM_COLUMNS = ["t", *NORM_NAMES, "squeeze_tail"]


def _norm_rows(series):
    return [{c: series[c][j] for c in NORM_COLUMNS} for j in range(len(series["t"]))]


def cmd_norms(cfg, rc, em, checks, jobs):
    trj = solve_trajectories(rc)
    series = norm_series(trj, rc.norm_n_max, rc.norm_stride, rc.krylov_tol)
    em.csv("norms.csv", NORM_COLUMNS, _norm_rows(series))
    checks.le("max_squeeze_tail", float(np.max(series["squeeze_tail"])), rc.tail_coherent)
    return {}


ESTIMATE_COLUMNS = ["N", "t", "lhs", "rhs", "f_int", "g_int", "h_int", "i_int", "chi_phase", "tail_mass", "valid"]
DIAG_COLUMNS = [
    "N",
    "t",
    "lhs",
    "rhs",
    "slack",
    "lhs_no_phase",
    "lhs_flipped_chi1",
    "coherent_tail",
    "tail_mass",
    "norm_defect",
    "n_max",
    "dim",
]


def cmd_sweep(cfg, rc, em, checks, jobs):
    rep = run_sweep(rc, jobs=jobs)
    em.csv("estimate.csv", ESTIMATE_COLUMNS, rep.rows)
    em.csv("estimate_diagnostics.csv", DIAG_COLUMNS, rep.rows)
    em.csv("norms.csv", NORM_COLUMNS, _norm_rows(rep.norms))
    valid = rep.valid_rows
    checks.flag("has_valid_rows", bool(valid), f"{len(valid)} of {len(rep.rows)} rows valid")
    worst = max((r["lhs"] - r["rhs"] - r["slack"] for r in valid), default=-math.inf)
    checks.le("max_lhs_minus_rhs_minus_slack", worst, 0.0)
    if rep.slope_defined:
        checks.le("lhs_slope", rep.slope, rc.slope_max)
    else:
        checks.flag("lhs_slope", True, "undefined: lhs vanishes")
    checks.le("max_norm_defect", rep.meta["max_norm_defect"], 1e-10)
    return {"slope": rep.slope, "slope_defined": rep.slope_defined, **rep.meta}


PIPELINES = {
    "verify-lemma": cmd_verify_lemma,
    "solve-hartree": cmd_solve_hartree,
    "solve-pairex": cmd_solve_pairex,
    "check-cancellation": cmd_check_cancellation,
    "sweep": cmd_sweep,
    "norms": cmd_norms,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bosepair",
        description="Mean-field and pair-excitation dynamics of bosons with 3-body interactions.",
    )
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", metavar="PATH", help="JSON config file (keys as in the README)")
    p.add_argument("--set", metavar="key=value", action="append", default=[], dest="overrides",
                   help="override one config key; value parsed as JSON when possible (repeatable)")
    p.add_argument("--jobs", metavar="K", type=int, default=None, help="worker processes for the N sweep")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides out.dir)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _summary_text(command, checks, extra, timings, files) -> str:
    lines = [f"bosepair {__version__} {command}", f"basis order: {BASIS_ORDER_TAG}", ""]
    for name, c in checks.items.items():
        status = "PASS" if c["pass"] else "FAIL"
        lines.append(f"{status}  {name}: {c['value']!r} {c['relation']} {c['limit']!r}")
    if extra:
        lines.append("")
        lines += [f"{k}: {v!r}" for k, v in sorted(extra.items())]
    lines.append("")
    lines += [f"time {k}: {v:.2f} s" for k, v in timings.items()]
    lines += [f"wrote {p}" for p in files]
    lines.append(f"overall: {'PASS' if checks.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.jobs is not None and args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        cfg = load_config(args.config, args.overrides)
        if args.out:
            cfg["out"]["dir"] = args.out
        rc = run_config(cfg)
    except (ConfigError, GridError, PotentialError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    em = Emitter(Path(cfg["out"]["dir"]), str(cfg["out"]["tag"]))
    checks = Checks()
    start = time.perf_counter()
    try:
        extra = PIPELINES[args.command](cfg, rc, em, checks, args.jobs)
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        checks.flag("pipeline", False, f"{type(exc).__name__}: {exc}")
        extra = {}
    timings = {"total": time.perf_counter() - start}
    summary = {
        "command": args.command,
        "version": __version__,
        "basis_order": BASIS_ORDER_TAG,
        "config": cfg,
        "tolerances": cfg["tol"],
        "checks": checks.items,
        "results": extra,
        "pass": checks.passed,
    }
    files = [str(p) for p in em.written]
    em.json("summary.json", summary)
    em.text("summary.txt", _summary_text(args.command, checks, extra, timings, files))
    print(_summary_text(args.command, checks, extra, timings, files), end="")
    return 0 if checks.passed else 1


if __name__ == "__main__":
    sys.exit(main())
