"""Command-line front end.

Subcommands: ``interval``, ``model1d``, ``peak``, ``sweep``, ``fit``, ``report``.
Runs are driven by a TOML document with the sections ``[params]``,
``[grid]``, ``[solver]``, ``[sweep]``, ``[interval]``, ``[model1d]`` and
``[peak]``; every key has a default and unknown keys are rejected.

Exit status: 0 when every requested check passes, 1 on configuration
errors, 2 when a solve did not converge (partial artifacts are kept) and 3
when a check fails.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import jsonschema
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, asympt, metric3d
from .eigensolve import SolverError
from .grid1d import Domain, ModelPotentialSpec, default_grid, model_eigenvalues, reference_eigenvalues
from .metric3d import FormKind, PeakParams
from .plots import Series, loglog_svg
from .secular import IntervalRobinSpec, interval_eigenvalue

log = logging.getLogger("peakspec")

EXIT_OK, EXIT_CONFIG, EXIT_UNCONVERGED, EXIT_CHECK = 0, 1, 2, 3
COMMANDS = ("interval", "model1d", "peak", "sweep", "fit", "report")
CSV_COLUMNS = (
    "alpha", "j", "e_exact", "e_minus", "e_plus", "e_model1d_pred", "ratio",
    "n1", "n2", "ns", "s_min", "residual_max", "converged",
)


class ConfigError(ValueError):
    """Invalid configuration; the message names the field and its valid range."""


# -- configuration ---------------------------------------------------------------------

DEFAULTS: dict[str, dict[str, Any]] = {
    "params": {"p": 1.2, "q": 1.5, "a": 0.5, "c_bracket": None},
    "grid": {"n1": 24, "n2": 24, "ns": 96, "s_min_factor": 1e-3, "ratio": 1.1, "tip": "dirichlet"},
    "solver": {"tol": 1e-8, "j_max": 3},
    "sweep": {"alphas": [8.0, 16.0, 32.0, 64.0], "brackets": True, "fit_window": None},
    "interval": {"L": 1.0, "r": 0.0, "j": 1},
    "model1d": {"c1": 0.0, "c2": 1.0, "j_max": 3, "reference": False},
    "peak": {"alpha": 16.0, "kinds": ["exact_flat", "bracket_minus", "bracket_plus"]},
}
TOP_LEVEL = {"command": None, "output_dir": "peakspec-out", "seed": 0}


def _num(lo: float | None = None, hi: float | None = None, *, lo_open=False, hi_open=False, integer=False):
    desc = f"{'(' if lo_open else '['}{'-inf' if lo is None else lo}, {'inf' if hi is None else hi}{')' if hi_open else ']'}"
    kind = "integer" if integer else "number"

    def check(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
            return f"must be a {kind} in {desc}"
        if not math.isfinite(v):
            return f"must be finite, in {desc}"
        if lo is not None and (v < lo or (lo_open and v == lo)):
            return f"must lie in {desc}"
        if hi is not None and (v > hi or (hi_open and v == hi)):
            return f"must lie in {desc}"
        return None

    return check


def _choice(*opts):
    def check(v):
        return None if v in opts else f"must be one of {', '.join(map(str, opts))}"
    return check


def _boolean(v):
    return None if isinstance(v, bool) else "must be true or false"


def _optional(inner):
    def check(v):
        return None if v is None else inner(v)
    return check


def _alphas(v):
    if not isinstance(v, list) or not v:
        return "must be a nonempty list of numbers >= 1"
    for a in v:
        if _num(1.0)(a):
            return "must be a nonempty list of numbers >= 1"
    if any(b <= a for a, b in zip(v, v[1:])):
        return "must be strictly ascending"
    return None


def _window(v):
    if not (isinstance(v, list) and len(v) == 2 and all(not _num(1.0)(a) for a in v) and v[0] < v[1]):
        return "must be a pair [lo, hi] with 1 <= lo < hi"
    return None


def _kinds(v):
    names = [k.value for k in FormKind]
    if not isinstance(v, list) or not v or any(k not in names for k in v):
        return f"must be a nonempty list drawn from {', '.join(names)}"
    return None


VALIDATORS: dict[str, dict[str, Callable[[Any], str | None]]] = {
    "params": {
        "p": _num(1, 2, lo_open=True, hi_open=True), "q": _num(1, 2, lo_open=True, hi_open=True),
        "a": _num(0, 1, lo_open=True, hi_open=True), "c_bracket": _optional(_num(0, lo_open=True)),
    },
    "grid": {
        "n1": _num(8, integer=True), "n2": _num(8, integer=True), "ns": _num(32, integer=True),
        "s_min_factor": _num(0, 1, lo_open=True, hi_open=True), "ratio": _num(1, 2, lo_open=True),
        "tip": _choice("dirichlet", "natural"),
    },
    "solver": {"tol": _num(0, 1e-2, lo_open=True), "j_max": _num(1, 10, integer=True)},
    "sweep": {"alphas": _alphas, "brackets": _boolean, "fit_window": _optional(_window)},
    "interval": {"L": _num(0, lo_open=True), "r": _num(), "j": _num(1, 1000, integer=True)},
    "model1d": {"c1": _num(0), "c2": _num(0, lo_open=True), "j_max": _num(1, 50, integer=True),
                "reference": _boolean},
    "peak": {"alpha": _num(1), "kinds": _kinds},
}


@dataclass
class RunConfig:
    command: str
    parameters: dict[str, dict[str, Any]]
    output_dir: Path
    seed: int = 0

    def as_dict(self) -> dict:
        return {"command": self.command, "output_dir": str(self.output_dir), "seed": self.seed,
                **copy.deepcopy(self.parameters)}

    def peak_params(self, alpha: float = 1.0) -> PeakParams:
        pr = self.parameters["params"]
        return PeakParams(pr["p"], pr["q"], pr["a"], alpha, pr["c_bracket"])

    def sweep_settings(self) -> asympt.SweepSettings:
        g, s = self.parameters["grid"], self.parameters["solver"]
        return asympt.SweepSettings(g["n1"], g["n2"], g["ns"], g["s_min_factor"], g["ratio"], g["tip"],
                                    s["tol"], self.parameters["sweep"]["brackets"])


def _coerce(key: str, default: Any, value: Any) -> Any:
    # TOML integers are accepted where a float is expected
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if key in ("alphas", "fit_window") and isinstance(value, list):
        return [float(v) if isinstance(v, int) and not isinstance(v, bool) else v for v in value]
    return value


def build_config(doc: dict, command: str | None = None) -> RunConfig:
    """Validate a parsed document and materialize every default."""
    unknown = set(doc) - set(DEFAULTS) - set(TOP_LEVEL)
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(sorted(unknown))}")
    params = copy.deepcopy(DEFAULTS)
    for section, values in doc.items():
        if section in TOP_LEVEL:
            continue
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in values.items():
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown key: {section}.{key}")
            value = _coerce(key, DEFAULTS[section][key], value)
            msg = VALIDATORS[section][key](value)
            if msg:
                raise ConfigError(f"{section}.{key} {msg} (got {value!r})")
            params[section][key] = value
    pr = params["params"]
    if not pr["p"] < pr["q"]:
        raise ConfigError(f"params.p, params.q must satisfy 1 < p < q < 2 (got p={pr['p']}, q={pr['q']})")
    cmd = command or doc.get("command")
    if cmd not in COMMANDS:
        raise ConfigError(f"command must be one of {', '.join(COMMANDS)} (got {cmd!r})")
    seed = doc.get("seed", TOP_LEVEL["seed"])
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer (got {seed!r})")
    out = doc.get("output_dir", TOP_LEVEL["output_dir"])
    if not isinstance(out, str) or not out:
        raise ConfigError("output_dir must be a nonempty string")
    if pr["c_bracket"] is None:
        pr["c_bracket"] = metric3d.feasible_bracket_constant(
            pr["p"], pr["q"], pr["a"], [a for a in params["sweep"]["alphas"] if a >= 4] or params["sweep"]["alphas"]
        )
    return RunConfig(cmd, params, Path(out), seed)


def parse_config(text: str, command: str | None = None) -> RunConfig:
    """Parse a TOML document (duplicate keys are rejected by the parser)."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return build_config(doc, command)


# -- persistence -------------------------------------------------------------------------


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v: float) -> str:
    return format(v, ".16e")


def records_csv(records: list[asympt.SweepRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([
            _fmt(r.alpha), r.j, _fmt(r.e_exact), _fmt(r.e_minus), _fmt(r.e_plus), _fmt(r.e_model1d),
            _fmt(r.ratio), r.grid["n1"], r.grid["n2"], r.grid["ns"], _fmt(r.grid["s_min"]),
            _fmt(r.residual_max), str(r.converged).lower(),
        ])
    return buf.getvalue()


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return _jsonable(obj.item())
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def load_schema() -> dict:
    return json.loads(resources.files("peakspec").joinpath("schema/results.schema.json").read_text())


def write_results(path: Path, doc: dict) -> None:
    doc = _jsonable(doc)
    jsonschema.validate(doc, load_schema())
    atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_results(path: Path) -> dict:
    if not path.exists():
        raise ConfigError(f"{path} not found; run the sweep first")
    doc = json.loads(path.read_text())
    jsonschema.validate(doc, load_schema())
    return doc


def record_from_dict(d: dict) -> asympt.SweepRecord:
    vals = {k: (math.nan if v is None and k not in ("error",) else v) for k, v in d.items()}
    return asympt.SweepRecord(**vals)


def echo_config(cfg: RunConfig) -> None:
    atomic_write(cfg.output_dir / "config.resolved.json", json.dumps(_jsonable(cfg.as_dict()), indent=2, sort_keys=True) + "\n")


# -- subcommands ----------------------------------------------------------------------------


def cmd_interval(cfg: RunConfig) -> int:
    iv = cfg.parameters["interval"]
    print(f"{interval_eigenvalue(IntervalRobinSpec(iv['L'], iv['r']), iv['j']):.12f}")
    return EXIT_OK


def cmd_model1d(cfg: RunConfig) -> int:
    m, pr = cfg.parameters["model1d"], cfg.parameters["params"]
    spec = ModelPotentialSpec(m["c1"], m["c2"], pr["p"], pr["q"])
    if m["reference"]:
        vals = reference_eigenvalues(spec, m["j_max"]).values
    else:
        vals = model_eigenvalues(spec, default_grid(spec), Domain.full(), m["j_max"])
    for j, v in enumerate(vals, 1):
        print(f"{j} {v:.12e}")
    return EXIT_OK


def cmd_peak(cfg: RunConfig) -> int:
    pk = cfg.parameters["peak"]
    params = cfg.peak_params(pk["alpha"])
    st = cfg.sweep_settings()
    grid = metric3d.make_grid(params, st.n1, st.n2, st.ns, s_min=st.s_min_factor * params.a, ratio=st.ratio)
    status = EXIT_OK
    for kind in pk["kinds"]:
        res = metric3d.solve_peak(params, grid, kind, cfg.parameters["solver"]["j_max"], tip=st.tip, tol=st.tol)
        vals = " ".join(f"{v:.10e}" for v in res.values)
        print(f"{kind}: {vals}  (iterations {res.iterations}, converged {res.all_converged})")
        if not res.all_converged:
            status = EXIT_UNCONVERGED
    return status


def _sandwich_block(records, cfg: RunConfig) -> dict:
    s = asympt.sandwich_summary(records, cfg.parameters["params"]["p"], cfg.parameters["params"]["c_bracket"])
    return {"threshold": s.threshold, "checked": s.checked, "violations": s.violations,
            "skipped": s.skipped, "passed": s.passed}


def cmd_sweep(cfg: RunConfig) -> int:
    sw = cfg.parameters["sweep"]
    echo_config(cfg)
    records = asympt.sweep(cfg.peak_params(), sw["alphas"], cfg.parameters["solver"]["j_max"], cfg.sweep_settings())
    atomic_write(cfg.output_dir / "results.csv", records_csv(records))
    doc = {"version": __version__, "config": cfg.as_dict(), "records": [r.as_dict() for r in records]}
    checks = True
    if sw["brackets"]:
        doc["sandwich"] = _sandwich_block(records, cfg)
        checks = doc["sandwich"]["passed"]
    write_results(cfg.output_dir / "results.json", doc)
    write_plots(cfg, records)
    for r in records:
        print(f"alpha={r.alpha:g} j={r.j} E={r.e_exact:.10e} [{r.e_minus:.6e}, {r.e_plus:.6e}] ratio={r.ratio:.6f}")
    if not all(r.converged for r in records):
        return EXIT_UNCONVERGED
    return EXIT_OK if checks else EXIT_CHECK


def _fits(records, cfg: RunConfig) -> dict:
    pr = cfg.parameters["params"]
    window = cfg.parameters["sweep"]["fit_window"]
    out = {}
    for j in sorted({r.j for r in records}):
        rep = asympt.fit_report(records, j, p=pr["p"], q=pr["q"], window=tuple(window) if window else None)
        out[str(j)] = asdict(rep)
    return out


def _load_records(cfg: RunConfig) -> tuple[dict, list[asympt.SweepRecord]]:
    doc = read_results(cfg.output_dir / "results.json")
    return doc, [record_from_dict(d) for d in doc["records"]]


def cmd_fit(cfg: RunConfig) -> int:
    doc, records = _load_records(cfg)
    doc["fits"] = _fits(records, cfg)
    write_results(cfg.output_dir / "results.json", doc)
    ok = True
    for j, f in doc["fits"].items():
        lead = f["leading"]
        if lead is None:
            print(f"j={j}: fit unavailable ({'; '.join(f['notes'])})")
            ok = False
            continue
        print(f"j={j}: exponent {lead['exponent']:.6f} (target {f['exponent_target']:g}, "
              f"{'ok' if f['exponent_ok'] else 'off'}), coefficient {lead['coefficient']:.6e} "
              f"(reference {f['reference']:.6e}, {'ok' if f['coefficient_ok'] else 'off'})")
    j1 = doc["fits"].get("1")
    ok = ok and j1 is not None and j1["exponent_ok"] and j1["coefficient_ok"]
    return EXIT_OK if ok else EXIT_CHECK


def cmd_report(cfg: RunConfig) -> int:
    doc, records = _load_records(cfg)
    pr = cfg.parameters["params"]
    p, q = pr["p"], pr["q"]
    doc["fits"] = _fits(records, cfg)
    doc["sandwich"] = _sandwich_block(records, cfg)
    semi = asympt.semibound_check(records, p=p, q=q)
    ref1 = doc["fits"]["1"]["reference"] if "1" in doc["fits"] else math.nan
    gaps = asympt.ratio_gaps(records, 1, ref1)
    consts = asympt.remainder_constants(records, 1, p=p, q=q)
    doc["reports"] = {
        "semibound": asdict(semi) | {"passed": semi.passed},
        "ratio_gaps": {"values": gaps, "decreasing": asympt.gaps_decreasing(gaps)},
        "remainder_constants": asdict(consts),
    }
    write_results(cfg.output_dir / "results.json", doc)
    write_plots(cfg, records)
    checks = {
        "sandwich": doc["sandwich"]["passed"],
        "leading exponent": bool(doc["fits"].get("1", {}).get("exponent_ok")),
        "leading coefficient": bool(doc["fits"].get("1", {}).get("coefficient_ok")),
        "lower bound": semi.passed,
        "ratio gaps decreasing": doc["reports"]["ratio_gaps"]["decreasing"],
    }
    lines = [f"{'PASS' if ok else 'FAIL'}  {name}" for name, ok in checks.items()]
    atomic_write(cfg.output_dir / "report.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK if all(checks.values()) else EXIT_CHECK


def write_plots(cfg: RunConfig, records: list[asympt.SweepRecord]) -> None:
    pr = cfg.parameters["params"]
    tau = asympt.leading_exponent(pr["p"], pr["q"])
    for j in sorted({r.j for r in records}):
        rs = [r for r in records if r.j == j]
        al = [r.alpha for r in rs]
        series = [
            Series(f"E_{j} exact form", al, [r.e_exact for r in rs]),
            Series(f"prediction, slope {tau:g}", al, [r.e_model1d for r in rs], style="line"),
        ]
        try:
            svg = loglog_svg(series, f"Eigenvalue {j} against coupling", "log10 alpha", f"log10 |E_{j}|")
        except ValueError:
            continue
        atomic_write(cfg.output_dir / f"eigenvalue_j{j}.svg", svg)


HANDLERS = {
    "interval": cmd_interval, "model1d": cmd_model1d, "peak": cmd_peak,
    "sweep": cmd_sweep, "fit": cmd_fit, "report": cmd_report,
}


def run(cfg: RunConfig) -> int:
    try:
        return HANDLERS[cfg.command](cfg)
    except (ConfigError, metric3d.FeasibilityError, jsonschema.ValidationError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except SolverError as exc:
        log.error("solver failure: %s", exc)
        return EXIT_UNCONVERGED


# -- argument parsing --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="peakspec", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"peakspec {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="TOML run configuration")
        sp.add_argument("--output-dir", type=Path, help="directory for artifacts")
        return sp

    sp = common(sub.add_parser("interval", help="eigenvalue of the Robin interval operator"))
    sp.add_argument("--L", type=float)
    sp.add_argument("--r", type=float)
    sp.add_argument("--j", type=int)
    sp = common(sub.add_parser("model1d", help="eigenvalues of the 1D model operator"))
    sp.add_argument("--c1", type=float)
    sp.add_argument("--c2", type=float)
    sp.add_argument("--j-max", type=int, dest="j_max")
    sp.add_argument("--reference", action="store_true", default=None, help="Richardson-extrapolated values")
    sp = common(sub.add_parser("peak", help="eigenvalues of the peak forms at one alpha"))
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--kind", action="append", dest="kinds", choices=[k.value for k in FormKind])
    sp = common(sub.add_parser("sweep", help="solve the exact and comparison forms over alphas"))
    sp.add_argument("--alphas", type=float, nargs="+")
    common(sub.add_parser("fit", help="fit power laws to a finished sweep"))
    common(sub.add_parser("report", help="run every check on a finished sweep"))
    return ap


OVERRIDES = {
    "L": ("interval", "L"), "r": ("interval", "r"), "j": ("interval", "j"),
    "c1": ("model1d", "c1"), "c2": ("model1d", "c2"), "j_max": ("model1d", "j_max"),
    "reference": ("model1d", "reference"), "alpha": ("peak", "alpha"), "kinds": ("peak", "kinds"),
    "alphas": ("sweep", "alphas"),
}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    doc: dict = {}
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
    for name, (section, key) in OVERRIDES.items():
        value = getattr(args, name, None)
        if value is not None:
            doc.setdefault(section, {})[key] = value
    if args.output_dir is not None:
        doc["output_dir"] = str(args.output_dir)
    doc.pop("command", None)
    return build_config(doc, args.command)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
