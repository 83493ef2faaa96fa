"""Command-line front end.

Every subcommand writes its artifacts into ``--out``. Tables are CSV with a
``#``-prefixed metadata block; the only varying line is ``# generated:``.
Exit codes: 0 ok, 2 input or schema error, 3 numerical failure, 4 bootstrap
failure-policy breach.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .aft import FitOptions, fit
from .design import PRESETS, ModelSpec, preset_spec
from .diagnostics import QQ_CONVENTION, aft_residuals, qq_points, qq_slope, residual_overlay
from .errors import AftiteError, BootstrapFailureError, DataError, NumericalError, SchemaError
from .ingest import PreprocessOptions, TrialSchema, load_trial_csv, preprocess
from .ite import CONVENTIONS, ITEResult, grid_profiles, ite_delta_ci, parse_grid, reference_values
from .laws import LAW_TAGS
from .nonparam import km_estimate, logrank_test
from .resample import BootstrapPlan, bootstrap_ite
from .simlab import TrueParams, coverage_study, default_truth, simulate_trial

__all__ = ["main", "run", "build_parser", "DEFAULT_AGE_GRID", "DEFAULT_LOGSZ_GRID"]

DEFAULT_AGE_GRID = "50:84:2"
DEFAULT_LOGSZ_GRID = "1.099,1.386,1.609,1.792,2.303,3.219,3.332,3.555,3.850,4.143,4.248"
ARM_LABELS = {"0": "low dose (z=0)", "1": "high dose (z=1)"}
DEFAULT_SEED = 20250101


class UsageError(AftiteError, ValueError):
    kind = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"aftite:error:usage:{message}\n")
        sys.exit(2)


# ---------------------------------------------------------------- output


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return t.strftime("%Y-%m-%dT%H:%M:%SZ")


class Output:
    """Atomic writer for one output directory, sharing one metadata block."""

    def __init__(self, root: str | Path, meta: dict[str, Any]):
        self.root = Path(root)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise DataError(f"cannot create output directory {self.root}: {exc}") from None
        if not os.access(self.root, os.W_OK):
            raise DataError(f"output directory {self.root} is not writable")
        self.meta = dict(meta)
        self.written: list[Path] = []

    def header(self, **extra) -> str:
        meta = {**self.meta, **extra}
        lines = [f"# tool: aftite {__version__}"]
        lines += [f"# {k}: {v}" for k, v in meta.items()]
        lines.append(f"# generated: {_timestamp()}")
        return "\r\n".join(lines) + "\r\n"

    def _write(self, name: str, text: str) -> Path:
        path = self.root / name
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.written.append(path)
        return path

    def table(self, name: str, csv_text: str, **extra) -> Path:
        return self._write(name, self.header(**extra) + csv_text)

    def json(self, name: str, obj: Any, **extra) -> Path:
        meta = {"tool": f"aftite {__version__}", **self.meta, **extra, "generated": _timestamp()}
        return self._write(name, json.dumps({"meta": meta, **obj}, indent=2, default=_jsonable) + "\n")

    def svg(self, name: str, draw, *args, **kwargs) -> Path | None:
        """Render through a temp file so a partial SVG never appears."""
        path = self.root / name
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=f".{name}.", suffix=".svg")
        os.close(fd)
        try:
            draw(*args, path=tmp, **kwargs)
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)
        self.written.append(path)
        return path


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _csv(rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerows(rows)
    return buf.getvalue()


def _f(v: float, digits: int = 6) -> str:
    return "" if v is None or not np.isfinite(v) else f"{v:.{digits}f}"


# ---------------------------------------------------------------- inputs


def _load(args):
    schema = TrialSchema.from_json(args.schema) if args.schema else TrialSchema.prostate()
    opts = PreprocessOptions.from_schema(schema, time_offset=args.time_offset, sz_offset=args.sz_offset)
    if args.data:
        records = load_trial_csv(args.data, schema)
    else:
        from importlib import resources

        with resources.as_file(resources.files("aftite.data") / "prostate.csv") as p:
            records = load_trial_csv(p, schema)
    return preprocess(records, opts)


def _spec(args) -> ModelSpec:
    if getattr(args, "spec", None):
        try:
            return ModelSpec.from_json(Path(args.spec).read_text())
        except OSError as exc:
            raise SchemaError(f"cannot read model spec {args.spec}: {exc}") from None
        except (ValueError, KeyError, TypeError) as exc:
            raise SchemaError(f"invalid model spec {args.spec}: {exc}") from None
    return preset_spec(args.preset)


def _out(args, spec: ModelSpec | None = None, **extra) -> Output:
    meta: dict[str, Any] = {"command": args.command, "seed": args.seed}
    if spec is not None:
        meta["spec"] = f"{spec.preset} {spec.digest()}"
    meta.update(extra)
    return Output(args.out, meta)


def _fit_options(args) -> FitOptions:
    return FitOptions(max_iter=args.max_iter)


def _refs(args, data, names) -> tuple[dict[str, float], str]:
    refs = reference_values(data, names, args.ref_convention)
    conv = args.ref_convention
    for item in args.ref or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise DataError(f"--ref expects name=value, got {item!r}")
        if key not in names:
            raise DataError(f"--ref {key!r} is not a treatment modifier of this model ({', '.join(names)})")
        try:
            refs[key] = float(val)
        except ValueError:
            raise DataError(f"--ref {item!r}: value is not a number") from None
        conv = f"{args.ref_convention} with overrides"
    return refs, conv


# ---------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    data = _load(args)
    out = _out(args)
    out.json("ingest_report.json", {"report": data.report.to_dict()})
    rows = [["id", "time", "event", "z", *data.names]]
    for i in range(data.n):
        rows.append([data.ids[i], repr(float(data.time[i])), int(data.event[i]), int(data.z[i]),
                     *(repr(float(v)) for v in data.x[i])])
    out.table("analysis_data.csv", _csv(rows))
    r = data.report
    print(f"retained {r.retained} of {r.input_rows} rows ({r.n_events} events); dropped {dict(r.dropped)}")
    return 0


def _km(args, data, out: Output) -> tuple[float, float]:
    curves = km_estimate(data.time, data.event, data.z)
    chi2, p = logrank_test(data.time, data.event, data.z)
    text = "".join(c.to_csv().split("\r\n", 1)[1] if i else c.to_csv() for i, c in enumerate(curves.values()))
    out.table("km.csv", text)
    rows = [["statistic", "value"], ["chi2", f"{chi2:.6f}"], ["p_value", f"{p:.6f}"]]
    at = args.km_at
    for key, c in curves.items():
        rows.append([f"survival_at_{at:g}_z={key}", f"{c(at):.6f}"])
    out.table("logrank.csv", _csv(rows))
    if not args.no_plots:
        from .plotting import plot_km

        out.svg("km.svg", plot_km, curves, labels=ARM_LABELS, p_value=p)
    return chi2, p


def cmd_km(args) -> int:
    data = _load(args)
    chi2, p = _km(args, data, _out(args))
    print(f"log-rank chi2 = {chi2:.4f}, p = {p:.4f}")
    return 0


def _coef_csv(f) -> str:
    rows = [["term", "role", "estimate", "se", "z", "p_value", "time_ratio", "tr_lower", "tr_upper"]]
    for r in f.coef_table():
        rows.append([r["term"], r["role"], _f(r["estimate"]), _f(r["se"]), _f(r["z"], 4), _f(r["p_value"]),
                     _f(r["time_ratio"]), _f(r["tr_lower"]), _f(r["tr_upper"])])
    return _csv(rows)


def _require_converged(f):
    if not f.converged:
        raise NumericalError(f"{f.spec.preset}/{f.dist} fit did not converge in {f.iterations} iterations")


def _fit_outputs(args, data, spec, out: Output):
    f = fit(data, spec, args.dist, _fit_options(args))
    _require_converged(f)
    out.json("fit.json", {"fit": f.to_dict()}, dist=args.dist)
    out.table("coefficients.csv", _coef_csv(f), dist=args.dist)
    if not args.no_plots:
        from .plotting import plot_forest

        out.svg("forest.svg", plot_forest, f.coef_table(), title=f"{spec.preset}, {args.dist}")
    return f


def cmd_fit(args) -> int:
    data = _load(args)
    spec = _spec(args)
    f = _fit_outputs(args, data, spec, _out(args, spec))
    t = f.coef_table()[f.index("rx")]
    print(f"{spec.preset}/{args.dist}: loglik {f.loglik:.3f}, AIC {f.aic:.3f}, BIC {f.bic:.3f}, "
          f"treatment TR {t['time_ratio']:.3f} [{t['tr_lower']:.3f}, {t['tr_upper']:.3f}]")
    return 0


def _dists(text: str) -> list[str]:
    if text == "all":
        return list(LAW_TAGS)
    names = [d.strip() for d in text.split(",") if d.strip()]
    bad = [d for d in names if d not in LAW_TAGS]
    if bad:
        raise DataError(f"unknown distribution(s) {', '.join(bad)}; expected {', '.join(LAW_TAGS)} or all")
    return names


def _compare(args, data, out: Output, presets: Sequence[str], dists: Sequence[str]):
    rows = [["preset", "dist", "loglik", "k", "n", "aic", "bic", "converged"]]
    fits = {}
    for preset in presets:
        spec = preset_spec(preset)
        for dist in dists:
            f = fit(data, spec, dist, _fit_options(args))
            fits[preset, dist] = f
            rows.append([preset, dist, f"{f.loglik:.4f}", f.k, f.n, f"{f.aic:.4f}", f"{f.bic:.4f}",
                         int(f.converged)])
    out.table("compare.csv", _csv(rows))
    return fits


def cmd_compare(args) -> int:
    data = _load(args)
    presets = [p.strip() for p in args.presets.split(",")] if args.presets else [args.preset]
    fits = _compare(args, data, _out(args), presets, _dists(args.dists))
    for (preset, dist), f in fits.items():
        print(f"{preset:8s} {dist:12s} AIC {f.aic:10.3f}  BIC {f.bic:10.3f}")
    if any(not f.converged for f in fits.values()):
        raise NumericalError("at least one fit did not converge (see compare.csv)")
    return 0


def _ite_table(delta: list[ITEResult], boot: list[ITEResult] | None) -> str:
    head = ["modifier", "value", "delta", "time_ratio"]
    if delta and delta[0].method == "delta":
        head += ["se_delta", "delta_lower", "delta_upper"]
    if boot is not None:
        head += ["boot_se", "boot_lower", "boot_upper", "boot_n"]
    head += ["extrapolated", "reference"]
    rows = [head]
    for j, r in enumerate(delta):
        row = [r.modifier, f"{r.value:.6g}", _f(r.delta), _f(r.time_ratio)]
        if r.method == "delta":
            row += [_f(r.se_delta), _f(r.ci_lower), _f(r.ci_upper)]
        if boot is not None:
            b = boot[j]
            row += [_f(b.se_delta), _f(b.ci_lower), _f(b.ci_upper), int(b.extra.get("n_success", 0))]
        ref = ";".join(f"{k}={v:.6g}" for k, v in sorted(r.profile.items()) if k != r.modifier)
        row += [int(r.extrapolated), ref]
        rows.append(row)
    return _csv(rows)


def _ite(args, data, spec, f, out: Output, modifier: str, grid_text: str, ci: str, tag: str = ""):
    names = [p for p, role in zip(f.column_parents, f.column_roles) if role == "interaction"]
    refs, conv = _refs(args, data, names)
    grid = parse_grid(grid_text)
    profiles = grid_profiles(f, modifier, grid, refs)
    delta = [replace(ite_delta_ci(f, p, args.level), modifier=modifier, value=p[modifier]) for p in profiles]
    boot = None
    if ci in ("bootstrap", "both"):
        plan = BootstrapPlan(B=args.B, seed=args.seed, level=args.level, workers=args.workers,
                             stratify=args.stratify, fit_options=_fit_options(args))
        boot, dist = bootstrap_ite(data, spec, f.dist, profiles, plan, original=f)
        boot = [replace(b, modifier=modifier, value=p[modifier]) for b, p in zip(boot, profiles)]
        out.table(f"bootstrap_{tag or modifier}.csv", dist.to_csv(), convention=conv, B=args.B)
    if ci == "bootstrap":
        # point estimates only from the delta list; intervals from bootstrap
        delta = [replace(d, method="point") for d in delta]
    out.table(f"ite_{tag or modifier}.csv", _ite_table(delta, boot), convention=conv, level=args.level,
              dist=f.dist)
    if not args.no_plots:
        from .plotting import plot_ite

        out.svg(f"ite_{tag or modifier}.svg", plot_ite, delta if ci != "bootstrap" else boot, bootstrap=boot)
    return delta, boot


def cmd_ite(args) -> int:
    if not args.modifier or not args.grid:
        raise UsageError("ite needs --modifier and --grid")
    data = _load(args)
    spec = _spec(args)
    f = fit(data, spec, args.dist, _fit_options(args))
    _require_converged(f)
    delta, boot = _ite(args, data, spec, f, _out(args, spec, convention=args.ref_convention), args.modifier,
                       args.grid, args.ci)
    print(f"{len(delta)} profiles written for {args.modifier}")
    return 0


def _diagnose(args, data, out: Output, presets: Sequence[str]):
    overlays, qqs, rows = {}, {}, [["preset", "dist", "sup_distance", "qq_slope", "qq_slope_se"]]
    for preset in presets:
        f = fit(data, preset_spec(preset), args.dist, _fit_options(args))
        _require_converged(f)
        ov = residual_overlay(aft_residuals(f, data))
        qq = qq_points(f, data)
        slope, se = qq_slope(qq)
        overlays[preset], qqs[preset] = ov, qq
        out.table(f"overlay_{preset}.csv", ov.to_csv(), dist=args.dist)
        out.table(f"qq_{preset}.csv", qq.to_csv(), dist=args.dist, qq_convention=QQ_CONVENTION)
        rows.append([preset, args.dist, f"{ov.sup:.6f}", f"{slope:.6f}", f"{se:.6f}"])
    out.table("diagnostics.csv", _csv(rows), dist=args.dist, qq_convention=QQ_CONVENTION)
    if not args.no_plots:
        from .plotting import plot_overlays, plot_qq

        out.svg("overlay.svg", plot_overlays, overlays)
        out.svg("qq.svg", plot_qq, qqs)
    return overlays, qqs


def cmd_diagnose(args) -> int:
    data = _load(args)
    presets = [p.strip() for p in args.presets.split(",")]
    overlays, _ = _diagnose(args, data, _out(args), presets)
    best = min(overlays, key=lambda k: overlays[k].sup)
    print("sup-distance: " + ", ".join(f"{k} {v.sup:.4f}" for k, v in overlays.items()) + f"; best {best}")
    return 0


def _truth(args) -> TrueParams:
    if args.truth:
        try:
            return TrueParams.from_json(Path(args.truth).read_text())
        except OSError as exc:
            raise SchemaError(f"cannot read truth file {args.truth}: {exc}") from None
        except (ValueError, KeyError, TypeError) as exc:
            raise SchemaError(f"invalid truth file {args.truth}: {exc}") from None
    return default_truth(args.preset, args.dist)


def cmd_simulate(args) -> int:
    truth = _truth(args)
    sim = simulate_trial(truth, args.n, args.seed)
    out = _out(args, truth.spec)
    out.json("truth.json", {"truth": truth.to_dict()})
    d = sim.data
    rows = [["id", "time", "event", "z", *d.names]]
    for i in range(d.n):
        rows.append([d.ids[i], repr(float(d.time[i])), int(d.event[i]), int(d.z[i]),
                     *(repr(float(v)) for v in d.x[i])])
    out.table("simulated_data.csv", _csv(rows), n=args.n)
    out.table("audit.csv", sim.audit_csv(), n=args.n)
    print(f"simulated {d.n} subjects, {d.n_events} events")
    return 0


def _profiles_arg(items: Sequence[str]):
    from .ite import Profile

    profiles = []
    for item in items:
        vals = {}
        for part in item.split(","):
            key, sep, val = part.partition("=")
            if not sep:
                raise DataError(f"--profile expects name=value[,name=value...], got {item!r}")
            try:
                vals[key.strip()] = float(val)
            except ValueError:
                raise DataError(f"--profile {item!r}: {val!r} is not a number") from None
        profiles.append(Profile(vals, label=item))
    return profiles


def cmd_coverage(args) -> int:
    truth = _truth(args)
    items = args.profile or ["age=50,logsz=2.727", "age=71.556,logsz=4.248"]
    profiles = _profiles_arg(items)
    plan = None
    if args.B > 0:
        plan = BootstrapPlan(B=args.B, seed=args.seed, level=args.level, fit_options=_fit_options(args))
    res = coverage_study(truth, args.n, args.n_sims, profiles, plan, seed=args.seed, level=args.level,
                         workers=args.workers, fit_options=_fit_options(args))
    out = _out(args, truth.spec, n=args.n, n_sims=args.n_sims)
    out.table("coverage.csv", res.to_csv())
    out.json("coverage.json", {"coverage": res.to_dict(), "truth": truth.to_dict()})
    print(f"delta coverage {res.delta_coverage}; bootstrap coverage {res.bootstrap_coverage}; "
          f"recovery {res.recovery:.4f}")
    return 0


def treatment_effects(data, fits) -> list[list[Any]]:
    """Treatment time ratio per model under each reference anchor for the modifiers."""
    rows = [["preset", "dist", "anchor", "time_ratio", "lower", "upper", "reference"]]
    for (preset, dist), f in fits.items():
        names = [p for p, role in zip(f.column_parents, f.column_roles) if role == "interaction"]
        for conv in CONVENTIONS:
            refs = reference_values(data, names, conv)
            r = ite_delta_ci(f, refs, 0.95)
            ref = ";".join(f"{k}={v:.6g}" for k, v in sorted(refs.items()))
            rows.append([preset, dist, conv, _f(r.time_ratio), _f(r.ci_lower), _f(r.ci_upper), ref])
    return rows


def cmd_report(args) -> int:
    """Every table and figure of the analysis in one directory."""
    data = _load(args)
    spec = preset_spec("model2a")
    out = _out(args, spec, convention=args.ref_convention)
    out.json("ingest_report.json", {"report": data.report.to_dict()})
    _km(args, data, out)
    fits = _compare(args, data, out, PRESETS, list(LAW_TAGS))
    out.table("treatment_effects.csv", _csv(treatment_effects(data, {k: v for k, v in fits.items()
                                                                     if k[1] == args.dist})))
    f = _fit_outputs(args, data, spec, out)
    _ite(args, data, spec, f, out, "age", DEFAULT_AGE_GRID, "both", tag="age")
    _ite(args, data, spec, f, out, "logsz", DEFAULT_LOGSZ_GRID, "both", tag="logsz")
    _diagnose(args, data, out, PRESETS)
    manifest = sorted(p.name for p in out.written)
    out.json("manifest.json", {"files": manifest})
    print(f"report: {len(manifest)} files in {out.root}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aftite", description="AFT survival models with individualized treatment effects.")
    parser.add_argument("--version", action="version", version=f"aftite {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file whose keys mirror these flags (flags win)")
    common.add_argument("--data", help="trial CSV (default: bundled prostate trial)")
    common.add_argument("--schema", help="column mapping JSON")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--level", type=float, default=0.95)
    common.add_argument("--dist", choices=LAW_TAGS, default="weibull")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--max-iter", type=int, default=200)
    common.add_argument("--time-offset", type=float, default=0.5, help="added to every follow-up time")
    common.add_argument("--sz-offset", type=float, default=1.0, help="logsz = log(sz + offset)")
    common.add_argument("--no-plots", action="store_true")

    def model_flags(p, spec_ok=True):
        g = p.add_mutually_exclusive_group()
        g.add_argument("--preset", choices=PRESETS, default="model2a")
        if spec_ok:
            g.add_argument("--spec", help="ModelSpec JSON file")

    def ite_flags(p):
        p.add_argument("--B", type=int, default=1000, help="bootstrap replicates")
        p.add_argument("--stratify", action="store_true", help="resample within arms")
        p.add_argument("--ref-convention", choices=CONVENTIONS, default="zero",
                       help="values of the non-focal modifiers")
        p.add_argument("--ref", action="append", metavar="NAME=VALUE", help="override one reference value")

    p = sub.add_parser("ingest", parents=[common], help="load, filter and transform; audit report")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("km", parents=[common], help="Kaplan-Meier curves and log-rank test")
    p.add_argument("--km-at", type=float, default=60.0, help="report survival at this time")
    p.set_defaults(func=cmd_km)

    p = sub.add_parser("fit", parents=[common], help="fit one model; JSON, coefficient table, forest plot")
    model_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", parents=[common], help="AIC/BIC across distributions and presets")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--preset", choices=PRESETS, default="model2a")
    g.add_argument("--presets", help="comma list of presets")
    p.add_argument("--dists", default="all", help="comma list or 'all'")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("ite", parents=[common], help="ITE grid with delta and/or bootstrap intervals")
    model_flags(p)
    p.add_argument("--modifier", help="interaction covariate to sweep")
    p.add_argument("--grid", help="start:end:step or comma list")
    p.add_argument("--ci", choices=("delta", "bootstrap", "both"), default="delta")
    ite_flags(p)
    p.set_defaults(func=cmd_ite)

    p = sub.add_parser("diagnose", parents=[common], help="residual overlay and Q-Q series")
    p.add_argument("--presets", default=",".join(PRESETS))
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("simulate", parents=[common], help="draw one synthetic trial with audit sidecar")
    p.add_argument("--truth", help="TrueParams JSON (default: Model 2A-like truth)")
    p.add_argument("--preset", choices=PRESETS, default="model2a", help="model for the default truth")
    p.add_argument("--n", type=int, default=475)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("coverage", parents=[common], help="Monte Carlo coverage of ITE intervals")
    p.add_argument("--truth")
    p.add_argument("--preset", choices=PRESETS, default="model2a")
    p.add_argument("--n", type=int, default=475)
    p.add_argument("--n-sims", type=int, default=1000)
    p.add_argument("--B", type=int, default=0, help="bootstrap replicates per simulation (0: delta only)")
    p.add_argument("--profile", action="append", metavar="NAME=V,...")
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("report", parents=[common], help="full reproduction bundle")
    ite_flags(p)
    p.add_argument("--km-at", type=float, default=60.0, help="report KM survival at this time")
    p.set_defaults(func=cmd_report, ref_convention="raw-mean", km_at=60.0)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise SchemaError(f"cannot read config {args.config}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"config {args.config} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise SchemaError("config must be a JSON object")
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    known = set(vars(args))
    unknown = sorted(set(cfg) - known - {"command"})
    if unknown:
        raise SchemaError(f"unknown config key(s) for {args.command}: {', '.join(unknown)}")
    if "preset" in cfg and "spec" in cfg:
        raise SchemaError("config sets both preset and spec; they are mutually exclusive")
    # a config value is a default; anything given on the command line wins
    sub = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
    sub.set_defaults(**{k: v for k, v in cfg.items() if k != "command"})
    return parser.parse_args(argv)


_EXIT = ((BootstrapFailureError, 4), (NumericalError, 3), (AftiteError, 2))


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except AftiteError as exc:
        code = next(c for cls, c in _EXIT if isinstance(exc, cls))
        sys.stderr.write(f"aftite:error:{exc.kind}:{exc}\n")
        return code
    except (OSError, KeyError) as exc:
        sys.stderr.write(f"aftite:error:input:{exc}\n")
        return 2


def main() -> None:
    sys.exit(run())
