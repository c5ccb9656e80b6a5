"""Command line: ``chivi run|validate|report``.

A run validates its JSON config against ``config_schema.json`` before any
compute, fills in defaults, and writes everything under one output
directory. An ``INCOMPLETE`` marker exists while a run is in progress and is
left behind if it fails.
"""

import argparse
import copy
import csv
import io
import json
import logging
import math
import os
import platform
import sys
import time
import warnings
from dataclasses import replace
from importlib import resources

import jsonschema
import numpy as np
import scipy

from . import __version__, experiments
from .kernels import BACKEND
from .model import DatasetError, KernelParams, load_shot_csv
from .optimize import GAP_COLUMNS, TRACE_COLUMNS, OptimizerConfig
from .oracle import HmcConfig

log = logging.getLogger("chivi")

INCOMPLETE = "INCOMPLETE"
EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2

DEFAULTS = {
    "seed": 0,
    "workers": 1,
    "optimizer": {},
    "oracle": {
        "hmc": {"step_size": 0.05, "leapfrog_steps": 40, "num_samples": 3000, "burn_in": 1000,
                "mass": "diag", "step_jitter": 0.1},
        "max_retries": 3,
    },
}

EXPERIMENT_DEFAULTS = {
    "sandwich": {
        "model": {"kind": "conjugate_gaussian", "prior_mean": [0.0], "prior_var": 1.0,
                  "noise_var": 1.0, "synthetic": {"N": 20, "true_mean": [1.0], "seed": 0}},
    },
    "probit_bench": {
        "data": {"builtin": "pima"},
        "optimizer": {"M": 64, "max_iters": 2000, "trace_every": 100, "monitor_samples": 200},
        "splits": {"train_fraction": 0.9, "num_repeats": 10},
        "probit": {"prior_var": 1.0, "intercept": True, "standardize": True},
    },
    "gp_bench": {
        "data": {"builtin": "sonar"},
        "optimizer": {"max_iters": 2000, "trace_every": 100, "monitor_samples": 200},
        "gp": {"folds": 10, "signal_variances": [1.0, 4.0], "lengthscales": None,
               "holdout_fraction": 0.2, "search_iters": 500, "nugget": 0.1, "max_n": 2000},
    },
    "cox": {
        "optimizer": {"max_iters": 20000, "trace_every": 100, "monitor_samples": 200},
        "cox": {"source": "synthetic", "runs": 1, "nx": 10, "ny": 10, "x_range": [0.0, 10.0],
                "y_range": [0.0, 10.0], "made_only": False,
                "kernel": {"signal_variance": 1.0, "lengthscale": 1.0},
                "synthetic": {"baseline": 1.0, "scarce_box": [0.0, 4.0, 0.0, 4.0],
                              "scarce_shift": -3.0, "zero_events": False}},
    },
    "property_suite": {
        "properties": {"num_pairs": 10, "fault": None},
    },
}

# settings applied by --paper-scale on top of the config
PAPER_SCALE = {
    "probit_bench": {"splits": {"num_repeats": 50}},
    "gp_bench": {},
    "cox": {"cox": {"runs": 5}},
    "sandwich": {},
    "property_suite": {},
}


# sections that name one alternative (a dataset, a model) replace the default outright
REPLACED_SECTIONS = ("data", "model")


class ConfigError(ValueError):
    pass


def schema():
    return json.loads(resources.files("chivi").joinpath("config_schema.json").read_text())


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate_config(raw):
    """Schema check; the first violation is reported with its JSON path."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {e.message}")
    return raw


def load_config(path):
    """Read a config file, or the ``config`` block of an earlier run_meta.json."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if isinstance(raw, dict) and "config" in raw and "versions" in raw:
        raw = raw["config"]
    return validate_config(raw)


def resolve_config(raw, seed=None, paper_scale=False, out=None):
    cfg = _merge(DEFAULTS, EXPERIMENT_DEFAULTS[raw["experiment"]])
    for key in REPLACED_SECTIONS:
        if key in raw:
            cfg.pop(key, None)
    cfg = _merge(cfg, raw)
    if paper_scale:
        cfg = _merge(cfg, PAPER_SCALE[cfg["experiment"]])
        warnings.warn("--paper-scale selected: expect runtimes far beyond desk scale",
                      RuntimeWarning)
    if seed is not None:
        cfg["seed"] = int(seed)
    if out is not None:
        cfg["output_dir"] = out
    cfg.setdefault("output_dir", os.path.join("runs", cfg["experiment"]))
    validate_config(cfg)
    check_inputs(cfg)
    return cfg


def check_inputs(cfg):
    """Referenced files must exist before any compute starts."""
    paths = []
    data = cfg.get("data") or {}
    if "path" in data:
        paths.append(data["path"])
    model = cfg.get("model") or {}
    if isinstance(model.get("data"), dict) and "path" in model["data"]:
        paths.append(model["data"]["path"])
    cox = cfg.get("cox") or {}
    if cox.get("source") == "csv":
        if not cox.get("paths"):
            raise ConfigError("cox.source is 'csv' but cox.paths is empty")
        paths.extend(cox["paths"])
    for p in paths:
        if not os.path.isfile(p):
            raise ConfigError(f"data file not found: {p}")
    if data and not any(k in data for k in ("builtin", "path", "synthetic")):
        raise ConfigError("data section needs one of builtin, path or synthetic")
    if "path" in data and "label_column" not in data:
        raise ConfigError("data.path requires data.label_column")


def optimizer_configs(cfg):
    chivi = OptimizerConfig.from_dict({**cfg["optimizer"], "seed": cfg["seed"]})
    klvi_over = cfg.get("klvi_optimizer")
    klvi = (OptimizerConfig.from_dict({**cfg["optimizer"], **klvi_over, "seed": cfg["seed"]})
            if klvi_over else chivi)
    return chivi, klvi


# ---------------------------------------------------------------------------
# Writers
# ---------------------------------------------------------------------------


def _write_text(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt_row(values):
    return [experiments.fmt(v) if isinstance(v, (float, np.floating)) else v for v in values]


def fit_trace_rows(records):
    rows, timing = [], []
    for rec in records:
        if rec.result is None:
            continue
        for r in rec.result.trace.rows:
            rows.append(_fmt_row([rec.run, rec.method] + [getattr(r, c) for c in TRACE_COLUMNS]))
        for it, ms in rec.result.timings_ms:
            timing.append([rec.run, rec.method, it, f"{ms:.3f}"])
    return rows, timing


def write_fit_traces(out, records):
    rows, timing = fit_trace_rows(records)
    _write_text(os.path.join(out, "trace.csv"), _csv_text(("run", "method") + TRACE_COLUMNS, rows))
    _write_text(os.path.join(out, "timing.csv"),
                _csv_text(("run", "method", "iteration", "wall_ms"), timing))


def write_table(out, stem, table):
    _write_text(os.path.join(out, f"{stem}.csv"), table.to_csv())
    _write_text(os.path.join(out, f"{stem}.txt"), table.to_text())


def write_grid(path, grid):
    """A (ny, nx) map; row j holds cells with y index j, x increasing along the row."""
    _write_text(path, _csv_text([f"x{i}" for i in range(grid.shape[1])],
                                [[experiments.fmt(v) for v in row] for row in grid]))


def run_meta(cfg, status, extra=None):
    meta = {
        "config": cfg,
        "seed": cfg["seed"],
        "status": status,
        "versions": {
            "chivi": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "kernel_backend": BACKEND,
        },
        "prediction": "probit-Gaussian identity Phi(m / sqrt(1 + v)), thresholded at 0.5",
        "rng": "numpy PCG64 keyed by (seed, stream, index); trace.csv has no wall-clock fields",
    }
    if extra:
        meta.update(extra)
    return meta


def _dump(path, obj):
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False)
    _write_text(path, text + "\n")


def _jsonable(o):
    """Plain JSON types; non-finite floats become null so the output is strict JSON."""
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.generic):
        o = o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return None
    if o is None or isinstance(o, (bool, int, float, str)):
        return o
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def run_sandwich(cfg, out):
    model = experiments.build_model(cfg["model"], cfg["seed"])
    chivi_cfg, klvi_cfg = optimizer_configs(cfg)
    if cfg.get("klvi_optimizer") is None:
        klvi_cfg = replace(chivi_cfg, seed=chivi_cfg.seed + 1)
    res, exact = experiments.sandwich_experiment(model, chivi_cfg, klvi_cfg)
    rows = [_fmt_row(r) for r in res.gap_trace]
    _write_text(os.path.join(out, "trace.csv"), _csv_text(GAP_COLUMNS, rows))
    records = [experiments.FitRecord("sandwich", "chivi", res.chivi),
               experiments.FitRecord("sandwich", "klvi", res.klvi)]
    frows, timing = fit_trace_rows(records)
    _write_text(os.path.join(out, "fit_trace.csv"),
                _csv_text(("run", "method") + TRACE_COLUMNS, frows))
    _write_text(os.path.join(out, "timing.csv"),
                _csv_text(("run", "method", "iteration", "wall_ms"), timing))
    table = experiments.ResultTable("sandwich bounds at the final trace point")
    name = model.name
    if res.gap_trace:
        last = res.gap_trace[-1]
        table.add(name, "klvi", "elbo", [last[1]])
        table.add(name, "chivi", "cubo", [last[2]])
        table.add(name, "sandwich", "gap", [last[3]])
    if exact is not None:
        table.add(name, "exact", "log_evidence", [exact])
    write_table(out, "sandwich", table)
    ok = bool(res.gap_trace) and np.isfinite(res.final_gap)
    return {
        "passed": ok,
        "final_gap": res.final_gap,
        "log_evidence": exact,
        "chivi": {"reason": res.chivi.reason, "iterations": res.chivi.iterations_run},
        "klvi": {"reason": res.klvi.reason, "iterations": res.klvi.iterations_run},
    }


def run_probit(cfg, out):
    ds = experiments.load_dataset(cfg["data"])
    name = experiments.dataset_label(cfg["data"])
    chivi_cfg, klvi_cfg = optimizer_configs(cfg)
    settings = experiments.ProbitSettings(
        train_fraction=cfg["splits"]["train_fraction"],
        prior_var=cfg["probit"]["prior_var"],
        intercept=cfg["probit"]["intercept"],
        standardize=cfg["probit"]["standardize"],
    )
    res = experiments.probit_benchmark(ds, name, cfg["splits"]["num_repeats"], cfg["seed"],
                                       chivi_cfg, klvi_cfg, settings, cfg["workers"])
    write_fit_traces(out, res.fits)
    write_table(out, "probit_error", res.table)
    _write_text(os.path.join(out, "per_split.csv"), _csv_text(
        ("run", "method", "error"), [[r.run, r.method, experiments.fmt(r.error)] for r in res.fits]))
    return {"passed": True, "table": res.table.rows, "notes": res.notes}


def run_gp(cfg, out):
    ds = experiments.load_dataset(cfg["data"])
    name = experiments.dataset_label(cfg["data"])
    chivi_cfg, klvi_cfg = optimizer_configs(cfg)
    g = cfg["gp"]
    settings = experiments.GPSettings(
        folds=g["folds"], signal_variances=tuple(g["signal_variances"]),
        lengthscales=tuple(g["lengthscales"]) if g["lengthscales"] else None,
        holdout_fraction=g["holdout_fraction"], search_iters=g["search_iters"],
        nugget=g["nugget"], max_n=g["max_n"],
    )
    res = experiments.gp_benchmark(ds, name, cfg["seed"], chivi_cfg, klvi_cfg, settings,
                                   cfg["workers"])
    write_fit_traces(out, res.fits)
    write_table(out, "gp_error", res.table)
    return {"passed": bool(res.table.rows), "table": res.table.rows, "notes": res.notes}


def _cox_grids(cfg):
    c = cfg["cox"]
    if c["source"] == "csv":
        return [(os.path.splitext(os.path.basename(p))[0],
                 load_shot_csv(p, tuple(c["x_range"]), tuple(c["y_range"]), c["nx"], c["ny"],
                               c["made_only"]), None) for p in c["paths"]]
    s = c["synthetic"]
    k = c["kernel"]
    gen = experiments.CoxSynthetic(
        nx=c["nx"], ny=c["ny"], x_range=tuple(c["x_range"]), y_range=tuple(c["y_range"]),
        signal_variance=k["signal_variance"], lengthscale=k["lengthscale"],
        baseline=s["baseline"], scarce_box=tuple(s["scarce_box"]),
        scarce_shift=s["scarce_shift"], zero_events=s["zero_events"],
    )
    out = []
    for r in range(c["runs"]):
        grid, f, _ = experiments.synthetic_cox(gen, experiments.derived_seed(cfg["seed"], 100 + r))
        out.append((f"synthetic{r}", grid, f))
    return out


def run_cox(cfg, out):
    grids = _cox_grids(cfg)
    k = cfg["cox"]["kernel"]
    kernel = KernelParams(k["signal_variance"], k["lengthscale"])
    chivi_cfg, klvi_cfg = optimizer_configs(cfg)
    hmc_cfg = HmcConfig(**cfg["oracle"]["hmc"])
    table, runs = experiments.cox_experiment([(lbl, g) for lbl, g, _ in grids], kernel,
                                             cfg["seed"], chivi_cfg, klvi_cfg, hmc_cfg,
                                             cfg["workers"], cfg["oracle"]["max_retries"])
    maps = os.path.join(out, "maps")
    os.makedirs(maps, exist_ok=True)
    records = []
    for (lbl, grid, truth), run in zip(grids, runs):
        write_grid(os.path.join(maps, f"{lbl}_counts.csv"),
                   grid.cell_counts.reshape(grid.ny, grid.nx).astype(float))
        if truth is not None:
            write_grid(os.path.join(maps, f"{lbl}_truth_logintensity.csv"),
                       truth.reshape(grid.ny, grid.nx))
        for (method, kind), arr in sorted(run.maps.items()):
            write_grid(os.path.join(maps, f"{lbl}_{method}_{kind}.csv"), arr)
        for m, fit in run.fits.items():
            records.append(experiments.FitRecord(lbl, m, fit))
    write_fit_traces(out, records)
    write_table(out, "sd_l1", table)
    return {
        "passed": True,
        "table": table.rows,
        "runs": [{"label": r.label, "sd_l1": r.sd_l1, "mean_l1": r.mean_l1,
                  "hmc_acceptance": r.hmc_rate, "notes": r.notes} for r in runs],
    }


def run_properties(cfg, out):
    p = cfg["properties"]
    rep = experiments.property_suite(p["num_pairs"], seed=cfg["seed"], fault=p["fault"])
    rows = [[c["name"], str(c["passed"]).lower(), experiments.fmt(c["measured"]),
             experiments.fmt(c["tolerance"]), experiments.fmt(c["slack"])] for c in rep["checks"]]
    _write_text(os.path.join(out, "trace.csv"),
                _csv_text(("check", "passed", "measured", "tolerance", "slack"), rows))
    return rep


RUNNERS = {
    "sandwich": run_sandwich,
    "probit_bench": run_probit,
    "gp_bench": run_gp,
    "cox": run_cox,
    "property_suite": run_properties,
}


def execute(cfg):
    """Run a resolved config; returns (exit code, report dict)."""
    out = cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    marker = os.path.join(out, INCOMPLETE)
    _write_text(marker, "run in progress or failed; outputs here may be partial\n")
    _dump(os.path.join(out, "run_meta.json"), run_meta(cfg, "running"))
    t0 = time.perf_counter()
    try:
        report = {"experiment": cfg["experiment"], **RUNNERS[cfg["experiment"]](cfg, out)}
        _dump(os.path.join(out, "report.json"), report)
    except Exception as exc:
        log.error("run failed: %s", exc)
        _dump(os.path.join(out, "run_meta.json"),
              run_meta(cfg, f"failed: {type(exc).__name__}: {exc}"))
        return EXIT_FAILED, None
    _dump(os.path.join(out, "run_meta.json"),
          run_meta(cfg, "complete", {"wall_seconds": round(time.perf_counter() - t0, 3)}))
    os.remove(marker)
    return (EXIT_OK if report.get("passed", True) else EXIT_FAILED), report


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------


def cmd_validate(args):
    raw = load_config(args.config)
    resolve_config(raw, args.seed, args.paper_scale, args.out)
    print(f"{args.config}: ok ({raw['experiment']})")
    return EXIT_OK


def cmd_run(args):
    raw = load_config(args.config)
    cfg = resolve_config(raw, args.seed, args.paper_scale, args.out)
    code, report = execute(cfg)
    if report is not None:
        print(summarize_report(report))
    print(f"outputs in {cfg['output_dir']}")
    return code


def summarize_report(report):
    lines = [f"experiment: {report['experiment']}"]
    if "checks" in report:
        for c in report["checks"]:
            lines.append(f"  {'PASS' if c['passed'] else 'FAIL'} {c['name']} "
                         f"measured={c['measured']:.3g} tolerance={c['tolerance']:.3g}")
    if "final_gap" in report:
        lines.append(f"  final gap {report['final_gap']:.4f}")
    for row in report.get("table", []):
        d, m, k, mean, std, n = row
        lines.append(f"  {d} {m} {k}: {mean:.4f} +/- {std:.4f} (n={n})")
    lines.append(f"  passed: {report.get('passed', True)}")
    return "\n".join(lines)


def cmd_report(args):
    out = args.out
    if not os.path.isdir(out):
        raise ConfigError(f"no such output directory: {out}")
    incomplete = os.path.exists(os.path.join(out, INCOMPLETE))
    path = os.path.join(out, "report.json")
    if incomplete or not os.path.exists(path):
        print(f"{out}: run incomplete")
        return EXIT_FAILED
    with open(path) as fh:
        report = json.load(fh)
    print(summarize_report(report))
    for name in sorted(os.listdir(out)):
        if name.endswith(".txt"):
            with open(os.path.join(out, name)) as fh:
                print(fh.read(), end="")
    return EXIT_OK if report.get("passed", True) else EXIT_FAILED


def build_parser():
    p = argparse.ArgumentParser(prog="chivi", description="CHIVI / KLVI experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb, helptext in (("run", "run an experiment"), ("validate", "check a config only")):
        sp = sub.add_parser(verb, help=helptext)
        sp.add_argument("--config", required=True, help="JSON config (or a run_meta.json)")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--seed", type=int, help="seed (overrides config)")
        sp.add_argument("--paper-scale", action="store_true",
                        help="use full-scale repeat counts instead of desk defaults")
    sp = sub.add_parser("report", help="summarize a finished run")
    sp.add_argument("--out", required=True, help="output directory of a run")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": cmd_run, "validate": cmd_validate, "report": cmd_report}[args.verb]
    try:
        return handler(args)
    except (ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
