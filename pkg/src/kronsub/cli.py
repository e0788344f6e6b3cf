"""Command-line front end.

Every output file carries the manifest of the run that produced it (a JSON
``manifest`` key, or a ``# manifest {...}`` line in text files), and
``kronsub rerun FILE`` regenerates that file byte for byte from it.
"""

import argparse
import csv
import io
import json
import math
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .bounds import CapacityParams, bound_report, capacity_bounds
from .classifier import DecisionRule, importance_sampling_pe, monte_carlo_pe
from .dataio import dumps, dumps_dicts, load_dict_file, load_tensor_file, synth_dataset
from .errors import KronsubError
from .geometry import diversity_order, expected_pair_rank
from .ksld2 import KSLD2Config, LearnedModel, classify_batch, fit, infer_coefficients
from .model import Dims, KSEnsemble, RngStream, sample_ensemble

PROG = "kronsub"
MANIFEST_TAG = "manifest "


class UsageError(Exception):
    pass


# -- strict argument types -------------------------------------------------


def finite_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number: {text!r}") from None
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"number must be finite: {text!r}")
    return v


def positive_float(text):
    v = finite_float(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"must be > 0: {text!r}")
    return v


def nonneg_float(text):
    v = finite_float(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0: {text!r}")
    return v


def _int(text, low):
    try:
        v = int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer: {text!r}") from None
    if v < low:
        raise argparse.ArgumentTypeError(f"must be >= {low}: {text!r}")
    return v


def positive_int(text):
    return _int(text, 1)


def nonneg_int(text):
    return _int(text, 0)


def snr_range(text):
    """``start:step:stop`` inclusive of ``stop`` (within rounding), or a single value."""
    parts = text.split(":")
    if len(parts) == 1:
        finite_float(parts[0])
        return text
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected start:step:stop, got {text!r}")
    start, step, stop = (finite_float(p) for p in parts)
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError(f"need step > 0 and stop >= start in {text!r}")
    return text


def parse_snr(text):
    parts = [float(p) for p in text.split(":")]
    if len(parts) == 1:
        return np.array(parts)
    start, step, stop = parts
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)


# -- parser ------------------------------------------------------------------


def _add_dims(p, classes=True):
    for name in ("m1", "m2", "n1", "n2"):
        p.add_argument(f"--{name}", type=positive_int, required=True)
    if classes:
        p.add_argument("--classes", type=positive_int, default=2, help="number of classes L (default 2)")


def _add_out(p, default="-"):
    p.add_argument("--out", default=default, help="output path ('-' for standard output)")


def build_parser():
    parser = argparse.ArgumentParser(prog=PROG, description="Kronecker-structured subspace classification toolkit.")
    parser.add_argument("--version", action="version", version=f"{PROG} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="draw an ensemble and a labelled dataset (kst file)")
    _add_dims(p)
    p.add_argument("--per-class", type=positive_int, required=True)
    p.add_argument("--sigma2", type=nonneg_float, required=True)
    p.add_argument("--seed", type=nonneg_int, default=0, help="ensemble seed")
    p.add_argument("--data-stream", type=nonneg_int, default=0, help="dataset substream; vary it for held-out splits")
    p.add_argument("--ensemble-out", default=None, help="also write the ensemble dictionaries here")
    _add_out(p)

    p = sub.add_parser("simulate", help="Monte Carlo misclassification probability over an SNR grid")
    _add_dims(p)
    p.add_argument("--snr-db", type=snr_range, required=True, help="start:step:stop in dB")
    p.add_argument("--trials", type=positive_int, required=True, help="trials per class per SNR point")
    p.add_argument("--seed", type=nonneg_int, default=0)
    p.add_argument("--rule", choices=[r.value for r in DecisionRule], default="ml")
    p.add_argument("--estimator", choices=["naive", "importance"], default="naive")
    p.add_argument("--identical-classes", action="store_true", help="every class reuses the dictionaries of class 0")
    p.add_argument("--ensemble", default=None, help="ensemble file to use instead of drawing one")
    p.add_argument("--workers", type=positive_int, default=1)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    _add_out(p)

    p = sub.add_parser("geometry", help="diversity orders of a dimension setting")
    _add_dims(p, classes=False)
    _add_out(p)

    p = sub.add_parser("bounds", help="analytic error bounds of an ensemble over an SNR grid")
    _add_dims(p)
    p.add_argument("--snr-db", type=snr_range, required=True)
    p.add_argument("--seed", type=nonneg_int, default=0)
    p.add_argument("--ensemble", default=None)
    p.add_argument("--plus-root", action="store_true", help="use the root of the angle thresholds with t1 t2 = r_cap")
    p.add_argument("--exact-prefactor", action="store_true", help="use 2^((r*-2)/2) in the angle-bound constant")
    _add_out(p)

    p = sub.add_parser("capacity", help="classification capacity bounds")
    for name in ("kappa1", "kappa2", "nu1", "nu2"):
        p.add_argument(f"--{name}", type=positive_float, required=True)
    p.add_argument("--sigma2", type=positive_float, required=True)
    _add_out(p)

    p = sub.add_parser("learn", help="fit K-SLD2 dictionaries to a kst file")
    p.add_argument("--data", required=True)
    p.add_argument("--n1", type=positive_int, required=True)
    p.add_argument("--n2", type=positive_int, required=True)
    p.add_argument("--mu", type=nonneg_float, default=0.9)
    p.add_argument("--max-iters", type=nonneg_int, default=200)
    p.add_argument("--rel-tol", type=positive_float, default=1e-6)
    p.add_argument("--ridge", type=nonneg_float, default=1e-8)
    p.add_argument("--seed", type=nonneg_int, default=0, help="initialisation seed")
    p.add_argument("--history", default=None, help="also write the objective history CSV here")
    _add_out(p)

    p = sub.add_parser("classify", help="classify a kst file with a learned model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    _add_out(p)

    p = sub.add_parser("rerun", help="regenerate an output file from its embedded manifest")
    p.add_argument("file")
    p.add_argument("--out", default="-")
    return parser


# -- manifest ----------------------------------------------------------------

_NOT_PARAMETERS = {"command", "out", "ensemble_out", "history"}


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def make_manifest(command, params, started):
    return {
        "command": command,
        "parameters": params,
        "seed": int(params.get("seed", 0)),
        "tool_version": __version__,
        "started": started,
        "finished": _now(),
    }


def manifest_line(manifest):
    return MANIFEST_TAG + json.dumps(manifest, sort_keys=True, allow_nan=False)


def read_manifest(text):
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            return json.loads(text)["manifest"]
        except (json.JSONDecodeError, KeyError, TypeError):
            raise KronsubError("JSON file has no manifest") from None
    for ln in text.splitlines():
        if not ln.startswith("#"):
            break
        body = ln[1:].strip()
        if body.startswith(MANIFEST_TAG):
            return json.loads(body[len(MANIFEST_TAG):])
    raise KronsubError("file carries no manifest")


# -- output helpers ----------------------------------------------------------


def _json_doc(manifest, result):
    return json.dumps({"manifest": manifest, "result": result}, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _nums(a):
    """List of floats with NaN mapped to None."""
    return [None if not np.isfinite(v) else float(v) for v in np.asarray(a, dtype=float).ravel()]


def _csv_text(manifest, rows, extra_comments=()):
    buf = io.StringIO()
    buf.write(f"# {manifest_line(manifest)}\n")
    for c in extra_comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _write(path, text):
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)


def _dims(params, L=None):
    try:
        return Dims(params["m1"], params["m2"], params["n1"], params["n2"], params.get("classes", 2) if L is None else L)
    except ValueError as e:
        raise UsageError(f"--m1/--m2/--n1/--n2/--classes: {e}") from None


def _ensemble(params):
    if params.get("ensemble"):
        classes, _ = load_dict_file(params["ensemble"])
        ens = KSEnsemble.from_classes(classes)
        d = ens.dims
        if (d.m1, d.m2, d.n1, d.n2, d.L) != (params["m1"], params["m2"], params["n1"], params["n2"], params["classes"]):
            raise UsageError(f"--ensemble: file dimensions {d} disagree with the dimension flags")
        return ens
    dims = _dims(params)
    ens = sample_ensemble(dims, RngStream(params["seed"], 0))
    if params.get("identical_classes"):
        ens = KSEnsemble(dims, (ens[0],) * dims.L)
    return ens


# -- commands ----------------------------------------------------------------
# Each command maps its parameters to {output kind: render(manifest) -> text}.


def cmd_synth(params):
    ens = _ensemble(params)
    data = synth_dataset(ens, params["per_class"], params["sigma2"], RngStream(params["seed"], (1, params["data_stream"])))
    return {
        "kst": lambda m: dumps(data, [manifest_line(m)]),
        "ksdict": lambda m: dumps_dicts(ens, {"kind": "ensemble"}, [manifest_line(m)]),
    }


def cmd_simulate(params):
    ens = _ensemble(params)
    snr = parse_snr(params["snr_db"])
    rule = DecisionRule(params["rule"])
    est = importance_sampling_pe if params["estimator"] == "importance" else monte_carlo_pe
    curve = est(ens, snr, params["trials"], params["seed"], rule, workers=params["workers"])
    if params["format"] == "csv":
        return {"csv": lambda m: _csv_text(m, curve.to_csv_rows())}
    zero = curve.errors == 0
    result = {
        "snr_db": _nums(curve.snr_db),
        "pe": _nums(curve.pe),
        "stderr": _nums(curve.stderr),
        "errors": [int(e) for e in curve.errors],
        "trials": curve.trials,
        "classes": curve.n_classes,
        "estimator": curve.estimator,
        "upper95": [3.0 / curve.trials if z else None for z in zero],
        "upper95_reason": [None if z else "errors observed; use stderr" for z in zero],
    }
    return {"json": lambda m: _json_doc(m, result)}


def cmd_geometry(params):
    dims = _dims(params, L=2)
    rep = diversity_order(dims).to_dict()
    rep["pair_rank"] = expected_pair_rank(dims)
    return {"json": lambda m: _json_doc(m, rep)}


def cmd_bounds(params):
    ens = _ensemble(params)
    rep = bound_report(ens, parse_snr(params["snr_db"]), params["plus_root"], params["exact_prefactor"])
    result = {
        "snr_db": _nums(rep.snr_db),
        "pairs": [list(p) for p in rep.pairs],
        "pairwise_bound": [_nums(r) for r in rep.pairwise_bound],
        "union_bound": _nums(rep.union_bound),
        "angle_bound": [_nums(r) for r in rep.angle_bound],
        "c1": _nums(rep.c1),
        "t1": list(rep.t1),
        "t2": list(rep.t2),
        "angle_reason": list(rep.angle_reason),
    }
    return {"json": lambda m: _json_doc(m, result)}


def cmd_capacity(params):
    try:
        p = CapacityParams(params["kappa1"], params["kappa2"], params["nu1"], params["nu2"], params["sigma2"])
    except ValueError as e:
        raise UsageError(f"--kappa1/--kappa2/--nu1/--nu2/--sigma2: {e}") from None
    cb = capacity_bounds(p)
    result = {"upper": cb.upper, "lower": cb.lower, "prelog_upper": cb.prelog_upper, "prelog_lower": cb.prelog_lower}
    return {"json": lambda m: _json_doc(m, result)}


def cmd_learn(params):
    data = load_tensor_file(params["data"])
    try:
        cfg = KSLD2Config(
            params["n1"], params["n2"], params["mu"], params["max_iters"], params["rel_tol"], params["ridge"], params["seed"]
        )
    except ValueError as e:
        raise UsageError(str(e)) from None
    model = fit(data, cfg)
    rows = [("iteration", "objective")] + [(str(k), repr(v)) for k, v in enumerate(model.history)]
    return {"ksdict": lambda m: model.to_text([manifest_line(m)]), "csv": lambda m: _csv_text(m, rows)}


def cmd_classify(params):
    model = LearnedModel.load(params["model"])
    data = load_tensor_file(params["data"])
    if data.L != model.L:
        raise KronsubError(f"data has {data.L} classes, model has {model.L}")
    pred, err = classify_batch(data.signals, model)
    X = infer_coefficients(data.signals, model.dicts, model.ridge)
    energy = np.sum(data.signals**2, axis=(1, 2))
    rows = [("index", "label", "predicted", "nre") + tuple(f"error_{l}" for l in range(model.L))]
    nres = []
    for k in range(len(data)):
        d = model.dicts[pred[k]]
        resid = data.signals[k] - d.A @ X[k, pred[k]] @ d.B.T
        v = float(np.sum(resid**2) / energy[k]) if energy[k] > 0 else float("nan")
        nres.append(v)
        rows.append((str(k), str(int(data.labels[k])), str(int(pred[k])), repr(v)) + tuple(repr(float(e)) for e in err[k]))
    acc = float(np.mean(pred == data.labels)) if len(data) else float("nan")
    summary = f"accuracy {acc!r} mean_nre {float(np.nanmean(nres)) if nres else float('nan')!r}"
    return {"csv": lambda m: _csv_text(m, rows, [summary])}


COMMANDS = {
    "synth": cmd_synth,
    "simulate": cmd_simulate,
    "geometry": cmd_geometry,
    "bounds": cmd_bounds,
    "capacity": cmd_capacity,
    "learn": cmd_learn,
    "classify": cmd_classify,
}

# output kind written to --out; extra outputs and their flags
PRIMARY_KIND = {"synth": "kst", "geometry": "json", "bounds": "json", "capacity": "json", "learn": "ksdict", "classify": "csv"}
EXTRA_OUTPUTS = {"synth": {"ensemble_out": "ksdict"}, "learn": {"history": "csv"}}


def _primary_kind(command, params):
    if command == "simulate":
        return params["format"]
    return PRIMARY_KIND[command]


def _file_kind(text):
    if text.lstrip().startswith("{"):
        return "json"
    for ln in text.splitlines():
        if ln.startswith("#"):
            continue
        head = ln.split(" ", 1)[0]
        return {"kst": "kst", "ksdict": "ksdict"}.get(head, "csv")
    return "csv"


def execute(args):
    params = {k: v for k, v in vars(args).items() if k not in _NOT_PARAMETERS}
    started = _now()
    outputs = COMMANDS[args.command](params)
    manifest = make_manifest(args.command, params, started)
    _write(args.out, outputs[_primary_kind(args.command, params)](manifest))
    for flag, kind in EXTRA_OUTPUTS.get(args.command, {}).items():
        path = getattr(args, flag, None)
        if path:
            _write(path, outputs[kind](manifest))


def rerun(path, out):
    with open(path, encoding="utf-8") as f:
        text = f.read()
    manifest = read_manifest(text)
    command = manifest.get("command")
    if command not in COMMANDS:
        raise KronsubError(f"manifest names unknown command {command!r}")
    outputs = COMMANDS[command](dict(manifest["parameters"]))
    kind = _file_kind(text)
    if kind not in outputs:
        raise KronsubError(f"command {command!r} does not produce {kind} output")
    _write(out, outputs[kind](manifest))


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.command == "rerun":
            rerun(args.file, args.out)
        else:
            execute(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return 2
    except (KronsubError, OSError, ValueError) as e:
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return 1
    return 0


run = main


if __name__ == "__main__":
    sys.exit(main())
