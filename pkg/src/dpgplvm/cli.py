"""Command-line front end.

Exit codes: 0 success, 1 bad input or configuration, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import inference, io, synthetic
from .exceptions import ConfigError, DPGPLVMError, InputError, NumericError
from .model import Mode, ModelConfig
from .training import train

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2

log = logging.getLogger("dpgplvm")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage, which is reserved for numeric failures here
    def error(self, message):
        raise _UsageError(message)


def _out(args, name):
    return os.path.join(args.out_dir, name)


def _write_all(files):
    """Write every ``(path, text)`` pair; nothing is written if any text is missing."""
    for path, _ in files:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    for path, text in files:
        io.write_text_atomic(path, text)


# --- train ------------------------------------------------------------------------

def _load_config(args, n, d):
    text = "{}"
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    mode_name = args.mode or raw.get("mode") or "dpgplvm"
    raw["mode"] = mode_name
    if mode_name == "bgplvm":
        raw["t"] = 1
    if args.seed is not None:
        raw["seed"] = args.seed
    if mode_name == "mrd":
        if not args.groups:
            raise InputError("--mode mrd requires --groups")
        labels = io.read_labels_csv(args.groups)
        if labels.size != d:
            raise InputError(f"--groups has {labels.size} labels but the data has {d} columns")
        raw["t"] = int(labels.max()) + 1
        mode = Mode.mrd(labels)
    else:
        mode = Mode(mode_name)
    raw.setdefault("q", 3)
    raw.setdefault("t", min(5, d))
    config, _ = ModelConfig.from_json(raw, n=n, d=d)
    mode.check(config)
    return config, mode


def cmd_train(args):
    data = io.read_data_csv(args.data)
    n, d = data.values.shape
    config, mode = _load_config(args, n, d)
    data.check(1)
    trace = train(data, config, mode, verbose=args.verbose)
    state = trace.final_state
    rows = [
        (r.iter, r.total, r.gp.total, r.dp.total, r.hyperprior) for r in trace.elbo_history
    ]
    files = [(_out(args, "trace.csv"), io.format_csv(["iter", "total", "gp", "dp", "hyperprior"], rows))]
    if trace.error is not None:
        _write_all(files)
        print(f"numeric failure: {trace.error}", file=sys.stderr)
        return EXIT_NUMERIC
    elbo_final = trace.elbo_history[-1].total
    files += [
        (_out(args, "model.json"), io.dumps_state(state, elbo_final)),
        (_out(args, "ard.csv"), io.matrix_csv(state.components.ard, "q")),
        (_out(args, "phi.csv"), io.matrix_csv(state.dp.phi, "t")),
    ]
    _write_all(files)
    status = "converged" if trace.converged else "stopped at max_iters"
    print(json.dumps({"elbo": elbo_final, "iterations": len(trace.elbo_history) - 1, "status": status}))
    return EXIT_OK


# --- synth ------------------------------------------------------------------------

def _floats(text):
    values = [float(x) for x in text.split(",")]
    return values[0] if len(values) == 1 else tuple(values)


def cmd_synth(args):
    groups = synthetic.parse_groups(args.groups) if args.groups else synthetic.SyntheticSpec.groups
    try:
        spec = synthetic.SyntheticSpec(
            n=args.n, d=args.d, q_true=args.q_true, groups=groups,
            sigma2_true=_floats(args.sigma2), gamma_true=_floats(args.gamma), beta_true=_floats(args.beta),
            seed=0 if args.seed is None else args.seed,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None
    data = synthetic.generate(spec)
    full = data.Y.values
    files = []
    observed = full
    if args.mask_rows or args.mask_dims:
        if not (args.mask_rows and args.mask_dims):
            raise InputError("--mask-rows and --mask-dims must be given together")
        masked = synthetic.mask_random(data.Y, args.mask_rows, args.mask_dims, seed=spec.seed)
        observed = np.where(masked.mask, full, np.nan)
        files.append((_out(args, f"{args.name}_complete.csv"), io.matrix_csv(full, "y")))
    sidecar = {
        "spec": spec.to_dict(),
        "labels": [int(x) + 1 for x in data.labels],
        "X_true": data.X_true.tolist(),
    }
    files.insert(0, (_out(args, f"{args.name}.csv"), io.matrix_csv(observed, "y")))
    files.append((_out(args, f"{args.name}.json"), json.dumps(sidecar, indent=1) + "\n"))
    _write_all(files)
    return EXIT_OK


# --- impute / predict / score --------------------------------------------------------

def _load_model(path):
    state, _ = io.load_state(path)
    return state


def cmd_impute(args):
    state = _load_model(args.model)
    data = io.read_data_csv(args.data)
    truth = None
    if args.truth:
        _, truth = io.read_matrix_csv(args.truth)
    result = inference.impute(state, data, truth)
    rows = [
        (int(r) + 1, int(c) + 1, m, v)
        for r, c, m, v in zip(result.rows, result.cols, result.prediction.mean, result.prediction.var)
    ]
    _write_all([(_out(args, "imputed.csv"), io.format_csv(["row", "col", "mean", "var"], rows))])
    if result.mse is not None:
        print(json.dumps({"mse": result.mse, "n_imputed": int(result.rows.size)}))
    return EXIT_OK


def _parse_dims(text, d):
    if not text:
        return list(range(d))
    try:
        dims = [int(x) - 1 for x in text.split(",")]
    except ValueError:
        raise InputError(f"malformed --dims {text!r}") from None
    if any(not 0 <= j < d for j in dims):
        raise InputError(f"--dims entries must lie in 1..{d}")
    return dims


def cmd_predict(args):
    state = _load_model(args.model)
    data = io.read_data_csv(args.data)
    _, latent = io.read_matrix_csv(args.latent)
    if latent.ndim != 2 or latent.shape[1] != state.config.q or not np.all(np.isfinite(latent)):
        raise InputError(f"--latent must be a complete matrix with {state.config.q} columns")
    dims = _parse_dims(args.dims, state.config.d)
    pred = inference.predict(state, data, latent, dims)
    header = [f"y{j + 1}" for j in dims]
    _write_all([
        (_out(args, "mean.csv"), io.format_csv(header, pred.mean.tolist())),
        (_out(args, "var.csv"), io.format_csv(header, pred.var.tolist())),
    ])
    return EXIT_OK


def _read_truth(path, d):
    if path.endswith(".json"):
        try:
            with open(path, encoding="utf-8") as fh:
                labels = json.load(fh)["labels"]
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read labels from {path}: {exc}") from None
        labels = np.asarray(labels)
    else:
        labels = io.read_labels_csv(path)
    if labels.shape != (d,):
        raise InputError(f"truth has {labels.size} labels but the model has {d} dimensions")
    return labels


def cmd_score(args):
    state = _load_model(args.model)
    truth = _read_truth(args.truth, state.config.d)
    score = synthetic.grouping_score(state.dp.phi, truth, args.threshold)
    print(json.dumps({"accuracy": score.accuracy, "n_effective": score.n_effective}))
    return EXIT_OK


# --- entry point ------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="dpgplvm", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None, help="random seed (overrides config)")
    parser.add_argument("--verbose", action="store_true", help="JSON-lines progress on stderr")
    parser.add_argument("--out-dir", default=".", help="directory for output files")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="fit a model to a data CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--mode", choices=("dpgplvm", "bgplvm", "mrd"))
    p.add_argument("--groups", help="CSV with one group label per column (mrd)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="generate a grouped synthetic dataset")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--d", type=int, default=20)
    p.add_argument("--q-true", type=int, default=3)
    p.add_argument("--groups", help='e.g. "1-10:1,2;11-20:1,3" (1-based)')
    p.add_argument("--sigma2", default="1.0", help="signal variance, one value or one per group")
    p.add_argument("--gamma", default="0.25", help="ARD weight of active latents")
    p.add_argument("--beta", default="100.0", help="noise precision")
    p.add_argument("--mask-rows", type=float, default=None, help="fraction of rows to mask")
    p.add_argument("--mask-dims", type=float, default=None, help="fraction of columns to mask")
    p.add_argument("--name", default="data", help="output file stem")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("impute", help="predict the missing entries of the training data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--truth", help="complete CSV used to report the MSE")
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("predict", help="predictive mean and variance at latent points")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--latent", required=True, help="CSV of latent points, one per row")
    p.add_argument("--dims", help="1-based comma-separated columns (default: all)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score", help="grouping accuracy against known labels")
    p.add_argument("--model", required=True)
    p.add_argument("--truth", required=True, help="labels CSV or a synth sidecar JSON")
    p.add_argument("--threshold", type=float, default=0.05)
    p.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"dpgplvm: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr
    )
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DPGPLVMError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
