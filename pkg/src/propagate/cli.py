"""Command-line pipeline: preprocess, synth, fit, ablate, forecast, noise, recover.

Every command materializes a fully explicit configuration (flags > config
file > PROPAGATE_SEED env default > built-in defaults) and echoes it to
output_dir/config.resolved before doing work, so any run can be reproduced
from its artifacts alone.  All outputs are plain CSV or text with repr-exact
floats; a fixed seed gives byte-identical files across runs.

Exit codes: 0 success, 2 unreadable/invalid input, 3 empty dataset,
4 fit or whole-experiment failure, 5 artifact mismatch (e.g. recover on a
checkpoint that is not the hybrid feedback network).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import evaluate, ingest, neuralnet, symreg, train
from .dynamics import UDE_WIDTHS, context_from_series
from .errors import (
    CheckpointError,
    EmptyDatasetError,
    FitFailureError,
    InputError,
    PropagateError,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_EMPTY = 3
EXIT_FIT = 4
EXIT_ARTIFACT = 5

_INT_KEYS = {"seed", "bin_width", "adam_iters", "lbfgs_iters", "lbfgs_memory",
             "substeps", "terms", "hosts", "noise_seed"}
_FLOAT_KEYS = {"adam_lr", "horizon", "ridge_lambda"}
_LIST_KEYS = {"fractions", "levels"}

_TRAIN_DEFAULTS = {
    "adam_iters": 300, "adam_lr": 5e-4, "lbfgs_iters": 200,
    "lbfgs_memory": 10, "substeps": 4,
}

# per-command option names and their built-in defaults (None = required)
_COMMAND_KEYS = {
    "preprocess": {"input": None, "output_dir": "out", "bin_width": 1800, "seed": 0},
    "synth": {"output_dir": "out", "hosts": 100_000, "horizon": 8.0, "seed": 0},
    "fit": {"series": None, "model": "ude", "output_dir": "out", "seed": 0,
            **_TRAIN_DEFAULTS},
    "ablate": {"series": None, "output_dir": "out", "seed": 0, **_TRAIN_DEFAULTS},
    "forecast": {"series": None, "output_dir": "out", "seed": 0,
                 "fractions": [0.25, 0.5, 0.75], **_TRAIN_DEFAULTS},
    "noise": {"series": None, "output_dir": "out", "seed": 0, "noise_seed": None,
              "levels": [0.0, 0.01, 0.05, 0.1, 0.2], **_TRAIN_DEFAULTS},
    "recover": {"checkpoint": None, "series": None, "trajectory": "",
                "output_dir": "out", "terms": 5, "ridge_lambda": 1.0, "seed": 0,
                "substeps": 4},
}


def _coerce(key: str, raw: str):
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _LIST_KEYS:
        return [float(p) for p in raw.split(",") if p.strip() != ""]
    return raw


def _read_config_file(path: str) -> dict:
    out = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise InputError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, _, val = line.partition("=")
                out[key.strip()] = val.strip()
    except OSError as exc:
        raise InputError(f"cannot read config file: {exc}") from exc
    return out


def resolve_config(command: str, cli_values: dict, config_path: str | None) -> dict:
    """Materialize every option: flags beat file beats env-seed beats default."""
    keys = _COMMAND_KEYS[command]
    file_values = _read_config_file(config_path) if config_path else {}
    resolved = {"command": command}
    for key, default in keys.items():
        if cli_values.get(key) is not None:
            resolved[key] = cli_values[key]
        elif key in file_values:
            try:
                resolved[key] = _coerce(key, file_values[key])
            except ValueError as exc:
                raise InputError(f"config value for {key!r} unparsable: {exc}") from exc
        elif key == "seed" and "PROPAGATE_SEED" in os.environ:
            try:
                resolved[key] = int(os.environ["PROPAGATE_SEED"])
            except ValueError as exc:
                raise InputError(f"PROPAGATE_SEED is not an integer: {exc}") from exc
        else:
            resolved[key] = default
    if command == "noise" and resolved["noise_seed"] is None:
        resolved["noise_seed"] = resolved["seed"]
    missing = [k for k, v in resolved.items() if v is None]
    if missing:
        raise InputError(f"missing required option(s): {', '.join(missing)}")
    return resolved


def _fmt_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ",".join(repr(float(x)) for x in v)
    return str(v)


def _write_resolved(cfg: dict) -> None:
    os.makedirs(cfg["output_dir"], exist_ok=True)
    path = os.path.join(cfg["output_dir"], "config.resolved")
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(cfg):
            fh.write(f"{key} = {_fmt_value(cfg[key])}\n")


def _train_config(cfg: dict) -> train.TrainConfig:
    return train.TrainConfig(
        adam_iters=cfg["adam_iters"], adam_lr=cfg["adam_lr"],
        lbfgs_iters=cfg["lbfgs_iters"], lbfgs_memory=cfg["lbfgs_memory"],
        substeps_per_interval=cfg["substeps"], seed=cfg["seed"],
    )


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _cell(v) -> str:
    if v is None:
        return "nan"
    # np.float64 subclasses float but reprs as np.float64(...); unify first
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_trajectory(path: str, t, M) -> None:
    _write_csv(path, ["time_days", "M"], zip(t, M))


def _load_trajectory_csv(path: str):
    t, M = [], []
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header[:2]] != ["time_days", "M"]:
                raise InputError(f"{path}: not a trajectory CSV")
            for row in reader:
                if not row:
                    continue
                t.append(float(row[0]))
                M.append(float(row[1]))
    except OSError as exc:
        raise InputError(f"cannot read trajectory: {exc}") from exc
    if not t:
        raise InputError(f"{path}: trajectory file holds no rows")
    from .integrate import Trajectory

    return Trajectory(t=np.array(t), M=np.array(M))


def _write_metrics(path: str, bundle: evaluate.MetricBundle) -> None:
    _write_csv(path, ["rmse", "mae", "mape", "pearson"],
               [[bundle.rmse, bundle.mae, bundle.mape, bundle.pearson]])


_MECH_NAMES = ("alpha0", "beta", "kappa", "K", "p_decay")


def _write_mech_params(path: str, kind: str, values: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"kind: {kind}\n")
        for name, v in values.items():
            fh.write(f"{name} = {repr(float(v))}\n")


def _load_mech_params(path: str) -> tuple[str, dict]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise InputError(f"cannot read parameter file: {exc}") from exc
    if not lines or not lines[0].startswith("kind: "):
        raise CheckpointError(f"{path}: not a rate-constant file")
    kind = lines[0][len("kind: "):]
    values = {}
    for ln in lines[1:]:
        name, _, val = ln.partition("=")
        values[name.strip()] = float(val)
    return kind, values


# ---------------------------------------------------------------------------
# commands


def cmd_preprocess(cfg: dict) -> int:
    _write_resolved(cfg)
    result = ingest.parse_events(cfg["input"])
    series = ingest.smooth_series(ingest.bin_events(result.events, cfg["bin_width"]))
    series.validate()
    out = os.path.join(cfg["output_dir"], "series.csv")
    ingest.save_series_csv(series, out)
    print(f"events={len(result.events)} malformed={result.malformed} "
          f"bins={series.n_bins} t_max={series.t[-1]:.6g}")
    return EXIT_OK


def cmd_synth(cfg: dict) -> int:
    _write_resolved(cfg)
    events = ingest.synth_events(cfg["seed"], cfg["hosts"], cfg["horizon"])
    out = os.path.join(cfg["output_dir"], "events.tsv")
    ingest.write_events_tsv(events, out)
    print(f"events={len(events)} file={out}")
    return EXIT_OK


def cmd_fit(cfg: dict) -> int:
    _write_resolved(cfg)
    series = ingest.load_series_csv(cfg["series"])
    series.validate()
    tc = _train_config(cfg)
    out = cfg["output_dir"]
    try:
        res = train.fit(cfg["model"], series, tc)
    except FitFailureError as exc:
        _write_csv(os.path.join(out, "loss_trace.csv"),
                   ["iteration", "phase", "loss"], exc.loss_trace)
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT

    _write_csv(os.path.join(out, "loss_trace.csv"),
               ["iteration", "phase", "loss"], res.loss_trace)
    _write_trajectory(os.path.join(out, "trajectory.csv"),
                      res.trajectory.t, res.trajectory.M)
    _write_metrics(os.path.join(out, "metrics.csv"),
                   evaluate.metrics(series.smoothed, res.trajectory.M))

    kind = cfg["model"]
    if kind in ("ode", "ode_no_feedback"):
        values = dict(zip(_MECH_NAMES, res.params))
        _write_mech_params(os.path.join(out, "checkpoint.txt"), kind, values)
    elif kind == "ude":
        neuralnet.save_checkpoint(os.path.join(out, "checkpoint.txt"),
                                  res.nn_spec, res.params[4:], seed=cfg["seed"])
        theta = dict(zip(("alpha0", "beta", "K", "p_decay"), res.params[:4]))
        _write_mech_params(os.path.join(out, "ode_params.txt"), kind, theta)
    else:
        neuralnet.save_checkpoint(os.path.join(out, "checkpoint.txt"),
                                  res.nn_spec, res.params, seed=cfg["seed"])
    print(f"model={kind} final_loss={res.final_loss!r} "
          f"iters={len(res.loss_trace)} wall_time={res.wall_time:.2f}s")
    return EXIT_OK


_REPORT_HEADER = [
    "label", "kind", "failed", "message",
    "rmse", "mae", "mape", "pearson",
    "rmse_forecast", "mae_forecast", "mape_forecast", "pearson_forecast",
    "improvement_pct",
]


def _arm_row(arm: evaluate.ArmResult) -> list:
    m = arm.metrics
    f = arm.forecast_metrics
    return [
        arm.label, arm.kind, int(arm.failed), arm.message,
        m.rmse if m else None, m.mae if m else None,
        m.mape if m else None, m.pearson if m else None,
        f.rmse if f else None, f.mae if f else None,
        f.mape if f else None, f.pearson if f else None,
        arm.improvement_pct,
    ]


def _safe_label(label: str) -> str:
    return label.replace("@", "_").replace("/", "_")


def _write_report(report: evaluate.ExperimentReport, out_dir: str,
                  observed: np.ndarray, t: np.ndarray) -> None:
    _write_csv(os.path.join(out_dir, "report.csv"), _REPORT_HEADER,
               [_arm_row(a) for a in report.arms])
    for arm in report.arms:
        if arm.trajectory is None:
            continue
        path = os.path.join(out_dir, f"arm_{_safe_label(arm.label)}.csv")
        n = len(arm.trajectory.t)
        _write_csv(path, ["time_days", "observed", "predicted"],
                   zip(t[:n], observed[:n], arm.trajectory.M))


def cmd_experiments(cfg: dict) -> int:
    _write_resolved(cfg)
    series = ingest.load_series_csv(cfg["series"])
    series.validate()
    tc = _train_config(cfg)
    command = cfg["command"]
    if command == "ablate":
        report = evaluate.run_ablation(series, tc)
        observed = series.smoothed
    elif command == "forecast":
        report = evaluate.run_forecast(series, cfg["fractions"], tc)
        observed = series.smoothed
    else:
        report = evaluate.run_noise(series, cfg["levels"], tc,
                                    noise_seed=cfg["noise_seed"])
        observed = series.smoothed
    _write_report(report, cfg["output_dir"], observed, series.t)
    n_failed = sum(1 for a in report.arms if a.failed)
    print(f"experiment={command} arms={len(report.arms)} failed={n_failed}")
    if report.arms and n_failed == len(report.arms):
        return EXIT_FIT
    return EXIT_OK


def cmd_recover(cfg: dict) -> int:
    _write_resolved(cfg)
    spec, phi, _seed = neuralnet.load_checkpoint(cfg["checkpoint"])
    if tuple(spec.layer_widths) != UDE_WIDTHS:
        raise CheckpointError(
            f"checkpoint is a {spec.layer_widths} network, not the "
            f"{UDE_WIDTHS} hybrid feedback network")
    series = ingest.load_series_csv(cfg["series"])
    series.validate()
    ctx = context_from_series(series)
    traj = _recover_trajectory(cfg, phi, series, ctx)
    samples = symreg.sample_network(phi, traj, ctx.max_eta)
    full = symreg.ridge_fit(samples, lam=cfg["ridge_lambda"])
    simplified = symreg.simplify(full, samples, cfg["terms"])
    out = cfg["output_dir"]
    _write_csv(os.path.join(out, "model_full.csv"), ["term", "coefficient"],
               full.coefficients.items())
    _write_csv(os.path.join(out, "model_simplified.csv"), ["term", "coefficient"],
               simplified.coefficients.items())
    _write_csv(os.path.join(out, "term_report.csv"),
               ["term", "coefficient", "sign_class", "mechanism"],
               [[r.term, r.coefficient, r.sign_class, r.mechanism]
                for r in symreg.term_report(simplified)])
    yhat_full = symreg.evaluate_symbolic(full, samples.m)
    yhat_simple = symreg.evaluate_symbolic(simplified, samples.m)
    _write_csv(os.path.join(out, "samples.csv"),
               ["m", "y", "yhat_full", "yhat_simplified"],
               zip(samples.m, samples.y, yhat_full, yhat_simple))
    with open(os.path.join(out, "expression.txt"), "w", encoding="utf-8") as fh:
        fh.write(symreg.render_expression(simplified) + "\n")
    print(f"terms={len(simplified.coefficients)} "
          f"rmse_full={full.fit_rmse!r} rmse_simplified={simplified.fit_rmse!r}")
    return EXIT_OK


def _recover_trajectory(cfg: dict, phi: np.ndarray, series, ctx):
    """Trajectory to sample along: explicit flag, sibling file, or resimulation."""
    if cfg["trajectory"]:
        return _load_trajectory_csv(cfg["trajectory"])
    ckpt_dir = os.path.dirname(os.path.abspath(cfg["checkpoint"]))
    sibling = os.path.join(ckpt_dir, "trajectory.csv")
    if os.path.exists(sibling):
        return _load_trajectory_csv(sibling)
    theta_path = os.path.join(ckpt_dir, "ode_params.txt")
    if os.path.exists(theta_path):
        kind, values = _load_mech_params(theta_path)
        if kind != "ude":
            raise CheckpointError(f"{theta_path}: expected hybrid constants, got {kind!r}")
        theta = np.array([values[n] for n in ("alpha0", "beta", "K", "p_decay")])
        params = np.concatenate([theta, phi])
        tc = train.TrainConfig(substeps_per_interval=cfg["substeps"])
        return train.simulate_trajectory("ude", params, series.t, ctx, tc)
    raise InputError(
        "no trajectory available: pass --trajectory, or keep trajectory.csv / "
        "ode_params.txt next to the checkpoint")


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--output-dir", dest="output_dir", help="artifact directory (default: out)")
    p.add_argument("--seed", type=int, help="RNG seed (default: $PROPAGATE_SEED or 0)")


def _add_trainer(p: argparse.ArgumentParser) -> None:
    p.add_argument("--adam-iters", dest="adam_iters", type=int)
    p.add_argument("--adam-lr", dest="adam_lr", type=float)
    p.add_argument("--lbfgs-iters", dest="lbfgs_iters", type=int)
    p.add_argument("--lbfgs-memory", dest="lbfgs_memory", type=int)
    p.add_argument("--substeps", type=int, help="RK4 substeps per grid interval")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="propagate",
        description="Malware propagation modeling: preprocess scan logs, fit "
                    "mechanistic/hybrid/neural models, run comparisons, and "
                    "recover symbolic feedback terms.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="parse + bin + smooth a scan-event TSV")
    p.add_argument("--input", help="tab-separated scan-event file")
    p.add_argument("--bin-width", dest="bin_width", type=int, help="bin width in seconds")
    _add_common(p)

    p = sub.add_parser("synth", help="generate a synthetic outbreak event file")
    p.add_argument("--hosts", type=int, help="plateau event rate per day")
    p.add_argument("--horizon", type=float, help="observation window in days")
    _add_common(p)

    p = sub.add_parser("fit", help="fit one model to a series CSV")
    p.add_argument("--series", help="preprocessed series CSV")
    p.add_argument("--model", choices=["ode", "ode_no_feedback", "ude", "node"])
    _add_trainer(p)
    _add_common(p)

    for name, blurb in (("ablate", "feedback-term ablation study"),
                        ("forecast", "limited-data forecasting study"),
                        ("noise", "noise-robustness study")):
        p = sub.add_parser(name, help=blurb)
        p.add_argument("--series", help="preprocessed series CSV")
        if name == "forecast":
            p.add_argument("--fractions", type=lambda s: _coerce("fractions", s))
        if name == "noise":
            p.add_argument("--levels", type=lambda s: _coerce("levels", s))
            p.add_argument("--noise-seed", dest="noise_seed", type=int)
        _add_trainer(p)
        _add_common(p)

    p = sub.add_parser("recover", help="symbolic recovery from a hybrid checkpoint")
    p.add_argument("--checkpoint", help="trained feedback-network checkpoint")
    p.add_argument("--series", help="series CSV the model was trained on")
    p.add_argument("--trajectory", help="trajectory CSV to sample along (optional)")
    p.add_argument("--terms", type=int, help="terms kept in the simplified model")
    p.add_argument("--ridge-lambda", dest="ridge_lambda", type=float)
    p.add_argument("--substeps", type=int)
    _add_common(p)

    return parser


_HANDLERS = {
    "preprocess": cmd_preprocess,
    "synth": cmd_synth,
    "fit": cmd_fit,
    "ablate": cmd_experiments,
    "forecast": cmd_experiments,
    "noise": cmd_experiments,
    "recover": cmd_recover,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cli_values = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = resolve_config(args.command, cli_values, args.config)
        return _HANDLERS[args.command](cfg)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EmptyDatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except FitFailureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except PropagateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
