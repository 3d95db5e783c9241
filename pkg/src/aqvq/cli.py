"""Command-line surface: training, sweeps, ablations, analysis, reports.

Every run writes its fully resolved configuration next to its outputs;
rerunning from that file reproduces the results bit for bit. The
``AQVQ_SEED`` environment variable overrides the configured seed.

Exit codes: 0 success, 1 configuration problem, 2 runtime or numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import fit_analytic, gradient_gap
from .data import DatasetSource, make_dataset
from .errors import ConfigError, ContractError, DimensionError, FitError, FormatError, NumericError
from .experiments import AblationGrid, run_ablation, run_fixed_sweep, train_run
from .model import ModelConfig
from .persist import (
    RunReport,
    checkpoint_config,
    config_hash,
    load_checkpoint,
    resolve_run_config,
    save_checkpoint,
)

__all__ = ["cli_main", "main"]

SEED_ENV_VAR = "AQVQ_SEED"


def _load_run_config(path: str | None) -> dict:
    """Read and resolve a run config file; defaults when no path is given."""
    if path is None:
        return resolve_run_config({})
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError(f"{p}: malformed JSON at line {err.lineno}: {err.msg}") from err
    return resolve_run_config(raw)


def _apply_seed_override(resolved: dict) -> dict:
    seed = os.environ.get(SEED_ENV_VAR)
    if seed is None:
        return resolved
    try:
        value = int(seed)
    except ValueError as err:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {seed!r}") from err
    resolved["model"]["seed"] = value
    resolved["dataset"]["seed"] = value
    return resolved


def _prepare(resolved: dict, out_dir: str):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "resolved_config.json", "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=1, sort_keys=True)
        fh.write("\n")
    model = ModelConfig.from_dict(resolved["model"])
    dataset = make_dataset(DatasetSource.from_dict(resolved["dataset"]))
    return out, model, dataset


def _cmd_train(args) -> int:
    resolved = _apply_seed_override(_load_run_config(args.config))
    out, config, dataset = _prepare(resolved, args.out)
    train = resolved["train"]
    state = None
    steps = train["steps"]
    if args.resume is not None:
        state = load_checkpoint(args.resume)
        if state.config != config:
            raise ConfigError(
                f"checkpoint {args.resume} was trained with a different model config"
            )
        steps = train["steps"] - state.step
        print(f"resumed at step {state.step}; {max(steps, 0)} steps remaining")
        if steps < 1:
            save_checkpoint(state, out / "checkpoint.json",
                            dataset=DatasetSource.from_dict(resolved["dataset"]))
            return 0
    state, report = train_run(config, dataset, steps,
                              record_every=train["record_every"],
                              gap_every=train["gap_every"],
                              probe_size=train["probe_size"],
                              eval_batch_size=train["eval_batch_size"],
                              resolved_config=resolved,
                              state=state)
    save_checkpoint(state, out / "checkpoint.json",
                    dataset=DatasetSource.from_dict(resolved["dataset"]))
    report.to_json(out / "report.json")
    summary = report.summary
    print(f"trained to step {state.step}; "
          f"final validation recon sum {summary['final_val_recon_sum']:.6f} "
          f"(config {summary['config_hash'][:12]})")
    return 0


def _cmd_sweep(args) -> int:
    resolved = _apply_seed_override(_load_run_config(args.config))
    out, config, dataset = _prepare(resolved, args.out)
    train = resolved["train"]
    results = run_fixed_sweep(dataset, args.capacity, train["steps"],
                              config.seed, base=config, gap_every=train["gap_every"])
    rows = []
    for res in results:
        rows.append({
            "n": res.spec.n,
            "d": res.spec.d,
            "final_val_recon_sum": res.final_val_recon_sum,
            "final_val_recon_mean": res.final_val_recon_mean,
            "config_hash": res.config_hash,
            "error": res.error,
        })
    with open(out / "sweep.json", "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=1)
        fh.write("\n")
    header = "n,d,final_val_recon_sum,final_val_recon_mean,config_hash,error"
    lines = [header] + [
        f"{r['n']},{r['d']},"
        f"{'' if r['final_val_recon_sum'] is None else repr(r['final_val_recon_sum'])},"
        f"{'' if r['final_val_recon_mean'] is None else repr(r['final_val_recon_mean'])},"
        f"{r['config_hash']},{r['error'] or ''}"
        for r in rows
    ]
    (out / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for r in rows:
        status = f"recon_sum={r['final_val_recon_sum']:.6f}" if r["error"] is None else f"FAILED: {r['error']}"
        print(f"[{r['n']},{r['d']}] {status}")
    return 0


def _cmd_adaptive(args) -> int:
    resolved = _apply_seed_override(_load_run_config(args.config))
    out, config, dataset = _prepare(resolved, args.out)
    train = resolved["train"]
    config = replace(config, quantizer="adaptive", capacity=args.capacity)
    state, report = train_run(config, dataset, train["steps"],
                              record_every=train["record_every"],
                              gap_every=train["gap_every"],
                              probe_size=train["probe_size"],
                              eval_batch_size=train["eval_batch_size"],
                              resolved_config=resolved)
    save_checkpoint(state, out / "checkpoint.json",
                    dataset=DatasetSource.from_dict(resolved["dataset"]))
    report.to_json(out / "report.json")
    print(f"adaptive run over {len(state.codebooks)} codebooks; "
          f"final validation recon sum {report.summary['final_val_recon_sum']:.6f}")
    return 0


def _cmd_ablate(args) -> int:
    grid_spec = {}
    if args.grid is not None:
        grid_path = Path(args.grid)
        if not grid_path.exists():
            raise ConfigError(f"grid file not found: {grid_path}")
        grid_spec = json.loads(grid_path.read_text(encoding="utf-8"))
    known = {"capacities", "use_ema", "alphas", "betas"}
    unknown = set(grid_spec) - known
    if unknown:
        raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
    grid = AblationGrid(**{k: tuple(v) for k, v in grid_spec.items()})
    resolved = _apply_seed_override(_load_run_config(args.config))
    out, config, dataset = _prepare(resolved, args.out)
    train = resolved["train"]
    rows = []
    for seed in args.seeds or [config.seed]:
        rows.extend(run_ablation(dataset, grid, train["steps"], seed, base=config))
    with open(out / "ablation.json", "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=1)
        fh.write("\n")
    header = "cell,seed,final_val_recon_sum,final_val_recon_mean,config_hash,error"
    lines = [header] + [
        f"{r['cell']},{r['seed']},"
        f"{'' if r['final_val_recon_sum'] is None else repr(r['final_val_recon_sum'])},"
        f"{'' if r['final_val_recon_mean'] is None else repr(r['final_val_recon_mean'])},"
        f"{r['config_hash']},{r['error'] or ''}"
        for r in rows
    ]
    (out / "ablation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(rows)} ablation rows to {out / 'ablation.csv'}")
    return 0


def _cmd_analyze(args) -> int:
    if args.gradient_gap:
        if args.checkpoint is None:
            raise ConfigError("analyze --gradient-gap needs --checkpoint")
        state = load_checkpoint(args.checkpoint)
        conf = checkpoint_config(args.checkpoint)
        if conf.get("dataset") is None:
            raise ConfigError("checkpoint carries no dataset recipe to draw a probe batch from")
        dataset = make_dataset(DatasetSource.from_dict(conf["dataset"]))
        probe = dataset.val[:64]
        gap = gradient_gap(probe, state)
        print(f"gradient gap on {probe.shape[0]} validation samples: {gap:.10g}")
        return 0
    if args.fit_analytic is not None:
        path = Path(args.fit_analytic)
        if not path.exists():
            raise ConfigError(f"sweep report not found: {path}")
        rows = json.loads(path.read_text(encoding="utf-8"))
        pairs = [(row["n"], row["final_val_recon_sum"]) for row in rows
                 if row.get("final_val_recon_sum") is not None]
        result = fit_analytic(pairs)
        model = result.model
        best = np.sqrt(model.var_v * model.capacity_b
                       / (model.dim_const_a * model.complexity_k))
        print(f"fitted V={model.var_v:.6g} a={model.dim_const_a:.6g} "
              f"residual={result.residual:.6g} optimal_n={best:.6g}")
        return 0
    raise ConfigError("analyze needs --gradient-gap or --fit-analytic REPORT")


def _cmd_report(args) -> int:
    run_dir = Path(args.run)
    source = run_dir / "report.json"
    if not source.exists():
        raise ConfigError(f"no report.json under run directory {run_dir}")
    report = RunReport.from_json(source)
    if args.format == "csv":
        target = run_dir / "report.csv"
        report.to_csv(target)
    else:
        target = run_dir / "report_export.json"
        report.to_json(target)
    print(f"wrote {target}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aqvq",
        description="Vector-quantized autoencoders with fixed and adaptive codebooks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train one model from a config file")
    train.add_argument("--config", required=True, help="run config JSON path")
    train.add_argument("--out", required=True, help="output directory")
    train.add_argument("--resume", default=None, help="checkpoint to resume from")
    train.set_defaults(func=_cmd_train)

    sweep = sub.add_parser("sweep", help="train every fixed structure of one capacity")
    sweep.add_argument("--capacity", type=int, required=True, help="codebook capacity n*d")
    sweep.add_argument("--config", default=None, help="run config JSON path")
    sweep.add_argument("--out", required=True)
    sweep.set_defaults(func=_cmd_sweep)

    adaptive = sub.add_parser("adaptive", help="train the adaptive multi-codebook model")
    adaptive.add_argument("--capacity", type=int, required=True)
    adaptive.add_argument("--config", default=None)
    adaptive.add_argument("--out", required=True)
    adaptive.set_defaults(func=_cmd_adaptive)

    ablate = sub.add_parser("ablate", help="run the one-knob-at-a-time ablation table")
    ablate.add_argument("--grid", default=None, help="JSON file with grid values")
    ablate.add_argument("--config", default=None)
    ablate.add_argument("--out", required=True)
    ablate.add_argument("--seeds", type=int, nargs="*", default=None)
    ablate.set_defaults(func=_cmd_ablate)

    analyze = sub.add_parser("analyze", help="diagnostics on checkpoints and sweep reports")
    analyze.add_argument("--checkpoint", default=None)
    analyze.add_argument("--gradient-gap", action="store_true")
    analyze.add_argument("--fit-analytic", default=None, metavar="REPORT")
    analyze.set_defaults(func=_cmd_analyze)

    report = sub.add_parser("report", help="export a run report")
    report.add_argument("--run", required=True, help="run directory")
    report.add_argument("--format", choices=("csv", "json"), default="csv")
    report.set_defaults(func=_cmd_report)

    return parser


def cli_main(argv=None) -> int:
    """Entry point; returns the process exit code instead of raising."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage; fold argument errors into exit 1
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except (ConfigError, FormatError, FitError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (NumericError, ContractError, DimensionError, OSError) as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())
