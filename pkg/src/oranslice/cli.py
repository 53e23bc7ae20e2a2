"""Command-line front door: ``oranslice --config desk.ini --mode attention --out runs/a``.

Exit status: 0 on success, 2 on a configuration error, 3 on a runtime failure
(a manifest with ``"status": "error"`` is still written next to whatever
artifacts were produced).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import hashlib
import json
import logging
import sys
import traceback
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .metrics import (CSV_SCHEMAS, SCHEMA_VERSION, compare_runs, fmt, returns_header, returns_row,
                      write_cdfs, write_comparison, write_violations)
from .nn import save_params
from .trainer import TrainResult, evaluate_policy, make_env_factory, run_training

log = logging.getLogger("oranslice")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oranslice", description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, help="INI file; omitted keys keep the full-scale defaults")
    p.add_argument("--mode", choices=("attention", "baseline"))
    p.add_argument("--bw", choices=("low", "high"), help="bandwidth preset (K = 50 or 200 RBs)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, default=Path("runs/latest"))
    p.add_argument("--episodes", type=int, help="evaluation episodes per actor per iteration")
    p.add_argument("--compare", action="store_true",
                   help="run both modes over compare_seeds consecutive seeds and summarize")
    p.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
    p.add_argument("--no-plots", action="store_true", help="skip PNG rendering")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.bw:
        cfg = cfg.with_bandwidth(args.bw)
    if args.mode:
        cfg = cfg.replace(mode=args.mode)
    train = {}
    if args.seed is not None:
        train["seed"] = args.seed
    if args.episodes is not None:
        train["n_evaluations"] = args.episodes
    if train:
        try:
            cfg = cfg.replace(train=dataclasses.replace(cfg.train, **train))
        except ValueError as exc:
            raise ConfigError(f"command line: {exc}") from None
    return cfg


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(out: Path, cfg: ExperimentConfig, started: str, status: str,
                   extra: dict | None = None) -> Path:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "status": status,
        "code_version": __version__,
        "mode": cfg.mode,
        "seed": cfg.train.seed,
        "started": started,
        "finished": _now(),
        "argv": sys.argv[1:],
        "config": cfg.to_dict(),
        "csv_schemas": CSV_SCHEMAS,
        "files": [{"path": str(p.relative_to(out)), "bytes": p.stat().st_size, "sha256": _sha256(p)}
                  for p in files],
        **(extra or {}),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=fmt) + "\n")
    return path


@dataclasses.dataclass
class RunArtifacts:
    out: Path
    returns_csv: Path
    mean_returns: np.ndarray
    train_violations: np.ndarray
    result: TrainResult | None = None


def run_single(cfg: ExperimentConfig, out: Path, plots: bool = True) -> RunArtifacts:
    """Train one mode/seed and write every artifact under ``out``."""
    started = _now()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(cfg))
    returns_csv = out / "returns.csv"
    records = []
    try:
        with open(returns_csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(returns_header(cfg.train.n_actors))

            def stream_row(rec):
                records.append(rec)
                w.writerow([fmt(x) for x in returns_row(rec)])
                fh.flush()
                log.info("%s seed %d iteration %d: mean return %.4f, violations %s", rec.mode,
                         cfg.train.seed, rec.iteration, rec.mean_return,
                         np.array2string(rec.per_slice_violation, precision=3))

            factory = make_env_factory(cfg)
            result = run_training(cfg.train, factory, cfg.mode, on_iteration=stream_row)

        train_viol = np.array([r.per_slice_violation for r in records])
        train_tp = [s for r in records for s in r.per_user_throughput_sample]
        cdf_phases = {"training": train_tp}
        viol_phases = {"training": train_viol}
        summary = {"iterations": len(records), "stopped_early": result.stopped_early,
                   "update_rounds": result.n_update_rounds,
                   "constraint_checks": result.constraint_checks}
        if cfg.final_eval_episodes > 0:
            ev = evaluate_policy(result.actors, factory, cfg.final_eval_episodes, cfg.train.gamma,
                                 cfg.train.episode_length, seed=cfg.train.seed)
            cdf_phases["final"] = ev.throughput
            l = ev.violations.shape[-1]
            viol_phases["final"] = ev.violations.mean(axis=2).reshape(-1, l)
            summary["final_eval_mean_return"] = float(ev.returns.mean())
        write_cdfs(out, cdf_phases)
        write_violations(out / "violations.csv", viol_phases)

        ckpt = out / "checkpoints"
        ckpt.mkdir(exist_ok=True)
        for a in result.actors:
            save_params(ckpt / f"actor{a.agent_id}.npz", a.checkpoint_params())
        save_params(ckpt / "critic.npz", result.critic.critic.parameters())
        save_params(ckpt / "critic_target.npz", result.critic.target.parameters())

        if plots:
            from .plots import plot_cdfs, plot_returns, plot_violations
            plot_returns(out / "returns.png", {cfg.mode: [r.mean_return for r in records]})
            plot_cdfs(out, cdf_phases)
            plot_violations(out / "violations.png", {f"{cfg.mode} {k}": v for k, v in viol_phases.items()})
    except BaseException as exc:
        write_manifest(out, cfg, started, "error", {"error": f"{type(exc).__name__}: {exc}",
                                                     "traceback": traceback.format_exc()})
        raise
    write_manifest(out, cfg, started, "ok", {"summary": summary})
    return RunArtifacts(out, returns_csv, np.array([r.mean_return for r in records]), train_viol, result)


def run_compare(cfg: ExperimentConfig, out: Path, plots: bool = True) -> Path:
    """Both modes over ``compare_seeds`` consecutive seeds, then a seed-paired summary."""
    started = _now()
    out.mkdir(parents=True, exist_ok=True)
    seeds = [cfg.train.seed + k for k in range(cfg.compare_seeds)]
    runs: dict[str, list[RunArtifacts]] = {"attention": [], "baseline": []}
    try:
        for seed in seeds:
            for mode in runs:
                sub = cfg.replace(mode=mode, train=dataclasses.replace(cfg.train, seed=seed))
                runs[mode].append(run_single(sub, out / mode / f"seed{seed}", plots=False))
        cmp = compare_runs([r.returns_csv for r in runs["attention"]],
                           [r.returns_csv for r in runs["baseline"]], seeds, cfg.train.convergence_window)
        write_comparison(out / "compare.csv", cmp)
        if plots:
            from .plots import plot_returns, plot_violations
            curves = {}
            for mode, rs in runs.items():
                n = min(len(r.mean_returns) for r in rs)
                curves[f"{mode} (mean of {len(rs)} seeds)"] = np.mean([r.mean_returns[:n] for r in rs], axis=0)
            plot_returns(out / "compare_returns.png", curves, cfg.train.convergence_window)
            plot_violations(out / "compare_violations.png",
                            {mode: np.concatenate([r.train_violations for r in rs]) for mode, rs in runs.items()})
    except BaseException as exc:
        write_manifest(out, cfg, started, "error", {"error": f"{type(exc).__name__}: {exc}",
                                                     "traceback": traceback.format_exc()})
        raise
    summary = {"seeds": seeds, "relative_improvement": cmp.relative_improvement,
               "attention_wins": cmp.wins}
    write_manifest(out, cfg, started, "ok", {"summary": summary})
    print(f"relative final-return improvement of attention over baseline: "
          f"{cmp.relative_improvement:+.4f} ({cmp.wins}/{len(seeds)} seeds)")
    return out / "compare.csv"


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
    except ValueError as exc:  # ConfigError included
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.dry_run:
        sys.stdout.write(dump_config(cfg))
        print("# config valid")
        return EXIT_OK
    try:
        if args.compare:
            run_compare(cfg, args.out, plots=not args.no_plots)
        else:
            run_single(cfg, args.out, plots=not args.no_plots)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - any failure maps to one exit code
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for p in sorted(args.out.glob("*")):
        if p.is_file():
            print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
