"""Batch experiment runner: ``synth``, ``train``, ``score``, ``eval`` and ``compare`` verbs."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import metrics
from .config import ExperimentConfig, load_config
from .dataset import Manifest, load_manifest, read_clips, synth_generate
from .errors import CheckpointNotFound, NoNontargetClasses, SepAsdError, UndefinedMetric
from .model import build_separator, load_params, save_params
from .scoring import (
    extract_embeddings,
    fit_gaussian,
    mahalanobis,
    score_set,
    write_embeddings,
    write_scores,
)
from .training import TRAIN_MODES, fit, read_history, write_history

log = logging.getLogger("sepasd")

LOG_ENV = "SEPASD_LOG_LEVEL"


class CliError(SepAsdError):
    pass


def _write_echo(cfg: ExperimentConfig, directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "config.resolved.yaml"
    path.write_text(cfg.dump(), encoding="utf-8")
    return path


def _require(paths: Sequence[Path]) -> None:
    missing = [str(p) for p in paths if not p.is_file() or p.stat().st_size == 0]
    if missing:
        raise CliError(f"expected outputs missing or empty: {missing}")


def data_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out_dir) / "data"


def run_dir(cfg: ExperimentConfig, mode: str, machine: str | None = None) -> Path:
    d = Path(cfg.out_dir) / "runs" / mode
    return d / machine if machine else d


def cmd_synth(cfg: ExperimentConfig) -> Path:
    if cfg.dataset.synth is None:
        raise CliError("config has no dataset.synth section")
    out = data_dir(cfg)
    synth_generate(cfg.dataset.synth, out)
    manifest_path = out / "manifest.csv"
    _write_echo(cfg, out)
    _require([manifest_path])
    return manifest_path


def get_manifest(cfg: ExperimentConfig) -> Manifest:
    if cfg.dataset.manifest is not None:
        return load_manifest(cfg.dataset.manifest)
    path = data_dir(cfg) / "manifest.csv"
    if not path.is_file():
        cmd_synth(cfg)
    return load_manifest(path)


def _resolve_machine(manifest: Manifest, machine: str) -> str:
    types = manifest.machine_types
    if machine in types:
        return machine
    candidates = [t for t in types if t.startswith(machine)] if machine else []
    if len(candidates) == 1:
        return candidates[0]
    if not candidates:
        raise CliError(f"machine type {machine!r} not in manifest (have {types})")
    raise CliError(f"ambiguous machine type {machine!r}: matches {candidates}")


def nontarget_for(cfg: ExperimentConfig, manifest: Manifest, machine: str, mode: str) -> list[str]:
    if mode == "autoencoder":
        return []
    wanted = list(cfg.train.nontarget_classes) or [m for m in manifest.machine_types if m != machine]
    wanted = [m for m in wanted if m != machine]
    if not wanted:
        raise NoNontargetClasses(f"NoNontargetClasses: mode {mode!r} on {machine!r} needs other machine types")
    return wanted


def cmd_train(cfg: ExperimentConfig, machine: str, mode: str) -> Path:
    manifest = get_manifest(cfg)
    machine = _resolve_machine(manifest, machine)
    tcfg = cfg.train_config(machine, mode, nontarget_for(cfg, manifest, machine, mode))
    net = build_separator(cfg.model, cfg.stft)
    net, history = fit(net, manifest, tcfg, cfg.mix)
    out = run_dir(cfg, mode, machine)
    ckpt = save_params(net, out / "checkpoint.pt")
    hist = write_history(history, out / "history.csv")
    echo = _write_echo(cfg, out)
    _require([ckpt, hist, echo])
    return ckpt


def cmd_score(cfg: ExperimentConfig, machine: str, mode: str, checkpoint: str | os.PathLike | None = None) -> Path:
    manifest = get_manifest(cfg)
    machine = _resolve_machine(manifest, machine)
    out = run_dir(cfg, mode, machine)
    ckpt = Path(checkpoint) if checkpoint else out / "checkpoint.pt"
    if not ckpt.is_file():
        raise CheckpointNotFound(f"CheckpointNotFound: {ckpt}")
    net = load_params(ckpt, expected=cfg.model)

    seg = cfg.scoring.segment_seconds
    train_clips = read_clips(manifest.select(machine_type=machine, split="train"))
    test_entries = manifest.select(machine_type=machine, split="test")
    test_clips = read_clips(test_entries)
    train_emb = extract_embeddings(net, train_clips, seg, source="train")
    test_emb = extract_embeddings(net, test_clips, seg, source="test")
    model = fit_gaussian(train_emb, cfg.scoring.ridge_rel)

    scores = score_set(model, test_emb, cfg.scoring.aggregation)
    rows = [(e.id, e.machine_type, e.domain, e.label, scores[e.id]) for e in test_entries]
    scores_path = write_scores(rows, out / "scores.csv")
    paths = [
        scores_path,
        write_embeddings(train_emb, out / "embeddings_train.csv"),
        write_embeddings(test_emb, out / "embeddings_test.csv"),
    ]
    train_d = mahalanobis(model, train_emb.matrix)
    summary = model.summary() | {
        "machine_type": machine,
        "mode": mode,
        "train_mean_sq_distance": float(np.mean(np.square(train_d))),
        "train_score_p95": float(np.percentile(list(score_set(model, train_emb, cfg.scoring.aggregation).values()), 95)),
    }
    summary_path = out / "gaussian.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths += [summary_path, _write_echo(cfg, out)]
    _require(paths)
    return scores_path


def read_metrics_csv(path: str | os.PathLike) -> metrics.EvalReport:
    """Precomputed per-class metrics: ``machine_type,auc_source,auc_target,pauc`` (fractions or percentages)."""
    rows = []
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        for r in csv.DictReader(fh):
            vals = [float(r[k]) for k in ("auc_source", "auc_target", "pauc")]
            if max(vals) > 1:
                vals = [v / 100 for v in vals]
            rows.append(metrics.ClassMetrics(r["machine_type"], *vals))
    return metrics.EvalReport(tuple(rows))


def write_reports(reports: dict[str, metrics.EvalReport], directory: Path) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    md = directory / "report.md"
    csv_path = directory / "report.csv"
    md.write_text(metrics.render_report(reports, "markdown"), encoding="utf-8")
    csv_path.write_text(metrics.render_report(reports, "csv"), encoding="utf-8")
    return [md, csv_path]


def cmd_eval(cfg: ExperimentConfig, score_files: Sequence[str | os.PathLike], out: Path,
             system: str = "system") -> metrics.EvalReport:
    clips: list[metrics.ScoredClip] = []
    for f in score_files:
        clips.extend(metrics.read_scores(f))
    report = metrics.evaluate(clips, cfg.eval.max_fpr)
    paths = write_reports({system: report}, out)
    _require(paths)
    return report


def cmd_compare(cfg: ExperimentConfig, modes: Sequence[str]) -> dict[str, metrics.EvalReport]:
    if not modes:
        raise CliError("compare needs at least one mode")
    manifest = get_manifest(cfg)
    reports: dict[str, metrics.EvalReport] = {}
    summary: dict[str, dict] = {}
    for mode in modes:
        score_files = []
        losses = {}
        for machine in manifest.machine_types:
            cmd_train(cfg, machine, mode)
            score_files.append(cmd_score(cfg, machine, mode))
            hist = read_history(run_dir(cfg, mode, machine) / "history.csv")
            losses[machine] = {"first": hist[0].mean_loss, "final": hist[-1].mean_loss} if hist else {}
        reports[mode] = cmd_eval(cfg, score_files, run_dir(cfg, mode), system=mode)
        summary[mode] = {"omega": reports[mode].omega, "loss": losses}
    out = Path(cfg.out_dir) / "compare"
    paths = write_reports(reports, out)
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths += [summary_path, _write_echo(cfg, out)]
    _require(paths)
    return reports


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sepasd", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, machine=False, mode=False):
        p.add_argument("--config", required=True, help="experiment YAML file")
        p.add_argument("--out", help="override out_dir from the config")
        if machine:
            p.add_argument("--machine", required=True, help="target machine type")
        if mode:
            p.add_argument("--mode", choices=TRAIN_MODES, default="proposed_nontarget_sep")
        return p

    common(sub.add_parser("synth", help="generate the synthetic dataset"))
    common(sub.add_parser("train", help="train one separator"), machine=True, mode=True)
    p = common(sub.add_parser("score", help="embed, fit the Gaussian and score test clips"), machine=True, mode=True)
    p.add_argument("--checkpoint", help="checkpoint path (default: the run directory's checkpoint.pt)")
    p = common(sub.add_parser("eval", help="AUC/pAUC/Ω report"), mode=True)
    p.add_argument("--scores", nargs="*", help="score CSVs (default: every machine of --mode)")
    p.add_argument("--metrics", help="precomputed per-class metrics CSV instead of scores")
    p = common(sub.add_parser("compare", help="train, score and evaluate several modes"))
    p.add_argument("--modes", default=",".join(TRAIN_MODES), help="comma-separated training modes")
    return parser


def _setup_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    torch.set_num_threads(1)
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg = cfg.with_out_dir(args.out)
        if args.verb == "synth":
            print(cmd_synth(cfg))
        elif args.verb == "train":
            print(cmd_train(cfg, args.machine, args.mode))
        elif args.verb == "score":
            print(cmd_score(cfg, args.machine, args.mode, args.checkpoint))
        elif args.verb == "eval":
            out = run_dir(cfg, args.mode)
            if args.metrics:
                report = read_metrics_csv(args.metrics)
                _require(write_reports({args.mode: report}, out))
            else:
                files = args.scores or sorted(str(p) for p in out.glob("*/scores.csv"))
                if not files:
                    raise CliError(f"no score files found under {out}")
                report = cmd_eval(cfg, files, out, system=args.mode)
            print(f"omega {100 * report.omega:.2f}%")
            print(out / "report.md")
        elif args.verb == "compare":
            modes = [m.strip() for m in args.modes.split(",") if m.strip()]
            unknown = [m for m in modes if m not in TRAIN_MODES]
            if unknown:
                raise CliError(f"unknown modes {unknown}; choose from {TRAIN_MODES}")
            reports = cmd_compare(cfg, modes)
            for mode, rep in reports.items():
                print(f"{mode}: omega {100 * rep.omega:.2f}%")
            print(Path(cfg.out_dir) / "compare" / "report.md")
    except (SepAsdError, OSError, ValueError) as exc:
        kind = type(exc).__name__
        print(f"error [{kind}]: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, UndefinedMetric) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
