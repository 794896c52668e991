"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 contract violation,
4 missing or corrupted artifact. ODAPT_DATA_ROOT overrides the dataset
root from the environment.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .errors import ConfigError, ContractViolationError, DatasetCorruptionError, MissingArtifactError
from .report import frames_ablation_svg, render_encoder_table, render_matrix_table, render_report
from .study import (
    StudyConfig,
    ensure_datasets,
    ensure_source_bundle,
    load_config,
    load_results,
    results_path,
    run_encoder_ablation,
    run_frames_ablation,
    run_matrix,
    summarize_matrix,
    write_results,
)
from .utils import configure_threads

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONTRACT = 3
EXIT_ARTIFACT = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="odapt", description="Object-driven detector adaptation lab")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("generate", "render and persist every configured domain dataset"),
        ("train-source", "train and cache source checkpoints for all pairs and seeds"),
        ("matrix", "run source-only / adapted / fully-supervised over all pairs and seeds"),
        ("ablate-frames", "sweep the annotation budget on the first pair"),
        ("ablate-encoder", "compare object encoder on vs off"),
        ("report", "render report.md and plots from results.json"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None, help="flat key-value config file")
        p.add_argument("--seed", type=int, default=None, help="run a single seed instead of the configured list")
        p.add_argument("--jobs", type=int, default=None, help="parallel matrix cells")
        p.add_argument("--out", type=Path, default=None, help="output directory")
    return parser


def _config_from_args(args) -> StudyConfig:
    cfg = load_config(args.config)
    if args.out is not None:
        cfg.out_dir = Path(args.out)
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.seed is not None:
        cfg.seeds = [args.seed]
    env_root = os.environ.get("ODAPT_DATA_ROOT")
    if env_root:
        cfg.data_root = Path(env_root)
    cfg.__post_init__()
    return cfg


def cmd_generate(cfg: StudyConfig) -> int:
    datasets = ensure_datasets(cfg)
    for domain_id, ds in sorted(datasets.items()):
        print(f"{domain_id}: {ds.root}")
    return EXIT_OK


def cmd_train_source(cfg: StudyConfig) -> int:
    datasets = ensure_datasets(cfg)
    sources = sorted({src for src, _ in cfg.pairs})
    for domain_id in sources:
        for seed in cfg.seeds:
            ensure_source_bundle(cfg, datasets, domain_id, seed)
            print(f"source bundle ready: {domain_id} seed {seed} encoder {cfg.encoder_mode}")
    return EXIT_OK


def cmd_matrix(cfg: StudyConfig) -> int:
    rows = run_matrix(cfg)
    summary = summarize_matrix(rows)
    path = write_results(cfg, rows=[r.to_dict() for r in rows], matrix_summary=summary)
    table = render_matrix_table(summary, cfg.n_t, cfg.seeds)
    (cfg.out_dir / "table.md").write_text(table)
    print(table)
    print(f"results: {path}")
    return EXIT_OK


def cmd_ablate_frames(cfg: StudyConfig) -> int:
    data = run_frames_ablation(cfg)
    write_results(cfg, frames_ablation=data)
    svg = frames_ablation_svg(data)
    svg_path = cfg.out_dir / "frames_ablation.svg"
    svg_path.write_text(svg)
    for point in data["points"]:
        print(f"n_t={point['n_t']}: {100 * point['mean_accuracy']:.1f}")
    print(f"plot: {svg_path}")
    return EXIT_OK


def cmd_ablate_encoder(cfg: StudyConfig) -> int:
    rows = run_encoder_ablation(cfg)
    write_results(cfg, encoder_ablation=rows)
    table = render_encoder_table(rows)
    (cfg.out_dir / "encoder_table.md").write_text(table)
    print(table)
    return EXIT_OK


def cmd_report(cfg: StudyConfig) -> int:
    data = load_results(results_path(cfg))
    md, assets = render_report(data)
    (cfg.out_dir / "report.md").write_text(md)
    for name, content in assets.items():
        (cfg.out_dir / name).write_text(content)
    print(f"report: {cfg.out_dir / 'report.md'}")
    return EXIT_OK


_COMMANDS = {
    "generate": cmd_generate,
    "train-source": cmd_train_source,
    "matrix": cmd_matrix,
    "ablate-frames": cmd_ablate_frames,
    "ablate-encoder": cmd_ablate_encoder,
    "report": cmd_report,
}


def main(argv=None) -> int:
    configure_threads()
    args = _build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractViolationError as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (MissingArtifactError, DatasetCorruptionError) as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT


if __name__ == "__main__":
    sys.exit(main())
