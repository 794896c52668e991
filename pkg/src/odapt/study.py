"""Configuration and runners for the full experiment matrix and ablations.

A StudyConfig names the domains, the source-to-target pairs, the seeds, the
annotation budget, and per-stage training settings. Runners materialize
datasets and source checkpoints on demand and cache them under the output
directory; because every stage is deterministic, a cached artifact is
interchangeable with retraining it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .adapt import (
    AdaptationSet,
    ExperimentResult,
    map_frames_to_clips,
    run_fully_supervised,
    run_odapt,
    run_source_only,
    sample_sparse_frames,
)
from .bundle import ModelBundle, load_bundle, save_bundle, save_detector_ckpt
from .detector import TrainConfig, train_detector
from .errors import ConfigError, MissingArtifactError
from .recognizer import train_source
from .synth.dataset import Dataset, generate_domain
from .synth.spec import DomainSpec
from .utils import canonical_json, sha256_bytes, sha256_file

RESULTS_SCHEMA = 1


@dataclass(frozen=True)
class StageConfigs:
    """Training settings per pipeline stage.

    Source detector training bootstraps from scratch, which needs a low
    match threshold early on (random boxes never reach 0.5 IoU, so the box
    term would otherwise never engage); fine-tuning starts from a working
    detector and uses a moderate threshold.
    """

    detector: TrainConfig = TrainConfig(
        learning_rate=1e-3, epochs=24, batch_size=64, iou_threshold=0.03, optimizer="adam"
    )
    recognizer: TrainConfig = TrainConfig(learning_rate=1e-3, epochs=14, batch_size=16, optimizer="adam")
    finetune: TrainConfig = TrainConfig(
        learning_rate=5e-4, epochs=30, batch_size=16, iou_threshold=0.3, optimizer="adam"
    )
    fully_supervised: TrainConfig = TrainConfig(learning_rate=3e-4, epochs=12, batch_size=8, optimizer="adam")
    fs_detector: TrainConfig = TrainConfig(
        learning_rate=5e-4, epochs=10, batch_size=32, iou_threshold=0.3, optimizer="adam"
    )


@dataclass
class StudyConfig:
    domains: list[DomainSpec] = field(default_factory=list)
    pairs: list[tuple[str, str]] = field(default_factory=list)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    n_t: int = 32
    n_t_sweep: tuple[int, ...] = (4, 8, 16, 32, 48, 64)
    encoder_mode: str = "on"
    n_clips_per_action: int = 100
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    data_root: Path = Path("data")
    out_dir: Path = Path("out")
    jobs: int = 1
    stages: StageConfigs = field(default_factory=StageConfigs)

    def __post_init__(self) -> None:
        if len(self.domains) < 2:
            raise ConfigError(f"need at least 2 domains, got {len(self.domains)}")
        ids = [d.domain_id for d in self.domains]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate domain ids: {ids}")
        for src, tgt in self.pairs:
            for d in (src, tgt):
                if d not in ids:
                    raise ConfigError(f"pair references undefined domain {d!r}")
        if not self.pairs:
            raise ConfigError("no source:target pairs configured")
        if not self.seeds:
            raise ConfigError("no seeds configured")
        if self.encoder_mode not in ("on", "off"):
            raise ConfigError(f"encoder_mode must be 'on' or 'off', got {self.encoder_mode!r}")
        if self.n_t < 1:
            raise ConfigError(f"n_t must be >= 1, got {self.n_t}")
        if any(v < 1 for v in self.n_t_sweep):
            raise ConfigError(f"n_t_sweep values must be >= 1, got {self.n_t_sweep}")
        self.data_root = Path(self.data_root)
        self.out_dir = Path(self.out_dir)

    def spec_for(self, domain_id: str) -> DomainSpec:
        for d in self.domains:
            if d.domain_id == domain_id:
                return d
        raise ConfigError(f"unknown domain {domain_id!r}")

    def to_dict(self) -> dict:
        return {
            "domains": [d.to_dict() for d in self.domains],
            "pairs": [f"{s}:{t}" for s, t in self.pairs],
            "seeds": list(self.seeds),
            "n_t": self.n_t,
            "n_t_sweep": list(self.n_t_sweep),
            "encoder_mode": self.encoder_mode,
            "n_clips_per_action": self.n_clips_per_action,
            "split_ratios": list(self.split_ratios),
            "stages": {
                f.name: vars(getattr(self.stages, f.name)).copy() for f in fields(self.stages)
            },
        }

    def digest(self) -> str:
        return sha256_bytes(canonical_json(self.to_dict()).encode())


def default_study_config(data_root: Path = Path("data"), out_dir: Path = Path("out")) -> StudyConfig:
    """Two kitchens separated by background texture, palette, illumination,
    noise level, and hand styling; adaptation runs in both directions."""
    kitchen_a = DomainSpec(
        domain_id="kitchenA",
        background_style="flat",
        background_seed=5,
        object_shape_family="mixed",
        palette_seed=11,
        illumination_gain=1.0,
        sensor_noise_sigma=0.01,
        hand_sprite_style="rounded",
        rng_seed=1,
    )
    kitchen_b = DomainSpec(
        domain_id="kitchenB",
        background_style="tiled",
        background_seed=17,
        object_shape_family="mixed",
        palette_seed=29,
        illumination_gain=1.25,
        sensor_noise_sigma=0.03,
        hand_sprite_style="angular",
        rng_seed=2,
    )
    return StudyConfig(
        domains=[kitchen_a, kitchen_b],
        pairs=[("kitchenA", "kitchenB"), ("kitchenB", "kitchenA")],
        data_root=data_root,
        out_dir=out_dir,
    )


_DOMAIN_INT_FIELDS = {"background_seed", "palette_seed", "rng_seed"}
_DOMAIN_FLOAT_FIELDS = {"illumination_gain", "sensor_noise_sigma"}
_STAGE_FIELDS = {"learning_rate": float, "epochs": int, "batch_size": int, "iou_threshold": float, "optimizer": str}


def parse_config_text(text: str, base: Optional[StudyConfig] = None) -> StudyConfig:
    """Parse the flat key-value config format.

    Lines are `key = value`; `#` starts a comment. Domains are declared as
    `domain.<id>.<field> = value` groups, stages as `stage.<name>.<field>`.
    Unknown keys are rejected. Omitted settings fall back to the defaults.
    """
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected `key = value`, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"config line {lineno}: empty key")
        if key in entries:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        entries[key] = value

    defaults = base if base is not None else default_study_config()
    domain_fields: dict[str, dict[str, object]] = {}
    stage_over: dict[str, dict[str, object]] = {}
    plain: dict[str, str] = {}
    for key, value in entries.items():
        parts = key.split(".")
        if parts[0] == "domain":
            if len(parts) != 3:
                raise ConfigError(f"bad domain key {key!r}; expected domain.<id>.<field>")
            _, dom, fieldname = parts
            if fieldname in _DOMAIN_INT_FIELDS:
                parsed: object = int(value)
            elif fieldname in _DOMAIN_FLOAT_FIELDS:
                parsed = float(value)
            elif fieldname in ("background_style", "object_shape_family", "hand_sprite_style"):
                parsed = value
            else:
                raise ConfigError(f"unknown domain field {fieldname!r} in {key!r}")
            domain_fields.setdefault(dom, {})[fieldname] = parsed
        elif parts[0] == "stage":
            if len(parts) != 3 or parts[2] not in _STAGE_FIELDS:
                raise ConfigError(f"bad stage key {key!r}")
            _, stage, fieldname = parts
            if stage not in {f.name for f in fields(StageConfigs)}:
                raise ConfigError(f"unknown stage {stage!r} in {key!r}")
            stage_over.setdefault(stage, {})[fieldname] = _STAGE_FIELDS[fieldname](value)
        else:
            plain[key] = value

    if domain_fields:
        domains = [DomainSpec(domain_id=dom, **flds) for dom, flds in domain_fields.items()]  # type: ignore[arg-type]
    else:
        domains = list(defaults.domains)

    def csv_list(v: str) -> list[str]:
        return [item.strip() for item in v.split(",") if item.strip()]

    known = {
        "pairs",
        "seeds",
        "n_t",
        "n_t_sweep",
        "encoder_mode",
        "n_clips_per_action",
        "split_ratios",
        "data_root",
        "out_dir",
        "jobs",
    }
    unknown = set(plain) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    if "pairs" in plain:
        pairs = []
        for item in csv_list(plain["pairs"]):
            if ":" not in item:
                raise ConfigError(f"pair {item!r} must be <source>:<target>")
            src, tgt = item.split(":", 1)
            pairs.append((src.strip(), tgt.strip()))
    elif domain_fields:
        ids = [d.domain_id for d in domains]
        pairs = [(ids[0], ids[1])]
    else:
        pairs = list(defaults.pairs)

    try:
        stages = StageConfigs(
            **{
                f.name: replace(getattr(defaults.stages, f.name), **stage_over.get(f.name, {}))
                for f in fields(StageConfigs)
            }
        )
        return StudyConfig(
            domains=domains,
            pairs=pairs,
            seeds=[int(s) for s in csv_list(plain["seeds"])] if "seeds" in plain else list(defaults.seeds),
            n_t=int(plain.get("n_t", defaults.n_t)),
            n_t_sweep=tuple(int(v) for v in csv_list(plain["n_t_sweep"]))
            if "n_t_sweep" in plain
            else defaults.n_t_sweep,
            encoder_mode=plain.get("encoder_mode", defaults.encoder_mode),
            n_clips_per_action=int(plain.get("n_clips_per_action", defaults.n_clips_per_action)),
            split_ratios=tuple(float(v) for v in csv_list(plain["split_ratios"]))  # type: ignore[arg-type]
            if "split_ratios" in plain
            else defaults.split_ratios,
            data_root=Path(plain.get("data_root", defaults.data_root)),
            out_dir=Path(plain.get("out_dir", defaults.out_dir)),
            jobs=int(plain.get("jobs", defaults.jobs)),
            stages=stages,
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc


def load_config(path: Optional[Path], **overrides) -> StudyConfig:
    cfg = parse_config_text(Path(path).read_text()) if path else default_study_config()
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    cfg.__post_init__()
    return cfg


def ensure_datasets(cfg: StudyConfig) -> dict[str, Dataset]:
    out = {}
    for spec in cfg.domains:
        out[spec.domain_id] = generate_domain(spec, cfg.n_clips_per_action, cfg.split_ratios, cfg.data_root)
    return out


def bundle_dir(cfg: StudyConfig, domain_id: str, seed: int, encoder_mode: str) -> Path:
    return cfg.out_dir / "checkpoints" / domain_id / f"seed{seed}-enc-{encoder_mode}"


def ensure_source_bundle(
    cfg: StudyConfig,
    datasets: dict[str, Dataset],
    domain_id: str,
    seed: int,
    encoder_mode: Optional[str] = None,
) -> ModelBundle:
    """Load the cached source bundle for (domain, seed), training it if absent."""
    mode = encoder_mode if encoder_mode is not None else cfg.encoder_mode
    d = bundle_dir(cfg, domain_id, seed, mode)
    if (d / "detector.ckpt").is_file() and (d / "recognizer.ckpt").is_file():
        return load_bundle(d)
    ds = datasets[domain_id]
    train_clips = ds.clips("train")
    frames = np.concatenate([c.frames for c in train_clips])
    gt = [c.boxes(t) for c in train_clips for t in range(c.t_frames)]
    det_cfg = replace(cfg.stages.detector, rng_seed=seed)
    detector, _ = train_detector(frames, gt, det_cfg)
    rec_cfg = replace(cfg.stages.recognizer, rng_seed=seed)
    recognizer, encoder, _ = train_source(train_clips, rec_cfg, use_encoder=(mode == "on"))
    bundle = ModelBundle(detector=detector, recognizer=recognizer, encoder=encoder)
    save_bundle(d, bundle, seed=seed)
    return bundle


def source_checkpoint_hashes(cfg: StudyConfig, domain_id: str, seed: int, encoder_mode: str) -> dict[str, str]:
    d = bundle_dir(cfg, domain_id, seed, encoder_mode)
    return {
        "detector": sha256_file(d / "detector.ckpt"),
        "recognizer": sha256_file(d / "recognizer.ckpt"),
    }


def run_matrix_cell(
    cfg: StudyConfig,
    datasets: dict[str, Dataset],
    source: str,
    target: str,
    seed: int,
    encoder_mode: Optional[str] = None,
) -> ExperimentResult:
    """Source-only, adapted, and fully-supervised accuracies for one cell."""
    mode = encoder_mode if encoder_mode is not None else cfg.encoder_mode
    bundle = ensure_source_bundle(cfg, datasets, source, seed, mode)
    target_ds = datasets[target]

    acc_source = run_source_only(bundle, target_ds)

    aset = sample_sparse_frames(target_ds, cfg.n_t, seed)
    ft_cfg = replace(cfg.stages.finetune, rng_seed=seed)
    odapt_run = run_odapt(bundle, target_ds, aset, ft_cfg)

    clips = map_frames_to_clips(aset)
    fs_cfg = replace(cfg.stages.fully_supervised, rng_seed=seed)
    fs_det_cfg = replace(cfg.stages.fs_detector, rng_seed=seed)
    fs_run = run_fully_supervised(bundle, target_ds, clips, fs_cfg, fs_det_cfg)

    adapted_dir = cfg.out_dir / "checkpoints" / "adapted" / f"{source}-to-{target}" / f"seed{seed}-enc-{mode}"
    adapted_dir.mkdir(parents=True, exist_ok=True)
    adapted_path = adapted_dir / "detector.ckpt"
    save_detector_ckpt(adapted_path, odapt_run.bundle.detector, seed=seed)

    checkpoints = source_checkpoint_hashes(cfg, source, seed, mode)
    checkpoints["adapted_detector"] = sha256_file(adapted_path)
    return ExperimentResult(
        source_domain=source,
        target_domain=target,
        seed=seed,
        n_t=cfg.n_t,
        encoder_mode=mode,
        accuracy_source_only=acc_source,
        accuracy_odapt=odapt_run.accuracy,
        accuracy_fully_supervised=fs_run.accuracy,
        fingerprint_before=odapt_run.fingerprint_before,
        fingerprint_after=odapt_run.fingerprint_after,
        checkpoints=checkpoints,
        config_digest=cfg.digest(),
    )


def _cell_order_key(row: ExperimentResult):
    return (row.source_domain, row.target_domain, row.seed, row.n_t, row.encoder_mode)


def run_matrix(cfg: StudyConfig) -> list[ExperimentResult]:
    """All pairs x seeds. Rows come back sorted regardless of schedule."""
    datasets = ensure_datasets(cfg)
    cells = [(src, tgt, seed) for src, tgt in cfg.pairs for seed in cfg.seeds]
    if cfg.jobs > 1:
        rows = _run_cells_parallel(cfg, cells)
    else:
        rows = [run_matrix_cell(cfg, datasets, src, tgt, seed) for src, tgt, seed in cells]
    rows.sort(key=_cell_order_key)
    return rows


def _run_cells_parallel(cfg: StudyConfig, cells: list[tuple[str, str, int]]) -> list:
    import multiprocessing
    from concurrent.futures import ProcessPoolExecutor

    # Bundles first, serialized per (domain, seed): cells sharing a source
    # must not race to train the same checkpoint.
    datasets = ensure_datasets(cfg)
    for domain_id, seed in sorted({(src, seed) for src, _, seed in cells}):
        ensure_source_bundle(cfg, datasets, domain_id, seed)
    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=cfg.jobs, mp_context=ctx) as pool:
        futures = [pool.submit(_cell_entry, cfg, src, tgt, seed) for src, tgt, seed in cells]
        return [f.result() for f in futures]


def _cell_entry(cfg: StudyConfig, src: str, tgt: str, seed: int) -> ExperimentResult:
    from .utils import configure_threads

    configure_threads()
    datasets = ensure_datasets(cfg)
    return run_matrix_cell(cfg, datasets, src, tgt, seed)


def summarize_matrix(rows: list[ExperimentResult]) -> list[dict]:
    """Per-pair means over seeds, in pair order (the table's columns)."""
    pairs: dict[tuple[str, str], list[ExperimentResult]] = {}
    for r in rows:
        pairs.setdefault((r.source_domain, r.target_domain), []).append(r)
    out = []
    for (src, tgt), group in sorted(pairs.items()):
        out.append(
            {
                "pair": f"{src}:{tgt}",
                "source_only": float(np.mean([g.accuracy_source_only for g in group])),
                "odapt": float(np.mean([g.accuracy_odapt for g in group])),
                "fully_supervised": float(np.mean([g.accuracy_fully_supervised for g in group])),
                "seeds": sorted(g.seed for g in group),
            }
        )
    return out


def results_path(cfg: StudyConfig) -> Path:
    return cfg.out_dir / "results.json"


def load_results(path: Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"no results file at {path}")
    data = json.loads(path.read_text())
    if data.get("schema") != RESULTS_SCHEMA:
        raise ConfigError(
            f"results schema {data.get('schema')!r} unsupported (expected {RESULTS_SCHEMA})"
        )
    return data


def write_results(cfg: StudyConfig, **sections) -> Path:
    """Merge sections into results.json, keeping other sections intact."""
    path = results_path(cfg)
    if path.is_file():
        data = load_results(path)
    else:
        data = {"schema": RESULTS_SCHEMA, "config_digest": cfg.digest(), "rows": []}
    data["config_digest"] = cfg.digest()
    for key, value in sections.items():
        data[key] = value
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(data))
    return path


def run_frames_ablation(cfg: StudyConfig) -> dict:
    """Accuracy as a function of the annotation budget on the first pair."""
    datasets = ensure_datasets(cfg)
    source, target = cfg.pairs[0]
    target_ds = datasets[target]
    points = []
    for n_t in cfg.n_t_sweep:
        per_seed = []
        for seed in cfg.seeds:
            bundle = ensure_source_bundle(cfg, datasets, source, seed)
            aset = sample_sparse_frames(target_ds, n_t, seed)
            ft_cfg = replace(cfg.stages.finetune, rng_seed=seed)
            per_seed.append(run_odapt(bundle, target_ds, aset, ft_cfg).accuracy)
        points.append(
            {"n_t": n_t, "mean_accuracy": float(np.mean(per_seed)), "per_seed": per_seed}
        )
    source_only = [
        run_source_only(ensure_source_bundle(cfg, datasets, source, seed), target_ds) for seed in cfg.seeds
    ]
    return {
        "pair": f"{source}:{target}",
        "seeds": list(cfg.seeds),
        "source_only_mean": float(np.mean(source_only)),
        "points": points,
    }


def run_encoder_ablation(cfg: StudyConfig) -> list[dict]:
    """ODAPT with the object encoder on vs off (identity), per pair."""
    datasets = ensure_datasets(cfg)
    rows = []
    for source, target in cfg.pairs:
        target_ds = datasets[target]
        for mode in ("on", "off"):
            per_seed = []
            fingerprints_stable = True
            for seed in cfg.seeds:
                bundle = ensure_source_bundle(cfg, datasets, source, seed, encoder_mode=mode)
                aset = sample_sparse_frames(target_ds, cfg.n_t, seed)
                ft_cfg = replace(cfg.stages.finetune, rng_seed=seed)
                run = run_odapt(bundle, target_ds, aset, ft_cfg)
                fingerprints_stable &= run.fingerprint_before == run.fingerprint_after
                per_seed.append(run.accuracy)
            rows.append(
                {
                    "pair": f"{source}:{target}",
                    "encoder_mode": mode,
                    "mean_accuracy": float(np.mean(per_seed)),
                    "per_seed": per_seed,
                    "fingerprints_stable": fingerprints_stable,
                }
            )
    return rows
