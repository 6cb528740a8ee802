"""Round-based active-learning protocol: select, query, retrain, evaluate.

Each round scores unlabeled regions with the previous round's model (round 1
is random), queries the oracle under a click budget, reinitializes the model
with a round-derived seed, trains on the accumulated region labels, rebuilds
pixel-wise pseudo labels from the fresh stage-1 model, trains on those, and
evaluates on the held-out split.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import acquisition, dataio, metrics, model, oracle, pseudolabel, superpixel, training

PARTITIONERS = ("slic", "grid")

# seed-derivation tags; every stream hangs off the master seed
_TAG_INIT, _TAG_STAGE1, _TAG_STAGE2 = 11, 21, 22


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def derive_seed(master: int, tag: int, round_index: int) -> int:
    ss = np.random.SeedSequence([int(master), int(tag), int(round_index)])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    # protocol
    rounds: int = 5
    budget: int = 600
    mode: str = "multiclass"
    sampler: str = "pixbal"
    nu: float = 6.0
    seed: int = 0
    seeds: tuple[int, ...] | None = None  # overrides `seed` when set
    # losses / model
    lam_ce: float = 16.0
    lam_mp: float = 8.0
    tau: float = 0.1
    hidden_dim: int = 64
    embed_dim: int = 32
    # partitioner
    partitioner: str = "slic"
    target_size: int = 16
    slic_compactness: float = 10.0
    slic_iterations: int = 10
    # optimization
    lr_stage1: float = 2e-3
    lr_stage2: float = 4e-3
    iters_stage1: int = 2000
    iters_stage2: int = 2000
    regions_per_batch: int = 32
    pixels_per_region: int = 64
    stage2_batch_pixels: int = 2048
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    # component toggles
    use_mp: bool = True
    use_pp: bool = True
    use_localization: bool = True
    use_expansion: bool = True
    # data: directories when set, otherwise a generated benchmark
    train_image_dir: str | None = None
    train_mask_dir: str | None = None
    val_image_dir: str | None = None
    val_mask_dir: str | None = None
    synth_train: int = 50
    synth_val: int = 20
    width: int = 128
    height: int = 128
    class_count: int = 6
    site_count: int = 25
    noise_std: float = 0.05
    class_skew: float = 1.3
    dataset_seed: int = 77
    # outputs
    out_dir: str | None = None
    dump_scores: bool = False
    log_steps: bool = False

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if self.mode not in oracle.MODES:
            raise ConfigError(f"mode must be one of {oracle.MODES}")
        if self.sampler not in acquisition.SAMPLERS:
            raise ConfigError(f"sampler must be one of {acquisition.SAMPLERS}")
        if self.partitioner not in PARTITIONERS:
            raise ConfigError(f"partitioner must be one of {PARTITIONERS}")
        for name in ("nu",):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("lam_ce", "lam_mp", "tau", "lr_stage1", "lr_stage2"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.iters_stage1 < 0 or self.iters_stage2 < 0:
            raise ConfigError("iteration counts must be >= 0")
        if not 2 <= self.class_count <= dataio.MAX_CLASSES:
            raise ConfigError(f"class_count must be in 2..{dataio.MAX_CLASSES}")

    def trial_seeds(self) -> tuple[int, ...]:
        return self.seeds if self.seeds else (self.seed,)

    def train_config(self) -> training.TrainConfig:
        return training.TrainConfig(
            iters_stage1=self.iters_stage1,
            iters_stage2=self.iters_stage2,
            regions_per_batch=self.regions_per_batch,
            pixels_per_region=self.pixels_per_region,
            stage2_batch_pixels=self.stage2_batch_pixels,
            lr_stage1=self.lr_stage1,
            lr_stage2=self.lr_stage2,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            weight_decay=self.weight_decay,
            lam_ce=self.lam_ce,
            lam_mp=self.lam_mp,
            use_mp=self.use_mp,
            use_pp=self.use_pp,
            log_steps=self.log_steps,
        )


_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _coerce(name: str, kind, text: str):
    text = text.strip()
    if kind in ("str", "str | None", str):
        return text
    if kind in ("int", int):
        return int(text)
    if kind in ("float", float):
        return float(text)
    if kind in ("bool", bool):
        if text.lower() not in _BOOL_WORDS:
            raise ConfigError(f"{name}: expected a boolean, got {text!r}")
        return _BOOL_WORDS[text.lower()]
    if kind == "tuple[int, ...] | None":
        return tuple(int(v) for v in text.split(",") if v.strip())
    raise ConfigError(f"{name}: unsupported config field")


def config_from_pairs(pairs: dict[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Build a config from string key/value pairs (config file or --set flags)."""
    base = base or ExperimentConfig()
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    updates = {}
    for key, value in pairs.items():
        if key not in types:
            raise ConfigError(f"unknown config key: {key}")
        try:
            updates[key] = _coerce(key, types[key], value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    try:
        return replace(base, **updates)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat `key = value` lines; '#' starts a comment."""
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


@dataclass(frozen=True)
class RoundReport:
    round_index: int
    clicks: int
    cum_clicks: int
    overshoot: int
    miou: float
    per_class_iou: np.ndarray
    stage1_loss: float
    stage2_loss: float
    localized_pixels: int
    expanded_pixels: int


@dataclass
class RunState:
    masks: list[np.ndarray]
    features: list[np.ndarray]  # flat (H*W, F) per train image
    partitions: list[superpixel.Partition]
    adjacency: list[list[np.ndarray]]
    val_gts: list[np.ndarray]
    val_features: list[np.ndarray]
    class_count: int
    master_seed: int
    pool: oracle.LabeledPool = field(default_factory=oracle.LabeledPool)
    params: model.ModelParams | None = None
    round_index: int = 0  # rounds completed
    cum_clicks: int = 0


def _partition_image(image: np.ndarray, config: ExperimentConfig) -> superpixel.Partition:
    if config.partitioner == "grid":
        return superpixel.grid_partition(image, config.target_size)
    return superpixel.slic_partition(
        image,
        config.target_size,
        compactness=config.slic_compactness,
        iterations=config.slic_iterations,
    )


def setup_state(config: ExperimentConfig, master_seed: int) -> RunState:
    """Load or generate the train/val splits and precompute partitions/features.

    Synthetic images draw per-image seeds from disjoint ranges for train and
    val, independent of the trial seed, so every trial sees the same data.
    """
    if config.train_image_dir is not None:
        train = dataio.load_dataset(config.train_image_dir, config.train_mask_dir)
        val = dataio.load_dataset(config.val_image_dir, config.val_mask_dir)
        class_count = dataio.read_manifest(config.train_mask_dir)
    else:
        spec = dataio.SyntheticSpec(
            width=config.width,
            height=config.height,
            class_count=config.class_count,
            site_count=config.site_count,
            noise_std=config.noise_std,
            class_frequency_skew=config.class_skew,
        )
        train = [
            dataio.generate_synthetic(spec, config.dataset_seed + i)
            for i in range(config.synth_train)
        ]
        val = [
            dataio.generate_synthetic(spec, config.dataset_seed + 100_000 + j)
            for j in range(config.synth_val)
        ]
        class_count = config.class_count

    partitions = [_partition_image(img, config) for img, _ in train]
    adjacency = [superpixel.region_adjacency(p) for p in partitions]
    feat = [model.featurize(img).reshape(-1, model.FEATURE_DIM) for img, _ in train]
    val_feat = [model.featurize(img).reshape(-1, model.FEATURE_DIM) for img, _ in val]
    return RunState(
        masks=[m for _, m in train],
        features=feat,
        partitions=partitions,
        adjacency=adjacency,
        val_gts=[m for _, m in val],
        val_features=val_feat,
        class_count=class_count,
        master_seed=master_seed,
    )


def _unlabeled_refs(state: RunState) -> list[oracle.RegionRef]:
    refs = []
    for img, part in enumerate(state.partitions):
        for region in range(part.region_count):
            if (img, region) not in state.pool:
                refs.append((img, region))
    return refs


def _score_round(state: RunState, config: ExperimentConfig, round_index: int):
    unlabeled = _unlabeled_refs(state)
    if state.params is None:
        stats = None
        dist = None
        sampler = "random"  # first round is always random
    else:
        sampler = config.sampler
        stats = []
        prob_sum = np.zeros(state.class_count + 1)
        pixel_total = 0
        for feats in state.features:
            probs = model.predict_probs(model.embed(feats, state.params), state.params)
            stats.append(acquisition.PixelStats.from_probs(probs))
            prob_sum += probs.sum(axis=0)
            pixel_total += len(probs)
        dist = prob_sum / pixel_total
    scores = acquisition.score_regions(
        sampler,
        stats,
        state.partitions,
        unlabeled,
        dist,
        config.nu,
        round_index,
        state.master_seed,
    )
    return scores, stats


def _probe_stage1_loss(state: RunState, config: ExperimentConfig, params) -> float:
    # deterministic probe: first 64 pool regions, capped pixels, no sampling noise
    refs = list(state.pool.entries.keys())[:64]
    batch = []
    for img, region in refs:
        pixels = state.partitions[img].pixels_of[region][: config.pixels_per_region]
        raw = state.pool.entries[(img, region)].label.classes
        classes = tuple(int(c) for c in model.class_index(np.array(raw), state.class_count))
        batch.append(training.RegionSample(state.features[img][pixels], classes))
    breakdown, _ = training.total_loss_and_grad(
        params, batch, config.lam_ce, config.lam_mp, config.use_mp, config.use_pp
    )
    return breakdown.total


def run_round(
    state: RunState, config: ExperimentConfig, log: dataio.JsonlLogger | None = None
) -> RoundReport:
    """Advance the protocol by one round, mutating `state`."""
    log = log or dataio.JsonlLogger(None)
    t = state.round_index + 1
    log.event("round_start", round=t, pool_size=len(state.pool))

    scores, _ = _score_round(state, config, t)
    if config.dump_scores and config.out_dir:
        path = Path(config.out_dir) / f"scores_seed{state.master_seed}_round{t}.csv"
        acquisition.write_scores_csv(scores, path, state.class_count)
    selected, clicks, overshoot = acquisition.select_batch(
        scores,
        state.pool,
        config.budget,
        config.mode,
        state.masks,
        state.partitions,
        t,
        undefined_class=state.class_count,
    )
    state.cum_clicks += clicks
    log.event(
        "selection",
        round=t,
        regions=len(selected),
        clicks=clicks,
        overshoot=overshoot,
        cum_clicks=state.cum_clicks,
    )

    params = model.init_params(
        model.FEATURE_DIM,
        config.hidden_dim,
        config.embed_dim,
        state.class_count + 1,
        config.tau,
        derive_seed(state.master_seed, _TAG_INIT, t),
    )
    params.provenance = f"round{t}.init"
    tcfg = config.train_config()
    params = training.train_stage1(
        params,
        state.pool,
        state.features,
        state.partitions,
        state.class_count,
        tcfg,
        derive_seed(state.master_seed, _TAG_STAGE1, t),
        log,
    )
    params.provenance = f"round{t}.stage1"
    stage1_loss = _probe_stage1_loss(state, config, params)
    log.event("stage1_done", round=t, loss=stage1_loss, model=params.provenance)

    localized = expanded = 0
    stage2_loss = float("nan")
    if config.use_localization:
        pseudo = pseudolabel.build_pseudo_dataset(
            state.pool,
            state.partitions,
            state.adjacency,
            params,
            state.features,
            state.class_count,
            expand=config.use_expansion,
        )
        localized, expanded = pseudo.localized_pixels(), pseudo.expanded_pixels()
        log.event(
            "pseudo_built",
            round=t,
            model=params.provenance,
            localized=localized,
            expanded=expanded,
            labeled=pseudo.labeled_pixels(),
        )
        xs, ys = pseudo.training_set(state.features)
        params = training.train_stage2(
            params, xs, ys, tcfg, derive_seed(state.master_seed, _TAG_STAGE2, t), log
        )
        params.provenance = f"round{t}.stage2"
        if len(ys):
            probe_n = min(4096, len(ys))
            stage2_loss, _ = training.ce_loss_and_grad(params, xs[:probe_n], ys[:probe_n])
        log.event("stage2_done", round=t, loss=stage2_loss, model=params.provenance)

    preds = [
        model.predict_labels(feats, params) for feats in state.val_features
    ]
    score, per_class = metrics.miou_dataset(preds, state.val_gts, state.class_count)
    log.event("round_end", round=t, miou=score, model=params.provenance)

    state.params = params
    state.round_index = t
    return RoundReport(
        round_index=t,
        clicks=clicks,
        cum_clicks=state.cum_clicks,
        overshoot=overshoot,
        miou=score,
        per_class_iou=per_class,
        stage1_loss=stage1_loss,
        stage2_loss=stage2_loss,
        localized_pixels=localized,
        expanded_pixels=expanded,
    )


def run_single(config: ExperimentConfig, seed: int) -> list[RoundReport]:
    """One full trial; writes per-seed outputs when out_dir is set."""
    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    log = dataio.JsonlLogger(out_dir / f"run_seed{seed}.jsonl" if out_dir else None)
    state = setup_state(config, seed)
    reports = []
    try:
        for _ in range(config.rounds):
            reports.append(run_round(state, config, log))
    finally:
        log.close()
    if out_dir:
        dataio.write_results(reports, out_dir / f"results_seed{seed}.csv", state.class_count)
        state.pool.save(out_dir / f"pool_seed{seed}.jsonl")
        model.save_checkpoint(state.params, out_dir / f"checkpoint_seed{seed}.bin")
    return reports


def write_mean_results(
    per_seed: list[list[RoundReport]], path: str | Path, class_count: int
) -> None:
    """Arithmetic mean across seeds, one row per round; 6-decimal formatting."""
    header = "round,cum_clicks,miou," + ",".join(f"iou_{k}" for k in range(class_count))
    lines = [header]
    for r in range(len(per_seed[0])):
        reports = [reports_by_seed[r] for reports_by_seed in per_seed]
        cum = np.mean([rep.cum_clicks for rep in reports])
        score = np.mean([rep.miou for rep in reports])
        per_class = np.nanmean(np.stack([rep.per_class_iou for rep in reports]), axis=0)
        cells = [str(reports[0].round_index), f"{cum:.6f}", f"{score:.6f}"]
        cells += [f"{v:.6f}" for v in per_class]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def run_experiment(config: ExperimentConfig) -> list[list[RoundReport]]:
    """All trials in config.trial_seeds(); emits per-seed CSVs plus a mean CSV."""
    per_seed = [run_single(config, seed) for seed in config.trial_seeds()]
    if config.out_dir and len(per_seed) > 1:
        class_count = len(per_seed[0][0].per_class_iou)
        write_mean_results(per_seed, Path(config.out_dir) / "results_mean.csv", class_count)
    return per_seed


# ---------------------------------------------------------------------------
# component-contribution grid

ABLATION_GRID: dict[str, dict[str, bool]] = {
    "a": dict(use_mp=True, use_pp=True, use_localization=True, use_expansion=True),
    "b": dict(use_mp=True, use_pp=True, use_localization=True, use_expansion=False),
    "c": dict(use_mp=True, use_pp=True, use_localization=False, use_expansion=False),
    "d": dict(use_mp=True, use_pp=False, use_localization=False, use_expansion=False),
    "e": dict(use_mp=False, use_pp=True, use_localization=False, use_expansion=False),
}


def run_ablation(
    config: ExperimentConfig, variants: tuple[str, ...] = ("a", "b", "c", "d", "e")
) -> dict[str, list[list[RoundReport]]]:
    """Run the component grid; each variant writes into its own subdirectory."""
    results = {}
    for name in variants:
        if name not in ABLATION_GRID:
            raise ConfigError(f"unknown ablation variant: {name}")
        sub = None
        if config.out_dir:
            sub = str(Path(config.out_dir) / f"variant_{name}")
        variant_cfg = replace(config, out_dir=sub, **ABLATION_GRID[name])
        results[name] = run_experiment(variant_cfg)
    if config.out_dir:
        _write_ablation_summary(results, Path(config.out_dir) / "ablation_summary.csv")
    return results


def average_miou(per_seed: list[list[RoundReport]]) -> float:
    """Mean over seeds of the mean round mIoU, in percentage points."""
    return 100.0 * float(np.mean([[r.miou for r in reports] for reports in per_seed]))


def final_miou(per_seed: list[list[RoundReport]]) -> float:
    """Mean over seeds of the final-round mIoU, in percentage points."""
    return 100.0 * float(np.mean([reports[-1].miou for reports in per_seed]))


def _write_ablation_summary(results, path: Path) -> None:
    lines = ["variant,avg_miou,final_miou"]
    for name, per_seed in results.items():
        lines.append(f"{name},{average_miou(per_seed):.6f},{final_miou(per_seed):.6f}")
    path.write_text("\n".join(lines) + "\n")
