"""Desk-scale experiment drivers: overfit cascade, training-paradigm ablation,
cross-vocabulary transfer, and the small-data benefit of joint training.

These are the runnable counterparts of the claims the full-scale recipe makes;
tests and the scripts/ entry points share them.
"""

from __future__ import annotations

from dataclasses import dataclass

from .datagen import Dataset, generate_dataset, triplet_class_frequency
from .losses import LossWeights
from .evaluate import evaluate_model
from .inference import InferConfig
from .language import SynonymMap, TextEncoder
from .metrics import EvalConfig
from .model import VRDModel, make_model_config
from .training import TrainConfig, train
from .datagen import WORDS_B


def _to_b_string(text: str) -> str:
    return " ".join(WORDS_B.get(w, w) for w in text.split())


def translate_triplet_to_b(triplet) -> tuple[str, str, str]:
    sub, pred, obj = triplet
    return (_to_b_string(sub), _to_b_string(pred), _to_b_string(obj))


def desk_model_config(
    num_queries: int = 32,
    decoder_layers: int = 3,
    seed: int = 0,
    width: int = 64,
    depth: int = 3,
    temperature_init: float = 0.02,
):
    return make_model_config(
        image_size=64,
        patch_size=8,
        depth=depth,
        width=width,
        heads=4,
        num_queries=num_queries,
        decoder_layers=decoder_layers,
        decoder_heads=8,
        text_dim=128,
        droplayer_rate=0.0,
        temperature_init=temperature_init,
        text_seed=0,
        init_seed=seed,
    )


def desk_stage1_config(steps: int, seed: int, batch_size: int = 8, lr: float = 5e-3, **overrides) -> TrainConfig:
    base = dict(
        stage="detector",
        steps=steps,
        batch_size=batch_size,
        lr=lr,
        warmup_steps=min(200, steps),
        seed=seed,
        mosaic_probs=(0.4, 0.3, 0.3),
        use_mosaic=True,
        crop_min_scale=0.7,
        flip_prob=0.5,
        template_pool=1,
        loss_weights=LossWeights(lambda_l1=2.0, lambda_giou=1.0, focal_alpha=0.5),
    )
    base.update(overrides)
    return TrainConfig(**base)


def desk_stage2_config(steps: int, seed: int, batch_size: int = 8, lr: float = 5e-3, **overrides) -> TrainConfig:
    base = dict(
        stage="decoder",
        steps=steps,
        batch_size=batch_size,
        lr=lr,
        warmup_steps=min(200, steps),
        seed=seed,
        freeze_detector=True,
        freeze_text=True,
        mosaic_probs=(0.4, 0.3, 0.3),
        use_mosaic=True,
        crop_min_scale=0.7,
        flip_prob=0.5,
        template_pool=1,
        loss_weights=LossWeights(lambda_l1=2.0, lambda_giou=1.0, focal_alpha=0.5),
    )
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class CascadeResult:
    model: VRDModel
    detection_map: float
    relationship_map: float
    metrics: dict


def run_cascade(
    model: VRDModel,
    stage1_datasets: list[Dataset],
    stage2_datasets: list[Dataset],
    cfg1: TrainConfig,
    cfg2: TrainConfig,
    eval_records=None,
    eval_cfg: EvalConfig = EvalConfig(),
    infer_cfg: InferConfig = InferConfig(),
    out_dir=None,
) -> CascadeResult:
    """Stage-1 detector training, stage-2 decoder training, then evaluation."""
    train(model, stage1_datasets, cfg1, out_dir)
    train(model, stage2_datasets, cfg2, out_dir)
    if eval_records is None:
        eval_records = [rec for ds in stage2_datasets for rec in ds.records]
    counts = triplet_class_frequency(stage2_datasets)
    metrics = evaluate_model(
        model, eval_records, eval_cfg, infer_cfg, training_counts=counts
    )
    return CascadeResult(model, metrics["detection_map"], metrics["map_full"], metrics)


def run_overfit_cascade(
    seed: int = 0,
    num_scenes: int = 16,
    stage1_steps: int = 2000,
    stage2_steps: int = 2000,
    model_cfg=None,
    out_dir=None,
) -> CascadeResult:
    """Memorize a small scene set with the two-stage recipe and evaluate on it."""
    if model_cfg is None:
        model_cfg = desk_model_config(seed=seed)
    dataset = generate_dataset(
        seed=seed + 1000, num_records=num_scenes, vocab_id="A", min_shapes=2, max_shapes=4
    )
    model = VRDModel(model_cfg)
    cfg1 = desk_stage1_config(stage1_steps, seed)
    cfg2 = desk_stage2_config(stage2_steps, seed)
    return run_cascade(model, [dataset], [dataset], cfg1, cfg2, out_dir=out_dir)


def run_e2e(
    seed: int = 0,
    num_scenes: int = 16,
    steps: int = 4000,
    model_cfg=None,
    batch_size: int = 8,
    lr: float = 1e-3,
) -> CascadeResult:
    """Single-stage joint training on the same overfit set (ablation arm)."""
    if model_cfg is None:
        model_cfg = desk_model_config(seed=seed)
    dataset = generate_dataset(
        seed=seed + 1000, num_records=num_scenes, vocab_id="A", min_shapes=2, max_shapes=4
    )
    model = VRDModel(model_cfg)
    cfg = TrainConfig(
        stage="e2e",
        steps=steps,
        batch_size=batch_size,
        lr=lr,
        warmup_steps=min(200, steps),
        seed=seed,
        mosaic_probs=(0.4, 0.3, 0.3),
        crop_min_scale=0.7,
        flip_prob=0.5,
    )
    train(model, [dataset], cfg)
    counts = triplet_class_frequency([dataset])
    metrics = evaluate_model(model, dataset.records, training_counts=counts)
    return CascadeResult(model, metrics["detection_map"], metrics["map_full"], metrics)


def run_cascade_vs_e2e(seed: int, stage_steps: int = 500, num_scenes: int = 8) -> tuple[float, float]:
    """Matched-budget comparison; returns (cascade mAP, end-to-end mAP)."""
    cascade = run_overfit_cascade(
        seed=seed,
        num_scenes=num_scenes,
        stage1_steps=stage_steps,
        stage2_steps=stage_steps,
    )
    e2e = run_e2e(seed=seed, num_scenes=num_scenes, steps=2 * stage_steps)
    return cascade.relationship_map, e2e.relationship_map


def evaluate_with_vocab_b(model: VRDModel, seed: int, num_scenes: int, synonyms_active: bool = True) -> float:
    """Evaluate a vocabulary-A model on the same scenes relabeled with vocabulary B.

    Queries are built from B strings; with the synonym map active they embed
    onto the A-trained query space, with it disabled they land elsewhere.
    """
    dataset_b = generate_dataset(
        seed=seed, num_records=num_scenes, vocab_id="B", min_shapes=2, max_shapes=4
    )
    triplets_b = sorted({t for t in dataset_b.triplet_classes()})
    original_encoder = model.text_encoder
    if not synonyms_active:
        model.text_encoder = TextEncoder(
            dim=original_encoder.dim, seed=original_encoder.seed, synonyms=SynonymMap()
        )
    try:
        metrics = evaluate_model(
            model,
            dataset_b.records,
            triplet_classes=triplets_b,
            object_labels=list(dataset_b.objects),
        )
    finally:
        model.text_encoder = original_encoder
    return metrics["map_full"]


def run_unification_transfer(
    seed: int = 0, num_scenes: int = 16, stage1_steps: int = 2000, stage2_steps: int = 2000
) -> dict:
    """Train on vocabulary A, evaluate under vocabulary-B queries with and without synonyms."""
    result = run_overfit_cascade(
        seed=seed, num_scenes=num_scenes, stage1_steps=stage1_steps, stage2_steps=stage2_steps
    )
    dataset_a = generate_dataset(
        seed=seed + 1000, num_records=num_scenes, vocab_id="A", min_shapes=2, max_shapes=4
    )
    triplets_a = sorted({t for t in dataset_a.triplet_classes()})
    metrics_a = evaluate_model(
        result.model,
        dataset_a.records,
        triplet_classes=triplets_a,
        object_labels=list(dataset_a.objects),
    )
    map_b = evaluate_with_vocab_b(result.model, seed + 1000, num_scenes, synonyms_active=True)
    map_b_control = evaluate_with_vocab_b(result.model, seed + 1000, num_scenes, synonyms_active=False)
    return {
        "map_a": metrics_a["map_full"],
        "map_b": map_b,
        "map_b_no_synonyms": map_b_control,
    }


def run_small_data_benefit(
    seed: int,
    mini_train: int = 4,
    big_train: int = 200,
    test_scenes: int = 16,
    stage_steps: int = 400,
) -> tuple[float, float]:
    """Relationship mAP on the mini test split: joint training vs mini-only training."""
    mini = generate_dataset(
        seed=seed + 21, num_records=mini_train, vocab_id="A", min_shapes=2, max_shapes=4,
        dataset_id="mini",
    )
    big = generate_dataset(
        seed=seed + 22, num_records=big_train, vocab_id="A", min_shapes=2, max_shapes=4,
        dataset_id="big",
    )
    test = generate_dataset(
        seed=seed + 23, num_records=test_scenes, vocab_id="A", min_shapes=2, max_shapes=4,
        dataset_id="mini-test",
    )
    triplets = sorted({t for t in test.triplet_classes()})
    objects = list(test.objects)

    def cascade(datasets, mix):
        model = VRDModel(desk_model_config(seed=seed))
        cfg1 = desk_stage1_config(stage_steps, seed, mix=mix)
        cfg2 = desk_stage2_config(stage_steps, seed, mix=mix)
        train(model, datasets, cfg1)
        train(model, datasets, cfg2)
        metrics = evaluate_model(
            model, test.records, triplet_classes=triplets, object_labels=objects
        )
        return metrics["map_full"]

    joint = cascade([mini, big], {"mini": 0.2, "big": 0.8})
    alone = cascade([mini], {"mini": 1.0})
    return joint, alone
