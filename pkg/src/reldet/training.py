"""Cascade training: detector stage, relation-decoder stage, and a joint ablation mode.

Stage one fits the detector on box annotations; stage two fits the relation
decoder on top of it, with the detector (and text encoder) updated only when
unfrozen, at their own learning rate.  Optimization is Adam with linear
warmup into cosine decay and per-example global-norm gradient clipping.  All
randomness is derived from the config seed, so a fixed (config, seed) pair
reproduces checkpoints bit for bit in single-threaded mode.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .augment import MosaicSpec, hflip, random_crop, sample_mosaic
from .datagen import (
    Dataset,
    MixSpec,
    SceneRecord,
    mix_stream,
    object_label_frequency,
    triplet_class_frequency,
)
from .detector import DTYPE
from .language import Triplet, prompt_templates, sample_negative_labels, unify_label_spaces
from .losses import (
    LossWeights,
    RelationTarget,
    detector_loss,
    detector_matching,
    ground_truth_indices,
    vrd_loss,
)
from .model import VRDModel

STAGES = ("detector", "decoder", "e2e")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    stage: str
    steps: int
    batch_size: int = 8
    lr: float = 1e-4
    backbone_lr: float | None = None
    warmup_steps: int = 1000
    droplayer_rate: float | None = None
    freeze_text: bool = True
    freeze_detector: bool = True
    mix: dict[str, float] | None = None
    seed: int = 0
    clip_norm: float = 1.0
    negatives_per_image: int = 50
    mosaic_probs: tuple[float, float, float] = (0.4, 0.3, 0.3)
    use_mosaic: bool = True
    flip_prob: float = 0.5
    crop_min_scale: float = 0.6
    use_crop: bool = True
    # Number of object prompt templates sampled from (None = all bundled
    # templates).  Desk-scale runs pin this to 1: the hash text encoder
    # scatters a category's template variants, so sampling across many
    # templates makes the class target incoherent, unlike a real text tower.
    template_pool: int | None = None
    loss_weights: LossWeights = field(default_factory=LossWeights)
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    log_every: int = 50
    debug_checks: bool = False

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")
        if self.lr <= 0 or (self.backbone_lr is not None and self.backbone_lr <= 0):
            raise ValueError("learning rates must be positive")
        if self.warmup_steps > self.steps:
            raise ValueError("warmup_steps must not exceed steps")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")


def detector_stage_defaults(**overrides) -> TrainConfig:
    """Full-scale detector recipe: the published schedule for the CLIP variant."""
    base = dict(
        stage="detector",
        steps=140_000,
        batch_size=256,
        lr=5e-5,
        warmup_steps=1000,
        droplayer_rate=0.2,
        freeze_text=True,
        mix={"coco": 0.1, "o365": 0.5, "hico": 0.2, "vg": 0.2},
    )
    base.update(overrides)
    return TrainConfig(**base)


def decoder_specific_defaults(**overrides) -> TrainConfig:
    """Dataset-specific decoder recipe: frozen detector and text encoder."""
    base = dict(
        stage="decoder",
        steps=140_000,
        batch_size=64,
        lr=1e-4,
        warmup_steps=1000,
        droplayer_rate=0.0,
        freeze_text=True,
        freeze_detector=True,
    )
    base.update(overrides)
    return TrainConfig(**base)


def decoder_unified_defaults(**overrides) -> TrainConfig:
    """Unified decoder recipe: everything unfrozen, backbone at a tiny learning rate."""
    base = dict(
        stage="decoder",
        steps=140_000,
        batch_size=256,
        lr=1e-4,
        backbone_lr=2e-6,
        warmup_steps=1000,
        droplayer_rate=0.2,
        freeze_text=False,
        freeze_detector=False,
        mix={"hico": 0.5, "vcoco": 0.1, "vg": 0.4},
    )
    base.update(overrides)
    return TrainConfig(**base)


def learning_rate(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to the peak, then cosine decay to zero."""
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    span = max(1, cfg.steps - cfg.warmup_steps)
    progress = (step - cfg.warmup_steps) / span
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_global_norm(grads: list[torch.Tensor | None], threshold: float) -> tuple[list[torch.Tensor | None], float]:
    """Scale one example's gradients so their global L2 norm is at most `threshold`."""
    total = 0.0
    for g in grads:
        if g is not None:
            total += float((g * g).sum())
    norm = math.sqrt(total)
    if norm > threshold:
        scale = threshold / norm
        grads = [g * scale if g is not None else None for g in grads]
    return grads, norm


class StreamBuilder:
    """Deterministic augmented record stream shared by all stages."""

    def __init__(self, datasets: list[Dataset], cfg: TrainConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        if cfg.mix is not None:
            spec = MixSpec(cfg.mix)
        else:
            share = 1.0 / len(datasets)
            probs = {d.dataset_id: share for d in datasets}
            # Make the probabilities sum to exactly one.
            first = datasets[0].dataset_id
            probs[first] += 1.0 - sum(probs.values())
            spec = MixSpec(probs)
        self.base = mix_stream(datasets, spec, rng)
        self.mosaic_spec = MosaicSpec(cfg.mosaic_probs)

    def __iter__(self):
        return self

    def __next__(self) -> SceneRecord:
        cfg = self.cfg
        if cfg.use_mosaic:
            record = sample_mosaic(self.base, self.rng, self.mosaic_spec)
        else:
            record = next(self.base)
        if cfg.use_crop and cfg.crop_min_scale < 1.0:
            record = random_crop(record, self.rng, cfg.crop_min_scale)
        if cfg.flip_prob > 0 and self.rng.random() < cfg.flip_prob:
            record = hflip(record)
        return record


class ExampleBuilder:
    """Turns records into per-image training inputs (queries, targets)."""

    def __init__(self, model: VRDModel, datasets: list[Dataset], cfg: TrainConfig, rng: np.random.Generator):
        self.model = model
        self.cfg = cfg
        self.rng = rng
        self.object_freq = object_label_frequency(datasets)
        self.triplet_freq = triplet_class_frequency(datasets)
        space = model.label_space
        if space is None:
            raise ValueError("model.label_space must be set before training")
        # Negatives are sampled in proportion to training frequency, so labels
        # never observed in the data cannot be drawn.
        self.object_labels = [l for l in space.object_labels if self.object_freq.get(l, 0) > 0]
        self.triplet_classes = [t for t in space.relation_triplets if self.triplet_freq.get(t, 0) > 0]
        self.num_templates = len(prompt_templates())
        if cfg.template_pool is not None:
            if not 1 <= cfg.template_pool <= self.num_templates:
                raise ValueError("template_pool out of range")
            self.num_templates = cfg.template_pool

    def _object_queries(self, labels: list[str]) -> torch.Tensor:
        # One template per (image, category); every instance of the category
        # shares it, and draws differ across categories and across images.
        indices = [int(self.rng.integers(0, self.num_templates)) for _ in labels]
        return self.model.object_queries(labels, indices)

    def fit_token_budget(self, record: SceneRecord, num_tokens: int) -> SceneRecord:
        """Drop instances beyond the detector's token budget (mosaic-heavy records).

        Keeps the first `num_tokens` instances and the relations among them;
        deterministic, and a no-op whenever the budget is respected.
        """
        if len(record.instances) <= num_tokens:
            return record
        kept = record.instances[:num_tokens]
        relations = [
            rel for rel in record.relations if rel.subject < num_tokens and rel.object < num_tokens
        ]
        return SceneRecord(record.image, kept, relations, record.dataset_id, record.synthetic_seed)

    def detector_example(self, record: SceneRecord):
        positives = list(dict.fromkeys(l for inst in record.instances for l in inst.labels))
        labels = sample_negative_labels(
            positives, self.object_labels, self.object_freq, self.rng, self.cfg.negatives_per_image
        )
        queries = self._object_queries(labels)
        column = {label: i for i, label in enumerate(labels)}
        gt_boxes = torch.tensor(
            np.stack([inst.box.to_array() for inst in record.instances]), dtype=DTYPE
        )
        multihot = torch.zeros((len(record.instances), len(labels)), dtype=DTYPE)
        for g, inst in enumerate(record.instances):
            for lab in inst.labels:
                multihot[g, column[lab]] = 1.0
        return queries, gt_boxes, multihot

    def relation_example(self, record: SceneRecord, num_queries: int):
        """Relation queries and merged multi-hot targets for one record.

        Targets merge relations sharing a (subject, object) pair; their
        subject/object indices are filled in later, once the detector-side
        assignment for this forward pass is known.
        """
        pair_classes: dict[tuple[int, int], list[Triplet]] = {}
        for rel in record.relations:
            sub = record.instances[rel.subject].labels[0]
            obj = record.instances[rel.object].labels[0]
            key = (rel.subject, rel.object)
            bucket = pair_classes.setdefault(key, [])
            for pred in rel.predicates:
                triplet = (sub, pred, obj)
                if triplet not in bucket:
                    bucket.append(triplet)
        pairs = sorted(pair_classes)
        if len(pairs) > num_queries:
            pairs = pairs[:num_queries]
        positives = list(dict.fromkeys(t for p in pairs for t in pair_classes[p]))
        classes = sample_negative_labels(
            positives,
            self.triplet_classes,
            self.triplet_freq,
            self.rng,
            self.cfg.negatives_per_image,
        )
        queries = self.model.relation_queries(classes)
        column = {t: i for i, t in enumerate(classes)}
        target_specs = []
        for sub_idx, obj_idx in pairs:
            multihot = torch.zeros(len(classes), dtype=DTYPE)
            for t in pair_classes[(sub_idx, obj_idx)]:
                multihot[column[t]] = 1.0
            target_specs.append((sub_idx, obj_idx, multihot))
        return queries, target_specs


@dataclass
class TrainResult:
    model: VRDModel
    metrics: list[dict]
    checkpoint_path: str | None


def _param_groups(model: VRDModel, cfg: TrainConfig):
    """(trainable params, optimizer groups with peak lrs, frozen params)."""
    detector_params = list(model.detector.parameters())
    decoder_params = list(model.relation_decoder.parameters())
    if cfg.stage == "detector":
        groups = [{"params": detector_params, "peak_lr": cfg.lr}]
        frozen = decoder_params
    elif cfg.stage == "decoder":
        groups = [{"params": decoder_params, "peak_lr": cfg.lr}]
        if cfg.freeze_detector:
            frozen = detector_params
        else:
            groups.append({"params": detector_params, "peak_lr": cfg.backbone_lr or cfg.lr})
            frozen = []
    else:  # e2e
        groups = [{"params": decoder_params, "peak_lr": cfg.lr}]
        groups.append({"params": detector_params, "peak_lr": cfg.backbone_lr or cfg.lr})
        frozen = []
    trainable = [p for group in groups for p in group["params"]]
    return trainable, groups, frozen


def _dump_nan_batch(out_dir, step: int, records: list[SceneRecord], breakdowns: list[dict]) -> None:
    if out_dir is None:
        return
    payload = {
        "step": step,
        "examples": [
            {
                "dataset_id": rec.dataset_id,
                "synthetic_seed": rec.synthetic_seed,
                "instances": [
                    {"box": list(inst.box.to_array()), "labels": list(inst.labels)}
                    for inst in rec.instances
                ],
                "relations": [
                    {"sub": r.subject, "obj": r.object, "predicates": list(r.predicates)}
                    for r in rec.relations
                ],
            }
            for rec in records
        ],
        "loss_breakdowns": breakdowns,
    }
    with open(f"{out_dir}/nan_batch_dump.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def train(
    model: VRDModel,
    datasets: list[Dataset],
    cfg: TrainConfig,
    out_dir=None,
) -> TrainResult:
    """Run one training stage; returns the model, step metrics, and checkpoint path."""
    torch.set_num_threads(1)
    if model.label_space is None:
        model.label_space = unify_label_spaces(
            [(d.objects, d.triplet_classes()) for d in datasets],
            [d.dataset_id for d in datasets],
        )
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    data_rng = np.random.Generator(np.random.PCG64(seeds[0]))
    droplayer_rng = torch.Generator().manual_seed(int(seeds[1].generate_state(1)[0]))

    stream = StreamBuilder(datasets, cfg, data_rng)
    builder = ExampleBuilder(model, datasets, cfg, data_rng)
    trainable, groups, frozen = _param_groups(model, cfg)
    for p in frozen:
        p.requires_grad_(False)
    for p in trainable:
        p.requires_grad_(True)
    optimizer = torch.optim.Adam(
        [{"params": g["params"], "lr": 0.0} for g in groups],
        betas=cfg.adam_betas,
        eps=cfg.adam_eps,
    )
    weights = cfg.loss_weights
    droplayer = cfg.droplayer_rate
    metrics_log: list[dict] = []
    num_rel_queries = model.cfg.decoder.num_queries

    num_tokens = model.cfg.detector.num_tokens

    def example_loss(record: SceneRecord):
        record = builder.fit_token_budget(record, num_tokens)
        terms = {}
        total = None
        if cfg.stage in ("detector", "e2e"):
            queries, gt_boxes, multihot = builder.detector_example(record)
            det_out = model.detector(
                record.image, queries, droplayer_rng=droplayer_rng, train=True, droplayer_rate=droplayer
            )
            od_total, od_terms, od_assignment = detector_loss(det_out, gt_boxes, multihot, weights)
            terms.update(od_terms)
            total = od_total
        if cfg.stage in ("decoder", "e2e"):
            rel_queries, target_specs = builder.relation_example(record, num_rel_queries)
            if cfg.stage == "decoder":
                match_queries, gt_boxes, multihot = builder.detector_example(record)
                if cfg.freeze_detector:
                    with torch.no_grad():
                        det_out = model.detector(record.image, match_queries)
                else:
                    det_out = model.detector(
                        record.image,
                        match_queries,
                        droplayer_rng=droplayer_rng,
                        train=True,
                        droplayer_rate=droplayer,
                    )
                assignment = detector_matching(det_out, gt_boxes, multihot, weights)
            else:
                assignment = od_assignment
            targets = [
                RelationTarget(multihot_t, *ground_truth_indices(assignment, sub_idx, obj_idx))
                for sub_idx, obj_idx, multihot_t in target_specs
            ]
            rel_out = model.relation_decoder(det_out.instance_embeddings, rel_queries)
            vrd_total, vrd_terms, _ = vrd_loss(rel_out, targets, weights)
            terms.update(vrd_terms)
            total = vrd_total if total is None else total + vrd_total
        return total, terms

    checkpoint_path = None
    for step in range(cfg.steps):
        lr = learning_rate(step, cfg)
        for group, spec in zip(optimizer.param_groups, groups):
            group["lr"] = lr * (spec["peak_lr"] / cfg.lr)
        records = [next(stream) for _ in range(cfg.batch_size)]
        grad_acc = [torch.zeros_like(p) for p in trainable]
        step_terms: dict[str, float] = {}
        breakdowns = []
        for record in records:
            try:
                loss, terms = example_loss(record)
            except ValueError as exc:
                # a NaN forward surfaces first in the matching cost matrix
                if "NaN" in str(exc) or "finite" in str(exc):
                    _dump_nan_batch(out_dir, step, records, breakdowns)
                    raise TrainingDiverged(f"non-finite loss at step {step}: {exc}") from exc
                raise
            breakdowns.append(terms)
            if not torch.isfinite(loss):
                _dump_nan_batch(out_dir, step, records, breakdowns)
                raise TrainingDiverged(f"non-finite loss at step {step}")
            grads = torch.autograd.grad(loss, trainable, allow_unused=True)
            grads, _ = clip_global_norm(list(grads), cfg.clip_norm)
            if cfg.debug_checks:
                _, post = clip_global_norm(list(grads), float("inf"))
                assert post <= cfg.clip_norm + 1e-9, "per-example clip violated"
                for p in frozen:
                    assert p.grad is None or not p.grad.any(), "frozen parameter received gradient"
            for acc, g in zip(grad_acc, grads):
                if g is not None:
                    acc += g
            for key, value in terms.items():
                step_terms[key] = step_terms.get(key, 0.0) + value / cfg.batch_size
        for p, acc in zip(trainable, grad_acc):
            p.grad = acc / cfg.batch_size
        optimizer.step()
        optimizer.zero_grad(set_to_none=True)
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            entry = {"step": step, "lr": lr}
            entry.update({k: round(v, 8) for k, v in sorted(step_terms.items())})
            metrics_log.append(entry)
    for p in frozen:
        p.requires_grad_(True)
    if out_dir is not None:
        checkpoint_path = f"{out_dir}/{cfg.stage}.ckpt"
        model.save(checkpoint_path)
        with open(f"{out_dir}/{cfg.stage}_train_log.ndjson", "w", encoding="utf-8") as fh:
            for entry in metrics_log:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return TrainResult(model, metrics_log, checkpoint_path)


def train_detector(model: VRDModel, datasets: list[Dataset], cfg: TrainConfig, out_dir=None) -> TrainResult:
    if cfg.stage != "detector":
        raise ValueError("config stage must be 'detector'")
    return train(model, datasets, cfg, out_dir)


def train_decoder(model: VRDModel, datasets: list[Dataset], cfg: TrainConfig, out_dir=None) -> TrainResult:
    if cfg.stage != "decoder":
        raise ValueError("config stage must be 'decoder'")
    return train(model, datasets, cfg, out_dir)


def end_to_end_train(model: VRDModel, datasets: list[Dataset], cfg: TrainConfig, out_dir=None) -> TrainResult:
    """Single-stage joint optimization of both set losses (ablation mode)."""
    if cfg.stage != "e2e":
        raise ValueError("config stage must be 'e2e'")
    return train(model, datasets, cfg, out_dir)


def config_to_json(cfg: TrainConfig) -> dict:
    payload = asdict(cfg)
    payload["loss_weights"] = asdict(cfg.loss_weights)
    return payload


def config_from_json(payload: dict) -> TrainConfig:
    payload = dict(payload)
    if "loss_weights" in payload and payload["loss_weights"] is not None:
        payload["loss_weights"] = LossWeights(**payload["loss_weights"])
    for key in ("mosaic_probs", "adam_betas"):
        if key in payload and payload[key] is not None:
            payload[key] = tuple(payload[key])
    return TrainConfig(**payload)
