"""Command-line entry points: data generation, training stages, eval, inference, retrieval."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .datagen import generate_dataset, load_dataset, save_dataset
from .evaluate import compute_metrics, evaluate_model, metrics_to_json, relation_ground_truth
from .inference import (
    InferConfig,
    detect_relationships,
    retrieve_by_image,
    triplet_class_strings,
    triplets_to_json,
)
from .language import prompt_relation
from .metrics import EvalConfig, RelPrediction
from .model import VRDModel, make_model_config
from .training import TrainConfig, config_from_json, train


class CliError(RuntimeError):
    pass


def _load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise CliError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path} is not valid JSON: {exc}") from exc


def _load_datasets(config: dict, image_size: int):
    specs = config.get("datasets")
    if not specs:
        raise CliError("config must list at least one dataset under 'datasets'")
    datasets = []
    for spec in specs:
        if isinstance(spec, str):
            spec = {"path": spec}
        path = spec.get("path")
        if path is None or not os.path.exists(path):
            raise CliError(f"dataset file not found: {path}")
        datasets.append(load_dataset(path, image_size=image_size, dataset_id=spec.get("id")))
    return datasets


def _infer_config(config: dict) -> InferConfig:
    return InferConfig(**config.get("infer", {}))


def _eval_config(config: dict) -> EvalConfig:
    payload = dict(config.get("eval", {}))
    if "recall_ks" in payload:
        payload["recall_ks"] = tuple(payload["recall_ks"])
    return EvalConfig(**payload)


def cmd_gen_data(args) -> int:
    config = _load_config(args.config) if args.config else {}
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    dataset = generate_dataset(
        seed=seed,
        num_records=config.get("num_records", 16),
        vocab_id=config.get("vocabulary", "A"),
        image_size=config.get("image_size", 64),
        min_shapes=config.get("min_shapes", 2),
        max_shapes=config.get("max_shapes", 6),
        detection_only=config.get("detection_only", False),
    )
    save_dataset(dataset, args.out, vocab_id=config.get("vocabulary", "A"))
    print(f"wrote {len(dataset.records)} records to {args.out}")
    return 0


def _train_common(args, stage: str) -> int:
    config = _load_config(args.config)
    image_size = config.get("image_size", 64)
    datasets = _load_datasets(config, image_size)
    train_payload = dict(config.get("train", {}))
    train_payload["stage"] = stage
    if args.seed is not None:
        train_payload["seed"] = args.seed
    train_cfg = config_from_json(train_payload)
    if stage == "decoder":
        checkpoint = config.get("checkpoint")
        if not checkpoint or not os.path.exists(checkpoint):
            raise CliError(f"missing checkpoint: {checkpoint!r} (train the detector first)")
        model = VRDModel.load(checkpoint)
    else:
        model_kwargs = dict(config.get("model", {}))
        model_kwargs.setdefault("image_size", image_size)
        if args.seed is not None:
            model_kwargs.setdefault("init_seed", args.seed)
        model = VRDModel(make_model_config(**model_kwargs))
    os.makedirs(args.out, exist_ok=True)
    result = train(model, datasets, train_cfg, out_dir=args.out)
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_train_detector(args) -> int:
    return _train_common(args, "detector")


def cmd_train_decoder(args) -> int:
    return _train_common(args, "decoder")


def cmd_train_e2e(args) -> int:
    return _train_common(args, "e2e")


def _load_model(config: dict) -> VRDModel:
    checkpoint = config.get("checkpoint")
    if not checkpoint or not os.path.exists(checkpoint):
        raise CliError(f"missing checkpoint: {checkpoint!r}")
    return VRDModel.load(checkpoint)


def _prediction_lists(path, records, class_by_string):
    """Parse an infer-format predictions file into per-record prediction lists."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload and isinstance(payload[0], dict):
        payload = [payload]  # single-record flat array
    if len(payload) != len(records):
        raise CliError(
            f"predictions file has {len(payload)} record entries, dataset has {len(records)}"
        )
    from .boxes import Box

    out = []
    for per_record in payload:
        preds = []
        for entry in per_record:
            cls = entry.get("class_string")
            if cls not in class_by_string:
                raise CliError(f"unknown class_string in predictions: {cls!r}")
            preds.append(
                RelPrediction(
                    Box.from_array(entry["sub_box"]),
                    Box.from_array(entry["obj_box"]),
                    class_by_string[cls],
                    float(entry["score"]),
                )
            )
        out.append(preds)
    return out


def cmd_eval(args) -> int:
    config = _load_config(args.config)
    image_size = config.get("image_size", 64)
    datasets = _load_datasets(config, image_size)
    if len(datasets) != 1:
        raise CliError("eval expects exactly one dataset")
    dataset = datasets[0]
    eval_cfg = _eval_config(config)
    training_counts = None
    if config.get("train_datasets"):
        from .datagen import triplet_class_frequency

        train_sets = _load_datasets({"datasets": config["train_datasets"]}, image_size)
        training_counts = triplet_class_frequency(train_sets)
    if config.get("predictions"):
        triplets = sorted(set(dataset.triplet_classes()))
        class_by_string = {prompt_relation(t): t for t in triplets}
        rel_preds = _prediction_lists(config["predictions"], dataset.records, class_by_string)
        rel_gts = [relation_ground_truth(rec) for rec in dataset.records]
        metrics = compute_metrics(rel_preds, rel_gts, None, None, eval_cfg, training_counts)
        metrics["detection_map"] = None
    else:
        model = _load_model(config)
        metrics = evaluate_model(
            model,
            dataset.records,
            eval_cfg,
            _infer_config(config),
            training_counts=training_counts,
        )
    out_path = args.out
    if os.path.isdir(out_path):
        out_path = os.path.join(out_path, "metrics.json")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(metrics_to_json(metrics))
    print(metrics_to_json(metrics), end="")
    return 0


def cmd_infer(args) -> int:
    config = _load_config(args.config)
    image_size = config.get("image_size", 64)
    datasets = _load_datasets(config, image_size)
    if len(datasets) != 1:
        raise CliError("infer expects exactly one dataset")
    dataset = datasets[0]
    model = _load_model(config)
    infer_cfg = _infer_config(config)
    if model.label_space is not None:
        triplet_classes = list(model.label_space.relation_triplets)
    else:
        triplet_classes = sorted(set(dataset.triplet_classes()))
    strings = triplet_class_strings(triplet_classes)
    out = []
    for record in dataset.records:
        triplets = detect_relationships(model, record, triplet_classes, infer_cfg)
        out.append(triplets_to_json(triplets, strings))
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote predictions for {len(out)} records to {args.out}")
    return 0


def cmd_retrieve(args) -> int:
    config = _load_config(args.config)
    image_size = config.get("image_size", 64)
    model = _load_model(config)
    corpus = _load_datasets(config, image_size)
    if len(corpus) != 1:
        raise CliError("retrieve expects exactly one corpus dataset")
    corpus = corpus[0]
    query_path = config.get("query_dataset")
    if not query_path or not os.path.exists(query_path):
        raise CliError(f"missing query dataset: {query_path!r}")
    from .datagen import load_dataset as _ld

    query_ds = _ld(query_path, image_size=image_size)
    query_index = int(config.get("query_index", 0))
    if not (0 <= query_index < len(query_ds.records)):
        raise CliError(f"query index {query_index} out of range")
    if model.label_space is not None:
        triplet_classes = list(model.label_space.relation_triplets)
    else:
        triplet_classes = sorted(set(corpus.triplet_classes()))
    strings = triplet_class_strings(triplet_classes)
    ranked = retrieve_by_image(
        model,
        query_ds.records[query_index],
        corpus.records,
        triplet_classes,
        _infer_config(config),
    )
    payload = [
        {
            "corpus_index": idx,
            "triplet": triplets_to_json([trip], strings)[0],
            "score": score,
        }
        for idx, trip, score in ranked
    ]
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(payload)} ranked matches to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reldet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, needs_out=True):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        if needs_out:
            p.add_argument("--out", required=True)
        p.set_defaults(fn=fn)
        return p

    add("gen-data", cmd_gen_data)
    add("train-detector", cmd_train_detector)
    add("train-decoder", cmd_train_decoder)
    add("train-e2e", cmd_train_e2e)
    add("eval", cmd_eval)
    add("infer", cmd_infer)
    add("retrieve", cmd_retrieve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
