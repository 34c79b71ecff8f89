"""Bottom-up visual relationship detection with a language-defined label space.

A small vision-transformer detector predicts one instance per image token; a
latent-query decoder reads the instance embeddings and emits relationship
candidates classified against text-query embeddings, so heterogeneous dataset
vocabularies share one label space.  Everything runs at desk scale on
synthetic scenes with exactly checkable ground truth.
"""

from .boxes import Box
from .datagen import Dataset, MixSpec, SceneRecord, generate_dataset, generate_scene, load_dataset, save_dataset
from .decoder import DecoderConfig, RelationDecoder, RelationOutput, select_indices
from .detector import Detector, DetectorConfig, DetectorOutput
from .inference import InferConfig, ScoredTriplet, assemble, pnms, retrieve_by_image
from .language import (
    LabelSpace,
    SynonymMap,
    TextEncoder,
    TextQuery,
    conjugate_ing,
    encode_text,
    prompt_object,
    prompt_relation,
    sample_negative_labels,
    unify_label_spaces,
)
from .losses import (
    Assignment,
    LossWeights,
    RelationTarget,
    box_loss,
    detector_loss,
    focal_sigmoid_ce,
    focal_softmax_ce,
    hungarian,
    vrd_loss,
)
from .metrics import EvalConfig, detection_map, mean_recall_at_k, relationship_map
from .model import ModelConfig, VRDModel, make_model_config
from .training import TrainConfig, train, train_decoder, train_detector, end_to_end_train

__all__ = [
    "Assignment",
    "Box",
    "Dataset",
    "DecoderConfig",
    "Detector",
    "DetectorConfig",
    "DetectorOutput",
    "EvalConfig",
    "InferConfig",
    "LabelSpace",
    "LossWeights",
    "MixSpec",
    "ModelConfig",
    "RelationDecoder",
    "RelationOutput",
    "RelationTarget",
    "SceneRecord",
    "ScoredTriplet",
    "SynonymMap",
    "TextEncoder",
    "TextQuery",
    "TrainConfig",
    "VRDModel",
    "assemble",
    "box_loss",
    "conjugate_ing",
    "detection_map",
    "detector_loss",
    "encode_text",
    "end_to_end_train",
    "focal_sigmoid_ce",
    "focal_softmax_ce",
    "generate_dataset",
    "generate_scene",
    "hungarian",
    "load_dataset",
    "make_model_config",
    "mean_recall_at_k",
    "pnms",
    "prompt_object",
    "prompt_relation",
    "relationship_map",
    "retrieve_by_image",
    "sample_negative_labels",
    "save_dataset",
    "select_indices",
    "train",
    "train_decoder",
    "train_detector",
    "unify_label_spaces",
    "vrd_loss",
]
