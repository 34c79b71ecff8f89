"""Full model bundle: detector + relation decoder + text encoder + label space."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .decoder import DecoderConfig, RelationDecoder
from .detector import DTYPE, Detector, DetectorConfig
from .language import LabelSpace, SynonymMap, TextEncoder, default_synonym_map


@dataclass(frozen=True)
class ModelConfig:
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    text_dim: int = 128
    text_seed: int = 0
    init_seed: int = 0

    def __post_init__(self):
        if self.detector.text_dim != self.text_dim or self.decoder.text_dim != self.text_dim:
            raise ValueError("text_dim must agree between heads and the text encoder")
        if self.decoder.instance_dim != self.detector.width:
            raise ValueError("decoder instance_dim must equal detector width")


def make_model_config(
    image_size: int = 64,
    patch_size: int = 16,
    depth: int = 4,
    width: int = 64,
    heads: int = 4,
    num_queries: int = 100,
    decoder_layers: int = 3,
    decoder_heads: int = 8,
    text_dim: int = 128,
    droplayer_rate: float = 0.0,
    temperature_init: float = 0.07,
    text_seed: int = 0,
    init_seed: int = 0,
) -> ModelConfig:
    """Convenience constructor keeping the cross-field constraints satisfied."""
    return ModelConfig(
        detector=DetectorConfig(
            image_size=image_size,
            patch_size=patch_size,
            depth=depth,
            width=width,
            heads=heads,
            text_dim=text_dim,
            droplayer_rate=droplayer_rate,
            temperature_init=temperature_init,
        ),
        decoder=DecoderConfig(
            num_queries=num_queries,
            layers=decoder_layers,
            heads=decoder_heads,
            width=width,
            instance_dim=width,
            text_dim=text_dim,
            temperature_init=temperature_init,
        ),
        text_dim=text_dim,
        text_seed=text_seed,
        init_seed=init_seed,
    )


class VRDModel(torch.nn.Module):
    """Detector and relation decoder sharing one text-embedding space."""

    def __init__(self, cfg: ModelConfig, synonyms: SynonymMap | None = None):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(cfg.init_seed)
        self.detector = Detector(cfg.detector, gen)
        self.relation_decoder = RelationDecoder(cfg.decoder, gen)
        if synonyms is None:
            synonyms = default_synonym_map()
        self.text_encoder = TextEncoder(dim=cfg.text_dim, seed=cfg.text_seed, synonyms=synonyms)
        self.label_space: LabelSpace | None = None

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.detach().cpu().numpy().copy() for name, p in self.state_dict().items()}

    def config_manifest(self) -> dict:
        return {
            "model": {
                "detector": asdict(self.cfg.detector),
                "decoder": asdict(self.cfg.decoder),
                "text_dim": self.cfg.text_dim,
                "text_seed": self.cfg.text_seed,
                "init_seed": self.cfg.init_seed,
            },
            "synonyms": sorted(self.text_encoder.synonyms.items()),
            "label_space": {
                "objects": list(self.label_space.object_labels),
                "triplets": [list(t) for t in self.label_space.relation_triplets],
            }
            if self.label_space is not None
            else None,
        }

    def save(self, path) -> None:
        save_checkpoint(path, self.parameter_arrays(), self.config_manifest())

    @classmethod
    def load(cls, path) -> "VRDModel":
        tensors, manifest = load_checkpoint(path)
        mc = manifest["model"]
        cfg = ModelConfig(
            detector=DetectorConfig(**mc["detector"]),
            decoder=DecoderConfig(**mc["decoder"]),
            text_dim=mc["text_dim"],
            text_seed=mc["text_seed"],
            init_seed=mc["init_seed"],
        )
        synonyms = SynonymMap(dict(tuple(e) for e in manifest["synonyms"]))
        model = cls(cfg, synonyms=synonyms)
        state = {name: torch.from_numpy(arr).to(DTYPE) for name, arr in tensors.items()}
        model.load_state_dict(state)
        ls = manifest.get("label_space")
        if ls is not None:
            model.label_space = LabelSpace(
                object_labels=tuple(ls["objects"]),
                relation_triplets=tuple(tuple(t) for t in ls["triplets"]),
            )
        return model

    def object_queries(self, labels, template_indices) -> torch.Tensor:
        """Embed object prompts (one template index per label) into a query tensor."""
        from .language import prompt_object

        embs = [
            self.text_encoder.encode(prompt_object(label, idx))
            for label, idx in zip(labels, template_indices)
        ]
        return torch.from_numpy(np.stack(embs)).to(DTYPE)

    def relation_queries(self, triplets) -> torch.Tensor:
        """Embed relationship triplets with the single fixed relation template."""
        from .language import prompt_relation

        embs = [self.text_encoder.encode(prompt_relation(t)) for t in triplets]
        return torch.from_numpy(np.stack(embs)).to(DTYPE)
