"""Language-defined label space: unified vocabularies, prompts, and a toy text encoder.

Object and relationship categories are identified by strings rather than
integers.  Categories from different datasets are never merged by name;
overlapping meanings are reconciled purely through proximity of their text
embeddings.  The text encoder here is a deterministic hash-based stand-in for
a real language tower: each token maps to a fixed pseudo-random Gaussian
vector, optionally canonicalized through a synonym table, and a prompt embeds
to the unit-normalized mean of its token vectors.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

Triplet = tuple[str, str, str]

_TOKEN_RE = re.compile(r"[a-z0-9]+")

NO_INTERACTION = "no-interaction"

# Irregular or otherwise rule-breaking present-participle forms.
ING_EXCEPTIONS = {
    "be": "being",
    "die": "dying",
    "lie": "lying",
    "tie": "tying",
    "see": "seeing",
    "flee": "fleeing",
    "free": "freeing",
    "agree": "agreeing",
    "visit": "visiting",
    "open": "opening",
    "enter": "entering",
    "offer": "offering",
    "cover": "covering",
    "listen": "listening",
    "happen": "happening",
}

_VOWELS = set("aeiou")


def normalize_label(label: str) -> str:
    """Case-fold and collapse whitespace; the only string-level merging we do."""
    return " ".join(label.split()).casefold()


def conjugate_ing(verb: str) -> str:
    """Present-continuous form of a verb phrase, conjugating the head token.

    Rule order: exception table, already '-ing', '-ie' -> '-ying', drop a
    trailing silent 'e' (but keep '-ee'), double a final CVC consonant for
    short stems, else append 'ing'.
    """
    if not verb:
        raise ValueError("empty verb")
    head, _, rest = verb.partition(" ")
    out = ING_EXCEPTIONS.get(head)
    if out is None:
        if head.endswith("ing") and len(head) > 4:
            out = head
        elif head.endswith("ie"):
            out = head[:-2] + "ying"
        elif head.endswith("e") and not head.endswith("ee"):
            out = head[:-1] + "ing"
        elif (
            len(head) >= 3
            and len(head) <= 4
            and head[-1] not in _VOWELS
            and head[-1] not in "wxy"
            and head[-2] in _VOWELS
            and head[-3] not in _VOWELS
        ):
            out = head + head[-1] + "ing"
        else:
            out = head + "ing"
    return out + (" " + rest if rest else "")


class SynonymMap:
    """Many-to-one word canonicalization table.

    Canonical words map to themselves, so applying the map twice is the same
    as applying it once.
    """

    def __init__(self, entries: dict[str, str] | None = None):
        self._map: dict[str, str] = {}
        for word, canon in (entries or {}).items():
            self.add(word, canon)

    def add(self, word: str, canonical: str) -> None:
        word = normalize_label(word)
        canonical = normalize_label(canonical)
        # Chase the chain so the stored target is always a fixed point.
        canonical = self._map.get(canonical, canonical)
        if word == canonical:
            return
        if word in self._map.values():
            raise ValueError(f"{word!r} is already a canonical target")
        self._map[word] = canonical

    def canonical(self, word: str) -> str:
        return self._map.get(word, word)

    def __len__(self) -> int:
        return len(self._map)

    def items(self):
        return self._map.items()

    @classmethod
    def from_file(cls, path) -> "SynonymMap":
        """Parse a UTF-8 file with one 'word<TAB>canonical' entry per line."""
        entries = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise ValueError(f"{path}:{lineno}: expected 'word<TAB>canonical'")
                entries[parts[0]] = parts[1]
        return cls(entries)

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for word in sorted(self._map):
                fh.write(f"{word}\t{self._map[word]}\n")


def default_synonym_map() -> SynonymMap:
    """Synonym table bundled with the package (covers the built-in vocabularies)."""
    with resources.files("reldet.data").joinpath("synonyms.tsv").open(encoding="utf-8") as fh:
        entries = {}
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            word, canon = line.split("\t")
            entries[word] = canon
    return SynonymMap(entries)


@dataclass(frozen=True)
class LabelSpace:
    """Unified object and relationship-triplet label spaces across datasets.

    Strings are deduplicated only by case-folding and whitespace
    normalization; near-synonyms stay distinct entries and meet only in
    embedding space.  Ordering is lexicographic so downstream query layouts
    are reproducible.
    """

    object_labels: tuple[str, ...]
    relation_triplets: tuple[Triplet, ...]
    object_provenance: dict[str, frozenset[str]] = field(default_factory=dict)
    triplet_provenance: dict[Triplet, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self):
        objects = set(self.object_labels)
        for sub, _, obj in self.relation_triplets:
            if sub not in objects:
                raise ValueError(f"triplet subject {sub!r} not in object labels")
            if obj and obj not in objects:
                raise ValueError(f"triplet object {obj!r} not in object labels")


def unify_label_spaces(dataset_vocabularies, dataset_ids=None) -> LabelSpace:
    """Union per-dataset vocabularies into one label space.

    `dataset_vocabularies` is a sequence of (object labels, relation triplets)
    pairs; triplets may be empty for detection-only datasets.  Triplets that
    differ only in wording (e.g. two datasets' variants of the same
    relationship) are all retained: reconciling them is the text encoder's
    job, not a string merge.
    """
    vocabularies = list(dataset_vocabularies)
    if not vocabularies:
        raise ValueError("no datasets")
    if dataset_ids is None:
        dataset_ids = [str(i) for i in range(len(vocabularies))]
    obj_prov: dict[str, set[str]] = {}
    trip_prov: dict[Triplet, set[str]] = {}
    for ds_id, (objects, triplets) in zip(dataset_ids, vocabularies):
        objects = [normalize_label(o) for o in objects]
        if not objects:
            raise ValueError(f"dataset {ds_id!r} has an empty object vocabulary")
        for o in objects:
            obj_prov.setdefault(o, set()).add(ds_id)
        for t in triplets:
            sub, pred, obj = t
            key = (normalize_label(sub), normalize_label(pred), normalize_label(obj) if obj else "")
            trip_prov.setdefault(key, set()).add(ds_id)
    return LabelSpace(
        object_labels=tuple(sorted(obj_prov)),
        relation_triplets=tuple(sorted(trip_prov)),
        object_provenance={k: frozenset(v) for k, v in obj_prov.items()},
        triplet_provenance={k: frozenset(v) for k, v in trip_prov.items()},
    )


def load_prompt_templates(path=None) -> tuple[str, ...]:
    """The bundled CLIP-style object prompt templates ('{}' placeholder, one per line)."""
    if path is None:
        text = resources.files("reldet.data").joinpath("clip_prompt_templates.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    templates = tuple(line for line in text.splitlines() if line)
    return templates


_TEMPLATES: tuple[str, ...] | None = None


def prompt_templates() -> tuple[str, ...]:
    global _TEMPLATES
    if _TEMPLATES is None:
        _TEMPLATES = load_prompt_templates()
    return _TEMPLATES


def prompt_object(label: str, template_index: int) -> str:
    """Render an object category through one of the bundled prompt templates."""
    templates = prompt_templates()
    if not 0 <= template_index < len(templates):
        raise ValueError(f"template index {template_index} out of range [0, {len(templates)})")
    return templates[template_index].format(label)


def prompt_relation(triplet: Triplet | tuple[str, str, None], transitive: bool = False) -> str:
    """Render a relationship triplet as a single fixed prompt.

    The predicate is put in present-continuous form; the 'no-interaction'
    predicate becomes the word 'and'.  Objectless triplets render without the
    trailing object ('a person walking'); set `transitive=True` for
    object-taking verbs so they read 'a person eating something'.
    """
    sub, pred, obj = triplet
    if not sub or not pred:
        raise ValueError("subject and predicate must be non-empty")
    if pred == NO_INTERACTION:
        if not obj:
            raise ValueError("'no-interaction' requires an object")
        return f"a {sub} and a {obj}"
    verb = conjugate_ing(pred)
    if obj:
        return f"a {sub} {verb} a {obj}"
    if transitive:
        return f"a {sub} {verb} something"
    return f"a {sub} {verb}"


class TextEncoder:
    """Deterministic toy text encoder.

    Tokens are lowercased word chunks, canonicalized through the synonym map,
    and hashed to fixed Gaussian vectors; a prompt embeds to the
    L2-normalized mean of its token vectors.  Two prompts that differ only in
    synonym-mapped words therefore embed identically, which is what lets
    desk-scale experiments exercise cross-vocabulary unification.
    """

    def __init__(self, dim: int = 128, seed: int = 0, synonyms: SynonymMap | None = None):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self.synonyms = synonyms if synonyms is not None else SynonymMap()
        self._token_cache: dict[str, np.ndarray] = {}
        self._prompt_cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._token_cache.get(token)
        if vec is None:
            digest = hashlib.blake2b(
                f"{token}\x1f{self.seed}".encode("utf-8"), digest_size=8
            ).digest()
            rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
            vec = rng.standard_normal(self.dim)
            self._token_cache[token] = vec
        return vec

    def encode(self, prompt: str) -> np.ndarray:
        """Unit-norm embedding of `prompt`; pure in (prompt, seed, synonyms)."""
        cached = self._prompt_cache.get(prompt)
        if cached is not None:
            return cached
        tokens = _TOKEN_RE.findall(prompt.casefold())
        if not tokens:
            raise ValueError(f"prompt has no tokens: {prompt!r}")
        acc = np.zeros(self.dim)
        for tok in tokens:
            acc += self._token_vector(self.synonyms.canonical(tok))
        acc /= len(tokens)
        norm = np.linalg.norm(acc)
        if norm == 0.0:
            raise ValueError("degenerate zero embedding")
        emb = acc / norm
        self._prompt_cache[prompt] = emb
        return emb


def encode_text(prompt: str, seed: int, dim: int = 128, synonyms: SynonymMap | None = None) -> np.ndarray:
    """One-shot functional form of TextEncoder.encode."""
    return TextEncoder(dim=dim, seed=seed, synonyms=synonyms).encode(prompt)


@dataclass(frozen=True)
class TextQuery:
    """A prompt string together with its unit-norm embedding."""

    prompt: str
    embedding: np.ndarray

    def __post_init__(self):
        norm = float(np.linalg.norm(self.embedding))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"query embedding norm {norm} != 1")


def sample_negative_labels(
    positive_labels,
    labels,
    frequency,
    rng: np.random.Generator,
    count: int = 50,
) -> list:
    """Per-image label set: positives plus frequency-weighted sampled negatives.

    Negatives are drawn without replacement in proportion to their training
    frequency.  The number of negatives is max(50, `count`), capped by how
    many non-positive labels exist at all.
    """
    positives = list(dict.fromkeys(positive_labels))
    positive_set = set(positives)
    candidates = [l for l in labels if l not in positive_set]
    for c in candidates:
        if frequency.get(c, 0) <= 0:
            raise ValueError(f"label {c!r} has non-positive frequency")
    n_neg = min(max(50, count), len(candidates))
    weights = np.array([float(frequency[c]) for c in candidates])
    chosen = []
    for _ in range(n_neg):
        probs = weights / weights.sum()
        idx = int(rng.choice(len(candidates), p=probs))
        chosen.append(candidates[idx])
        candidates.pop(idx)
        weights = np.delete(weights, idx)
    return positives + chosen
