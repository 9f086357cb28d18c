"""Comparative-utterance catalog, tokenizer, and trajectory-pair labeling.

Eight utterance classes (four features times two directions), each with a
hand-written paraphrase list. Pairs of trajectories are labeled with every
utterance class whose feature differs by more than a per-feature dead band.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .worldsim import FEATURE_NAMES, TrajectoryPool

CATALOG_FORMAT_VERSION = 1
TRIPLET_FORMAT_VERSION = 1

UNKNOWN_TOKEN = "<unk>"
UNKNOWN_INDEX = 0

# Direction +1 always means "increase the stored feature value":
# higher, faster, farther from the pan, better at picking up the spoon.
_PARAPHRASES = {
    ("height", +1): [
        "Move higher.",
        "Keep the arm higher up.",
        "Raise your hand more.",
        "Stay higher above the counter.",
        "Lift the arm higher while moving.",
        "Travel at a greater height.",
    ],
    ("height", -1): [
        "Move lower.",
        "Keep the arm closer to the counter.",
        "Lower your hand more.",
        "Stay lower while moving.",
        "Bring the arm down a bit.",
        "Travel at a smaller height.",
    ],
    ("speed", +1): [
        "Move faster.",
        "Speed up.",
        "Go quicker.",
        "Move more quickly.",
        "Finish the motion faster.",
        "Pick up the pace.",
    ],
    ("speed", -1): [
        "Move slower.",
        "Slow down.",
        "Go more gently.",
        "Move more slowly.",
        "Take more time with the motion.",
        "Ease off the pace.",
    ],
    ("pan_distance", +1): [
        "Move farther from the pan.",
        "Keep a wider berth around the pan.",
        "Stay farther away from the pan.",
        "Avoid the pan better.",
        "Give the pan more room.",
        "Steer clear of the pan.",
    ],
    ("pan_distance", -1): [
        "Move closer to the pan.",
        "Pass nearer to the pan.",
        "Stay closer to the pan.",
        "Get nearer the pan.",
        "Keep tighter to the pan.",
        "Travel closer by the pan.",
    ],
    ("success", +1): [
        "Pick up the spoon better.",
        "Grab the spoon more reliably.",
        "Do better at picking up the spoon.",
        "Be more adept at picking up the spoon.",
        "Improve the spoon pickup.",
        "Finish closer to the spoon and grab it.",
    ],
    ("success", -1): [
        "Worry less about the spoon.",
        "Do not focus on picking up the spoon.",
        "Care less about the spoon pickup.",
        "Skip the spoon grab.",
        "Put less effort into the spoon.",
        "Let go of the spoon goal.",
    ],
}

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_words(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return [w for w in text.lower().translate(_PUNCT_TABLE).split() if w]


@dataclass(frozen=True)
class Utterance:
    """One comparative sentence tied to a feature and a direction."""

    feature: int
    direction: int
    text: str
    tokens: tuple[int, ...]

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("utterance text must be nonempty")
        if self.direction not in (-1, 1):
            raise ValueError(f"direction must be +1 or -1, got {self.direction}")


class Vocabulary:
    """Word to dense-index map with a reserved unknown slot at index 0."""

    def __init__(self, words):
        self.index = {UNKNOWN_TOKEN: UNKNOWN_INDEX}
        for w in sorted(set(words)):
            if w == UNKNOWN_TOKEN:
                continue
            self.index[w] = len(self.index)

    def __len__(self):
        return len(self.index)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def lookup(self, word: str) -> int:
        return self.index.get(word, UNKNOWN_INDEX)


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Token id list for `text`; unknown words map to the unknown index."""
    words = normalize_words(text)
    if not words:
        raise ValueError("cannot tokenize empty text")
    return [vocab.lookup(w) for w in words]


class Catalog:
    """All utterance classes, their paraphrases, and the shared vocabulary."""

    def __init__(self, feature_names=FEATURE_NAMES, extra_paraphrase_files=None):
        missing = [n for n in ("height", "speed", "pan_distance", "success") if n not in feature_names]
        if missing:
            raise ValueError(f"feature names must cover the toy features, missing {missing}")
        self.feature_names = tuple(feature_names)

        texts: dict[tuple[int, int], list[str]] = {}
        for (fname, direction), sentences in _PARAPHRASES.items():
            fid = self.feature_names.index(fname)
            texts[(fid, direction)] = list(sentences)

        for path in extra_paraphrase_files or []:
            for entry in json.loads(Path(path).read_text()):
                fid = self.feature_names.index(entry["feature"])
                key = (fid, int(entry["direction"]))
                for t in entry["texts"]:
                    if t not in texts[key]:
                        texts[key].append(t)

        words = []
        for sentences in texts.values():
            for t in sentences:
                words.extend(normalize_words(t))
        self.vocab = Vocabulary(words)

        self._by_class: dict[tuple[int, int], list[Utterance]] = {}
        for key, sentences in texts.items():
            fid, direction = key
            self._by_class[key] = [
                Utterance(fid, direction, t, tuple(tokenize(t, self.vocab)))
                for t in sentences
            ]

    @property
    def classes(self) -> list[tuple[int, int]]:
        return sorted(self._by_class)

    def paraphrases(self, feature: int, direction: int) -> list[Utterance]:
        key = (feature, direction)
        if key not in self._by_class:
            raise KeyError(f"no utterance class for feature {feature}, direction {direction}")
        return list(self._by_class[key])

    def all_utterances(self) -> list[Utterance]:
        return [u for key in self.classes for u in self._by_class[key]]

    def utterances_excluding(self, feature: int, direction: int) -> list[Utterance]:
        """Every utterance outside one (feature, direction) class."""
        return [
            u
            for key in self.classes
            if key != (feature, direction)
            for u in self._by_class[key]
        ]

    def find(self, text: str) -> Utterance | None:
        """Exact-text lookup after normalization."""
        want = normalize_words(text)
        for u in self.all_utterances():
            if normalize_words(u.text) == want:
                return u
        return None

    def to_doc(self) -> dict:
        return {
            "format_version": CATALOG_FORMAT_VERSION,
            "kind": "utterance_catalog",
            "feature_names": list(self.feature_names),
            "entries": [
                {
                    "feature": self.feature_names[fid],
                    "direction": direction,
                    "texts": [u.text for u in self._by_class[(fid, direction)]],
                }
                for fid, direction in self.classes
            ],
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_doc(), sort_keys=True))


def default_epsilons(pool: TrajectoryPool, split: str = "train") -> np.ndarray:
    """Dead band per feature: 10% of the observed range in one split.

    Zero-range features get a tiny positive floor so the band stays valid.
    """
    ids = pool.split_ids(split)
    if not ids:
        raise ValueError(f"split {split!r} is empty")
    mat = pool.feature_matrix(ids)
    spread = mat.max(axis=0) - mat.min(axis=0)
    return np.maximum(0.1 * spread, 1e-9)


def label_pair(
    feats_a: np.ndarray,
    feats_b: np.ndarray,
    epsilons: np.ndarray,
    catalog: Catalog,
    rng: np.random.Generator,
) -> list[Utterance]:
    """One utterance per feature whose change from A to B clears the dead band."""
    feats_a = np.asarray(feats_a, dtype=np.float64)
    feats_b = np.asarray(feats_b, dtype=np.float64)
    epsilons = np.asarray(epsilons, dtype=np.float64)
    if np.any(epsilons <= 0):
        raise ValueError("every epsilon must be positive")

    out = []
    for d in range(len(feats_a)):
        delta = feats_b[d] - feats_a[d]
        if abs(delta) > epsilons[d]:
            direction = 1 if delta > 0 else -1
            options = catalog.paraphrases(d, direction)
            out.append(options[int(rng.integers(len(options)))])
    return out


@dataclass(frozen=True)
class Triplet:
    """Labeled pair: the utterance describes B relative to A."""

    a_id: str
    b_id: str
    utterance: Utterance
    split: str


@dataclass
class TripletDataset:
    """Triplets across splits, with per-split access."""

    items: list[Triplet] = field(default_factory=list)

    def __len__(self):
        return len(self.items)

    def split(self, tag: str) -> list[Triplet]:
        return [t for t in self.items if t.split == tag]

    def to_doc(self) -> dict:
        return {
            "format_version": TRIPLET_FORMAT_VERSION,
            "kind": "triplet_dataset",
            "items": [
                {
                    "split": t.split,
                    "a_id": t.a_id,
                    "b_id": t.b_id,
                    "text": t.utterance.text,
                    "feature": t.utterance.feature,
                    "direction": t.utterance.direction,
                }
                for t in self.items
            ],
        }

    @classmethod
    def from_doc(cls, doc: dict, catalog: Catalog) -> "TripletDataset":
        if doc.get("format_version") != TRIPLET_FORMAT_VERSION:
            raise ValueError(f"unsupported triplet format_version {doc.get('format_version')!r}")
        items = []
        for row in doc["items"]:
            utt = Utterance(
                feature=int(row["feature"]),
                direction=int(row["direction"]),
                text=row["text"],
                tokens=tuple(tokenize(row["text"], catalog.vocab)),
            )
            items.append(Triplet(row["a_id"], row["b_id"], utt, row["split"]))
        return cls(items)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_doc(), sort_keys=True))

    @classmethod
    def load(cls, path, catalog: Catalog) -> "TripletDataset":
        return cls.from_doc(json.loads(Path(path).read_text()), catalog)


def build_triplets(
    pool: TrajectoryPool,
    catalog: Catalog,
    epsilons: np.ndarray,
    pairs_per_split,
    seed: int,
) -> TripletDataset:
    """Label ordered trajectory pairs drawn without replacement per split.

    `pairs_per_split` is an int applied to every split or a mapping
    {split: count}. Each qualifying feature of a pair yields one triplet.
    """
    rng = np.random.default_rng(seed)
    items: list[Triplet] = []
    for tag in ("train", "val", "test"):
        want = pairs_per_split[tag] if isinstance(pairs_per_split, dict) else int(pairs_per_split)
        if want < 0:
            raise ValueError("pairs per split must be nonnegative")
        if want == 0:
            continue
        ids = pool.split_ids(tag)
        n = len(ids)
        max_pairs = n * (n - 1)
        if want > max_pairs:
            raise ValueError(
                f"split {tag!r} has only {n} trajectories "
                f"({max_pairs} ordered pairs), cannot draw {want}"
            )
        flat = rng.choice(max_pairs, size=want, replace=False)
        for code in flat:
            i, j = divmod(int(code), n - 1)
            if j >= i:
                j += 1  # skip the diagonal
            a_id, b_id = ids[i], ids[j]
            for utt in label_pair(
                pool.features_of(a_id), pool.features_of(b_id), epsilons, catalog, rng
            ):
                items.append(Triplet(a_id, b_id, utt, tag))
    return TripletDataset(items)
