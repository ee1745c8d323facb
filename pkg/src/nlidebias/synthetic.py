"""Synthetic NLI corpus with a controlled spurious correlation.

Premise/hypothesis pairs come from sentence frames; the gold label is fully
determined by a designated causal verb pair (specific->general implies
entailed, conflicting pairs contradicted, unrelated pairs neutral, and an
identical verb on both sides entailed). The explanation is a fixed sentence
containing exactly the causal verbs, so token labeling marks the verbs as
keywords and everything else as bias.

A spurious marker token is appended to the hypothesis with a configurable
correlation rho to a designated label: the marker's presence indicator and
the label-match indicator have Pearson correlation rho in expectation, with
rho = +1 / -1 reachable at the exact class balance used here (one third).
Generation is fully deterministic per seed, byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import LABELS, Record, tokenize

SUBJECTS = (
    "man", "woman", "girl", "boy", "dog", "cat", "child", "artist",
    "singer", "farmer", "doctor", "teacher", "runner", "player", "worker", "chef",
)
PLACES = (
    "park", "street", "kitchen", "garden", "beach", "market",
    "library", "museum", "station", "forest", "field", "yard",
)
#: (specific, general) verb pairs: specific entails general
ENTAIL_PAIRS = (
    ("sprinting", "running"), ("jogging", "exercising"), ("whispering", "speaking"),
    ("baking", "cooking"), ("sketching", "drawing"), ("strolling", "walking"),
    ("sipping", "drinking"), ("napping", "resting"), ("chuckling", "laughing"),
    ("humming", "singing"), ("grilling", "cooking"), ("scribbling", "writing"),
    ("lecturing", "talking"), ("marching", "moving"), ("nibbling", "snacking"),
    ("peeking", "looking"),
)
#: mutually exclusive verb pairs
CONTRA_PAIRS = (
    ("sleeping", "dancing"), ("sitting", "jumping"), ("crying", "laughing"),
    ("standing", "swimming"), ("reading", "shouting"), ("resting", "sprinting"),
    ("eating", "singing"), ("kneeling", "running"), ("floating", "digging"),
    ("writing", "swimming"), ("frowning", "cheering"), ("dozing", "marching"),
    ("whistling", "chewing"), ("crawling", "leaping"),
)
#: unrelated verb pairs
NEUTRAL_PAIRS = (
    ("walking", "eating"), ("painting", "waiting"), ("fishing", "counting"),
    ("climbing", "cheering"), ("typing", "stretching"), ("sweeping", "nodding"),
    ("knitting", "pacing"), ("rowing", "clapping"), ("juggling", "yawning"),
    ("drumming", "listening"), ("coding", "gardening"), ("sailing", "doodling"),
    ("skating", "chatting"), ("baking", "stargazing"),
)
#: label-irrelevant modifiers scattered through both sentences
FILLERS = (
    "quietly", "slowly", "quickly", "calmly", "gladly", "often", "rarely",
    "gently", "loudly", "eagerly", "barely", "nearly", "almost", "simply",
    "softly", "boldly", "neatly", "badly", "early", "late", "today",
    "tonight", "outside", "inside", "upstairs", "downstairs", "together",
    "alone", "twice", "again", "still", "already", "somewhere", "nearby",
    "carefully", "proudly", "politely", "bravely", "happily", "sadly",
)
FRAMES = (
    "a {s} is {v} near the {p}",
    "the {s} is {v} at the {p}",
    "a {s} is {v} by the {p}",
)


class SyntheticSpecError(ValueError):
    """Inconsistent generator specification."""


@dataclass
class SyntheticSpec:
    """Knobs of the generator; defaults use the full word banks."""

    n_train: int = 5000
    n_dev: int = 1000
    n_ood: int = 1000
    rho_train: float = 0.9
    rho_ood: float = -0.9
    seed: int = 0
    spurious_token: str = "truly"
    bias_label: str = "entailed"
    n_subjects: int = len(SUBJECTS)
    n_places: int = len(PLACES)
    n_pairs: int = 12
    identity_rate: float = 0.25
    max_fillers: int = 3
    n_filler_words: int = len(FILLERS)
    frames: tuple = FRAMES

    def __post_init__(self):
        for name in ("n_train", "n_dev", "n_ood"):
            if getattr(self, name) < 1:
                raise SyntheticSpecError(f"{name} must be >= 1")
        for name in ("rho_train", "rho_ood"):
            if not -1.0 <= getattr(self, name) <= 1.0:
                raise SyntheticSpecError(f"{name} must lie in [-1, 1]")
        if self.bias_label not in LABELS:
            raise SyntheticSpecError(f"bias_label must be one of {LABELS}")
        if not 1 <= self.n_subjects <= len(SUBJECTS):
            raise SyntheticSpecError("n_subjects out of range")
        if not 1 <= self.n_places <= len(PLACES):
            raise SyntheticSpecError("n_places out of range")
        limit = min(len(ENTAIL_PAIRS), len(CONTRA_PAIRS), len(NEUTRAL_PAIRS))
        if not 1 <= self.n_pairs <= limit:
            raise SyntheticSpecError(f"n_pairs must lie in [1, {limit}]")
        if not 0.0 <= self.identity_rate <= 1.0:
            raise SyntheticSpecError("identity_rate must lie in [0, 1]")
        if self.max_fillers < 0:
            raise SyntheticSpecError("max_fillers must be >= 0")
        if not 1 <= self.n_filler_words <= len(FILLERS):
            raise SyntheticSpecError(f"n_filler_words must lie in [1, {len(FILLERS)}]")
        self.frames = tuple(self.frames)
        causal = self.causal_words()
        if self.spurious_token in causal:
            raise SyntheticSpecError("spurious token collides with the causal word set")
        frame_words = {w for f in self.frames for w in tokenize(f.format(s="", v="", p=""))}
        others = frame_words | set(SUBJECTS) | set(PLACES) | set(FILLERS)
        if self.spurious_token in others:
            raise SyntheticSpecError("spurious token collides with template vocabulary")

    def causal_words(self) -> set:
        words = set()
        for bank in (ENTAIL_PAIRS[: self.n_pairs], CONTRA_PAIRS[: self.n_pairs],
                     NEUTRAL_PAIRS[: self.n_pairs]):
            for v1, v2 in bank:
                words.add(v1)
                words.add(v2)
        return words

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["frames"] = list(self.frames)
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "SyntheticSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise SyntheticSpecError(f"unknown spec keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def from_json(cls, path) -> "SyntheticSpec":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        if not isinstance(obj, dict):
            raise SyntheticSpecError(f"{path}: spec must be a JSON object")
        return cls.from_dict(obj)


def spurious_rates(rho: float) -> tuple[float, float]:
    """P(marker | label match) and P(marker | no match) realizing ``rho``.

    With exact one-third class balance both indicators end up with variance
    pi*(1-pi), which makes the Pearson correlation exactly rho in
    expectation and keeps the whole [-1, 1] range feasible.
    """
    pi = 1.0 / 3.0
    base = pi if rho >= 0 else 1.0 - pi
    p1 = base + (1.0 - pi) * rho
    p0 = base - pi * rho
    return min(max(p1, 0.0), 1.0), min(max(p0, 0.0), 1.0)


def _balanced_labels(rng: np.random.Generator, n: int) -> np.ndarray:
    base = np.arange(n) % 3
    return base[rng.permutation(n)]


def _make_example(rng: np.random.Generator, spec: SyntheticSpec, label_id: int,
                  p_present: tuple[float, float]) -> dict:
    label = LABELS[label_id]
    identity = False
    if label == "entailed":
        if rng.random() < spec.identity_rate:
            identity = True
            pair = ENTAIL_PAIRS[rng.integers(spec.n_pairs)]
            v1 = v2 = pair[rng.integers(2)]
            explanation = f"both describe {v1}"
        else:
            v1, v2 = ENTAIL_PAIRS[rng.integers(spec.n_pairs)]
            explanation = f"{v1} implies {v2}"
    elif label == "contradicted":
        v1, v2 = CONTRA_PAIRS[rng.integers(spec.n_pairs)]
        explanation = f"{v1} excludes {v2}"
    else:
        v1, v2 = NEUTRAL_PAIRS[rng.integers(spec.n_pairs)]
        explanation = f"{v1} unrelated to {v2}"
    # context words carry no label signal: each side draws its own subject,
    # place, frame and scattered fillers, which also moves the causal verb
    # to a variable position (identity pairs copy the whole sentence)
    premise_words = _make_sentence(rng, spec, v1)
    if identity:
        hypothesis_words = list(premise_words)
    else:
        hypothesis_words = _make_sentence(rng, spec, v2)
    matched = label == spec.bias_label
    p = p_present[0] if matched else p_present[1]
    if rng.random() < p:
        hypothesis_words.append(spec.spurious_token)
    return {
        "premise": " ".join(premise_words),
        "hypothesis": " ".join(hypothesis_words),
        "label": label,
        "explanation": explanation,
    }


def _make_sentence(rng: np.random.Generator, spec: SyntheticSpec, verb: str) -> list[str]:
    subj = SUBJECTS[rng.integers(spec.n_subjects)]
    place = PLACES[rng.integers(spec.n_places)]
    frame = spec.frames[rng.integers(len(spec.frames))]
    words = frame.format(s=subj, v=verb, p=place).split()
    k = int(rng.integers(0, spec.max_fillers + 1))
    for _ in range(k):
        filler = FILLERS[rng.integers(spec.n_filler_words)]
        pos = int(rng.integers(0, len(words) + 1))
        words.insert(pos, filler)
    return words


def make_split(spec: SyntheticSpec, n: int, rho: float, rng: np.random.Generator) -> list[dict]:
    rates = spurious_rates(rho)
    labels = _balanced_labels(rng, n)
    return [_make_example(rng, spec, int(y), rates) for y in labels]


def write_jsonl(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def generate_synthetic(spec: SyntheticSpec, out_dir) -> dict:
    """Write train/dev/ood JSONL files; returns paths and realized stats.

    The dev split shares the train-side correlation (in-distribution); the
    OOD split uses ``rho_ood``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    result = {"paths": {}, "correlation": {}}
    for name, n, rho in (
        ("train", spec.n_train, spec.rho_train),
        ("dev", spec.n_dev, spec.rho_train),
        ("ood", spec.n_ood, spec.rho_ood),
    ):
        rows = make_split(spec, n, rho, rng)
        path = out / f"{name}.jsonl"
        write_jsonl(rows, path)
        result["paths"][name] = str(path)
        result["correlation"][name] = measured_correlation(
            [Record.from_obj(r) for r in rows], spec.spurious_token, spec.bias_label
        )
    return result


def measured_correlation(records, spurious_token: str, bias_label: str) -> float:
    """Sample Pearson correlation between marker presence and label match."""
    z = np.array([spurious_token in r.hypothesis for r in records], dtype=np.float64)
    t = np.array([r.label == bias_label for r in records], dtype=np.float64)
    if z.std() == 0 or t.std() == 0:
        return 0.0
    return float(np.corrcoef(z, t)[0, 1])


def presence_table(records, spurious_token: str, bias_label: str) -> np.ndarray:
    """2x2 contingency counts of (label match, marker presence)."""
    table = np.zeros((2, 2))
    for r in records:
        t = int(r.label == bias_label)
        z = int(spurious_token in r.hypothesis)
        table[t, z] += 1
    return table
