"""Explanation-annotated NLI corpus handling.

Ingests JSONL records (premise / hypothesis / label / explanation),
tokenizes, assembles [CLS]/[SEP] pair sequences, derives per-token
keyword/bias labels from the explanation, normalizes them into attention
targets, and builds the keyword-kept / bias-kept masked variants used by
the sub-inference passes.

Dataset format: UTF-8 JSONL, one object per line, required string fields
``premise``, ``hypothesis``, ``label`` (entailed|entailment, neutral,
contradicted|contradiction) and ``explanation``.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

LABELS = ("entailed", "neutral", "contradicted")
LABEL_TO_ID = {name: i for i, name in enumerate(LABELS)}
_LABEL_ALIASES = {
    "entailed": "entailed",
    "entailment": "entailed",
    "neutral": "neutral",
    "contradicted": "contradicted",
    "contradiction": "contradicted",
}

CLS, SEP, MASK, PAD, UNK = "[CLS]", "[SEP]", "[MASK]", "[PAD]", "[UNK]"
SPECIALS = (CLS, SEP, MASK, PAD, UNK)

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:'[a-z0-9]+)*")


class CorpusError(ValueError):
    """Malformed data or an unusable record."""


def tokenize(text: str) -> list[str]:
    """Lowercased, punctuation-stripped word tokens (deterministic)."""
    return _TOKEN_RE.findall(text.lower())


def canonical_label(raw: str) -> str:
    try:
        return _LABEL_ALIASES[raw.strip().lower()]
    except KeyError:
        raise CorpusError(f"unknown label {raw!r}") from None


@dataclass
class Record:
    """One NLI example as word-token lists plus its gold label."""

    premise: list[str]
    hypothesis: list[str]
    explanation: list[str]
    label: str

    def __post_init__(self):
        if not self.premise or not self.hypothesis:
            raise CorpusError("premise and hypothesis must be non-empty")
        if self.label not in LABELS:
            raise CorpusError(f"unknown label {self.label!r}")

    @property
    def usable(self) -> bool:
        """False when the record has no explanation to supervise from."""
        return bool(self.explanation)

    @classmethod
    def from_obj(cls, obj: dict) -> "Record":
        for key in ("premise", "hypothesis", "label", "explanation"):
            if key not in obj:
                raise CorpusError(f"missing field {key!r}")
            if not isinstance(obj[key], str):
                raise CorpusError(f"field {key!r} must be a string")
        return cls(
            premise=tokenize(obj["premise"]),
            hypothesis=tokenize(obj["hypothesis"]),
            explanation=tokenize(obj["explanation"]),
            label=canonical_label(obj["label"]),
        )


class Vocabulary:
    """Dense word->id map with five reserved special tokens.

    Ids 0..4 are [CLS], [SEP], [MASK], [PAD], [UNK] in that order; regular
    words follow in insertion order. The on-disk format is one word per
    line, id = line index + 5.
    """

    def __init__(self, words=()):
        self.words: list[str] = []
        self._ids: dict[str, int] = {w: i for i, w in enumerate(SPECIALS)}
        for w in words:
            self.add(w)

    cls_id, sep_id, mask_id, pad_id, unk_id = 0, 1, 2, 3, 4

    def add(self, word: str) -> int:
        if word in self._ids:
            return self._ids[word]
        idx = len(SPECIALS) + len(self.words)
        self._ids[word] = idx
        self.words.append(word)
        return idx

    def id_of(self, word: str) -> int:
        return self._ids.get(word, self.unk_id)

    def __len__(self) -> int:
        return len(SPECIALS) + len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._ids

    @classmethod
    def build(cls, records) -> "Vocabulary":
        """Vocabulary over premise/hypothesis words, most frequent first."""
        counts: dict[str, int] = {}
        for rec in records:
            for w in rec.premise:
                counts[w] = counts.get(w, 0) + 1
            for w in rec.hypothesis:
                counts[w] = counts.get(w, 0) + 1
        ordered = sorted(counts, key=lambda w: (-counts[w], w))
        return cls(ordered)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for w in self.words:
                fh.write(w + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls(line.rstrip("\n") for line in fh if line.rstrip("\n"))


def assemble_pair(premise: list[str], hypothesis: list[str], vocab: Vocabulary) -> list[int]:
    """[CLS] premise [SEP] hypothesis as ids; unknown words become [UNK]."""
    if not premise or not hypothesis:
        raise CorpusError("cannot assemble a pair with an empty side")
    ids = [vocab.cls_id]
    ids.extend(vocab.id_of(w) for w in premise)
    ids.append(vocab.sep_id)
    ids.extend(vocab.id_of(w) for w in hypothesis)
    return ids


def label_tokens(
    premise: list[str],
    hypothesis: list[str],
    explanation: list[str],
    stopwords=None,
) -> list[int]:
    """Keyword/bias labels over the assembled pair, one per position.

    0: word absent from the explanation; 1: in the explanation and in both
    sentences; 2: in the explanation but not in both sentences. [CLS] and
    [SEP] positions get 0. Membership is set membership over lowercased
    tokens; ``stopwords`` (optional) are removed from the explanation set
    before matching.
    """
    if not explanation:
        raise CorpusError("record has no explanation; cannot derive token labels")
    expl = set(explanation)
    if stopwords:
        expl -= set(stopwords)
    both = set(premise) & set(hypothesis)

    def lab(word: str) -> int:
        if word not in expl:
            return 0
        return 1 if word in both else 2

    out = [0]
    out.extend(lab(w) for w in premise)
    out.append(0)
    out.extend(lab(w) for w in hypothesis)
    return out


def normalize_labels(e) -> np.ndarray:
    """Targets e_i / sum(e); an all-zero label vector falls back to uniform."""
    arr = np.asarray(e, dtype=np.float64)
    total = arr.sum()
    if total == 0:
        return np.full(arr.shape, 1.0 / arr.size)
    return arr / total


def mask_sequences(tokens: list[int], e, vocab: Vocabulary) -> tuple[list[int], list[int]]:
    """Keyword-kept and bias-kept variants of an assembled sequence.

    The first keeps positions labeled 1 or 2, the second keeps non-special
    positions labeled 0; everything else becomes [MASK]. [CLS]/[SEP] stay
    in both, so every non-special position is kept in exactly one output.
    """
    if len(tokens) != len(e):
        raise CorpusError("tokens and labels must have the same length")
    structural = (vocab.cls_id, vocab.sep_id)
    psi, sigma = [], []
    for tok, lab in zip(tokens, e):
        if tok in structural:
            psi.append(tok)
            sigma.append(tok)
        elif lab > 0:
            psi.append(tok)
            sigma.append(vocab.mask_id)
        else:
            psi.append(vocab.mask_id)
            sigma.append(tok)
    return psi, sigma


@dataclass
class LabeledSequence:
    """Assembled pair sequence with token labels, targets and masked variants."""

    tokens: list[int]
    words: list[str]
    labels: list[int]
    targets: np.ndarray
    psi_tokens: list[int]
    sigma_tokens: list[int]
    gold: int
    flagged: bool = False
    record: Record | None = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.tokens)
        if not (
            len(self.words) == len(self.labels) == len(self.targets)
            == len(self.psi_tokens) == len(self.sigma_tokens) == n
        ):
            raise CorpusError("sequence fields must share one length")

    def __len__(self) -> int:
        return len(self.tokens)


def build_sequence(
    record: Record,
    vocab: Vocabulary,
    stopwords=None,
    allow_unlabeled: bool = False,
) -> LabeledSequence:
    """Full pipeline for one record: assemble, label, normalize, mask.

    Records without an explanation are rejected unless ``allow_unlabeled``
    is set (evaluation path), in which case labels are all zero and the
    sequence is flagged.
    """
    tokens = assemble_pair(record.premise, record.hypothesis, vocab)
    words = [CLS] + list(record.premise) + [SEP] + list(record.hypothesis)
    if record.explanation:
        e = label_tokens(record.premise, record.hypothesis, record.explanation, stopwords)
    elif allow_unlabeled:
        e = [0] * len(tokens)
    else:
        raise CorpusError("record has no explanation; pass allow_unlabeled for evaluation")
    targets = normalize_labels(e)
    psi, sigma = mask_sequences(tokens, e, vocab)
    return LabeledSequence(
        tokens=tokens,
        words=words,
        labels=e,
        targets=targets,
        psi_tokens=psi,
        sigma_tokens=sigma,
        gold=LABEL_TO_ID[record.label],
        flagged=sum(e) == 0,
        record=record,
    )


def load_jsonl(path, strict: bool = True) -> list[Record]:
    """Parse a JSONL dataset in file order.

    Malformed lines raise with their line number when ``strict``; otherwise
    they are logged and skipped.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise CorpusError("line is not a JSON object")
                records.append(Record.from_obj(obj))
            except (json.JSONDecodeError, CorpusError) as exc:
                msg = f"{path}: line {lineno}: {exc}"
                if strict:
                    raise CorpusError(msg) from None
                logger.warning("skipping %s", msg)
    return records


def prepare_dataset(
    records,
    vocab: Vocabulary,
    max_len: int,
    stopwords=None,
    allow_unlabeled: bool = False,
) -> list[LabeledSequence]:
    """Build sequences for every record, dropping ones the encoder cannot take."""
    out = []
    skipped = 0
    for rec in records:
        seq = build_sequence(rec, vocab, stopwords=stopwords, allow_unlabeled=allow_unlabeled)
        if len(seq) > max_len:
            skipped += 1
            continue
        out.append(seq)
    if skipped:
        logger.warning("dropped %d records longer than max_len=%d", skipped, max_len)
    return out
