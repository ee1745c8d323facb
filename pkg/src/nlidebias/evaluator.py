"""Evaluation and analysis over a frozen encoder.

Accuracy comes from the argmax of the final-block relation distribution
only; nothing on the evaluation path depends on the training-time loss
configuration. The remaining tools reproduce the analysis surfaces: token
level macro-F1 of the keyword/bias head, lexicon-driven synonym-swap
robustness curves, per-block [CLS]-attention reports with keyword/bias mass
splits, and sub-inference consistency reports.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import corpus as C
from . import tensor as T
from .corpus import LABELS, LabeledSequence, Record, Vocabulary, assemble_pair, label_tokens
from .encoder import Encoder
from .objectives import min_priority_label

logger = logging.getLogger(__name__)

CATEGORIES = {"bias": 0, "keyword-intersect": 1, "keyword-distinct": 2}


def predict_distribution(encoder: Encoder, tokens) -> np.ndarray:
    """Final-block relation distribution, forward only."""
    with T.no_grad():
        outs = encoder.encode(tokens)
        return encoder.main_distribution(outs).data.copy()


def predict(encoder: Encoder, tokens) -> int:
    return int(np.argmax(predict_distribution(encoder, tokens)))


@dataclass
class EvalReport:
    accuracy: float
    total: int
    correct: int
    confusion: np.ndarray  # [gold, pred]

    def per_class(self) -> dict:
        out = {}
        for i, name in enumerate(LABELS):
            out[name] = {
                "gold": int(self.confusion[i].sum()),
                "predicted": int(self.confusion[:, i].sum()),
                "correct": int(self.confusion[i, i]),
            }
        return out

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "total": self.total,
            "correct": self.correct,
            "per_class": self.per_class(),
            "confusion": self.confusion.astype(int).tolist(),
        }


def evaluate(encoder: Encoder, sequences) -> EvalReport:
    """Accuracy and per-class counts from the evaluation path only."""
    sequences = list(sequences)
    if not sequences:
        raise ValueError("cannot evaluate an empty dataset")
    confusion = np.zeros((3, 3))
    for seq in sequences:
        pred = predict(encoder, seq.tokens)
        confusion[seq.gold, pred] += 1
    correct = int(np.trace(confusion))
    return EvalReport(
        accuracy=correct / len(sequences),
        total=len(sequences),
        correct=correct,
        confusion=confusion,
    )


@dataclass
class TokenF1Report:
    precision: dict[int, float]
    recall: dict[int, float]
    f1: dict[int, float]
    support: dict[int, int]
    macro_f1: float
    micro_f1: float
    missing_classes: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_class": {
                str(c): {
                    "precision": self.precision[c],
                    "recall": self.recall[c],
                    "f1": self.f1[c],
                    "support": self.support[c],
                }
                for c in (0, 1, 2)
            },
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "missing_classes": self.missing_classes,
        }


def token_f1(encoder: Encoder, sequences) -> TokenF1Report:
    """Macro-averaged F1 of the token head's argmax against gold labels.

    [CLS]/[SEP] positions are excluded from scoring. A class absent from
    both gold and predictions scores F1 = 0 by convention and is listed in
    ``missing_classes``.
    """
    structural = (Vocabulary.cls_id, Vocabulary.sep_id)
    confusion = np.zeros((3, 3))
    with T.no_grad():
        for seq in sequences:
            outs = encoder.encode(seq.tokens)
            preds = np.argmax(encoder.classify_tokens(outs.final).data, axis=1)
            for pos, tok in enumerate(seq.tokens):
                if tok in structural:
                    continue
                confusion[seq.labels[pos], preds[pos]] += 1
    precision, recall, f1, support = {}, {}, {}, {}
    missing = []
    for c in range(3):
        tp = confusion[c, c]
        gold = confusion[c].sum()
        pred = confusion[:, c].sum()
        precision[c] = float(tp / pred) if pred else 0.0
        recall[c] = float(tp / gold) if gold else 0.0
        denom = precision[c] + recall[c]
        f1[c] = 2 * precision[c] * recall[c] / denom if denom else 0.0
        support[c] = int(gold)
        if gold == 0 and pred == 0:
            missing.append(c)
            logger.warning("token class %d absent from gold and predictions; F1 set to 0", c)
    total = confusion.sum()
    micro = float(np.trace(confusion) / total) if total else 0.0
    return TokenF1Report(
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        macro_f1=sum(f1.values()) / 3.0,
        micro_f1=micro,
        missing_classes=missing,
    )


def load_lexicon(path) -> dict[str, list[str]]:
    """Synonym lexicon TSV: word TAB comma-separated synonyms."""
    lex: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise C.CorpusError(f"{path}: line {lineno}: expected 'word<TAB>syn1,syn2,...'")
            syns = [s.strip() for s in parts[1].split(",") if s.strip()]
            if syns:
                lex[parts[0].strip()] = syns
    return lex


def swap_eval(
    encoder: Encoder,
    records,
    vocab: Vocabulary,
    lexicon: dict[str, list[str]],
    category: str,
    rounds: int = 8,
    seed: int = 0,
    stopwords=None,
) -> list[float]:
    """Accuracy after replacing words of one label category with synonyms.

    Each round independently redraws every eligible replacement (uniformly,
    seeded by (seed, round)); eligibility comes from the original record's
    token labels. Returns one accuracy per round.
    """
    if category not in CATEGORIES:
        raise ValueError(f"category must be one of {sorted(CATEGORIES)}")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if not lexicon:
        logger.warning("empty synonym lexicon; swap evaluation is a no-op")
    wanted = CATEGORIES[category]
    records = [r for r in records if r.usable]
    if not records:
        raise ValueError("swap evaluation needs records with explanations")
    accuracies = []
    for rnd in range(rounds):
        rng = np.random.default_rng([seed, rnd])
        correct = 0
        for rec in records:
            e = label_tokens(rec.premise, rec.hypothesis, rec.explanation, stopwords)
            premise = list(rec.premise)
            hypothesis = list(rec.hypothesis)
            la = len(premise)
            for pos, lab in enumerate(e):
                if lab != wanted:
                    continue
                if pos == 0 or pos == la + 1:
                    continue
                if pos <= la:
                    side, idx = premise, pos - 1
                else:
                    side, idx = hypothesis, pos - la - 2
                syns = lexicon.get(side[idx])
                if syns:
                    side[idx] = syns[rng.integers(len(syns))]
            tokens = assemble_pair(premise, hypothesis, vocab)
            if predict(encoder, tokens) == C.LABEL_TO_ID[rec.label]:
                correct += 1
        accuracies.append(correct / len(records))
    return accuracies


def attention_report(encoder: Encoder, sequences, blocks, max_examples: int | None = None) -> dict:
    """Per-token [CLS]-attention values and keyword/bias mass per block.

    Keyword mass sums attention over positions labeled > 0; bias mass is
    the rest (structural positions carry label 0 and count as bias), so the
    two masses add to 1 per block.
    """
    blocks = sorted(blocks)
    examples = []
    mass_acc = {h: 0.0 for h in blocks}
    picked = list(sequences)[:max_examples] if max_examples else list(sequences)
    with T.no_grad():
        for seq in picked:
            outs = encoder.encode(seq.tokens)
            attn = {}
            k_mass = {}
            b_mass = {}
            key_pos = np.asarray(seq.labels) > 0
            for h in blocks:
                values = encoder.cls_attention(outs.block_reps[h - 1]).data
                attn[str(h)] = values.tolist()
                k = float(values[key_pos].sum())
                k_mass[str(h)] = k
                b_mass[str(h)] = float(values[~key_pos].sum())
                mass_acc[h] += k
            examples.append({
                "tokens": seq.words,
                "gold": LABELS[seq.gold],
                "labels": seq.labels,
                "attention": attn,
                "keyword_mass": k_mass,
                "bias_mass": b_mass,
            })
    n = max(len(picked), 1)
    return {
        "blocks": blocks,
        "examples": examples,
        "summary": {
            "mean_keyword_mass": {str(h): mass_acc[h] / n for h in blocks},
            "overall_mean_keyword_mass": sum(mass_acc.values()) / (n * max(len(blocks), 1)),
        },
    }


def sub_inference_report(encoder: Encoder, sequences, block: int) -> dict:
    """Argmax predictions of the keyword-only and bias-only passes at one
    block, next to the main prediction, with a min-priority consistency flag."""
    examples = []
    consistent = 0
    with T.no_grad():
        for seq in sequences:
            y_main = predict(encoder, seq.tokens)
            y_psi = int(np.argmax(encoder.sub_distribution(block, seq.psi_tokens).data))
            y_sigma = int(np.argmax(encoder.sub_distribution(block, seq.sigma_tokens).data))
            ok = min_priority_label(y_psi, y_sigma) == y_main
            consistent += ok
            examples.append({
                "gold": LABELS[seq.gold],
                "y_main": LABELS[y_main],
                "y_psi": LABELS[y_psi],
                "y_sigma": LABELS[y_sigma],
                "consistent": bool(ok),
            })
    return {
        "block": block,
        "examples": examples,
        "consistency_rate": consistent / max(len(examples), 1),
    }


# -- delimited report writers --------------------------------------------------

def write_eval_csv(report: EvalReport, path) -> None:
    """Header: metric,value; then per-class gold/predicted/correct counts."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        w.writerow(["accuracy", repr(report.accuracy)])
        w.writerow(["total", report.total])
        w.writerow(["correct", report.correct])
        for name, row in report.per_class().items():
            w.writerow([f"gold_{name}", row["gold"]])
            w.writerow([f"predicted_{name}", row["predicted"]])
            w.writerow([f"correct_{name}", row["correct"]])


def write_token_f1_csv(report: TokenF1Report, path) -> None:
    """Header: class,precision,recall,f1,support plus macro/micro rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "precision", "recall", "f1", "support"])
        for c in (0, 1, 2):
            w.writerow([c, repr(report.precision[c]), repr(report.recall[c]),
                        repr(report.f1[c]), report.support[c]])
        w.writerow(["macro", "", "", repr(report.macro_f1), ""])
        w.writerow(["micro", "", "", repr(report.micro_f1), ""])


def write_swap_csv(curves: dict[str, list[float]], path) -> None:
    """Header: category,round,accuracy (rounds are 1-based)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["category", "round", "accuracy"])
        for category in sorted(curves):
            for rnd, acc in enumerate(curves[category], start=1):
                w.writerow([category, rnd, repr(acc)])
