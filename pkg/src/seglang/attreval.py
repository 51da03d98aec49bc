"""Attribute probing: paired yes/no questions and seg-logit ranking.

Each object record carries several descriptions plus its true attributes.
For every attribute class absent from at least one description we emit one
probe: a positive question asking about the true value and a negative
question about a sampled wrong value, asked against a referring description
that does not mention the probed class. VQA credit requires both answers
correct; Acc_k asks whether the true attribute token ranks in the top k of
the seg-token logits restricted to that class's lexicon.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .lm import SegState, top_k_attribute
from .vocab import Vocab

ATTR_CLASSES = ("category", "color", "location")


@dataclass
class AttrRecord:
    object_id: str
    image: str
    mask: str
    descriptions: list[str]
    attributes: dict[str, str]   # class -> value word

    def to_dict(self) -> dict:
        return {"object_id": self.object_id, "image": self.image,
                "mask": self.mask, "descriptions": self.descriptions,
                "attributes": self.attributes}

    @classmethod
    def from_dict(cls, d: dict) -> "AttrRecord":
        return cls(d["object_id"], d["image"], d["mask"],
                   list(d["descriptions"]), dict(d["attributes"]))


@dataclass
class AttrProbe:
    object_id: str
    image: str
    mask: str
    referring: str               # description omitting the probed attribute
    attr_class: str
    true_value: str
    false_value: str
    question_pos: str
    question_neg: str

    def to_dict(self) -> dict:
        return self.__dict__.copy()

    @classmethod
    def from_dict(cls, d: dict) -> "AttrProbe":
        return cls(**{k: d[k] for k in ("object_id", "image", "mask",
                                        "referring", "attr_class", "true_value",
                                        "false_value", "question_pos",
                                        "question_neg")})


def make_question(referring: str, attr_class: str, value: str) -> str:
    """Phrase a yes/no question about one attribute of the referred object."""
    if attr_class == "color":
        return f"is {referring} {value} ?"
    if attr_class == "location":
        return f"is {referring} at {value} ?"
    if attr_class == "category":
        return f"is {referring} a {value} ?"
    raise ValueError(f"unknown attribute class {attr_class!r}")


def build_probes(records: list[AttrRecord], vocab: Vocab,
                 seed: int) -> list[AttrProbe]:
    """One probe per (record, attribute class omitted from some description).

    The referring description is the first one whose word set lacks the true
    attribute word; the negative value is a seeded uniform draw from the
    rest of the lexicon. A lexicon of size one cannot yield a negative, so
    that class is skipped with a warning.
    """
    rng = np.random.default_rng(seed)
    probes: list[AttrProbe] = []
    for rec in records:
        for attr_class in ATTR_CLASSES:
            true_value = rec.attributes.get(attr_class)
            if true_value is None:
                continue
            lexicon_words = [vocab.tokens[i] for i in vocab.lexicon(attr_class)]
            if true_value not in lexicon_words:
                raise ValueError(
                    f"{rec.object_id}: value {true_value!r} outside the "
                    f"{attr_class} lexicon")
            referring = next(
                (d for d in rec.descriptions if true_value not in d.split()),
                None)
            if referring is None:
                continue
            candidates = [w for w in lexicon_words if w != true_value]
            if not candidates:
                warnings.warn(
                    f"{attr_class} lexicon has a single value; skipping probe "
                    f"for {rec.object_id}")
                continue
            false_value = candidates[int(rng.integers(len(candidates)))]
            probes.append(AttrProbe(
                object_id=rec.object_id, image=rec.image, mask=rec.mask,
                referring=referring, attr_class=attr_class,
                true_value=true_value, false_value=false_value,
                question_pos=make_question(referring, attr_class, true_value),
                question_neg=make_question(referring, attr_class, false_value)))
    return probes


def score_vqa(probes: list[AttrProbe],
              answers: dict[str, tuple[str, str]]) -> float:
    """Both-correct accuracy: credit iff (yes to positive, no to negative).

    `answers` keys are probe keys (see probe_key); values are the model's
    answers to (positive, negative) questions.
    """
    if not probes:
        raise ValueError("score_vqa: no probes")
    credit = 0
    for p in probes:
        key = probe_key(p)
        if key not in answers:
            raise ValueError(f"missing answer for probe {key}")
        ans_pos, ans_neg = answers[key]
        if ans_pos == "yes" and ans_neg == "no":
            credit += 1
    return credit / len(probes)


def score_logits(probes: list[AttrProbe],
                 seg_states: dict[str, SegState],
                 vocab: Vocab) -> tuple[float, float]:
    """(Acc1, Acc3) of the true attribute token in lexicon-restricted logits."""
    if not probes:
        raise ValueError("score_logits: no probes")
    hit1 = 0
    hit3 = 0
    for p in probes:
        key = probe_key(p)
        if key not in seg_states:
            raise ValueError(f"missing seg state for probe {key}")
        if p.true_value not in vocab.id_of:
            raise ValueError(f"attribute {p.true_value!r} not in vocabulary")
        true_id = vocab.id_of[p.true_value]
        subset = vocab.lexicon(p.attr_class)
        k3 = min(3, len(subset))
        top3 = top_k_attribute(seg_states[key], subset, k3)
        if top3[0] == true_id:
            hit1 += 1
        if true_id in top3:
            hit3 += 1
    return hit1 / len(probes), hit3 / len(probes)


def probe_key(p: AttrProbe) -> str:
    return f"{p.object_id}|{p.attr_class}"


def save_probes(probes: list[AttrProbe], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump([p.to_dict() for p in probes], f, indent=2)
        f.write("\n")


def load_probes(path: str) -> list[AttrProbe]:
    with open(path, encoding="utf-8") as f:
        return [AttrProbe.from_dict(d) for d in json.load(f)]
