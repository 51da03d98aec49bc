"""Vocabulary invariants and the sectioned file format."""

import numpy as np
import pytest

from seglang.scenes import default_vocab
from seglang.vocab import SPECIALS, Vocab


def test_specials_occupy_fixed_header():
    v = default_vocab()
    assert tuple(v.tokens[:6]) == SPECIALS
    assert (v.pad, v.eos, v.seg, v.image_id, v.p_open, v.p_close) == (0, 1, 2, 3, 4, 5)


def test_lexicons_are_section_id_lists():
    v = default_vocab()
    for attr_class, words in [("color", v.sections["colors"]),
                              ("location", v.sections["locations"]),
                              ("category", v.sections["categories"])]:
        ids = v.lexicon(attr_class)
        assert [v.tokens[i] for i in ids] == words
        assert len(set(ids)) == len(ids)
    with pytest.raises(ValueError, match="unknown attribute class"):
        v.lexicon("shape")


def test_encode_decode_roundtrip():
    v = default_vocab()
    text = "segment interleaved the red square on the left"
    ids = v.encode(text)
    assert v.decode(ids) == text
    with pytest.raises(ValueError, match="not in vocabulary"):
        v.encode("the magenta square")


def test_save_load_preserves_ids(tmp_path):
    v = default_vocab()
    p = str(tmp_path / "vocab.txt")
    v.save(p)
    w = Vocab.load(p)
    assert w.tokens == v.tokens
    assert w.id_of == v.id_of
    assert w.sections == v.sections


def test_constructor_validation():
    base = default_vocab().sections
    bad = {k: list(vs) for k, vs in base.items()}
    bad["specials"] = list(SPECIALS[:-1])
    with pytest.raises(ValueError, match="specials"):
        Vocab(bad)

    dup = {k: list(vs) for k, vs in base.items()}
    dup["words"] = dup["words"] + [dup["colors"][0]]
    with pytest.raises(ValueError, match="duplicate"):
        Vocab(dup)

    missing = {k: list(vs) for k, vs in base.items() if k != "locations"}
    with pytest.raises(ValueError, match="missing section"):
        Vocab(missing)


def test_load_rejects_headerless_file(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("red\n")
    with pytest.raises(ValueError, match="before any section"):
        Vocab.load(str(p))
