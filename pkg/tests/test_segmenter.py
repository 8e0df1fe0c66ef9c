import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tokensurgery.corpus import CorpusRecord
from tokensurgery.errors import SurgeryError
from tokensurgery.segmenter import Segmenter, decode, encode, fragmentation, normalize_whitespace
from tokensurgery.vocab import BOUNDARY, Vocabulary


def ids_to_surfaces(vocab, ids):
    return [vocab.tokens[i] for i in ids]


def test_exact_word_is_one_token():
    v = Vocabulary.from_regular(["▁evler", "▁ev", "ler"])
    assert ids_to_surfaces(v, encode("evler", v).ids) == ["▁evler"]


def test_greedy_two_pieces():
    v = Vocabulary.from_regular(["▁ev", "ler"])
    assert ids_to_surfaces(v, encode("evler", v).ids) == ["▁ev", "ler"]


def test_emoji_byte_fallback_round_trip():
    v = Vocabulary.from_regular(["▁"])
    text = "\U0001F600"
    ids = encode(text, v).ids
    expected = [v.id_of["▁"]] + [v.byte_token_base + b for b in text.encode("utf-8")]
    assert ids == expected
    assert decode(ids, v) == text


def test_marker_itself_falls_back_to_bytes():
    v = Vocabulary.from_regular(["a"])
    ids = encode("a", v).ids
    assert ids == [v.byte_token_base + b for b in BOUNDARY.encode("utf-8")] + [v.id_of["a"]]
    assert decode(ids, v) == "a"


def test_decode_empty():
    v = Vocabulary.from_regular([])
    assert decode([], v) == ""


def test_decode_flags_invalid_utf8():
    v = Vocabulary.from_regular(["▁a"])
    seg = Segmenter(v)
    text, ok = seg.decode_with_status([v.id_of["▁a"], v.byte_token_base + 0xFF])
    assert not ok and text == "a�"
    assert seg.decode_with_status(seg.encode("a a").ids) == ("a a", True)


def test_decode_skips_specials():
    v = Vocabulary.from_regular(["▁a"])
    assert decode([v.bos_id, v.id_of["▁a"], v.eos_id, v.pad_id], v) == "a"


def test_max_len_truncates():
    v = Vocabulary.from_regular(["▁a"])
    assert len(encode("a a a a", v, max_len=2)) == 2
    with pytest.raises(ValueError):
        encode("a", v, max_len=0)


def test_raw_mode_matches_spaces():
    v = Vocabulary.from_regular(["ab", " "])
    seg = Segmenter(v, pretokenize=False)
    assert ids_to_surfaces(v, seg.encode("ab ab").ids) == ["ab", " ", "ab"]
    assert seg.decode(seg.encode("ab  ab").ids) == "ab  ab"


def test_whitespace_collapses():
    v = Vocabulary.from_regular(["▁a", "▁b"])
    assert decode(encode("  a \t\n b  ", v), v) == "a b"


def test_fragmentation_examples():
    v = Vocabulary.from_regular(["▁ab", "▁cd", "▁ev", "ler", "imiz", "den"])
    r = fragmentation([CorpusRecord("ab cd", "tr")], v)
    assert r.tokens_per_word == 1.0 and r.total_tokens == 2 and r.total_words == 2
    r = fragmentation([CorpusRecord("evlerimizden", "tr")], v)
    assert ids_to_surfaces(v, encode("evlerimizden", v).ids) == ["▁ev", "ler", "imiz", "den"]
    assert r.tokens_per_word == 4.0


def test_fragmentation_two_records():
    # "evler ab" -> ▁ev ler ▁ab (3); "evlerimizden" -> 4  => 7 tokens / 3 words
    v = Vocabulary.from_regular(["▁ab", "▁ev", "ler", "imiz", "den"])
    r = fragmentation([CorpusRecord("evler ab", "tr"), CorpusRecord("evlerimizden", "tr")], v)
    assert (r.total_tokens, r.total_words) == (7, 3)
    assert r.tokens_per_word == pytest.approx(7 / 3)


def test_fragmentation_empty_stream():
    v = Vocabulary.from_regular([])
    with pytest.raises(SurgeryError, match="no words"):
        fragmentation([], v)


VOCAB = Vocabulary.from_regular(["▁ev", "ler", "▁evler", "imiz", "den", "▁a", "a", "ab", "▁ç", "ğ", "ış"])


@settings(max_examples=500, deadline=None)
@given(st.text())
def test_round_trip_property(text):
    ids = encode(text, VOCAB, max_len=None).ids
    assert decode(ids, VOCAB) == normalize_whitespace(text)


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet="evlerimzdnabçğış ", max_size=30))
def test_greedy_dominance(text):
    seg = Segmenter(VOCAB)
    for word in text.split():
        s = BOUNDARY + word
        ids = seg.encode(word, None).ids
        pos = k = 0
        while k < len(ids):
            tid = ids[k]
            if VOCAB.is_byte(tid):
                # byte fallback only where no vocabulary surface starts
                assert seg.longest_match(s, pos) is None
                k += len(s[pos].encode("utf-8"))
                pos += 1
                continue
            surface = VOCAB.tokens[tid]
            assert s.startswith(surface, pos)
            assert not [t for t in VOCAB.regular_tokens if s.startswith(t, pos) and len(t) > len(surface)]
            pos += len(surface)
            k += 1
        assert pos == len(s)
