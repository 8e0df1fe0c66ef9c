"""Greedy longest-match segmentation with byte fallback."""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

from .errors import SurgeryError
from .vocab import BOUNDARY, Vocabulary

DEFAULT_MAX_LEN = 8192

_END = None  # trie key holding the token id of a complete surface


@dataclass
class TokenIdSequence:
    ids: List[int]
    source_len_chars: int

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


@dataclass
class FragmentationReport:
    tokens_per_word: float
    total_tokens: int
    total_words: int


def normalize_whitespace(text: str) -> str:
    """The form of ``text`` that survives an encode/decode round trip."""
    return " ".join(text.replace(BOUNDARY, " ").split())


class Segmenter:
    """Encoder/decoder bound to one vocabulary.

    With ``pretokenize=True`` (the default) text is split on whitespace and every
    word gets a leading ``▁`` before matching. With ``pretokenize=False`` the raw
    string is matched as-is, spaces included.
    """

    def __init__(self, vocab: Vocabulary, pretokenize: bool = True):
        if vocab.size == 0:
            raise SurgeryError("segmenter needs a non-empty vocabulary")
        self.vocab = vocab
        self.pretokenize = pretokenize
        self._trie: dict = {}
        for tid in range(vocab.first_regular_id, vocab.size):
            self._insert(vocab.tokens[tid], tid)

    def _insert(self, surface: str, tid: int) -> None:
        node = self._trie
        for ch in surface:
            node = node.setdefault(ch, {})
        node[_END] = tid

    def longest_match(self, s: str, start: int, stop: Optional[int] = None) -> Optional[Tuple[int, int]]:
        """Return ``(token_id, end)`` for the longest vocabulary surface at ``s[start:]``."""
        stop = len(s) if stop is None else stop
        node = self._trie
        best = None
        i = start
        while i < stop:
            node = node.get(s[i])
            if node is None:
                break
            i += 1
            tid = node.get(_END)
            if tid is not None:
                best = (tid, i)
        return best

    def _segment(self, s: str, out: List[int]) -> None:
        vocab = self.vocab
        pos = 0
        n = len(s)
        while pos < n:
            hit = self.longest_match(s, pos)
            if hit is None:
                out.extend(vocab.byte_token_base + b for b in s[pos].encode("utf-8"))
                pos += 1
            else:
                out.append(hit[0])
                pos = hit[1]

    def segment_surface(self, surface: str) -> List[int]:
        """Segment a surface verbatim: no whitespace split, no marker added."""
        out: List[int] = []
        self._segment(surface, out)
        return out

    def encode(self, text: str, max_len: Optional[int] = DEFAULT_MAX_LEN) -> TokenIdSequence:
        if max_len is not None and max_len < 1:
            raise ValueError("max_len must be >= 1")
        out: List[int] = []
        if self.pretokenize:
            for word in text.split():
                self._segment(BOUNDARY + word, out)
                if max_len is not None and len(out) >= max_len:
                    break
        else:
            self._segment(text, out)
        if max_len is not None:
            del out[max_len:]
        return TokenIdSequence(out, len(text))

    def surfaces(self, ids: Iterable[int]) -> List[str]:
        return [self.vocab.tokens[i] for i in ids]

    def decode_with_status(self, ids: Iterable[int]) -> Tuple[str, bool]:
        """Decode ids; the flag is False when byte folding produced invalid UTF-8."""
        vocab = self.vocab
        buf = bytearray()
        for tid in ids:
            if tid < 0 or tid >= vocab.size:
                raise IndexError(f"token id {tid} outside vocabulary of size {vocab.size}")
            if vocab.is_byte(tid):
                buf.append(tid - vocab.byte_token_base)
            elif vocab.is_special(tid):
                continue
            else:
                buf += vocab.tokens[tid].encode("utf-8")
        try:
            text = buf.decode("utf-8")
            valid = True
        except UnicodeDecodeError:
            text = buf.decode("utf-8", errors="replace")
            valid = False
        if self.pretokenize:
            text = " ".join(filter(None, text.replace(BOUNDARY, " ").split(" ")))
        return text, valid

    def decode(self, ids: Iterable[int]) -> str:
        return self.decode_with_status(ids)[0]


_SEGMENTERS: "weakref.WeakKeyDictionary[Vocabulary, Segmenter]" = weakref.WeakKeyDictionary()


def segmenter_for(vocab: Vocabulary) -> Segmenter:
    seg = _SEGMENTERS.get(vocab)
    if seg is None:
        seg = _SEGMENTERS[vocab] = Segmenter(vocab)
    return seg


def encode(text: str, vocab: Vocabulary, max_len: Optional[int] = DEFAULT_MAX_LEN) -> TokenIdSequence:
    return segmenter_for(vocab).encode(text, max_len)


def decode(ids: Iterable[int] | TokenIdSequence, vocab: Vocabulary) -> str:
    return segmenter_for(vocab).decode(ids)


def fragmentation(records: Iterable, vocab: Vocabulary | Segmenter) -> FragmentationReport:
    """Average tokens per whitespace-delimited word over a record stream."""
    seg = vocab if isinstance(vocab, Segmenter) else segmenter_for(vocab)
    total_tokens = 0
    total_words = 0
    for rec in records:
        text = rec.text if hasattr(rec, "text") else rec
        total_words += len(text.split())
        total_tokens += len(seg.encode(text, max_len=None))
    if total_words == 0:
        raise SurgeryError("no words")
    return FragmentationReport(total_tokens / total_words, total_tokens, total_words)
