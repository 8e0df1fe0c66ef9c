"""Vocabulary container and its on-disk text format.

Layout is fixed: four special tokens at ids 0..3, then the 256 byte-fallback
tokens, then regular surfaces. Regular surfaces use ``▁`` as the word-start
marker.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

from .errors import FormatError, ValidationError

BOUNDARY = "▁"

PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3
SPECIAL_SURFACES = ("<pad>", "<unk>", "<s>", "</s>")
BYTE_BASE = len(SPECIAL_SURFACES)
NUM_BYTES = 256
RESERVED = BYTE_BASE + NUM_BYTES

_ESCAPES = {"\\": "\\\\", "\n": "\\n", "\t": "\\t", "\r": "\\r"}
_UNESCAPES = {"\\": "\\", "n": "\n", "t": "\t", "r": "\r"}


def byte_surface(b: int) -> str:
    return f"<0x{b:02X}>"


def escape_surface(s: str) -> str:
    return "".join(_ESCAPES.get(ch, ch) for ch in s)


def unescape_surface(s: str) -> str:
    if "\\" not in s:
        return s
    out = []
    i = 0
    while i < len(s):
        ch = s[i]
        if ch == "\\":
            if i + 1 >= len(s) or s[i + 1] not in _UNESCAPES:
                raise FormatError(f"bad escape in vocabulary line: {s!r}")
            out.append(_UNESCAPES[s[i + 1]])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def surface_length(surface: str) -> int:
    """Character length of a surface, not counting a leading word-start marker."""
    if surface.startswith(BOUNDARY):
        return len(surface) - 1
    return len(surface)


@dataclass(eq=False)
class Vocabulary:
    """Ordered, dense token table.

    Instances are treated as immutable once built; hashing is by identity so a
    vocabulary can key caches of derived structures such as match tries.
    """

    tokens: List[str]
    pad_id: int = PAD_ID
    unk_id: int = UNK_ID
    bos_id: int = BOS_ID
    eos_id: int = EOS_ID
    byte_token_base: int = BYTE_BASE
    id_of: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.id_of = {}
        for i, tok in enumerate(self.tokens):
            if tok in self.id_of:
                raise ValidationError(f"duplicate surface {tok!r} at ids {self.id_of[tok]} and {i}")
            self.id_of[tok] = i
        if len(self.tokens) < RESERVED:
            raise ValidationError(
                f"vocabulary of size {len(self.tokens)} cannot hold {RESERVED} reserved tokens"
            )
        for sid, surf in zip(self.special_ids, SPECIAL_SURFACES):
            if self.tokens[sid] != surf:
                raise ValidationError(f"special token {surf!r} missing at id {sid}")
        for b in range(NUM_BYTES):
            if self.tokens[self.byte_token_base + b] != byte_surface(b):
                raise ValidationError(f"byte token {b} missing at id {self.byte_token_base + b}")

    @classmethod
    def from_regular(cls, regular: Iterable[str]) -> "Vocabulary":
        """Build a vocabulary from regular surfaces, prepending specials and bytes."""
        return cls(reserved_surfaces() + list(regular))

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, surface: str) -> bool:
        return surface in self.id_of

    @property
    def special_ids(self) -> tuple:
        return (self.pad_id, self.unk_id, self.bos_id, self.eos_id)

    @property
    def first_regular_id(self) -> int:
        return max(max(self.special_ids) + 1, self.byte_token_base + NUM_BYTES)

    @property
    def regular_tokens(self) -> List[str]:
        return self.tokens[self.first_regular_id:]

    def is_byte(self, token_id: int) -> bool:
        return self.byte_token_base <= token_id < self.byte_token_base + NUM_BYTES

    def is_special(self, token_id: int) -> bool:
        return token_id in self.special_ids

    def byte_id(self, b: int) -> int:
        return self.byte_token_base + b

    # -- file format ------------------------------------------------------

    def dumps(self) -> str:
        lines = [
            f"#size {self.size}",
            f"#specials pad={self.pad_id} unk={self.unk_id} bos={self.bos_id} eos={self.eos_id}",
            f"#bytes base={self.byte_token_base}",
        ]
        lines.extend(escape_surface(t) for t in self.tokens)
        return "\n".join(lines) + "\n"

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if len(lines) < 3:
            raise FormatError("vocabulary file is missing its header")
        size = _parse_header(lines[0], "#size")
        specials = _parse_kv(lines[1], "#specials")
        byte_base = _parse_kv(lines[2], "#bytes")["base"]
        tokens = [unescape_surface(s) for s in lines[3:]]
        if len(tokens) != size:
            raise FormatError(f"header says {size} tokens, file holds {len(tokens)}")
        return cls(
            tokens,
            pad_id=specials["pad"],
            unk_id=specials["unk"],
            bos_id=specials["bos"],
            eos_id=specials["eos"],
            byte_token_base=byte_base,
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Vocabulary":
        with open(path, "r", encoding="utf-8", newline="") as f:
            return cls.loads(f.read())


def reserved_surfaces() -> List[str]:
    return list(SPECIAL_SURFACES) + [byte_surface(b) for b in range(NUM_BYTES)]


def _parse_header(line: str, tag: str) -> int:
    parts = line.split()
    if len(parts) != 2 or parts[0] != tag:
        raise FormatError(f"expected {tag!r} header, got {line!r}")
    try:
        return int(parts[1])
    except ValueError as exc:
        raise FormatError(f"bad integer in {line!r}") from exc


def _parse_kv(line: str, tag: str) -> Dict[str, int]:
    parts = line.split()
    if not parts or parts[0] != tag:
        raise FormatError(f"expected {tag!r} header, got {line!r}")
    out = {}
    for item in parts[1:]:
        key, sep, value = item.partition("=")
        if not sep:
            raise FormatError(f"malformed header field {item!r}")
        try:
            out[key] = int(value)
        except ValueError as exc:
            raise FormatError(f"bad integer in header field {item!r}") from exc
    return out


def dedupe(tokens: Sequence[str], exclude: Optional[set] = None) -> List[str]:
    seen = set(exclude or ())
    out = []
    for t in tokens:
        if t and t not in seen:
            seen.add(t)
            out.append(t)
    return out
