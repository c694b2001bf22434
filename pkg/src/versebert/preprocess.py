"""Verse text normalization: diacritic removal, symbol filtering, hemistich markers.

The pipeline turns a raw verse (one or two hemistichs) into a single clean
line of the form ``"H1 [s] H2"``, or ``"H1 [s] [e]"`` when the second
hemistich is absent. Markers are padded with single spaces so downstream
tokenization sees them as standalone tokens.

All functions here are pure and stateless.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import EmptyHemistich

HEMISTICH_SEP = "[s]"
EMPTY_SECOND = "[e]"

# Tanween/short vowels/shadda/sukun (U+064B..U+0652), dagger alif (U+0670),
# plus the decorative tatweel elongation (U+0640).
_DIACRITIC_RE = re.compile("[ً-ْٰـ]")

# Whitelisted letters: the Arabic block's hamza..yeh range plus alef wasla.
_ARABIC_LO = 0x0621
_ARABIC_HI = 0x064A
_ALEF_WASLA = 0x0671

_MARKER_RE = re.compile(r"\[s\]|\[e\]")
_SPACE_RUN_RE = re.compile(r" +")


def _is_arabic_letter(ch: str) -> bool:
    code = ord(ch)
    return _ARABIC_LO <= code <= _ARABIC_HI or code == _ALEF_WASLA


def strip_diacritics(text: str) -> str:
    """Remove Arabic diacritic marks and tatweel; all other characters pass through."""
    return _DIACRITIC_RE.sub("", text)


def _keep_arabic(segment: str) -> str:
    return "".join(ch if _is_arabic_letter(ch) or ch == " " else " " for ch in segment)


def strip_symbols(text: str, keep_markers: bool = True) -> str:
    """Whitelist filter: keep Arabic letters, spaces, and (optionally) marker tokens.

    Every other code point (digits, Latin letters, punctuation, ...) becomes a
    space; space runs collapse to one; the result is trimmed. With
    ``keep_markers`` the literal substrings ``[s]``/``[e]`` survive, padded by
    single spaces.
    """
    parts = []
    pos = 0
    if keep_markers:
        for m in _MARKER_RE.finditer(text):
            parts.append(_keep_arabic(text[pos : m.start()]))
            parts.append(" " + m.group() + " ")
            pos = m.end()
    parts.append(_keep_arabic(text[pos:]))
    return _SPACE_RUN_RE.sub(" ", "".join(parts)).strip()


def mark_hemistichs(h1: str, h2: str | None = None) -> str:
    """Join cleaned hemistichs with the separator; absent second half becomes ``[e]``."""
    if not h1:
        raise EmptyHemistich("first hemistich is empty after normalization")
    if h2:
        return f"{h1} {HEMISTICH_SEP} {h2}"
    return f"{h1} {HEMISTICH_SEP} {EMPTY_SECOND}"


@dataclass(frozen=True)
class PreprocessedVerse:
    verse_id: int
    line: str


def clean_hemistich(text: str) -> str:
    """Diacritic strip then symbol strip for one hemistich.

    Marker substrings are not preserved here: a hemistich legitimately never
    contains them, so stray ``[s]``/``[e]`` noise dissolves instead of
    corrupting the one-separator structure of the final line.
    """
    return strip_symbols(strip_diacritics(text), keep_markers=False)


def preprocess_verse(record) -> PreprocessedVerse:
    """Apply the full normalization pipeline to one corpus record.

    A second hemistich that strips to empty is treated as absent.
    Raises ``EmptyHemistich`` when the first hemistich strips to empty.
    """
    h1 = clean_hemistich(record.hemistich1)
    h2 = clean_hemistich(record.hemistich2) if record.hemistich2 else ""
    return PreprocessedVerse(record.verse_id, mark_hemistichs(h1, h2 or None))


def preprocess_corpus(store) -> list[PreprocessedVerse]:
    return [preprocess_verse(r) for r in store.records]


def write_lines(verses: list[PreprocessedVerse], path) -> None:
    """Write ``verse_id<TAB>line`` rows, UTF-8."""
    with open(path, "w", encoding="utf-8") as fh:
        for v in verses:
            fh.write(f"{v.verse_id}\t{v.line}\n")


def read_lines(path) -> list[str]:
    """Read verse lines from a file of either raw lines or ``verse_id<TAB>line`` rows."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            raw = raw.rstrip("\n")
            if not raw:
                continue
            out.append(raw.split("\t", 1)[1] if "\t" in raw else raw)
    return out
