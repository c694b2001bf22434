"""WordPiece vocabulary training plus fixed-length encoding and decoding.

Training follows the standard likelihood-score merge rule: seed the vocabulary
with every observed character (word-initial and ``##``-continuation form),
then repeatedly merge the adjacent unit pair maximizing
``count(pair) / (count(first) * count(second))`` until the size budget is
exhausted or no pair reaches ``min_frequency``. Scores are compared as exact
fractions and ties break on the lexicographically smallest merged token, so
training is fully deterministic.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import EmptyCorpus, IdOutOfRange

RESERVED = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[s]", "[e]")
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID, S_ID, E_ID = range(7)
CONTINUATION = "##"
MAX_WORD_CHARS = 100  # longer words fall back to [UNK]


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    target_size: int
    token_index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[:7]) != RESERVED:
            raise ValueError(f"ids 0-6 must be the reserved tokens {RESERVED}")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate token in vocabulary")
        object.__setattr__(self, "token_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int | None:
        return self.token_index.get(token)

    def digest(self) -> str:
        """Content hash of the canonical one-token-per-line serialization."""
        payload = ("\n".join(self.tokens) + "\n").encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path, target_size: int | None = None) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            tokens = tuple(line.rstrip("\n") for line in fh if line != "\n")
        return cls(tokens, target_size if target_size is not None else len(tokens))


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    attention_mask: tuple[int, ...]
    max_len: int

    @property
    def length(self) -> int:
        """Number of real (unpadded) positions."""
        return sum(self.attention_mask)


def _word_counts(lines: list[str]) -> Counter:
    counts: Counter = Counter()
    for line in lines:
        for word in line.split():
            if word in RESERVED:
                continue
            counts[word] += 1
    return counts


def train_wordpiece(lines: list[str], target_size: int, min_frequency: int = 2) -> Vocab:
    """Train a WordPiece vocabulary on whitespace-tokenized lines.

    Reserved tokens occupy ids 0-6 and marker words are never trainable. The
    seed alphabet (both unit forms) is always retained, even if that alone
    exceeds ``target_size``.
    """
    word_freq = _word_counts(lines)
    if not word_freq:
        raise EmptyCorpus("no trainable words in corpus")

    alphabet = sorted({ch for word in word_freq for ch in word})
    tokens = list(RESERVED) + alphabet + [CONTINUATION + ch for ch in alphabet]
    segments = {w: [w[0]] + [CONTINUATION + ch for ch in w[1:]] for w in word_freq}

    while len(tokens) < target_size:
        unit_counts: Counter = Counter()
        pair_counts: Counter = Counter()
        for word, freq in word_freq.items():
            units = segments[word]
            for u in units:
                unit_counts[u] += freq
            for a, b in zip(units, units[1:]):
                pair_counts[(a, b)] += freq

        best_pair = None
        best_score = None
        best_merged = None
        for (a, b), count in pair_counts.items():
            if count < min_frequency:
                continue
            merged = a + b[len(CONTINUATION):]
            score = Fraction(count, unit_counts[a] * unit_counts[b])
            if (
                best_score is None
                or score > best_score
                or (score == best_score and merged < best_merged)
            ):
                best_pair, best_score, best_merged = (a, b), score, merged
        if best_pair is None:
            break

        tokens.append(best_merged)
        a, b = best_pair
        for word, units in segments.items():
            i = 0
            while i < len(units) - 1:
                if units[i] == a and units[i + 1] == b:
                    units[i : i + 2] = [best_merged]
                else:
                    i += 1
    return Vocab(tuple(tokens), target_size)


def wordpiece_word(word: str, vocab: Vocab) -> list[int]:
    """Greedy longest-match-first segmentation of one word into piece ids."""
    if len(word) > MAX_WORD_CHARS:
        return [UNK_ID]
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        piece_id = None
        while start < end:
            piece = word[start:end]
            if start > 0:
                piece = CONTINUATION + piece
            piece_id = vocab.id(piece)
            if piece_id is not None:
                break
            end -= 1
        if piece_id is None:
            return [UNK_ID]
        pieces.append(piece_id)
        start = end
    return pieces


def encode(line: str, vocab: Vocab, max_len: int) -> TokenSequence:
    """Encode a preprocessed line as [CLS] pieces [SEP] with padding to max_len."""
    piece_ids: list[int] = []
    for word in line.split():
        if word in RESERVED:
            piece_ids.append(vocab.token_index[word])
        else:
            piece_ids.extend(wordpiece_word(word, vocab))
    piece_ids = piece_ids[: max_len - 2]
    ids = [CLS_ID] + piece_ids + [SEP_ID]
    n_real = len(ids)
    ids.extend([PAD_ID] * (max_len - n_real))
    mask = [1] * n_real + [0] * (max_len - n_real)
    return TokenSequence(tuple(ids), tuple(mask), max_len)


def decode(ids, vocab: Vocab) -> str:
    """Reassemble text from piece ids, fusing ``##`` continuations.

    [CLS]/[SEP]/[PAD] are dropped; other reserved tokens render literally.
    """
    words: list[str] = []
    for i in ids:
        i = int(i)
        if not 0 <= i < len(vocab):
            raise IdOutOfRange(f"id {i} out of range for vocab of {len(vocab)}")
        if i in (CLS_ID, SEP_ID, PAD_ID):
            continue
        token = vocab.tokens[i]
        if token.startswith(CONTINUATION) and words:
            words[-1] += token[len(CONTINUATION):]
        else:
            words.append(token)
    return " ".join(words)
