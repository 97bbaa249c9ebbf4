"""Channel-adaptive semantic encoder.

The channel condition is rendered as a short sentence, tokenized against a
closed vocabulary, embedded, compressed to L_t positions, appended to the
fused features and run through a small bidirectional transformer.  The
final hidden state is max-pooled in feature pairs and squashed by tanh.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .layers import LayerNorm, Module, TransformerBlock, param
from .tensor import ShapeError, Tensor

MODULATIONS = ("BPSK", "QPSK", "8PSK", "16QAM")
SNR_MIN, SNR_MAX = -10, 40
EOS = "<eos>"
TEMPLATE = "the SNR is {snr} dB and the signal modulation is {mod}"

VOCAB: tuple[str, ...] = (
    EOS, "the", "snr", "is", "db", "and", "signal", "modulation",
    *(m.lower() for m in MODULATIONS),
    *(str(i) for i in range(SNR_MIN, SNR_MAX + 1)),
)
WORD_ID = {w: i for i, w in enumerate(VOCAB)}
EOS_ID = WORD_ID[EOS]


class VocabularyError(ValueError):
    pass


@dataclass(frozen=True)
class ConditionText:
    snr_db: float
    modulation: str

    @property
    def rendered(self) -> str:
        return TEMPLATE.format(snr=int(math.floor(self.snr_db + 0.5)), mod=self.modulation)


@dataclass
class TokenBatch:
    ids: np.ndarray  # (B, L_w) word ids, padding holds EOS_ID
    mask: np.ndarray  # (B, L_w) 1 on real words

    def __len__(self) -> int:
        return self.ids.shape[0]


def write_vocab(path: str | Path) -> None:
    Path(path).write_text("\n".join(VOCAB) + "\n")


def read_vocab(path: str | Path) -> tuple[str, ...]:
    return tuple(line for line in Path(path).read_text().splitlines())


def _word_id(word: str) -> int:
    try:
        n = int(word)
    except ValueError:
        if word not in WORD_ID or word == EOS:
            raise VocabularyError(f"word {word!r} is not in the condition vocabulary") from None
        return WORD_ID[word]
    return WORD_ID[str(min(max(n, SNR_MIN), SNR_MAX))]


def tokenize(texts: str | list[str], max_words: int = 12) -> TokenBatch:
    """Whitespace tokenizer over the closed vocabulary, padded with EOS."""
    if isinstance(texts, str):
        texts = [texts]
    ids = np.full((len(texts), max_words), EOS_ID, dtype=np.int64)
    mask = np.zeros((len(texts), max_words), dtype=np.int64)
    for b, text in enumerate(texts):
        words = [_word_id(w) for w in text.lower().split()][:max_words]
        ids[b, : len(words)] = words
        mask[b, : len(words)] = 1
    return TokenBatch(ids, mask)


@dataclass(frozen=True)
class LseConfig:
    d: int = 32
    L_s: int = 12
    L_w: int = 12
    L_t: int = 4
    blocks: int = 2
    heads: int = 2
    ff_mult: int = 2

    def __post_init__(self):
        if self.d % 2:
            raise ValueError(f"feature dim d must be even, got {self.d}")
        if self.d % self.heads:
            raise ValueError(f"d={self.d} not divisible by {self.heads} heads")

    @property
    def L_fusion(self) -> int:
        return self.L_s + self.L_t


class Lse(Module):
    def __init__(self, cfg: LseConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.table = param(rng, (len(VOCAB), cfg.d), 1.0)
        self.word_pos = param(rng, (cfg.L_w, cfg.d), 0.1)
        # learned token-axis compression L_w -> L_t
        self.compress = param(rng, (cfg.L_w, cfg.L_t), 1.0 / math.sqrt(cfg.L_w))
        self.pos = param(rng, (cfg.L_fusion, cfg.d), 0.02)
        self.blocks = [
            TransformerBlock(cfg.d, cfg.heads, cfg.ff_mult, rng) for _ in range(cfg.blocks)
        ]
        self.norm = LayerNorm(cfg.d)

    def embed_words(self, tokens: TokenBatch) -> Tensor:
        """Row lookup plus word position; masked slots read the EOS row."""
        ids = np.where(tokens.mask.astype(bool), tokens.ids, EOS_ID)
        if ids.min() < 0 or ids.max() >= len(VOCAB):
            raise ShapeError(f"token id outside [0, {len(VOCAB)})")
        return T.add(T.embedding(ids, self.table), self.word_pos)

    def embed_text(self, tokens: TokenBatch) -> tuple[Tensor, np.ndarray]:
        """(B, L_t, d) compressed text embedding and its (B, L_t) mask."""
        words = self.embed_words(tokens)  # (B, L_w, d)
        mixed = T.matmul(T.transpose(words, (0, 2, 1)), self.compress)  # (B, d, L_t)
        emb = T.transpose(mixed, (0, 2, 1))
        # every compressed slot mixes all words, so it is live iff any word is
        live = tokens.mask.any(axis=1).astype(np.int64)
        return emb, np.repeat(live[:, None], self.cfg.L_t, axis=1)

    def encode(self, F_input: Tensor, F_mask: np.ndarray) -> Tensor:
        B, L, d = F_input.shape
        if (L, d) != (self.cfg.L_fusion, self.cfg.d):
            raise ShapeError(f"encode expects (B, {self.cfg.L_fusion}, {self.cfg.d}), got {F_input.shape}")
        x = T.add(F_input, self.pos)
        for blk in self.blocks:
            x = blk(x, F_mask)
        x = self.norm(x)
        return T.tanh(T.max_pool(x, 2, axis=-1))

    def __call__(self, s_mul: Tensor, tokens: TokenBatch) -> Tensor:
        emb, mask = self.embed_text(tokens)
        F_input, F_mask = fuse_condition(s_mul, emb, mask)
        return self.encode(F_input, F_mask)


def fuse_condition(s_mul: Tensor, emb: Tensor, mask_text: np.ndarray):
    """Features first, text second; feature positions are always attended."""
    if s_mul.shape[0] != emb.shape[0] or s_mul.shape[2] != emb.shape[2]:
        raise ShapeError(f"cannot fuse {s_mul.shape} with {emb.shape}")
    B, L_s, _ = s_mul.shape
    F_mask = np.concatenate([np.ones((B, L_s), dtype=np.int64), np.asarray(mask_text, np.int64)], axis=1)
    return T.concat([s_mul, emb], axis=1), F_mask
