"""Text side of the model: vocabulary, token encoder and caption encoder."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BatchError, DatasetError, FormatError, InputError
from .tensor import Tensor, affine, embed_lookup, l2_normalize, mul, sigmoid, sub, tanh

VERB, NOUN, OTHER = "VERB", "NOUN", "OTHER"
POS_TAGS = (VERB, NOUN, OTHER)
SPACE_OF_POS = {VERB: "motion", NOUN: "visual"}


def uniform_init(rng, shape, fan_in, name):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


@dataclass
class TextEmbedding:
    space: str
    vector: Tensor
    polarity: str = "positive"


class Vocabulary:
    """Token strings with dense ids and a part-of-speech tag per token."""

    def __init__(self, entries: Sequence[tuple[str, str]]):
        self.tokens: list[str] = []
        self.pos: list[str] = []
        self.index: dict[str, int] = {}
        for text, tag in entries:
            if tag not in POS_TAGS:
                raise InputError(f"unknown POS tag {tag!r} for token {text!r}")
            if text in self.index:
                raise InputError(f"duplicate token {text!r}")
            self.index[text] = len(self.tokens)
            self.tokens.append(text)
            self.pos.append(tag)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, text):
        return text in self.index

    def id(self, text: str) -> int:
        try:
            return self.index[text]
        except KeyError:
            raise InputError(f"token {text!r} is not in the vocabulary") from None

    def ids_with_pos(self, tag: str) -> np.ndarray:
        return np.array([i for i, p in enumerate(self.pos) if p == tag], dtype=np.int64)

    def write(self, path):
        lines = [f"{t}\t{i}\t{p}\n" for i, (t, p) in enumerate(zip(self.tokens, self.pos))]
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def read(cls, path) -> "Vocabulary":
        entries = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected token<TAB>id<TAB>pos")
            text, ident, tag = parts
            if not ident.isdigit() or int(ident) != len(entries):
                raise FormatError(f"{path}:{lineno}: ids must be dense from 0, got {ident!r}")
            if tag not in POS_TAGS:
                raise FormatError(f"{path}:{lineno}: unknown POS tag {tag!r}")
            entries.append((text, tag))
        return cls(entries)


class TokenEncoder:
    """Gated projection of single verb or noun embeddings.

    ``c = normalize(sigmoid(t W_a + b_a) * tanh(t W_b + b_b))``; verbs use
    (W1, b1, W2, b2) into the motion space, nouns (W3, b3, W4, b4) into the
    visual space. No recurrence or hidden state.
    """

    def __init__(self, E: int, C: int, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.E, self.C = E, C
        for k in range(1, 5):
            setattr(self, f"W{k}", uniform_init(rng, (E, C), E, f"token.W{k}"))
            setattr(self, f"b{k}", uniform_init(rng, (C,), E, f"token.b{k}"))

    def parameters(self) -> dict[str, Tensor]:
        names = [f"W{k}" for k in range(1, 5)] + [f"b{k}" for k in range(1, 5)]
        return {f"token.{n}": getattr(self, n) for n in names}

    def branch(self, pos: str):
        if pos == VERB:
            return self.W1, self.b1, self.W2, self.b2
        if pos == NOUN:
            return self.W3, self.b3, self.W4, self.b4
        raise InputError(f"token encoder accepts VERB or NOUN tokens, got {pos!r}")

    def raw(self, table: Tensor, ids, pos: str) -> Tensor:
        Wa, ba, Wb, bb = self.branch(pos)
        t = embed_lookup(table, ids)
        return mul(sigmoid(affine(t, Wa, ba)), tanh(affine(t, Wb, bb)))

    def encode(self, table: Tensor, ids, pos: str) -> Tensor:
        """Unit-norm embeddings ``[K, C]`` for token ids ``[K]`` (or ``[C]`` for a scalar id)."""
        return l2_normalize(self.raw(table, ids, pos), axis=-1)


def encode_token(token_id: int, pos: str, params: TokenEncoder, matrix: Tensor) -> TextEmbedding:
    vec = params.encode(matrix, int(token_id), pos)
    return TextEmbedding(SPACE_OF_POS[pos], vec)


class CaptionEncoder:
    """Gated recurrent unit over whole captions, started from a zero state.

    z = sig(x Wz + h Uz + bz), r = sig(x Wr + h Ur + br),
    n = tanh(x Wn + (r*h) Un + bn), h' = (1 - z) * n + z * h.
    """

    GATES = ("z", "r", "n")

    def __init__(self, E: int, C: int, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.E, self.C = E, C
        for g in self.GATES:
            setattr(self, f"W_{g}", uniform_init(rng, (E, C), E, f"caption.W_{g}"))
            setattr(self, f"U_{g}", uniform_init(rng, (C, C), C, f"caption.U_{g}"))
            setattr(self, f"b_{g}", uniform_init(rng, (C,), C, f"caption.b_{g}"))

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for g in self.GATES:
            for kind in ("W", "U", "b"):
                out[f"caption.{kind}_{g}"] = getattr(self, f"{kind}_{g}")
        return out

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        z = sigmoid(affine(x, self.W_z, self.b_z) + h @ self.U_z)
        r = sigmoid(affine(x, self.W_r, self.b_r) + h @ self.U_r)
        n = tanh(affine(x, self.W_n, self.b_n) + mul(r, h) @ self.U_n)
        return mul(sub(1.0, z), n) + mul(z, h)

    def hidden(self, table: Tensor, ids: np.ndarray, lengths: np.ndarray) -> Tensor:
        """Final hidden states ``[B, C]`` for padded ``ids[B, L]`` and explicit ``lengths[B]``."""
        ids = np.asarray(ids, dtype=np.int64)
        lengths = np.asarray(lengths, dtype=np.int64)
        if ids.ndim != 2 or lengths.shape != (ids.shape[0],):
            raise InputError("caption ids must be [B, L] with lengths [B]")
        if (lengths < 1).any() or (lengths > ids.shape[1]).any():
            raise InputError("caption lengths must lie in [1, L]")
        h = Tensor(np.zeros((ids.shape[0], self.C)))
        for t in range(int(lengths.max())):
            x = embed_lookup(table, ids[:, t])
            h_new = self.step(x, h)
            active = lengths > t
            if active.all():
                h = h_new
            else:
                m = active[:, None].astype(float)
                h = mul(h_new, m) + mul(h, 1.0 - m)
        return h

    def encode(self, table: Tensor, sequences: Sequence[Sequence[int]]) -> Tensor:
        """Unit-norm joint-space embeddings ``[B, C]`` for a list of token-id sequences."""
        if not len(sequences) or any(len(s) == 0 for s in sequences):
            raise InputError("caption encoder needs nonempty token sequences")
        lengths = np.array([len(s) for s in sequences])
        ids = np.zeros((len(sequences), lengths.max()), dtype=np.int64)
        for i, seq in enumerate(sequences):
            ids[i, : len(seq)] = seq
        return l2_normalize(self.hidden(table, ids, lengths), axis=-1)


def encode_caption(token_ids: Sequence[int], params: CaptionEncoder, matrix: Tensor) -> TextEmbedding:
    if len(token_ids) == 0:
        raise InputError("cannot encode an empty caption")
    vec = params.encode(matrix, [list(token_ids)])
    return TextEmbedding("joint", vec.reshape(params.C))


# ---------------------------------------------------------------- negatives


def sample_negative_token(pos: str, video_id, dataset, rng) -> int:
    """Uniform draw of a ``pos`` token never used in any caption of ``video_id``."""
    if pos not in SPACE_OF_POS:
        raise InputError(f"negative tokens exist for VERB or NOUN only, got {pos!r}")
    used = dataset.video_tokens(video_id, pos)
    pool = np.setdiff1d(dataset.vocab.ids_with_pos(pos), np.fromiter(used, dtype=np.int64))
    if pool.size == 0:
        raise DatasetError(f"video {video_id!r} uses every {pos} in the vocabulary; no negative exists")
    return int(pool[rng.integers(pool.size)])


def sample_negative_caption(video_id, batch_items: Sequence[tuple]) -> list[tuple]:
    """All ``(video_id, caption)`` items of the batch that belong to another video."""
    videos = {item[0] for item in batch_items}
    if len(videos) < 2:
        raise BatchError("in-batch negatives need at least two distinct videos")
    return [item for item in batch_items if item[0] != video_id]
