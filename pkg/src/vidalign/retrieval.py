"""Cross-modal ranking, reranking, recall/median-rank metrics and highlight export."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data.container import write_tensor
from .encoders import NOUN, SPACE_OF_POS, VERB
from .errors import ConfigError, InputError
from .objectives import relevance_map
from .encoders import TextEmbedding
from .tensor import EPS, no_grad
from .video import FeatureVolume, pool

log = logging.getLogger(__name__)

DIRECTIONS = ("caption_to_video", "video_to_caption")


def cosine_matrix(A, B, eps=EPS) -> np.ndarray:
    """All-pairs cosine similarity ``[len(A), len(B)]``."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise InputError(f"embedding dimension mismatch: {A.shape} vs {B.shape}")
    An = A / np.maximum(np.linalg.norm(A, axis=1, keepdims=True), eps)
    Bn = B / np.maximum(np.linalg.norm(B, axis=1, keepdims=True), eps)
    return An @ Bn.T


def order_by_score(scores: np.ndarray) -> np.ndarray:
    """Candidate ids per row by descending score, ties by ascending id."""
    ids = np.broadcast_to(np.arange(scores.shape[1]), scores.shape)
    return np.lexsort((ids, -scores), axis=-1)


@dataclass
class RankingTable:
    direction: str
    scores: np.ndarray  # [queries, candidates], candidates in id order
    order: np.ndarray  # [queries, candidates], ranked candidate ids

    def ranked(self, query: int) -> list[tuple[int, float]]:
        return [(int(c), float(self.scores[query, c])) for c in self.order[query]]


def _table(direction, scores) -> RankingTable:
    if direction not in DIRECTIONS:
        raise InputError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    return RankingTable(direction, scores, order_by_score(scores))


def rank(video_emb, caption_emb, direction="caption_to_video") -> RankingTable:
    """Rank every candidate for every query by joint-space cosine similarity."""
    if len(video_emb) == 0 or len(caption_emb) == 0:
        raise InputError("ranking needs at least one video and one caption")
    S = cosine_matrix(video_emb, caption_emb)  # [videos, captions]
    return _table(direction, S.T.copy() if direction == "caption_to_video" else S)


def mean_token(tokens) -> np.ndarray | None:
    """L2-normalised mean of a caption's token embeddings, or None if it has none."""
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.size == 0:
        return None
    m = tokens.reshape(-1, tokens.shape[-1]).mean(axis=0)
    return m / max(np.linalg.norm(m), EPS)


def token_similarity(pooled, caption_tokens) -> np.ndarray:
    """``[videos, captions]`` similarity of pooled video vectors to caption token means; 0 where absent."""
    pooled = np.asarray(pooled, dtype=np.float64)
    out = np.zeros((len(pooled), len(caption_tokens)))
    for n, toks in enumerate(caption_tokens):
        c = mean_token(toks)
        if c is not None:
            out[:, n] = cosine_matrix(pooled, c[None])[:, 0]
    return out


def rerank(base: RankingTable, pooled_mot, pooled_vis, caption_verbs, caption_nouns) -> RankingTable:
    """Add pooled motion and visual similarities to the joint scores and re-sort."""
    extra = token_similarity(pooled_mot, caption_verbs) + token_similarity(pooled_vis, caption_nouns)
    if base.direction == "caption_to_video":
        extra = extra.T
    if extra.shape != base.scores.shape:
        raise InputError(f"rerank inputs imply {extra.shape}, base table is {base.scores.shape}")
    return _table(base.direction, base.scores + extra)


@dataclass
class MetricsReport:
    direction: str
    r1: float
    r5: float
    r10: float
    median_rank: float
    n_queries: int

    def lines(self, prefix="") -> str:
        return "".join(
            f"{prefix}{k}={v}\n"
            for k, v in (
                ("direction", self.direction),
                ("R@1", repr(self.r1)),
                ("R@5", repr(self.r5)),
                ("R@10", repr(self.r10)),
                ("MedR", repr(self.median_rank)),
                ("queries", self.n_queries),
            )
        )


def best_positive_ranks(table: RankingTable, positives) -> np.ndarray:
    """1-based rank of the highest-ranked positive for every query."""
    positives = np.asarray(positives, dtype=bool)
    if positives.shape != table.scores.shape:
        raise InputError(f"positive map {positives.shape} does not match table {table.scores.shape}")
    if not positives.any(axis=1).all():
        bad = int(np.flatnonzero(~positives.any(axis=1))[0])
        raise InputError(f"query {bad} has no positive candidate")
    hits = np.take_along_axis(positives, table.order, axis=1)
    return hits.argmax(axis=1) + 1


def median_rank(ranks, rule="lower") -> float:
    r = np.sort(np.asarray(ranks))
    n = len(r)
    if n % 2:
        return float(r[n // 2])
    if rule == "lower":
        return float(r[n // 2 - 1])
    if rule == "midpoint":
        return float(r[n // 2 - 1] + r[n // 2]) / 2.0
    raise ConfigError(f"median rule must be 'lower' or 'midpoint', got {rule!r}")


def metrics(table: RankingTable, positives, median="lower") -> MetricsReport:
    ranks = best_positive_ranks(table, positives)
    return MetricsReport(
        table.direction,
        float(np.mean(ranks <= 1)),
        float(np.mean(ranks <= 5)),
        float(np.mean(ranks <= 10)),
        median_rank(ranks, median),
        len(ranks),
    )


# ------------------------------------------------------------ embedding sets


@dataclass
class VideoIndex:
    video_ids: list[str]
    joint: np.ndarray
    pooled_mot: np.ndarray
    pooled_vis: np.ndarray


@dataclass
class CaptionSet:
    caption_ids: list[str]
    joint: np.ndarray
    verbs: list[np.ndarray]
    nouns: list[np.ndarray]


def index_videos(model, dataset) -> VideoIndex:
    joint, mot, vis = [], [], []
    with no_grad():
        for vid in dataset.videos:
            v_mot, v_vis, v_joi = model.embed_video(*dataset.volumes(vid))
            joint.append(v_joi.data)
            mot.append(pool(v_mot).vector.data)
            vis.append(pool(v_vis).vector.data)
    return VideoIndex(list(dataset.videos), np.array(joint), np.array(mot), np.array(vis))


def encode_caption_set(model, sequences, verb_ids, noun_ids, caption_ids) -> CaptionSet:
    C = model.C
    with no_grad():
        joint = model.encode_captions(sequences).data
        verbs = [model.encode_tokens(v, VERB).data if len(v) else np.zeros((0, C)) for v in verb_ids]
        nouns = [model.encode_tokens(n, NOUN).data if len(n) else np.zeros((0, C)) for n in noun_ids]
    return CaptionSet(list(caption_ids), joint, verbs, nouns)


def index_captions(model, dataset) -> CaptionSet:
    recs = dataset.records
    return encode_caption_set(
        model,
        [dataset.token_ids(r) for r in recs],
        [dataset.pos_ids(r, VERB) for r in recs],
        [dataset.pos_ids(r, NOUN) for r in recs],
        [r.caption_id for r in recs],
    )


def evaluate(model, dataset, rerank_too=False, median="lower") -> dict[str, MetricsReport]:
    """Metrics for both directions; keys ``<direction>`` and, if asked, ``<direction>+rerank``."""
    videos = index_videos(model, dataset)
    caps = index_captions(model, dataset)
    pos_cv, _ = dataset.positives()
    out = {}
    for direction in DIRECTIONS:
        truth = pos_cv if direction == "caption_to_video" else pos_cv.T
        table = rank(videos.joint, caps.joint, direction)
        out[direction] = metrics(table, truth, median)
        if rerank_too:
            re = rerank(table, videos.pooled_mot, videos.pooled_vis, caps.verbs, caps.nouns)
            out[direction + "+rerank"] = metrics(re, truth, median)
    return out


# ---------------------------------------------------------------- highlight


def _axis_weights(n_in, n_out, mode):
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    if mode == "nearest":
        idx = np.minimum(np.floor((np.arange(n_out) + 0.5) * n_in / n_out).astype(int), n_in - 1)
        return idx, idx, np.zeros(n_out)
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def upsample(volume: np.ndarray, size, mode="trilinear") -> np.ndarray:
    """Resize a ``[T, H, W]`` map by separable linear (or nearest) interpolation."""
    if mode not in ("trilinear", "nearest"):
        raise ConfigError(f"interpolation must be 'trilinear' or 'nearest', got {mode!r}")
    out = np.asarray(volume, dtype=np.float64)
    for axis, n_out in enumerate(size):
        n_in = out.shape[axis]
        if n_in == n_out:
            continue
        lo, hi, w = _axis_weights(n_in, n_out, mode)
        shape = [1] * out.ndim
        shape[axis] = n_out
        w = w.reshape(shape)
        out = (1.0 - w) * np.take(out, lo, axis=axis) + w * np.take(out, hi, axis=axis)
    return out


@dataclass
class HighlightExport:
    video_id: str | None
    token: str
    pos: str
    space: str
    beta: float
    raw: np.ndarray
    upsampled: np.ndarray | None = None

    @property
    def display(self) -> np.ndarray:
        return self.upsampled if self.upsampled is not None else self.raw


def highlight(model, slow: FeatureVolume, fast: FeatureVolume, token: str, pos: str, beta: float,
              size=None, interp="trilinear", video_id=None) -> HighlightExport:
    """Token-conditioned relevance map over the matching branch's voxels."""
    if pos not in SPACE_OF_POS:
        raise InputError(f"highlighting needs a VERB or NOUN token, got {pos!r}")
    if token not in model.vocab:
        raise InputError(f"token {token!r} is not in the vocabulary (exact match required)")
    tid = model.vocab.id(token)
    if model.vocab.pos[tid] != pos:
        raise InputError(f"token {token!r} is a {model.vocab.pos[tid]} in the vocabulary, not {pos}")
    with no_grad():
        v_mot, v_vis = model.project(slow, fast)
        volume = v_mot if pos == VERB else v_vis
        vec = model.encode_tokens(tid, pos)
        m = relevance_map(volume, TextEmbedding(SPACE_OF_POS[pos], vec), beta, tid).array
    up = upsample(m, size, interp) if size is not None else None
    return HighlightExport(video_id, token, pos, SPACE_OF_POS[pos], float(beta), m, up)


def to_gray8(volume: np.ndarray) -> np.ndarray:
    """Min-max scale a whole volume to 0..255 (all zeros when constant)."""
    lo, hi = float(volume.min()), float(volume.max())
    if hi <= lo:
        return np.zeros(volume.shape, dtype=np.uint8)
    return np.rint((volume - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(path, image: np.ndarray) -> None:
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + image.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    parts = buf.split(maxsplit=4)
    if parts[0] != b"P5":
        raise InputError(f"{path}: not a binary graymap")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(buf[len(buf) - w * h:], dtype=np.uint8).reshape(h, w)


def export_highlight(export: HighlightExport, out_dir) -> Path:
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    write_tensor(out / "map.vten", export.raw)
    if export.upsampled is not None:
        write_tensor(out / "map_upsampled.vten", export.upsampled)
    for t, frame in enumerate(to_gray8(export.display)):
        write_pgm(out / "frames" / f"frame_{t:03d}.pgm", frame)
    meta = (
        f"video_id={export.video_id}\ntoken={export.token}\npos={export.pos}\n"
        f"space={export.space}\nbeta={export.beta!r}\nshape={','.join(map(str, export.display.shape))}\n"
    )
    (out / "highlight.txt").write_text(meta, encoding="utf-8")
    return out
