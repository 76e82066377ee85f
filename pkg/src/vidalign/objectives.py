"""Relevance maps and every loss term of the training objective."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .encoders import NOUN, VERB, TextEmbedding
from .errors import BatchError, ConfigError, InputError
from .tensor import (
    Tensor,
    concat,
    l2_normalize,
    mean,
    mul,
    relu,
    reshape,
    softmax,
    softmax_positions,
    take,
    tsum,
)
from .video import ProjectedVolume

log = logging.getLogger(__name__)


@dataclass
class RelevanceMap:
    space: str
    token_id: int | None
    data: Tensor  # [T, H, W]
    beta_used: float

    @property
    def array(self) -> np.ndarray:
        return self.data.numpy()


def voxel_similarities(voxels: Tensor, tokens: Tensor) -> Tensor:
    """Cosine similarity ``[N, K]`` between voxel vectors ``[N, C]`` and tokens ``[K, C]``.

    Each score is an elementwise product summed over channels rather than a
    BLAS product, so every voxel is reduced in the same order and reordering
    the voxels reorders the scores bit for bit.
    """
    v = reshape(l2_normalize(voxels, axis=-1), (voxels.shape[0], 1, -1))
    c = reshape(l2_normalize(tokens, axis=-1), (1, tokens.shape[0], -1))
    return tsum(v * c, axis=-1)


def relevance_map(volume: ProjectedVolume, token: TextEmbedding, beta: float, token_id=None) -> RelevanceMap:
    if volume.space != token.space:
        raise InputError(f"{token.space} token cannot score a {volume.space} volume")
    if not beta > 0:
        raise ConfigError(f"beta must be positive, got {beta}")
    scores = voxel_similarities(volume.voxels(), reshape(token.vector, (1, -1)))
    m = softmax_positions(reshape(scores, volume.thw), beta)
    return RelevanceMap(volume.space, token_id, m, float(beta))


def alignment_terms(voxels: Tensor, pos: Tensor, neg: Tensor, beta: float, alpha: float) -> Tensor:
    """Relevance-weighted hinge loss per token, ``[K]``.

    ``sum_n m[n, k] * relu(alpha - s(v_n, pos_k) + s(v_n, neg_k))`` where ``m`` is
    the temperature softmax of ``s(v_n, pos_k)`` over voxels. The map is not
    detached, so the gradient also flows through the weights.
    """
    if not beta > 0:
        raise ConfigError(f"beta must be positive, got {beta}")
    if alpha < 0:
        raise ConfigError(f"margin must be nonnegative, got {alpha}")
    s_pos = voxel_similarities(voxels, pos)
    s_neg = voxel_similarities(voxels, neg)
    weights = softmax(mul(s_pos, 1.0 / beta), axis=0)
    hinge = relu(alpha - s_pos + s_neg)
    return tsum(mul(weights, hinge), axis=0)


def alignment_loss(volume: ProjectedVolume, c_pos: TextEmbedding, c_neg: TextEmbedding, beta, alpha) -> Tensor:
    if not volume.space == c_pos.space == c_neg.space:
        raise InputError("volume, positive and negative must share one embedding space")
    pos = reshape(c_pos.vector, (1, -1))
    neg = reshape(c_neg.vector, (1, -1))
    return reshape(alignment_terms(volume.voxels(), pos, neg, beta, alpha), ())


def joint_loss(v_joint: Tensor, c_joint: Tensor, video_ids, alpha: float) -> Tensor:
    """Bidirectional triplet loss over all in-batch negatives.

    Row ``i`` of ``v_joint`` and ``c_joint`` form a positive pair. For each pair
    the caption-side hinge is averaged over captions of other videos and the
    video-side hinge over videos of other captions; both are averaged over
    pairs and summed.
    """
    ids = np.asarray(video_ids)
    if len(set(ids.tolist())) < 2:
        raise BatchError("joint loss needs at least two distinct videos in the batch")
    if v_joint.shape != c_joint.shape or v_joint.shape[0] != len(ids):
        raise InputError("joint loss needs matching [B, C] video and caption embeddings")
    S = l2_normalize(v_joint, axis=-1) @ l2_normalize(c_joint, axis=-1).T
    B = len(ids)
    neg = (ids[:, None] != ids[None, :]).astype(float)
    diag = reshape(take(reshape(S, (-1,)), np.arange(B) * (B + 1)), (B, 1))
    # S[i, j]: video i against caption j
    caption_side = relu(alpha - diag + S)
    video_side = relu(alpha - diag.T + S)
    per_row = tsum(mul(caption_side, neg), axis=1) / neg.sum(axis=1)
    per_col = tsum(mul(video_side, neg), axis=0) / neg.sum(axis=0)
    return mean(per_row) + mean(per_col)


@dataclass
class LossBreakdown:
    l_joint: Tensor
    l_mot: Tensor
    l_vis: Tensor
    l_total: Tensor
    lambda_m: float
    lambda_s: float
    alpha: float

    def floats(self) -> dict[str, float]:
        return {k: getattr(self, k).item() for k in ("l_joint", "l_mot", "l_vis", "l_total")}


def _space_loss(model, volumes, token_lists, neg_lists, pos, beta, alpha) -> Tensor:
    """Mean over items (with at least one token) of the per-item mean token loss."""
    flat = [t for toks in token_lists for t in toks]
    if not flat:
        return Tensor(0.0)
    pos_emb = model.encode_tokens(flat, pos)
    neg_emb = model.encode_tokens([t for negs in neg_lists for t in negs], pos)
    per_item, start = [], 0
    for vol, toks in zip(volumes, token_lists):
        k = len(toks)
        if k == 0:
            continue
        rows = np.arange(start, start + k)
        start += k
        terms = alignment_terms(vol.voxels(), take(pos_emb, rows), take(neg_emb, rows), beta, alpha)
        per_item.append(reshape(mean(terms), (1,)))
    return mean(concat(per_item))


def total_loss(model, batch, config) -> LossBreakdown:
    """Joint triplet loss plus weighted motion and visual alignment losses."""
    items = batch.items
    for it in items:
        if len(it.neg_verb_ids) != len(it.verb_ids) or len(it.neg_noun_ids) != len(it.noun_ids):
            raise BatchError(f"batch item {it.caption_id!r} lacks sampled negative tokens")
    v_mot, v_vis, v_joi = [], [], []
    for it in items:
        m, v, j = model.embed_video(it.slow, it.fast)
        v_mot.append(m)
        v_vis.append(v)
        v_joi.append(reshape(j, (1, -1)))
    c_joi = model.encode_captions([it.caption_ids for it in items])
    l_joint = joint_loss(concat(v_joi), c_joi, batch.video_ids, config.alpha)
    beta, alpha = config.beta_train, config.alpha
    l_mot = _space_loss(
        model, v_mot, [it.verb_ids for it in items], [it.neg_verb_ids for it in items], VERB, beta, alpha
    )
    l_vis = _space_loss(
        model, v_vis, [it.noun_ids for it in items], [it.neg_noun_ids for it in items], NOUN, beta, alpha
    )
    if not any(it.verb_ids or it.noun_ids for it in items):
        log.warning("batch has no verbs or nouns; alignment terms are zero")
    l_total = l_joint + mul(l_mot, config.lambda_m) + mul(l_vis, config.lambda_s)
    return LossBreakdown(l_joint, l_mot, l_vis, l_total, config.lambda_m, config.lambda_s, config.alpha)
