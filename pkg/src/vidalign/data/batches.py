"""Epoch-wise batch assembly: one caption per video, seeded shuffles."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from ..encoders import NOUN, VERB, sample_negative_token
from ..errors import BatchError, ConfigError
from ..video import FeatureVolume


@dataclass
class BatchItem:
    video_id: str
    caption_id: str
    slow: FeatureVolume
    fast: FeatureVolume
    caption_ids: list[int]
    verb_ids: list[int]
    noun_ids: list[int]
    neg_verb_ids: list[int] = field(default_factory=list)
    neg_noun_ids: list[int] = field(default_factory=list)


@dataclass
class Batch:
    items: list[BatchItem]

    def __post_init__(self):
        if len({it.video_id for it in self.items}) < 2:
            raise BatchError("a batch needs at least two distinct videos")

    @property
    def size(self) -> int:
        return len(self.items)

    @property
    def video_ids(self) -> list[str]:
        return [it.video_id for it in self.items]


def make_item(dataset, video_id, caption_index=0) -> BatchItem:
    rec = dataset.captions_of(video_id)[caption_index]
    slow, fast = dataset.volumes(video_id)
    return BatchItem(
        video_id,
        rec.caption_id,
        slow,
        fast,
        dataset.token_ids(rec),
        dataset.pos_ids(rec, VERB),
        dataset.pos_ids(rec, NOUN),
    )


def attach_negatives(batch: Batch, dataset, rng) -> Batch:
    """Draw one negative token per verb and per noun of every item."""
    for it in batch.items:
        it.neg_verb_ids = [sample_negative_token(VERB, it.video_id, dataset, rng) for _ in it.verb_ids]
        it.neg_noun_ids = [sample_negative_token(NOUN, it.video_id, dataset, rng) for _ in it.noun_ids]
    return batch


def epoch_batches(dataset, B: int, rng) -> Iterator[Batch]:
    """Shuffle the videos, pick one caption each and cut into batches of ``B``.

    A trailing batch is kept only if it holds at least two videos.
    """
    if B < 2:
        raise ConfigError(f"batch size must be at least 2, got {B}")
    order = rng.permutation(len(dataset.videos))
    picks = [int(rng.integers(len(dataset.captions_of(dataset.videos[i])))) for i in order]
    for start in range(0, len(order), B):
        chunk = range(start, min(start + B, len(order)))
        if len(chunk) < 2:
            break
        yield Batch([make_item(dataset, dataset.videos[order[k]], picks[k]) for k in chunk])


def assemble_batches(dataset, B: int, seed: int, epochs: int = 1) -> Iterator[Batch]:
    for epoch in range(epochs):
        yield from epoch_batches(dataset, B, np.random.default_rng([seed, epoch]))
