"""Caption manifests: one JSON record per line, resolved against a vocabulary.

A record looks like::

    {"video_id": "v0003", "caption_id": "v0003_c1",
     "slow": "features/v0003_slow.vten", "fast": "features/v0003_fast.vten",
     "tokens": [["a", "OTHER"], ["dog", "NOUN"], ["run", "VERB"]],
     "mask_slow": "masks/v0003_slow.vten", "mask_fast": "masks/v0003_fast.vten"}

Paths are relative to the manifest's directory; the mask fields are optional.
The vocabulary lives in ``vocab.tsv`` beside the manifest.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..encoders import POS_TAGS, Vocabulary
from ..errors import DatasetError, FormatError
from ..video import FeatureVolume
from .container import read_tensor

REQUIRED = ("video_id", "caption_id", "slow", "fast", "tokens")


@dataclass
class CaptionRecord:
    video_id: str
    caption_id: str
    slow: str
    fast: str
    tokens: list[tuple[str, str]]
    mask_slow: str | None = None
    mask_fast: str | None = None

    def to_json(self) -> str:
        rec = {
            "video_id": self.video_id,
            "caption_id": self.caption_id,
            "slow": self.slow,
            "fast": self.fast,
            "tokens": [list(t) for t in self.tokens],
        }
        if self.mask_slow is not None:
            rec["mask_slow"] = self.mask_slow
        if self.mask_fast is not None:
            rec["mask_fast"] = self.mask_fast
        return json.dumps(rec, separators=(",", ":"))


def write_manifest(path, records) -> None:
    Path(path).write_text("".join(r.to_json() + "\n" for r in records), encoding="utf-8")


def _parse_record(line: str, lineno: int, path) -> CaptionRecord:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{lineno}: not valid JSON ({exc.msg})") from None
    if not isinstance(rec, dict):
        raise FormatError(f"{path}:{lineno}: record must be an object")
    missing = [k for k in REQUIRED if k not in rec]
    if missing:
        raise DatasetError(f"{path}:{lineno}: missing field(s) {', '.join(missing)}")
    tokens = rec["tokens"]
    if not isinstance(tokens, list) or not tokens:
        raise DatasetError(f"{path}:{lineno}: tokens must be a nonempty list")
    parsed = []
    for tok in tokens:
        if not (isinstance(tok, list) and len(tok) == 2 and tok[1] in POS_TAGS):
            raise DatasetError(f"{path}:{lineno}: bad token entry {tok!r}")
        parsed.append((str(tok[0]), tok[1]))
    return CaptionRecord(
        str(rec["video_id"]),
        str(rec["caption_id"]),
        rec["slow"],
        rec["fast"],
        parsed,
        rec.get("mask_slow"),
        rec.get("mask_fast"),
    )


class Dataset:
    """Validated manifest plus lazily loaded, cached feature volumes."""

    def __init__(self, records, vocab: Vocabulary, root="."):
        self.records: list[CaptionRecord] = list(records)
        self.vocab = vocab
        self.root = Path(root)
        self.videos: list[str] = []
        self._captions: dict[str, list[int]] = {}
        for i, rec in enumerate(self.records):
            if rec.video_id not in self._captions:
                self._captions[rec.video_id] = []
                self.videos.append(rec.video_id)
            self._captions[rec.video_id].append(i)
        self._volumes: dict[str, tuple[FeatureVolume, FeatureVolume]] = {}
        self._used: dict[tuple[str, str], set[int]] = {}

    def __len__(self):
        return len(self.records)

    def captions_of(self, video_id) -> list[CaptionRecord]:
        return [self.records[i] for i in self._captions[video_id]]

    def first_record(self, video_id) -> CaptionRecord:
        try:
            return self.records[self._captions[video_id][0]]
        except KeyError:
            raise DatasetError(f"unknown video id {video_id!r}") from None

    def token_ids(self, rec: CaptionRecord) -> list[int]:
        return [self.vocab.id(t) for t, _ in rec.tokens]

    def pos_ids(self, rec: CaptionRecord, pos: str) -> list[int]:
        return [self.vocab.id(t) for t, p in rec.tokens if p == pos]

    def video_tokens(self, video_id, pos: str) -> set[int]:
        key = (video_id, pos)
        if key not in self._used:
            self._used[key] = {i for rec in self.captions_of(video_id) for i in self.pos_ids(rec, pos)}
        return self._used[key]

    def resolve(self, rel) -> Path:
        return self.root / rel

    def volumes(self, video_id) -> tuple[FeatureVolume, FeatureVolume]:
        """``(slow, fast)`` feature volumes of one video."""
        if video_id not in self._volumes:
            rec = self.first_record(video_id)
            slow = FeatureVolume("slow", read_tensor(self.resolve(rec.slow)), video_id)
            fast = FeatureVolume("fast", read_tensor(self.resolve(rec.fast)), video_id)
            self._volumes[video_id] = (slow, fast)
        return self._volumes[video_id]

    def mask(self, video_id, branch: str) -> np.ndarray | None:
        rec = self.first_record(video_id)
        rel = rec.mask_fast if branch == "fast" else rec.mask_slow
        return None if rel is None else read_tensor(self.resolve(rel))

    def positives(self) -> tuple[np.ndarray, list[str]]:
        """Caption-by-video boolean matrix of true pairs, and the caption ids."""
        col = {v: j for j, v in enumerate(self.videos)}
        pos = np.zeros((len(self.records), len(self.videos)), dtype=bool)
        for i, rec in enumerate(self.records):
            pos[i, col[rec.video_id]] = True
        return pos, [r.caption_id for r in self.records]


def validate_dataset(ds: Dataset, source="manifest") -> None:
    """Check every record against the vocabulary and its feature files."""
    seen_files: dict[str, tuple[str, str]] = {}
    checked: set[str] = set()
    line_numbers = getattr(ds, "line_numbers", None) or range(1, len(ds.records) + 1)
    for lineno, rec in zip(line_numbers, ds.records):
        for text, pos in rec.tokens:
            if text not in ds.vocab:
                raise DatasetError(f"{source}:{lineno}: token {text!r} is not in the vocabulary")
            if ds.vocab.pos[ds.vocab.id(text)] != pos:
                raise DatasetError(
                    f"{source}:{lineno}: token {text!r} tagged {pos}, vocabulary says {ds.vocab.pos[ds.vocab.id(text)]}"
                )
        prior = seen_files.setdefault(rec.video_id, (rec.slow, rec.fast))
        if prior != (rec.slow, rec.fast):
            raise DatasetError(f"{source}:{lineno}: video {rec.video_id!r} has conflicting feature files")
        if rec.video_id in checked:
            continue
        checked.add(rec.video_id)
        try:
            slow, fast = ds.volumes(rec.video_id)
        except (OSError, FormatError, ValueError) as exc:
            raise DatasetError(f"{source}:{lineno}: cannot load features: {exc}") from None
        if slow.thw[1:] != fast.thw[1:]:
            raise DatasetError(f"{source}:{lineno}: slow and fast volumes disagree on H, W")
        for branch, vol in (("slow", slow), ("fast", fast)):
            rel = rec.mask_slow if branch == "slow" else rec.mask_fast
            if rel is None:
                continue
            try:
                m = read_tensor(ds.resolve(rel))
            except (OSError, FormatError) as exc:
                raise DatasetError(f"{source}:{lineno}: cannot load {branch} mask: {exc}") from None
            if m.shape != vol.thw:
                raise DatasetError(f"{source}:{lineno}: {branch} mask shape {m.shape} != volume {vol.thw}")


def load_manifest(path, vocab_path=None, validate=True) -> Dataset:
    """Parse a JSON-lines manifest; errors name the offending line."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc.strerror}") from None
    vocab_path = Path(vocab_path) if vocab_path else path.parent / "vocab.tsv"
    try:
        vocab = Vocabulary.read(vocab_path)
    except OSError as exc:
        raise DatasetError(f"cannot read vocabulary {vocab_path}: {exc.strerror}") from None
    records, line_numbers = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.strip():
            records.append(_parse_record(line, lineno, path))
            line_numbers.append(lineno)
    if not records:
        raise DatasetError(f"{path}: manifest has no records")
    ds = Dataset(records, vocab, path.parent)
    ds.line_numbers = line_numbers
    if validate:
        validate_dataset(ds, str(path))
    return ds
