"""Synthetic videos with a planted, token-specific spatiotemporal blob.

Each video gets one verb and one noun. Both feature volumes are Gaussian
noise; inside an axis-aligned box the fast volume carries the verb's pattern
and the slow volume the noun's pattern (fixed unit vectors, plus noise).
Captions read ``fillers... noun verb``. The box masks are written next to the
features so localisation can be scored.
"""
from __future__ import annotations

import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..encoders import NOUN, OTHER, VERB, Vocabulary
from ..errors import ConfigError
from .container import write_tensor
from .dataset import CaptionRecord, write_manifest
from .kvfile import read_kv, write_kv

VERB_WORDS = (
    "run jump swim dance pour ride cook throw climb sing "
    "drive write paint kick wave push pull cut clean play"
).split()
NOUN_WORDS = (
    "dog cat car bike ball milk cup horse guitar tree "
    "boat door book hat chair phone table bottle shoe kite"
).split()
FILLER_WORDS = "a the of in with and this that".split()


@dataclass
class SyntheticSpec:
    n_train: int = 200
    n_test: int = 50
    captions_per_video: int = 2
    n_verbs: int = 20
    n_nouns: int = 20
    n_fillers: int = 8
    C_s: int = 4
    C_f: int = 4
    T_s: int = 2
    T_f: int = 4
    H: int = 7
    W: int = 7
    blob_t: float = 0.5
    blob_h: float = 0.43
    blob_w: float = 0.43
    noise: float = 0.1
    seed: int = 0

    @classmethod
    def read(cls, path) -> "SyntheticSpec":
        return read_kv(path, cls)

    def validate(self):
        for name in ("n_train", "captions_per_video", "C_s", "C_f", "T_s", "T_f", "H", "W"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.n_verbs < 2 or self.n_nouns < 2:
            raise ConfigError("need at least two verbs and two nouns so negatives exist")
        if self.n_test < 0 or self.n_fillers < 1 or self.noise < 0:
            raise ConfigError("n_test, noise must be nonnegative and n_fillers positive")
        for name in ("blob_t", "blob_h", "blob_w"):
            frac = getattr(self, name)
            if not 0 < frac <= 1:
                raise ConfigError(f"{name}={frac}: blob extent must be a fraction in (0, 1] of the volume")

    def blob_extent(self, T: int) -> tuple[int, int, int]:
        return tuple(
            max(1, int(round(frac * dim)))
            for frac, dim in ((self.blob_t, T), (self.blob_h, self.H), (self.blob_w, self.W))
        )


def _words(base, n, prefix):
    return [base[i] if i < len(base) else f"{prefix}{i:02d}" for i in range(n)]


def distinct_unit_vectors(rng, n: int, dim: int, max_cos=0.99) -> np.ndarray:
    """``n`` random unit vectors with pairwise cosine below ``max_cos``."""
    out = []
    while len(out) < n:
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        if all(abs(v @ u) < max_cos for u in out):
            out.append(v)
    return np.array(out)


def _plant(rng, spec, pattern, C, T, start, extent):
    vol = spec.noise * rng.standard_normal((C, T, spec.H, spec.W))
    mask = np.zeros((T, spec.H, spec.W))
    (t0, h0, w0), (dt, dh, dw) = start, extent
    box = (slice(t0, t0 + dt), slice(h0, h0 + dh), slice(w0, w0 + dw))
    mask[box] = 1.0
    vol[(slice(None),) + box] += pattern[:, None, None, None]
    return vol, mask


def generate_synthetic(spec: SyntheticSpec, out_dir) -> Path:
    """Write ``train/`` and ``test/`` splits (manifest, vocab, features, masks) under ``out_dir``."""
    spec.validate()
    out = Path(out_dir)
    rng = np.random.default_rng(spec.seed)
    verbs = _words(VERB_WORDS, spec.n_verbs, "verb")
    nouns = _words(NOUN_WORDS, spec.n_nouns, "noun")
    fillers = _words(FILLER_WORDS, spec.n_fillers, "filler")
    vocab = Vocabulary([(w, VERB) for w in verbs] + [(w, NOUN) for w in nouns] + [(w, OTHER) for w in fillers])
    verb_patterns = distinct_unit_vectors(rng, spec.n_verbs, spec.C_f)
    noun_patterns = distinct_unit_vectors(rng, spec.n_nouns, spec.C_s)
    ext_f = spec.blob_extent(spec.T_f)
    ext_s = spec.blob_extent(spec.T_s)

    splits = {"train": spec.n_train, "test": spec.n_test}
    vid = 0
    for split, count in splits.items():
        root = out / split
        if root.exists():
            shutil.rmtree(root)
        (root / "features").mkdir(parents=True)
        (root / "masks").mkdir()
        vocab.write(root / "vocab.tsv")
        records = []
        for _ in range(count):
            video_id = f"v{vid:04d}"
            vid += 1
            verb, noun = int(rng.integers(spec.n_verbs)), int(rng.integers(spec.n_nouns))
            t0 = int(rng.integers(spec.T_f - ext_f[0] + 1))
            h0 = int(rng.integers(spec.H - ext_f[1] + 1))
            w0 = int(rng.integers(spec.W - ext_f[2] + 1))
            ts0 = min(t0 * spec.T_s // spec.T_f, spec.T_s - ext_s[0])
            fast, mask_f = _plant(rng, spec, verb_patterns[verb], spec.C_f, spec.T_f, (t0, h0, w0), ext_f)
            slow, mask_s = _plant(rng, spec, noun_patterns[noun], spec.C_s, spec.T_s, (ts0, h0, w0), ext_s)
            paths = {
                "slow": f"features/{video_id}_slow.vten",
                "fast": f"features/{video_id}_fast.vten",
                "mask_slow": f"masks/{video_id}_slow.vten",
                "mask_fast": f"masks/{video_id}_fast.vten",
            }
            write_tensor(root / paths["slow"], slow)
            write_tensor(root / paths["fast"], fast)
            write_tensor(root / paths["mask_slow"], mask_s)
            write_tensor(root / paths["mask_fast"], mask_f)
            for c in range(spec.captions_per_video):
                n_fill = int(rng.integers(1, 4))
                tokens = [(fillers[int(i)], OTHER) for i in rng.integers(spec.n_fillers, size=n_fill)]
                tokens += [(nouns[noun], NOUN), (verbs[verb], VERB)]
                records.append(CaptionRecord(video_id, f"{video_id}_c{c}", tokens=tokens, **paths))
        write_manifest(root / "manifest.jsonl", records)
    write_kv(out / "spec.txt", spec)
    return out
