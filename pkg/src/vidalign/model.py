"""All trainable parameters of the aligner, grouped by component."""
from __future__ import annotations

import numpy as np

from .encoders import CaptionEncoder, TokenEncoder, Vocabulary, uniform_init
from .errors import InputError
from .tensor import Tensor
from .video import FeatureVolume, JointFusion, ProjectionHead, fuse_joint, project


class AlignmentModel:
    """Embedding table, token and caption encoders, two projection heads, joint fusion.

    The embedding table is the only tensor shared between components (both
    text encoders read it).
    """

    def __init__(self, vocab: Vocabulary, E: int, C: int, c_slow: int, c_fast: int, V=None, seed=0):
        V = len(vocab) if not V else V
        if V < len(vocab):
            raise InputError(f"V={V} is smaller than the vocabulary ({len(vocab)} tokens)")
        rng = np.random.default_rng(seed)
        self.vocab = vocab
        self.E, self.C, self.V = E, C, V
        self.embedding = uniform_init(rng, (V, E), E, "embedding")
        self.token = TokenEncoder(E, C, rng)
        self.caption = CaptionEncoder(E, C, rng)
        self.fast_head = ProjectionHead("fast", c_fast, C, rng)
        self.slow_head = ProjectionHead("slow", c_slow, C, rng)
        self.fusion = JointFusion(C, rng)

    def parameters(self) -> dict[str, Tensor]:
        params = {"embedding": self.embedding}
        params.update(self.token.parameters())
        params.update(self.caption.parameters())
        params.update(self.fast_head.parameters())
        params.update(self.slow_head.parameters())
        params.update(self.fusion.parameters())
        return params

    def project(self, slow: FeatureVolume, fast: FeatureVolume):
        """``(v_mot, v_vis)`` projected volumes."""
        return project(fast, self.fast_head), project(slow, self.slow_head)

    def embed_video(self, slow: FeatureVolume, fast: FeatureVolume):
        """``(v_mot, v_vis, v_joi)`` for one video."""
        v_mot, v_vis = self.project(slow, fast)
        return v_mot, v_vis, fuse_joint(v_mot, v_vis, self.fusion)

    def encode_tokens(self, ids, pos: str) -> Tensor:
        return self.token.encode(self.embedding, np.asarray(ids, dtype=np.int64), pos)

    def encode_captions(self, sequences) -> Tensor:
        return self.caption.encode(self.embedding, sequences)
