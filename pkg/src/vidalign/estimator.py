"""scikit-learn style front end: ``fit`` on a dataset, then rank and highlight."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .retrieval import (
    evaluate,
    export_highlight,
    highlight,
    index_captions,
    index_videos,
    rank,
    rerank,
)
from .training import Checkpoint, TrainConfig, train
from .validation import check_dataset, check_positive, check_size


class ActionHighlighter(BaseEstimator):
    """Joint video/caption embedding with verb- and noun-conditioned relevance maps.

    Hyperparameters mirror :class:`~vidalign.training.TrainConfig`. ``X`` is a
    :class:`~vidalign.data.Dataset` or a path to a caption manifest.

    Example:
        >>> est = ActionHighlighter(epochs=60).fit("data/train")
        >>> est.score("data/test")          # caption-to-video R@1
        >>> est.highlight("data/test", "v0201", "pour", "VERB", beta=0.05)
    """

    def __init__(
        self,
        C=32,
        E=32,
        V=0,
        alpha=0.2,
        beta_train=0.1,
        lambda_m=1.0,
        lambda_s=1.0,
        lr=0.01,
        beta1=0.9,
        beta2=0.999,
        adam_eps=1e-8,
        grad_clip=0.0,
        batch_size=32,
        epochs=60,
        seed=0,
        dtype="float64",
    ):
        self.C = C
        self.E = E
        self.V = V
        self.alpha = alpha
        self.beta_train = beta_train
        self.lambda_m = lambda_m
        self.lambda_s = lambda_s
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_eps = adam_eps
        self.grad_clip = grad_clip
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.dtype = dtype

    def to_config(self) -> TrainConfig:
        return TrainConfig(**self.get_params()).validate()

    def fit(self, X, y=None, on_epoch=None):
        ds = check_dataset(X)
        ckpt = train(ds, self.to_config(), on_epoch=on_epoch)
        self.model_ = ckpt.model
        self.history_ = ckpt.history
        self.n_features_in_ = (ckpt.model.slow_head.c_in, ckpt.model.fast_head.c_in)
        return self

    @classmethod
    def from_checkpoint(cls, path) -> "ActionHighlighter":
        ckpt = Checkpoint.load(path)
        est = cls(**{k: getattr(ckpt.config, k) for k in cls().get_params()})
        est.model_ = ckpt.model
        est.history_ = []
        est.n_features_in_ = (ckpt.model.slow_head.c_in, ckpt.model.fast_head.c_in)
        return est

    def save(self, path):
        check_is_fitted(self, "model_")
        return Checkpoint(self.model_, self.to_config(), self.epochs, self.history_).save(path)

    def transform(self, X) -> np.ndarray:
        """Joint video embeddings ``[n_videos, C]`` in ``X.videos`` order."""
        check_is_fitted(self, "model_")
        return index_videos(self.model_, check_dataset(X)).joint

    def embed_captions(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return index_captions(self.model_, check_dataset(X)).joint

    def predict(self, X, use_rerank=False) -> np.ndarray:
        """Best-matching video id for every caption of ``X`` (among ``X``'s videos)."""
        check_is_fitted(self, "model_")
        ds = check_dataset(X)
        videos = index_videos(self.model_, ds)
        caps = index_captions(self.model_, ds)
        table = rank(videos.joint, caps.joint, "caption_to_video")
        if use_rerank:
            table = rerank(table, videos.pooled_mot, videos.pooled_vis, caps.verbs, caps.nouns)
        return np.array([videos.video_ids[i] for i in table.order[:, 0]])

    def score(self, X, y=None) -> float:
        """Caption-to-video R@1."""
        check_is_fitted(self, "model_")
        return evaluate(self.model_, check_dataset(X))["caption_to_video"].r1

    def evaluate(self, X, use_rerank=False, median="lower"):
        check_is_fitted(self, "model_")
        return evaluate(self.model_, check_dataset(X), use_rerank, median)

    def highlight(self, X, video_id, token, pos, beta=None, size=None, interp="trilinear", out_dir=None):
        """Relevance map of ``token`` over one video of ``X``; optionally written to ``out_dir``."""
        check_is_fitted(self, "model_")
        ds = check_dataset(X)
        beta = self.beta_train if beta is None else check_positive("beta", beta)
        slow, fast = ds.volumes(video_id)
        export = highlight(self.model_, slow, fast, token, pos, beta, check_size(size), interp, video_id)
        if out_dir is not None:
            export_highlight(export, out_dir)
        return export
