"""scikit-learn style wrapper around the multi-stage U-Net pipeline."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import tensor_nn as nn
from .metrics import f1_score
from .pipeline import (PipelineConfig, infer_batch, load_model, predict_masks,
                       predict_proba, save_model, train_pipeline)
from .unet import UNetConfig
from .validation import check_mask_batch


class UNetSkeletonizer(BaseEstimator):
    """Learned skeletonizer: a U-Net followed by ``n_stages - 1`` correctors.

    ``X`` is a batch of square binary shapes ``(n, s, s)``, ``y`` the matching
    skeletons. Defaults are the benchmark's Adam and loss settings and the
    full-size network; ``depth=2, base_channels=8`` suits 64x64 data.
    """

    def __init__(self, n_stages=2, epochs=20, batch_size=32, learning_rate=1e-3,
                 betas=(0.9, 0.999), loss="wcce", class_weights=(1.0, 25.0),
                 depth=4, base_channels=64, random_state=0):
        self.n_stages = n_stages
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.betas = betas
        self.loss = loss
        self.class_weights = class_weights
        self.depth = depth
        self.base_channels = base_channels
        self.random_state = random_state

    def _configs(self, size):
        beta1, beta2 = self.betas
        pipe = PipelineConfig(
            n_stages=self.n_stages, epochs=self.epochs, batch_size=self.batch_size,
            lr=self.learning_rate, beta1=beta1, beta2=beta2,
            loss=nn.LossConfig(tuple(self.class_weights), self.loss),
            seed=int(self.random_state or 0))
        return pipe, UNetConfig(depth=self.depth, base_channels=self.base_channels,
                                input_size=size)

    def fit(self, X, y):
        X = check_mask_batch(X, "X")
        y = check_mask_batch(y, "y")
        pipe, unet = self._configs(X.shape[1])
        self.bundle_ = train_pipeline(X, y, pipe, unet)
        self.history_ = self.bundle_.history
        self.n_features_in_ = X.shape[1] * X.shape[2]
        return self

    def predict(self, X):
        check_is_fitted(self, "bundle_")
        return infer_batch(self.bundle_, check_mask_batch(X, "X"))

    def predict_proba(self, X):
        """Skeleton probability from the last stage, fed binarized earlier stages."""
        check_is_fitted(self, "bundle_")
        X = check_mask_batch(X, "X")
        nets = self.bundle_.networks()
        current = X
        for net in nets[:-1]:
            current = predict_masks(net, current)
        return predict_proba(nets[-1], current)

    def score(self, X, y):
        """Mean per-image F1."""
        y = check_mask_batch(y, "y")
        pred = self.predict(X)
        return float(np.mean([f1_score(t, p) for t, p in zip(y, pred)]))

    def save(self, path):
        check_is_fitted(self, "bundle_")
        save_model(self.bundle_, path)

    @classmethod
    def load(cls, path):
        bundle = load_model(path)
        p, u = bundle.pipeline, bundle.unet
        est = cls(n_stages=p.n_stages, epochs=p.epochs, batch_size=p.batch_size,
                  learning_rate=p.lr, betas=(p.beta1, p.beta2), loss=p.loss.mode.value,
                  class_weights=p.loss.class_weights, depth=u.depth,
                  base_channels=u.base_channels, random_state=p.seed)
        est.bundle_ = bundle
        est.history_ = bundle.history
        est.n_features_in_ = u.input_size * u.input_size
        return est

