"""Scikit-learn style wrapper around the transceiver.

`SemanticTransceiver` follows the estimator protocol: constructor only
stores hyperparameters, `fit(X, y)` trains the two-stage schedule on
complex images, `predict` returns tag labels, `transform` returns
reconstructed images, and `get_params`/`set_params`/`clone` work as
usual. X is (N, A, A) complex (or real, lifted via the configured pixel
encoding when real-valued in [0, 1]).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import channel as ch
from . import data as D
from . import tensor as T
from . import training as tr
from .layers import AirOdeNetwork, NetworkConfig

__all__ = ["SemanticTransceiver"]


def _validate_images(X, image_size=None):
    X = np.asarray(X)
    if X.ndim != 3 or X.shape[1] != X.shape[2]:
        raise ValueError(f"X must be (n_samples, A, A), got shape {X.shape}")
    if image_size is not None and X.shape[1] != image_size:
        raise ValueError(f"X has side {X.shape[1]}, estimator fitted with {image_size}")
    if not np.issubdtype(X.dtype, np.complexfloating):
        X = D.encode_pixels(X.astype(np.float64))
    X = X.astype(np.complex128)
    if not (np.all(np.isfinite(X.real)) and np.all(np.isfinite(X.imag))):
        raise ValueError("X contains NaN or Inf")
    return X


class SemanticTransceiver(BaseEstimator):
    """Dual-task semantic transceiver with a codebook-quantized ODE block.

    Parameters mirror the experiment config; `random_state` seeds weight
    init, the data order, and the channel draw.
    """

    def __init__(self, image_size=14, hidden_channels=8, feature_channels=1,
                 pool_stages=1, kernel_size=3, st_channels=4,
                 stage1_epochs=40, stage2_epochs=20, batch_size=32,
                 learning_rate=3e-3, alpha=1.0, beta=1.0,
                 geometry_seed=0, channel_seed=1, codebook_size=None,
                 random_state=0):
        self.image_size = image_size
        self.hidden_channels = hidden_channels
        self.feature_channels = feature_channels
        self.pool_stages = pool_stages
        self.kernel_size = kernel_size
        self.st_channels = st_channels
        self.stage1_epochs = stage1_epochs
        self.stage2_epochs = stage2_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.alpha = alpha
        self.beta = beta
        self.geometry_seed = geometry_seed
        self.channel_seed = channel_seed
        self.codebook_size = codebook_size
        self.random_state = random_state

    def fit(self, X, y):
        X = _validate_images(X)
        y = np.asarray(y)
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} samples, y has {y.shape[0]}")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        q = len(self.classes_)
        if q < 2:
            raise ValueError("need at least two classes")
        onehot = D.to_onehot(y_idx, q)

        geo = ch.SystemGeometry.build(ris_per_group=self.kernel_size,
                                      seed=self.geometry_seed)
        real = ch.sample_channel(geo, ch.ChannelModelParams(), self.channel_seed)
        bundle = ch.build_codebooks(real, restrict=self.codebook_size)
        cfg = NetworkConfig(
            image_size=X.shape[1], hidden_channels=self.hidden_channels,
            feature_channels=self.feature_channels, pool_stages=self.pool_stages,
            kernel_size=self.kernel_size, num_classes=q,
            st_channels=self.st_channels, init_seed=self.random_state,
        )
        net = AirOdeNetwork(cfg, codebooks=bundle.arrays())

        class _Split:
            train_images, train_labels = X, onehot
            val_images, val_labels = X, onehot

        sched = tr.TrainSchedule(
            stage1_epochs=self.stage1_epochs, stage2_epochs=self.stage2_epochs,
            batch_size=self.batch_size, learning_rate=self.learning_rate,
            seed=self.random_state, val_every=max(self.stage1_epochs, 1),
        )
        result = tr.train_two_stage(net, _Split(), sched,
                                    tr.LossConfig(self.alpha, self.beta))
        self.network_ = net
        self.channel_ = real
        self.codebooks_ = bundle
        self.train_result_ = result
        self.n_features_in_ = X.shape[1] * X.shape[2]
        return self

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise RuntimeError("estimator is not fitted; call fit first")

    def _forward(self, X):
        self._check_fitted()
        X = _validate_images(X, self.network_.config.image_size)
        outs_i, outs_t = [], []
        with T.no_grad():
            for lo in range(0, X.shape[0], 256):
                img, tags = self.network_.forward(T.tensor(X[lo : lo + 256]))
                outs_i.append(img.data)
                outs_t.append(tags.data)
        return np.concatenate(outs_i), np.concatenate(outs_t)

    def predict(self, X):
        """Semantic tag predictions (original label values)."""
        from . import metrics as M

        _, tags = self._forward(X)
        return self.classes_[M.predict_tags(tags)]

    def transform(self, X):
        """Reconstructed complex images after the round trip."""
        imgs, _ = self._forward(X)
        return imgs

    def score(self, X, y):
        return float(np.mean(self.predict(X) == np.asarray(y)))
