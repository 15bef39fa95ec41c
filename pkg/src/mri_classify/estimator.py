"""scikit-learn compatible estimator wrapping the full pipeline.

``Vgg19TransferClassifier`` exposes the network through the standard
fit/predict/predict_proba surface so it plugs into sklearn tooling
(clone, cross-validation, pipelines). Inputs are [n, 224, 224, 3] float
images scaled to [0, 1]; labels are 0 (healthy) and 1 (tumor).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .archive import load_weights
from .model import build_model
from .train import TrainConfig, fit
from .validation import check_binary_labels, check_fitted, check_image_batch


class Vgg19TransferClassifier(BaseEstimator, ClassifierMixin):
    """Binary image classifier on a VGG-19 backbone with a dropout/dense head.

    Parameters
    ----------
    epochs : int, default=10
        Training epochs.
    batch_size : int, default=32
        Samples per gradient step.
    learning_rate : float, default=1e-4
        Optimizer step size.
    optimizer : {"adam", "sgd"}, default="adam"
        Update rule.
    width : float, default=1.0
        Channel/feature multiplier. 1.0 is the full-size network; small
        values give a desk-scale variant with the same structure.
    base_weights : str or None, default=None
        Path to a weight archive loaded into the backbone (``base_only``
        policy) before training, the transfer-learning path.
    freeze : {"none", "conv", "base"} or iterable of layer names, default="auto"
        Layers excluded from training. "auto" freezes the convolutional
        stack when ``base_weights`` is given and nothing otherwise.
    threshold : float, default=0.5
        Probability cutoff for the positive (tumor) class.
    seed : int, default=0
        Root seed for initialization, shuffling, and dropout.

    Attributes
    ----------
    model_ : ModelGraph
        The trained network.
    curves_ : TrainingCurves
        Per-epoch train/validation loss and accuracy.
    classes_ : ndarray of shape (2,)
        Always [0, 1].
    """

    def __init__(self, epochs=10, batch_size=32, learning_rate=1e-4, optimizer="adam",
                 width=1.0, base_weights=None, freeze="auto", threshold=0.5, seed=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.width = width
        self.base_weights = base_weights
        self.freeze = freeze
        self.threshold = threshold
        self.seed = seed

    def _frozen_layers(self, model) -> tuple[str, ...]:
        return tuple(resolve_freeze(self.freeze, model, bool(self.base_weights)))

    def fit(self, X, y, validation=None):
        """Train on images X and 0/1 labels y.

        ``validation`` is an optional (X_val, y_val) pair; by default the
        training data itself is used for the validation curves.
        """
        X = check_image_batch(X)
        y = check_binary_labels(y, X.shape[0])
        model = build_model(seed=self.seed, width=self.width)
        if self.base_weights:
            load_weights(model, self.base_weights, policy="base_only")
        config = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            optimizer=self.optimizer,
            seed=self.seed,
            freeze_policy=self._frozen_layers(model),
        )
        train_data = list(zip(X, y.tolist()))
        if validation is None:
            val_data = train_data
        else:
            Xv = check_image_batch(validation[0])
            yv = np.asarray(validation[1]).astype(np.int64)
            val_data = list(zip(Xv, yv.tolist()))
        self.curves_ = fit(model, train_data, val_data, config)
        self.model_ = model
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X):
        """Class probabilities, shape [n, 2] with columns (healthy, tumor)."""
        check_fitted(self)
        X = check_image_batch(X)
        p = np.array([self.model_.predict_proba(img) for img in X])
        return np.column_stack([1.0 - p, p])

    def decision_function(self, X):
        return self.predict_proba(X)[:, 1]

    def predict(self, X):
        """0/1 labels at the configured probability threshold."""
        p = self.predict_proba(X)[:, 1]
        return self.classes_[(p >= self.threshold).astype(int)]


def resolve_freeze(freeze, model, has_base_weights: bool) -> list[str]:
    """Turn a freeze policy name or explicit layer list into layer names."""
    if freeze is None:
        return []
    if isinstance(freeze, str):
        if freeze == "auto":
            freeze = "conv" if has_base_weights else "none"
        if freeze == "none":
            return []
        if freeze == "conv":
            return [n for n in model.parameterized_layers() if n.startswith("conv")]
        if freeze == "base":
            return model.base_layer_names()
        return [name.strip() for name in freeze.split(",") if name.strip()]
    return list(freeze)
