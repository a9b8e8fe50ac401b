"""scikit-learn style wrapper around the hybrid flow.

``fit`` takes a reference ensemble as an ``(n_samples, L*L)`` array. Once
fitted, ``transform`` maps fields to latent vectors, ``inverse_transform``
maps latents to fields, ``score_samples`` returns model log-densities and
``sample`` draws new configurations.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .lattice import ActionParams, Ensemble
from .training import TrainConfig, fit_flow


def _check_square(n_features):
    L = math.isqrt(n_features)
    if L * L != n_features:
        raise ValueError(f"{n_features} features do not form a square lattice")
    return L


class FlowSampler(TransformerMixin, BaseEstimator):
    """Normalizing-flow sampler for lattice phi^4 configurations.

    Parameters
    ----------
    quantum : bool
        Attach the 5-qubit circuit layer and its loss term (hybrid model).
        ``False`` gives the classical baseline.
    n_layers : int or None
        Number of coupling layers; ``None`` picks 2 for the hybrid model and
        16 for the baseline.
    objective : {"reverse_kl", "sample_nll"}
        First loss term. ``sample_nll`` is the literal negative log-likelihood
        of the model's own samples.
    """

    def __init__(
        self,
        quantum=True,
        n_layers=None,
        hidden_width=36,
        epochs=20,
        batch_size=64,
        learning_rate=1e-3,
        lambda_q=100.0,
        lambda_var=1.0,
        lambda_S=0.01,
        objective="reverse_kl",
        mass_squared=ActionParams.mass_squared,
        quartic=ActionParams.quartic,
        steps_per_epoch=None,
        random_state=0,
    ):
        self.quantum = quantum
        self.n_layers = n_layers
        self.hidden_width = hidden_width
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lambda_q = lambda_q
        self.lambda_var = lambda_var
        self.lambda_S = lambda_S
        self.objective = objective
        self.mass_squared = mass_squared
        self.quartic = quartic
        self.steps_per_epoch = steps_per_epoch
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.learning_rate,
            lambda_q=self.lambda_q,
            lambda_var=self.lambda_var,
            lambda_S=self.lambda_S,
            seed=int(self.random_state or 0),
            model_kind="hybrid" if self.quantum else "classical_baseline",
            objective_kind=self.objective,
            hidden_width=self.hidden_width,
            n_layers=self.n_layers,
            steps_per_epoch=self.steps_per_epoch,
        )

    @property
    def action_params(self) -> ActionParams:
        return ActionParams(self.mass_squared, self.quartic)

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.side_length_ = _check_square(X.shape[1])
        self.n_features_in_ = X.shape[1]
        result = fit_flow(Ensemble(self.side_length_, X), self._train_config(), self.action_params)
        self.model_ = result.model
        self.reference_stats_ = result.stats
        self.history_ = result.history
        return self

    def _check_input(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def transform(self, X):
        X = self._check_input(X)
        return self.model_.inverse(X)[0]

    def inverse_transform(self, Z):
        Z = self._check_input(Z)
        return self.model_.forward(Z)[0]

    def score_samples(self, X):
        X = self._check_input(X)
        return self.model_.log_prob(X)

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))

    def sample(self, n_samples=500, random_state=None):
        check_is_fitted(self, "model_")
        seed = self.random_state if random_state is None else random_state
        rng = np.random.Generator(np.random.Philox(int(seed or 0)))
        z = rng.standard_normal((int(n_samples), self.n_features_in_))
        return self.model_.forward(z)[0]

    @property
    def n_params_(self) -> int:
        check_is_fitted(self, "model_")
        return self.model_.n_params
