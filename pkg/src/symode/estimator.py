"""Scikit-learn style estimator wrapping the dual-decoder model.

``SymbolicODERegressor.fit(X, y)`` trains on trajectories ``X`` (a list of
:class:`~symode.integrate.Trajectory` or ``(times, states)`` pairs) with
symbolic targets ``y`` (a list of :class:`~symode.expressions.OdeSystem` or
prefix/infix text).  Derivative supervision for the auxiliary decoder is
computed from ``y`` along each trajectory.  ``predict`` returns one
:class:`OdeSystem` per input, or ``None`` where generation fails to decode.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .datasets import compute_derivatives
from .expressions import OdeSystem, parse_expression
from .integrate import IvpConfig, Trajectory, solve_ivp
from .metrics import p_r2_above, r_squared
from .model import (
    DualDecoderModel,
    EncodedSample,
    TrainConfig,
    Trainer,
    decode_batch,
    load_checkpoint,
    preset_config,
    save_checkpoint,
)
from .tokenization import DecodingError, Vocabulary

__all__ = ["SymbolicODERegressor"]


def _as_trajectory(item) -> Trajectory:
    if isinstance(item, Trajectory):
        return item
    times, states = item
    return Trajectory(times=np.asarray(times, float), states=np.atleast_2d(np.asarray(states, float).T).T)


def _as_system(item) -> OdeSystem:
    if isinstance(item, OdeSystem):
        return item
    if isinstance(item, str):
        parts = [p for p in item.split("|") if p.strip()]
        return OdeSystem(tuple(parse_expression(p) for p in parts))
    return OdeSystem(tuple(parse_expression(p) for p in item))


class SymbolicODERegressor(BaseEstimator):
    """Recover symbolic ODE systems from trajectories.

    Parameters mirror the model/training configs; anything left ``None``
    falls back to the chosen preset.  The sklearn contract is honored:
    ``get_params``/``set_params`` round-trip the constructor arguments and
    fitted state lives in trailing-underscore attributes.
    """

    def __init__(
        self,
        preset: str = "toy",
        width: int | None = None,
        heads: int | None = None,
        enc_layers: int | None = None,
        dec_layers: int | None = None,
        d_max: int = 4,
        mantissa_digits: int = 4,
        exponent_range: int = 100,
        steps: int = 2000,
        batch_size: int = 32,
        peak_lr: float = 2e-4,
        floor_lr: float = 1e-7,
        warmup_steps: int | None = None,
        cosine_steps: int | None = None,
        lambda_rec: float = 1.0,
        lambda_der: float = 1.0,
        grad_clip: float = 1.0,
        max_src_steps: int = 512,
        max_ode_len: int = 512,
        max_der_len: int = 2048,
        random_state: int = 0,
    ):
        self.preset = preset
        self.width = width
        self.heads = heads
        self.enc_layers = enc_layers
        self.dec_layers = dec_layers
        self.d_max = d_max
        self.mantissa_digits = mantissa_digits
        self.exponent_range = exponent_range
        self.steps = steps
        self.batch_size = batch_size
        self.peak_lr = peak_lr
        self.floor_lr = floor_lr
        self.warmup_steps = warmup_steps
        self.cosine_steps = cosine_steps
        self.lambda_rec = lambda_rec
        self.lambda_der = lambda_der
        self.grad_clip = grad_clip
        self.max_src_steps = max_src_steps
        self.max_ode_len = max_ode_len
        self.max_der_len = max_der_len
        self.random_state = random_state

    # -- config assembly -----------------------------------------------------

    def _model_config(self):
        overrides = {
            "d_max": self.d_max,
            "max_src_steps": self.max_src_steps,
            "max_ode_len": self.max_ode_len,
            "max_der_len": self.max_der_len,
        }
        for name in ("width", "heads", "enc_layers", "dec_layers"):
            value = getattr(self, name)
            if value is not None:
                overrides[name] = value
        return preset_config(self.preset, **overrides)

    def _train_config(self):
        warmup = self.warmup_steps if self.warmup_steps is not None else max(1, self.steps // 10)
        cosine = self.cosine_steps if self.cosine_steps is not None else max(1, self.steps - warmup)
        return TrainConfig(
            peak_lr=self.peak_lr,
            floor_lr=self.floor_lr,
            warmup_steps=warmup,
            cosine_steps=cosine,
            total_steps=self.steps,
            batch_size=self.batch_size,
            lambda_rec=self.lambda_rec,
            lambda_der=self.lambda_der,
            grad_clip=self.grad_clip,
            seed=self.random_state,
        )

    # -- sklearn surface -------------------------------------------------------

    def fit(self, X, y):
        """Train on trajectories ``X`` and symbolic systems ``y``."""
        if len(X) != len(y):
            raise ValueError(f"X has {len(X)} trajectories but y has {len(y)} systems")
        if len(X) == 0:
            raise ValueError("need at least one training sample")
        vocab = Vocabulary(
            d_max=self.d_max,
            mantissa_digits=self.mantissa_digits,
            exponent_range=self.exponent_range,
        )
        samples = []
        for traj, target in zip(X, y):
            traj = _as_trajectory(traj)
            system = _as_system(target)
            derivs = compute_derivatives(system, traj)
            grid = vocab.encode_trajectory(traj.times, traj.states, max_steps=self.max_src_steps)
            ode = vocab.encode_system(system, max_length=self.max_ode_len)
            der = vocab.encode_derivative_sequence(derivs, max_length=self.max_der_len)
            samples.append(
                EncodedSample(
                    dimension=grid.dimension,
                    src=grid.ids,
                    ode=np.asarray(ode.ids, dtype=np.int64),
                    der=np.asarray(der.ids, dtype=np.int64),
                )
            )
        model = DualDecoderModel(self._model_config(), len(vocab))
        model.init_parameters(self.random_state)
        trainer = Trainer(model, self._train_config(), vocab.pad_id)
        history = trainer.train(samples, self.steps)
        model.eval()
        self.vocab_ = vocab
        self.model_ = model
        self.history_ = history
        self.n_train_samples_ = len(samples)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this SymbolicODERegressor is not fitted; call fit first")

    def predict(self, X, mode: str = "greedy", beam_size: int = 4):
        """Decode one system per trajectory; ``None`` where decoding fails."""
        self._check_fitted()
        out = []
        for item in X:
            traj = _as_trajectory(item)
            try:
                encoding = self.vocab_.encode_trajectory(traj.times, traj.states)
                if mode == "greedy":
                    result = decode_batch(self.model_, [encoding], self.vocab_)[0]
                else:
                    from .model import decode

                    result = decode(self.model_, encoding, self.vocab_, mode=mode, beam_size=beam_size)
                out.append(self.vocab_.decode_system(result.sequence))
            except (DecodingError, ValueError):
                out.append(None)
        return out

    def score(self, X, y=None) -> float:
        """P(R^2 > 0.9) of reconstructing the given trajectories.

        Each prediction is integrated from the trajectory's first state over
        its own time grid and compared to the trajectory; failures count in
        the denominator.  ``y`` is accepted for API compatibility and unused.
        """
        self._check_fitted()
        scores = []
        for item, predicted in zip(X, self.predict(X)):
            traj = _as_trajectory(item)
            scores.append(reconstruction_r2(predicted, traj))
        return p_r2_above(scores)

    # -- persistence -----------------------------------------------------------

    def save(self, path) -> None:
        self._check_fitted()
        save_checkpoint(path, self.model_, self.vocab_, step=len(self.history_))

    def load(self, path) -> "SymbolicODERegressor":
        """Attach a trained checkpoint to this (config-compatible) estimator."""
        ckpt = load_checkpoint(path)
        self.model_ = ckpt.model
        self.vocab_ = ckpt.vocab
        self.history_ = []
        return self


def reconstruction_r2(predicted: OdeSystem | None, traj: Trajectory) -> float:
    """R^2 of integrating ``predicted`` from the trajectory's first state."""
    from .metrics import R2_FAILURE

    if predicted is None or predicted.dimension != traj.dimension:
        return R2_FAILURE
    sol = solve_ivp(predicted, traj.states[0], traj.times, IvpConfig())
    if not isinstance(sol, Trajectory):
        return R2_FAILURE
    return r_squared(traj, sol)
