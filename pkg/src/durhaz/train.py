"""Estimators for the four duration systems.

``PhoneDurationModel`` regresses z-scored phone durations (feedforward or
with a recurrent layer over the phone sequence). ``FrameHazardModel``
regresses per-frame phone-final indicators, optionally with the encoded
within-phone frame counter as an extra input; its outputs are transition
probabilities.

Both follow the scikit-learn estimator protocol: constructor arguments are
hyperparameters, ``fit`` learns from a list of :class:`~durhaz.core.Utterance`
and fitted state lives in trailing-underscore attributes.
"""
from __future__ import annotations

import enum
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import (
    DEFAULT_CAP,
    DivergenceError,
    InvalidArgumentError,
    InvalidInputError,
    InvalidModelError,
    Utterance,
)
from .datasets import (
    DEFAULT_COUNTER_SCALE,
    FeatureNormaliser,
    encode_counter,
    expand_to_frames,
    split_corpus,
    stack_features,
)
from .nnet import (
    DenseLinear,
    DenseSigmoid,
    DenseTanh,
    Network,
    Recurrent,
    backward_sequence,
    forward_sequence,
    init_network,
    sgd_step,
)

log = logging.getLogger(__name__)

MODEL_MAGIC = b"DHZMODEL"
MODEL_VERSION = 1


class SystemKind(str, enum.Enum):
    PHONE_DNN = "phone-dnn"
    PHONE_LSTM = "phone-lstm"
    FRAME_LSTM_I = "frame-lstm-i"
    FRAME_LSTM_E = "frame-lstm-e"

    @property
    def is_phone_level(self) -> bool:
        return self in (SystemKind.PHONE_DNN, SystemKind.PHONE_LSTM)

    @property
    def is_recurrent(self) -> bool:
        return self is not SystemKind.PHONE_DNN

    @property
    def uses_counter(self) -> bool:
        return self is SystemKind.FRAME_LSTM_E


PHONE_KINDS = (SystemKind.PHONE_DNN, SystemKind.PHONE_LSTM)
FRAME_KINDS = (SystemKind.FRAME_LSTM_I, SystemKind.FRAME_LSTM_E)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    max_epochs: int = 25
    patience: int = 5
    seed: int = 0
    init_scale: float = 0.1
    clip_norm: float | None = None
    dev_fraction: float = 0.05

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidArgumentError("learning_rate must be positive")
        if self.max_epochs < 1 or self.patience < 1:
            raise InvalidArgumentError("max_epochs and patience must be >= 1")
        if not self.init_scale > 0:
            raise InvalidArgumentError("init_scale must be positive")


class StopDecision(NamedTuple):
    action: str        # "continue" or "stop"
    best_epoch: int    # 1-based


def early_stop_controller(dev_losses: Sequence[float], patience: int) -> StopDecision:
    """Stop once ``patience`` epochs have passed without a new best dev loss.

    Epochs are 1-based; ties keep the earliest epoch as best.
    """
    if len(dev_losses) == 0:
        raise InvalidArgumentError("history is empty")
    best = int(np.argmin(dev_losses)) + 1
    action = "stop" if len(dev_losses) - best >= patience else "continue"
    return StopDecision(action, best)


def check_utterances(X, min_count: int = 1, name: str = "X") -> list[Utterance]:
    """Validate a corpus argument: a non-empty list of utterances sharing
    one feature width."""
    if isinstance(X, Utterance):
        X = [X]
    X = list(X)
    if len(X) < min_count:
        raise InvalidInputError(f"{name} needs at least {min_count} utterance(s), got {len(X)}")
    widths = set()
    for u in X:
        if not isinstance(u, Utterance):
            raise InvalidInputError(f"{name} must contain Utterance objects, got {type(u).__name__}")
        if len(u.phones) == 0:
            raise InvalidInputError(f"utterance {u.id!r} has no phones")
        if np.any(u.durations < 1):
            raise InvalidInputError(f"utterance {u.id!r} has a duration < 1")
        widths.add(u.features.shape[1])
    if len(widths) != 1:
        raise InvalidInputError(f"{name} mixes feature widths {sorted(widths)}")
    return X


class _SequenceRegressor(BaseEstimator):
    """Shared training loop: one SGD update per utterance, early stopping on
    the dev loss, best-epoch weights restored at the end."""

    _kinds: tuple = ()
    _default_kind: SystemKind

    def _system_kind(self) -> SystemKind:
        try:
            kind = SystemKind(self.kind)
        except ValueError:
            raise InvalidArgumentError(f"unknown system kind {self.kind!r}") from None
        if kind not in self._kinds:
            raise InvalidArgumentError(
                f"{type(self).__name__} cannot train a {kind.value} system")
        return kind

    def _layer_specs(self, kind):
        widths = self.hidden_widths
        if widths is None:
            widths = (64, 64, 64) if kind is SystemKind.PHONE_DNN else (64, 64)
        specs = [DenseTanh(w) for w in widths]
        if kind.is_recurrent:
            specs.append(Recurrent(self.recurrent_width))
        specs.append(DenseSigmoid(1) if kind in FRAME_KINDS else DenseLinear(1))
        return specs

    def _config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.max_epochs, self.patience, self.seed,
                           self.init_scale, self.clip_norm, self.dev_fraction)

    # subclasses turn normalised utterances into (id, inputs, targets) triples
    def _sequences(self, utts):
        raise NotImplementedError

    def _prepare_targets(self, train):
        pass

    def fit(self, X, y=None, X_dev=None):
        """Train on a list of utterances.

        Parameters
        ----------
        X : list of Utterance
            Training utterances with raw (unnormalised) features.
        y : ignored
            Reference durations are read from the utterances.
        X_dev : list of Utterance, optional
            Development set for early stopping. If omitted, a
            ``dev_fraction`` share of ``X`` is held out.
        """
        kind = self._system_kind()
        cfg = self._config()
        X = check_utterances(X)
        if X_dev is None:
            train, dev = split_corpus(X, cfg.dev_fraction, cfg.seed)
        else:
            train, dev = X, check_utterances(X_dev, name="X_dev")
        self.kind_ = kind
        self.normaliser_ = FeatureNormaliser().fit(stack_features(train))
        self.n_features_in_ = self.normaliser_.n_features_in_
        self._prepare_targets(train)
        train_seqs = self._sequences(train)
        dev_seqs = self._sequences(dev)
        n_in = train_seqs[0][1].shape[1]
        net = init_network(self._layer_specs(kind), n_in, cfg.seed, cfg.init_scale)
        n_train_targets = sum(len(t) for _, _, t in train_seqs)

        history, best_net, best_dev = [], None, np.inf
        for epoch in range(1, cfg.max_epochs + 1):
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_seqs))
            total = 0.0
            for k in order:
                uid, inputs, targets = train_seqs[k]
                grads, loss = backward_sequence(net, inputs, targets)
                if not np.isfinite(loss):
                    raise DivergenceError(
                        f"non-finite training loss at epoch {epoch}, utterance {uid!r}",
                        epoch, uid)
                sgd_step(net, grads, cfg.learning_rate, cfg.clip_norm)
                total += loss
            dev_loss = _mean_loss(net, dev_seqs)
            if not np.isfinite(dev_loss):
                raise DivergenceError(f"non-finite dev loss at epoch {epoch}", epoch)
            history.append((epoch, total / n_train_targets, dev_loss))
            log.info("%s epoch %d train %.6f dev %.6f", kind.value, epoch, history[-1][1], dev_loss)
            if dev_loss < best_dev:
                best_dev, best_net = dev_loss, net.copy()
            decision = early_stop_controller([h[2] for h in history], cfg.patience)
            if decision.action == "stop":
                break
        self.network_ = best_net
        self.network_.reset_state()
        self.history_ = history
        self.best_epoch_ = early_stop_controller([h[2] for h in history], cfg.patience).best_epoch
        return self

    def _normalised(self, features) -> np.ndarray:
        check_is_fitted(self, "network_")
        if isinstance(features, Utterance):
            features = features.features
        F = np.asarray(features, dtype=float)
        if F.ndim != 2 or F.shape[1] != self.n_features_in_:
            raise InvalidInputError(
                f"expected phone features of shape (P, {self.n_features_in_}), got {F.shape}")
        return self.normaliser_.transform(F)


def _mean_loss(net: Network, seqs) -> float:
    total, n = 0.0, 0
    for _, inputs, targets in seqs:
        err = forward_sequence(net, inputs) - targets
        total += float(np.dot(err, err))
        n += len(targets)
    return total / n


class PhoneDurationModel(_SequenceRegressor):
    """Phone-level MSE duration regressor (mean-predicting baseline).

    ``kind="phone-dnn"`` is a tanh feedforward stack; ``kind="phone-lstm"``
    adds a unidirectional LSTM layer run over the phone sequence.
    """

    _kinds = PHONE_KINDS

    def __init__(self, kind="phone-dnn", hidden_widths=None, recurrent_width=32,
                 learning_rate=0.01, max_epochs=25, patience=5, seed=0, init_scale=0.1,
                 clip_norm=None, dev_fraction=0.05):
        self.kind = kind
        self.hidden_widths = hidden_widths
        self.recurrent_width = recurrent_width
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed
        self.init_scale = init_scale
        self.clip_norm = clip_norm
        self.dev_fraction = dev_fraction

    def _prepare_targets(self, train):
        d = np.concatenate([u.durations for u in train]).astype(float)
        self.duration_mean_ = float(d.mean())
        std = float(d.std())
        self.duration_std_ = std if std > 0 else 1.0

    def _sequences(self, utts):
        out = []
        for u in utts:
            z = (u.durations - self.duration_mean_) / self.duration_std_
            out.append((u.id, self.normaliser_.transform(u.features), z))
        return out

    def predict_raw(self, features) -> np.ndarray:
        """Denormalised real-valued duration predictions for one utterance."""
        z = forward_sequence(self.network_, self._normalised(features))
        return z * self.duration_std_ + self.duration_mean_

    def predict(self, X) -> list[np.ndarray]:
        """Integer durations per utterance."""
        from .generate import generate_phone_durations
        return [np.asarray(generate_phone_durations(self, u)) for u in check_utterances(X)]


class FrameHazardModel(_SequenceRegressor):
    """Frame-level transition-probability model.

    ``kind="frame-lstm-i"`` sees only the current phone's features and must
    track elapsed time in its recurrent state; ``kind="frame-lstm-e"`` also
    receives the within-phone frame counter, encoded as
    ``n / counter_scale`` clamped to the feature range.

    ``quantile`` and ``cap`` control :meth:`predict`, which generates
    durations with the sequential quantile rule.
    """

    _kinds = FRAME_KINDS

    def __init__(self, kind="frame-lstm-e", hidden_widths=None, recurrent_width=32,
                 learning_rate=0.01, max_epochs=25, patience=5, seed=0, init_scale=0.1,
                 clip_norm=None, dev_fraction=0.05, counter_scale=DEFAULT_COUNTER_SCALE,
                 quantile=0.5, cap=DEFAULT_CAP):
        self.kind = kind
        self.hidden_widths = hidden_widths
        self.recurrent_width = recurrent_width
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed
        self.init_scale = init_scale
        self.clip_norm = clip_norm
        self.dev_fraction = dev_fraction
        self.counter_scale = counter_scale
        self.quantile = quantile
        self.cap = cap

    @property
    def augmented(self) -> bool:
        return SystemKind(self.kind).uses_counter

    def _sequences(self, utts):
        out = []
        for u in utts:
            fd = expand_to_frames(u.with_features(self.normaliser_.transform(u.features)),
                                  self.augmented, self.counter_scale)
            out.append((u.id, fd.inputs, fd.targets))
        return out

    def frame_row(self, phone_features: np.ndarray, counter: int) -> np.ndarray:
        """Network input for one frame, from a normalised phone vector."""
        if self.augmented:
            return np.append(phone_features, encode_counter(counter, self.counter_scale))
        return phone_features

    def predict_hazards(self, u: Utterance) -> np.ndarray:
        """Per-frame transition probabilities along the reference alignment."""
        fd = expand_to_frames(u.with_features(self._normalised(u)), self.augmented,
                              self.counter_scale)
        return forward_sequence(self.network_, fd.inputs)

    def predict(self, X) -> list[np.ndarray]:
        from .generate import generate_frame_durations
        return [np.asarray(generate_frame_durations(self, u, self.quantile, self.cap).durations)
                for u in check_utterances(X)]


def make_model(kind, **params) -> _SequenceRegressor:
    kind = SystemKind(kind)
    cls = PhoneDurationModel if kind.is_phone_level else FrameHazardModel
    return cls(kind=kind.value, **params)


def _fit_with_config(kind, corpus, config: TrainConfig, X_dev=None, **arch):
    model = make_model(kind, learning_rate=config.learning_rate, max_epochs=config.max_epochs,
                       patience=config.patience, seed=config.seed, init_scale=config.init_scale,
                       clip_norm=config.clip_norm, dev_fraction=config.dev_fraction, **arch)
    return model.fit(corpus, X_dev=X_dev)


def train_phone_system(kind, corpus, config: TrainConfig = TrainConfig(), X_dev=None, **arch):
    if SystemKind(kind) not in PHONE_KINDS:
        raise InvalidArgumentError(f"{kind} is not a phone-level system")
    return _fit_with_config(kind, corpus, config, X_dev, **arch)


def train_frame_system(kind, corpus, config: TrainConfig = TrainConfig(), X_dev=None, **arch):
    if SystemKind(kind) not in FRAME_KINDS:
        raise InvalidArgumentError(f"{kind} is not a frame-level system")
    return _fit_with_config(kind, corpus, config, X_dev, **arch)


# --------------------------------------------------------------------------
# model files
# --------------------------------------------------------------------------

def model_to_bytes(model: _SequenceRegressor) -> bytes:
    """Versioned container: magic, version, JSON metadata, network blob.

    Layout: ``b"DHZMODEL"``, uint32 version, uint32 metadata length,
    UTF-8 JSON (sorted keys), then the network in the nnet binary format.
    """
    check_is_fitted(model, "network_")
    params = model.get_params()
    if params.get("hidden_widths") is not None:
        params["hidden_widths"] = list(params["hidden_widths"])
    meta = {
        "class": type(model).__name__,
        "params": params,
        "normaliser": model.normaliser_.to_dict(),
        "history": [list(h) for h in model.history_],
        "best_epoch": model.best_epoch_,
    }
    if isinstance(model, PhoneDurationModel):
        meta["duration_mean"] = model.duration_mean_
        meta["duration_std"] = model.duration_std_
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    return b"".join([MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, len(blob)), blob,
                     model.network_.to_bytes()])


def model_from_bytes(data: bytes) -> _SequenceRegressor:
    if data[:8] != MODEL_MAGIC:
        raise InvalidModelError("not a durhaz model file (bad magic)")
    version, n = struct.unpack_from("<II", data, 8)
    if version != MODEL_VERSION:
        raise InvalidModelError(f"unsupported model version {version}")
    meta = json.loads(data[16:16 + n].decode("utf-8"))
    classes = {"PhoneDurationModel": PhoneDurationModel, "FrameHazardModel": FrameHazardModel}
    if meta.get("class") not in classes:
        raise InvalidModelError(f"unknown model class {meta.get('class')!r}")
    cls = classes[meta["class"]]
    params = meta["params"]
    if params.get("hidden_widths") is not None:
        params["hidden_widths"] = tuple(params["hidden_widths"])
    model = cls(**params)
    model.kind_ = SystemKind(model.kind)
    model.normaliser_ = FeatureNormaliser.from_dict(meta["normaliser"])
    model.n_features_in_ = model.normaliser_.n_features_in_
    model.history_ = [tuple(h) for h in meta["history"]]
    model.best_epoch_ = meta["best_epoch"]
    if cls is PhoneDurationModel:
        model.duration_mean_ = meta["duration_mean"]
        model.duration_std_ = meta["duration_std"]
    model.network_ = Network.from_bytes(data[16 + n:])
    return model


def save_model(model, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> _SequenceRegressor:
    return model_from_bytes(Path(path).read_bytes())


def write_learning_curve(model, path) -> None:
    lines = ["epoch,train_loss,dev_loss"]
    lines += [f"{e},{tr!r},{dv!r}" for e, tr, dv in model.history_]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
