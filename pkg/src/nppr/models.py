"""Frozen target classifiers and the heads that emit mixture parameters.

The classifier is a plain affine+relu stack trained on synthetic data and
frozen before any generator training; gradients still flow through it to the
perturbed inputs. Heads map nothing / labels / features / both to mixture
parameters, mirroring the four dependency structures:

  independent: free global parameters broadcast over the batch
  label:       label embedding drives mixture weights; means and Cholesky
               factors stay global
  input:       shared trunk (affine -> batch norm -> relu) feeding three
               separate output layers for weights, means and factors
  joint:       mixture weights from the label embedding, means/factors from
               the feature trunk
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tensor as T
from .optim import Adam
from .rng import CLASSIFIER, GENERATOR_INIT, substream
from .tensor import Tensor

log = logging.getLogger(__name__)

CHOL_DIAG_FLOOR = 1e-6
# softplus(x) = 0.5 at this x; used so factor diagonals start at 0.5.
_INV_SOFTPLUS_HALF = float(np.log(np.expm1(0.5)))


class DependencyMode(str, Enum):
    INDEPENDENT = "independent"
    LABEL = "label"
    INPUT = "input"
    JOINT = "joint"

    @property
    def conditions_on_features(self) -> bool:
        return self in (DependencyMode.INPUT, DependencyMode.JOINT)

    @property
    def conditions_on_labels(self) -> bool:
        return self in (DependencyMode.LABEL, DependencyMode.JOINT)


@dataclass(frozen=True)
class FeatureHook:
    """Where features are read: index of the penultimate activation."""
    layer_index: int
    feature_dim: int


@dataclass
class ClassifierConfig:
    input_dim: int
    num_classes: int
    hidden: tuple = (32,)
    input_kind: str = "flat"  # "flat" or "image"; both consume flattened rows
    image_shape: tuple | None = None

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("classifier needs at least 2 classes")
        if not self.hidden:
            raise ValueError("classifier needs at least one hidden layer for features")


class Classifier:
    """Affine+relu stack ending in C logits; freezable."""

    def __init__(self, cfg: ClassifierConfig, seed: int = 0):
        self.cfg = cfg
        self.frozen = False
        self.train_accuracy: float | None = None
        rng = substream(seed, CLASSIFIER, 0)
        dims = [cfg.input_dim, *cfg.hidden, cfg.num_classes]
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))

    @property
    def num_classes(self) -> int:
        return self.cfg.num_classes

    @property
    def feature_hook(self) -> FeatureHook:
        return FeatureHook(layer_index=len(self.cfg.hidden) - 1,
                           feature_dim=self.cfg.hidden[-1])

    def params(self) -> list[Tensor]:
        return [*self.weights, *self.biases]

    def _check_input(self, x: Tensor) -> None:
        if x.ndim != 2 or x.shape[1] != self.cfg.input_dim:
            raise ValueError(
                f"classifier: expected (N, {self.cfg.input_dim}) input, got {x.shape}")

    def logits(self, x: Tensor) -> Tensor:
        self._check_input(x)
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = T.affine(h, w, b)
            if i < len(self.weights) - 1:
                h = T.relu(h)
        return h

    def features(self, x: Tensor) -> Tensor:
        """Penultimate activations (post-relu of the last hidden layer)."""
        self._check_input(x)
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = T.relu(T.affine(h, w, b))
        return h

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = self.logits(T.constant(np.atleast_2d(x)))
        return out.data.argmax(axis=1)

    def accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(self.predict(x) == np.asarray(y)))

    def freeze(self) -> None:
        for p in self.params():
            p.requires_grad = False
            p.grad = None
        self.frozen = True

    def named_params(self) -> dict[str, Tensor]:
        named = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            named[f"clf.w{i}"] = w
            named[f"clf.b{i}"] = b
        return named

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_params().items()}

    def load_state(self, named: dict[str, np.ndarray]) -> None:
        for name, p in self.named_params().items():
            arr = np.asarray(named[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"classifier state '{name}': shape {arr.shape} != {p.data.shape}")
            p.data = arr


def extract_features(clf: Classifier, x: Tensor) -> Tensor:
    """Intermediate features for head conditioning; constant w.r.t. classifier
    weights once the classifier is frozen."""
    return clf.features(x)


def cross_entropy(logits: Tensor, y: np.ndarray) -> Tensor:
    logp = T.log_softmax(logits, axis=-1)
    picked = T.gather_row(logp, np.asarray(y, dtype=np.int64))
    return T.scale(T.reduce_mean(picked), -1.0)


def train_classifier(x: np.ndarray, y: np.ndarray, epochs: int, seed: int,
                     hidden: tuple = (32,), lr: float = 1e-2,
                     batch_size: int | None = None,
                     accuracy_threshold: float = 0.95,
                     input_kind: str = "flat",
                     image_shape: tuple | None = None) -> Classifier:
    """Fit an MLP on (x, y) and freeze it.

    Falling short of `accuracy_threshold` is reported, not fatal; the final
    accuracy is stored on the returned classifier either way.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.size == 0:
        raise ValueError("train_classifier: empty dataset")
    num_classes = int(y.max()) + 1
    if np.any(y < 0):
        raise ValueError("train_classifier: labels must be in [0, C)")
    cfg = ClassifierConfig(input_dim=x.shape[1], num_classes=max(num_classes, 2),
                           hidden=tuple(hidden), input_kind=input_kind,
                           image_shape=image_shape)
    clf = Classifier(cfg, seed=seed)
    opt = Adam(clf.params(), lr=lr)
    n = x.shape[0]
    bs = n if batch_size is None else min(batch_size, n)
    for epoch in range(epochs):
        order = substream(seed, CLASSIFIER, 1, epoch).permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            opt.zero_grad()
            loss = cross_entropy(clf.logits(T.constant(x[idx])), y[idx])
            loss.backward()
            opt.step()
    clf.train_accuracy = clf.accuracy(x, y)
    if clf.train_accuracy < accuracy_threshold:
        log.warning("classifier train accuracy %.4f below threshold %.4f",
                    clf.train_accuracy, accuracy_threshold)
    clf.freeze()
    return clf


# ---------------------------------------------------------------------------
# Mixture-parameter heads


@dataclass
class HeadConfig:
    mode: DependencyMode
    K: int = 7
    latent_dim: int = 16
    hidden_dim: int = 64
    label_emb_dim: int = 16
    label_emb_normalized: bool = True

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = DependencyMode(self.mode)
        if self.K < 1:
            raise ValueError("head: K must be >= 1")
        if self.latent_dim < 1:
            raise ValueError("head: latent_dim must be >= 1")


@dataclass
class Temperatures:
    """Divisors applied to head outputs before their activations."""
    T_pi: float = 1.0
    T_mu: float = 1.0
    T_sigma: float = 1.0
    T_shared: float = 1.0


@dataclass
class GmmParams:
    """Batched mixture parameters: weight logits, means, lower Cholesky factors."""
    pi_logits: Tensor   # (B, K)
    means: Tensor       # (B, K, D)
    chol: Tensor        # (B, K, D, D), strictly lower + softplus-floored diagonal

    @property
    def batch(self) -> int:
        return self.pi_logits.shape[0]

    @property
    def K(self) -> int:
        return self.pi_logits.shape[1]

    @property
    def latent_dim(self) -> int:
        return self.means.shape[2]

    def pi(self) -> np.ndarray:
        """Mixture probabilities as plain numpy (rows on the simplex)."""
        z = self.pi_logits.data - self.pi_logits.data.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


def _zero_linear(in_dim: int, out_dim: int, bias_init: np.ndarray | None = None):
    w = Tensor(np.zeros((in_dim, out_dim)), requires_grad=True)
    b = Tensor(bias_init if bias_init is not None else np.zeros(out_dim), requires_grad=True)
    return w, b


class GmmHead:
    """Produces GmmParams for a batch under one dependency mode.

    Initialization is symmetric: zero weight logits (uniform mixture), zero
    means, and factor diagonals that softplus to 0.5, so the entropy ratio of
    the mixture weights starts at 1.
    """

    def __init__(self, cfg: HeadConfig, feature_dim: int | None = None,
                 num_classes: int | None = None, seed: int = 0):
        self.cfg = cfg
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        mode = cfg.mode
        if mode.conditions_on_features and feature_dim is None:
            raise ValueError(f"head mode '{mode.value}' needs feature_dim")
        if mode.conditions_on_labels and num_classes is None:
            raise ValueError(f"head mode '{mode.value}' needs num_classes")

        rng = substream(seed, GENERATOR_INIT, 0)
        K, D = cfg.K, cfg.latent_dim
        self._named: dict[str, Tensor] = {}

        chol_bias = np.zeros((K, D, D))
        chol_bias[:, np.arange(D), np.arange(D)] = _INV_SOFTPLUS_HALF

        if mode in (DependencyMode.INDEPENDENT, DependencyMode.LABEL):
            # Global means/factors (label mode conditions only the weights).
            self._named["head.mu0"] = Tensor(np.zeros((K, D)), requires_grad=True)
            self._named["head.chol0"] = Tensor(chol_bias.copy(), requires_grad=True)
        if mode == DependencyMode.INDEPENDENT:
            self._named["head.pi0"] = Tensor(np.zeros(K), requires_grad=True)
        if mode.conditions_on_labels:
            emb = rng.normal(0.0, 1.0, size=(num_classes, cfg.label_emb_dim))
            self._named["head.emb"] = Tensor(emb, requires_grad=True)
            w, b = _zero_linear(cfg.label_emb_dim, K)
            self._named["head.pi_w"], self._named["head.pi_b"] = w, b
        if mode.conditions_on_features:
            hid = cfg.hidden_dim
            w = rng.normal(0.0, np.sqrt(2.0 / feature_dim), size=(feature_dim, hid))
            self._named["head.trunk_w"] = Tensor(w, requires_grad=True)
            self._named["head.trunk_b"] = Tensor(np.zeros(hid), requires_grad=True)
            self._named["head.bn_gamma"] = Tensor(np.ones(hid), requires_grad=True)
            self._named["head.bn_beta"] = Tensor(np.zeros(hid), requires_grad=True)
            if mode == DependencyMode.INPUT:
                w, b = _zero_linear(hid, K)
                self._named["head.pi_w"], self._named["head.pi_b"] = w, b
            w, b = _zero_linear(hid, K * D)
            self._named["head.mu_w"], self._named["head.mu_b"] = w, b
            w, b = _zero_linear(hid, K * D * D, bias_init=chol_bias.ravel().copy())
            self._named["head.chol_w"], self._named["head.chol_b"] = w, b

        eye = np.eye(D)
        self._eye = T.constant(eye)
        self._strict_lower = T.constant(np.tril(np.ones((D, D)), k=-1))

    def params(self) -> list[Tensor]:
        return list(self._named.values())

    def named_params(self) -> dict[str, Tensor]:
        return dict(self._named)

    def _embedding(self) -> Tensor:
        emb = self._named["head.emb"]
        if not self.cfg.label_emb_normalized:
            return emb
        sq = T.reduce_sum(T.mul(emb, emb), axis=1, keepdims=True)
        return T.div(emb, T.sqrt(sq))

    def _assemble_chol(self, raw: Tensor, t_sigma: float) -> Tensor:
        """raw (..., D, D) -> lower-triangular factor with positive diagonal."""
        scaled = T.scale(raw, 1.0 / t_sigma)
        off = T.mul(scaled, self._strict_lower)
        diag_vals = T.reduce_sum(T.mul(scaled, self._eye), axis=-1)  # (..., D)
        floored = T.softplus(diag_vals) + T.constant(CHOL_DIAG_FLOOR)
        diag = T.mul(T.reshape(floored, (*floored.shape, 1)), self._eye)
        return T.add(off, diag)

    def _trunk(self, features: Tensor, temps: Temperatures) -> Tensor:
        pre = T.affine(features, self._named["head.trunk_w"], self._named["head.trunk_b"])
        pre = T.scale(pre, 1.0 / temps.T_shared)
        normed = T.batch_norm(pre, self._named["head.bn_gamma"], self._named["head.bn_beta"])
        return T.relu(normed)

    def forward(self, features: Tensor | None = None, labels: np.ndarray | None = None,
                temps: Temperatures | None = None, batch_size: int | None = None) -> GmmParams:
        temps = temps or Temperatures()
        cfg = self.cfg
        mode = cfg.mode
        K, D = cfg.K, cfg.latent_dim
        if mode.conditions_on_features and features is None:
            raise ValueError(f"head mode '{mode.value}' requires features")
        if mode.conditions_on_labels and labels is None:
            raise ValueError(f"head mode '{mode.value}' requires labels")

        if features is not None:
            B = features.shape[0]
        elif labels is not None:
            B = len(labels)
        elif batch_size is not None:
            B = int(batch_size)
        else:
            raise ValueError("independent head needs an explicit batch_size")

        if mode == DependencyMode.INDEPENDENT:
            pi = T.scale(self._named["head.pi0"], 1.0 / temps.T_pi)
            pi_b = T.broadcast_to(T.reshape(pi, (1, K)), (B, K))
            mu = T.scale(self._named["head.mu0"], 1.0 / temps.T_mu)
            mu_b = T.broadcast_to(T.reshape(mu, (1, K, D)), (B, K, D))
            chol = self._assemble_chol(self._named["head.chol0"], temps.T_sigma)
            chol_b = T.broadcast_to(T.reshape(chol, (1, K, D, D)), (B, K, D, D))
            return GmmParams(pi_b, mu_b, chol_b)

        if mode == DependencyMode.LABEL:
            pi_logits = self._pi_from_labels(labels, temps)
            mu = T.scale(self._named["head.mu0"], 1.0 / temps.T_mu)
            mu_b = T.broadcast_to(T.reshape(mu, (1, K, D)), (B, K, D))
            chol = self._assemble_chol(self._named["head.chol0"], temps.T_sigma)
            chol_b = T.broadcast_to(T.reshape(chol, (1, K, D, D)), (B, K, D, D))
            return GmmParams(pi_logits, mu_b, chol_b)

        trunk = self._trunk(features, temps)
        mu_flat = T.affine(trunk, self._named["head.mu_w"], self._named["head.mu_b"])
        mu = T.reshape(T.scale(mu_flat, 1.0 / temps.T_mu), (B, K, D))
        chol_raw = T.reshape(
            T.affine(trunk, self._named["head.chol_w"], self._named["head.chol_b"]),
            (B, K, D, D))
        chol = self._assemble_chol(chol_raw, temps.T_sigma)

        if mode == DependencyMode.INPUT:
            pi_logits = T.scale(
                T.affine(trunk, self._named["head.pi_w"], self._named["head.pi_b"]),
                1.0 / temps.T_pi)
        else:  # JOINT: weights come from the label embedding
            pi_logits = self._pi_from_labels(labels, temps)
        return GmmParams(pi_logits, mu, chol)

    def _pi_from_labels(self, labels: np.ndarray, temps: Temperatures) -> Tensor:
        idx = np.asarray(labels, dtype=np.int64)
        rows = T.take_rows(self._embedding(), idx)
        logits = T.affine(rows, self._named["head.pi_w"], self._named["head.pi_b"])
        return T.scale(logits, 1.0 / temps.T_pi)


def head_forward(head: GmmHead, features: Tensor | None = None,
                 labels: np.ndarray | None = None,
                 temps: Temperatures | None = None,
                 batch_size: int | None = None) -> GmmParams:
    return head.forward(features=features, labels=labels, temps=temps, batch_size=batch_size)
