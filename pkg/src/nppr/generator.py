"""The trainable perturbation generator: head -> mixture -> upsampler -> budget."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .models import Classifier, DependencyMode, GmmHead, GmmParams, HeadConfig, Temperatures
from .rng import GENERATOR_INIT, substream
from .sampling import PerturbationBatch, sample_exact, sample_perturbations
from .tensor import Tensor
from .upsample import MODE_BICUBIC, Upsampler, UpsamplerConfig, apply_budget


class Generator:
    """Bundles the mixture head and the upsampler behind one sampling surface.

    Conditioning features always come from the clean inputs through the frozen
    classifier, so they act as constants for the generator's graph.
    """

    def __init__(self, head: GmmHead, upsampler: Upsampler, clf: Classifier, gamma: float):
        if gamma <= 0:
            raise ValueError("generator: gamma must be > 0")
        if head.cfg.latent_dim != upsampler.latent_dim:
            raise ValueError(
                f"generator: head latent_dim {head.cfg.latent_dim} != upsampler {upsampler.latent_dim}")
        self.head = head
        self.upsampler = upsampler
        self.clf = clf
        self.gamma = float(gamma)

    @property
    def mode(self) -> DependencyMode:
        return self.head.cfg.mode

    def params(self) -> list[Tensor]:
        return [*self.head.params(), *self.upsampler.params()]

    def named_params(self) -> dict[str, Tensor]:
        return {**self.head.named_params(), **self.upsampler.named_params()}

    def gmm_params(self, x: np.ndarray, y: np.ndarray | None,
                   temps: Temperatures | None = None) -> GmmParams:
        """Head forward for a batch of clean inputs/labels."""
        features = None
        if self.mode.conditions_on_features:
            features = self.clf.features(T.constant(np.atleast_2d(x)))
        batch = np.atleast_2d(x).shape[0]
        return self.head.forward(features=features, labels=y, temps=temps, batch_size=batch)

    def _to_images(self, batch: PerturbationBatch) -> PerturbationBatch:
        B, M, D = batch.latent.shape
        flat = T.reshape(batch.latent, (B * M, D))
        up = self.upsampler(flat)
        bounded = apply_budget(up, self.gamma)
        batch.images = T.reshape(bounded, (B, M, self.upsampler.input_dim))
        # Budget post-condition; NaN propagation is handled by the trainer's
        # non-finite-loss path, so only real values are bounded here.
        assert not np.any(np.abs(batch.images.data) > self.gamma)
        return batch

    def perturb_relaxed(self, params: GmmParams, M: int, tau: float,
                        rng: np.random.Generator) -> PerturbationBatch:
        """Training path: relaxed mixture draws, graph-connected end to end."""
        return self._to_images(sample_perturbations(params, M, tau, rng))

    def perturb_exact(self, params: GmmParams, M: int,
                      rng: np.random.Generator) -> PerturbationBatch:
        """Evaluation path: exact categorical draws, no relaxation bias."""
        return self._to_images(sample_exact(params, M, rng))


def build_generator(clf: Classifier, head_cfg: HeadConfig, ups_cfg: UpsamplerConfig,
                    seed: int = 0) -> Generator:
    """Wire a fresh head and upsampler to a frozen classifier."""
    if ups_cfg.mode == MODE_BICUBIC:
        expected = ups_cfg.latent_dim_for_grid
        if expected != head_cfg.latent_dim:
            raise ValueError(
                f"latent grid {ups_cfg.latent_grid} implies latent_dim {expected}, "
                f"head has {head_cfg.latent_dim}")
    feature_dim = clf.feature_hook.feature_dim if head_cfg.mode.conditions_on_features else None
    num_classes = clf.num_classes if head_cfg.mode.conditions_on_labels else None
    head = GmmHead(head_cfg, feature_dim=feature_dim, num_classes=num_classes, seed=seed)
    upsampler = Upsampler(ups_cfg, latent_dim=head_cfg.latent_dim,
                          input_dim=clf.cfg.input_dim,
                          image_shape=clf.cfg.image_shape,
                          rng=substream(seed, GENERATOR_INIT, 1))
    return Generator(head, upsampler, clf, gamma=ups_cfg.gamma)
