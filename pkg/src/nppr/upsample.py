"""Latent-to-input-space mapping and the hard perturbation budget.

Image-mode latents pass through an optional learnable linear premap and then
separable bicubic interpolation (Catmull-Rom kernel) up to the input grid.
Vector-mode latents use a learnable affine map instead. The scaled-tanh
budget mapping is applied last so the L-infinity bound holds exactly in
input space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

MODE_BICUBIC = "bicubic_image"
MODE_LINEAR = "linear_vector"
MODE_NONE = "none"


def bicubic_kernel(a):
    """Keys cubic convolution kernel (a = -0.5 variant), vectorized.

    w(a) = 1.5|a|^3 - 2.5|a|^2 + 1          for |a| < 1
           -0.5|a|^3 + 2.5|a|^2 - 4|a| + 2  for 1 <= |a| < 2
           0                                 otherwise
    """
    x = np.abs(np.asarray(a, dtype=np.float64))
    inner = 1.5 * x**3 - 2.5 * x**2 + 1.0
    outer = -0.5 * x**3 + 2.5 * x**2 - 4.0 * x + 2.0
    out = np.where(x < 1.0, inner, np.where(x < 2.0, outer, 0.0))
    if np.isscalar(a) or np.ndim(a) == 0:
        return float(out)
    return out


def bicubic_weight_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Dense (n_out, n_in) interpolation matrix for one separable axis.

    Align-corners sample placement: output sample o maps to input coordinate
    o*(n_in-1)/(n_out-1). The 4-tap neighborhood is clamped to the edges, so
    constants are reproduced exactly at the borders.
    """
    if n_out < 1 or n_in < 1:
        raise ValueError(f"bicubic weights: invalid sizes {n_out}x{n_in}")
    weights = np.zeros((n_out, n_in))
    if n_in == 1:
        weights[:, 0] = 1.0
        return weights
    scale = (n_in - 1) / (n_out - 1) if n_out > 1 else 0.0
    for o in range(n_out):
        s = o * scale
        i = int(np.floor(s))
        for m in range(-1, 3):
            j = i + m
            w = bicubic_kernel(s - j)
            weights[o, min(max(j, 0), n_in - 1)] += w
    return weights


@dataclass
class UpsamplerConfig:
    """How latent perturbations reach input space.

    mode: bicubic_image (premap + separable bicubic on a latent grid),
          linear_vector (affine map latent_dim -> input_dim), or
          none (identity; latent_dim must equal input_dim).
    learnable_premap: when False the map is frozen at its random init.
    latent_grid: (c, h', w') for image mode.
    gamma: L-infinity budget radius for the tanh squashing.
    """

    mode: str = MODE_LINEAR
    learnable_premap: bool = True
    latent_grid: tuple | None = None
    gamma: float = 16.0 / 255.0

    def __post_init__(self):
        if self.mode not in (MODE_BICUBIC, MODE_LINEAR, MODE_NONE):
            raise ValueError(f"upsampler mode '{self.mode}' unknown")
        if self.gamma <= 0:
            raise ValueError("upsampler gamma must be > 0")
        if self.mode == MODE_BICUBIC:
            if self.latent_grid is None or len(self.latent_grid) != 3:
                raise ValueError("bicubic_image mode needs latent_grid (c, h', w')")

    @property
    def latent_dim_for_grid(self) -> int | None:
        if self.latent_grid is None:
            return None
        c, h, w = self.latent_grid
        return int(c) * int(h) * int(w)


def apply_budget(u: Tensor, gamma: float) -> Tensor:
    """gamma * tanh(u); every element lands strictly inside (-gamma, gamma)."""
    if gamma <= 0:
        raise ValueError("apply_budget: gamma must be > 0")
    return T.scale(T.tanh(u), gamma)


class Upsampler:
    """Maps flat latent batches (N, latent_dim) to input space (N, input_dim)."""

    def __init__(self, cfg: UpsamplerConfig, latent_dim: int, input_dim: int,
                 image_shape: tuple | None, rng: np.random.Generator):
        self.cfg = cfg
        self.latent_dim = int(latent_dim)
        self.input_dim = int(input_dim)
        self.image_shape = tuple(image_shape) if image_shape else None
        self._params: list[Tensor] = []

        if cfg.mode == MODE_NONE:
            if self.latent_dim != self.input_dim:
                raise ValueError(
                    f"upsampler 'none' needs latent_dim == input_dim, got {latent_dim} vs {input_dim}")
            self.weight = None
            self.bias = None
        elif cfg.mode == MODE_LINEAR:
            w = rng.normal(0.0, 1.0 / np.sqrt(self.latent_dim), size=(self.latent_dim, self.input_dim))
            self.weight = Tensor(w, requires_grad=cfg.learnable_premap)
            self.bias = Tensor(np.zeros(self.input_dim), requires_grad=cfg.learnable_premap)
            if cfg.learnable_premap:
                self._params = [self.weight, self.bias]
        else:
            c, hl, wl = (int(v) for v in cfg.latent_grid)
            if c * hl * wl != self.latent_dim:
                raise ValueError(
                    f"latent_grid {cfg.latent_grid} does not match latent_dim {latent_dim}")
            if self.image_shape is None or len(self.image_shape) != 3:
                raise ValueError("bicubic_image mode needs an image-shaped input (c, h, w)")
            ci, hi, wi = self.image_shape
            if ci != c or hi < hl or wi < wl:
                raise ValueError(
                    f"latent grid {cfg.latent_grid} incompatible with input grid {self.image_shape}")
            w = rng.normal(0.0, 1.0 / np.sqrt(self.latent_dim), size=(self.latent_dim, self.latent_dim))
            self.weight = Tensor(w, requires_grad=cfg.learnable_premap)
            self.bias = Tensor(np.zeros(self.latent_dim), requires_grad=cfg.learnable_premap)
            if cfg.learnable_premap:
                self._params = [self.weight, self.bias]
            self._wh = T.constant(bicubic_weight_matrix(hi, hl))
            self._ww_t = T.constant(bicubic_weight_matrix(wi, wl).T)
            self._grid = (c, hl, wl)

    def params(self) -> list[Tensor]:
        return list(self._params)

    def named_params(self) -> dict[str, Tensor]:
        if self.weight is None or not self.cfg.learnable_premap:
            return {}
        return {"upsampler.weight": self.weight, "upsampler.bias": self.bias}

    def frozen_state(self) -> dict[str, np.ndarray]:
        """Premap values to persist even when not trainable (random init must survive restore)."""
        if self.weight is None:
            return {}
        return {"upsampler.weight": self.weight.data, "upsampler.bias": self.bias.data}

    def load_frozen_state(self, named: dict[str, np.ndarray]) -> None:
        if self.weight is None:
            return
        self.weight.data = np.asarray(named["upsampler.weight"], dtype=np.float64)
        self.bias.data = np.asarray(named["upsampler.bias"], dtype=np.float64)

    def forward(self, latent: Tensor) -> Tensor:
        """(N, latent_dim) -> (N, input_dim), pre-budget, differentiable."""
        if latent.ndim != 2 or latent.shape[1] != self.latent_dim:
            raise ValueError(
                f"upsampler: expected (N, {self.latent_dim}) latent, got {latent.shape}")
        if self.cfg.mode == MODE_NONE:
            return latent
        if self.cfg.mode == MODE_LINEAR:
            return T.affine(latent, self.weight, self.bias)
        pre = T.affine(latent, self.weight, self.bias)
        c, hl, wl = self._grid
        grid = T.reshape(pre, (latent.shape[0], c, hl, wl))
        rows = T.matmul(self._wh, grid)          # (N, c, h, w')
        full = T.matmul(rows, self._ww_t)        # (N, c, h, w)
        return T.reshape(full, (latent.shape[0], self.input_dim))

    def __call__(self, latent: Tensor) -> Tensor:
        return self.forward(latent)
