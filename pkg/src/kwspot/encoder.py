"""Shared metric-space encoder: conv(3, 20, tanh) -> maxpool(2) -> conv(3, 20, tanh).

``encode_vector`` adds a global max pool over time; ``encode_sequence`` keeps
the per-frame output for the matching agent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

KERNEL = 3
FILTERS = 20
POOL = 2
MIN_WIDTH = 8


def uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> ad.Tensor:
    bound = 0.5 / np.sqrt(fan_in)
    return ad.Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


@dataclass
class EncoderParams:
    conv1_w: ad.Tensor
    conv1_b: ad.Tensor
    conv2_w: ad.Tensor
    conv2_b: ad.Tensor

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator) -> "EncoderParams":
        return cls(
            conv1_w=uniform_init(rng, (KERNEL, dim, FILTERS), KERNEL * dim),
            conv1_b=uniform_init(rng, (FILTERS,), KERNEL * dim),
            conv2_w=uniform_init(rng, (KERNEL, FILTERS, FILTERS), KERNEL * FILTERS),
            conv2_b=uniform_init(rng, (FILTERS,), KERNEL * FILTERS),
        )

    @classmethod
    def zeros(cls, dim: int) -> "EncoderParams":
        z = lambda *s: ad.Tensor(np.zeros(s), requires_grad=True)
        return cls(z(KERNEL, dim, FILTERS), z(FILTERS), z(KERNEL, FILTERS, FILTERS), z(FILTERS))

    @property
    def dim(self) -> int:
        return self.conv1_w.shape[1]

    def named(self) -> dict[str, ad.Tensor]:
        return {"enc.conv1.w": self.conv1_w, "enc.conv1.b": self.conv1_b,
                "enc.conv2.w": self.conv2_w, "enc.conv2.b": self.conv2_b}


def parameter_count(dim: int) -> int:
    return KERNEL * dim * FILTERS + FILTERS + KERNEL * FILTERS * FILTERS + FILTERS


def sequence_length(width: int) -> int:
    """Frames left after conv -> pool -> conv for an input of ``width`` frames."""
    return (width - KERNEL + 1) // POOL - KERNEL + 1


def _check(window, params: EncoderParams):
    shape = window.shape
    if len(shape) != 2 or shape[0] < MIN_WIDTH:
        raise ValueError(f"encoder needs a window of at least {MIN_WIDTH} frames, got shape {shape}")
    if shape[1] != params.dim:
        raise ValueError(f"window dim {shape[1]} does not match encoder dim {params.dim}")


def encode_sequence(window, params: EncoderParams) -> ad.Tensor:
    window = ad.as_tensor(window)
    _check(window, params)
    h = ad.tanh(ad.conv1d(window, params.conv1_w, params.conv1_b))
    h = ad.maxpool1d(h, POOL)
    return ad.tanh(ad.conv1d(h, params.conv2_w, params.conv2_b))


def encode_vector(window, params: EncoderParams) -> ad.Tensor:
    return ad.global_maxpool(encode_sequence(window, params))
