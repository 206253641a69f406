"""Scalar training objectives.

Adversarial terms use the least-squares form (real patches regress to 1,
fakes to 0; the generator pushes its fakes toward 1). Expectations over
patches are realized as means so the loss weights stay comparable across
image sizes. Total variation keeps its literal sum-over-positions form; the
default weights are calibrated against that.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError

TV_EPS = 1e-8  # inside the square root, keeps the flat-region gradient finite


@dataclass(frozen=True)
class LossWeights:
    """Relative weights of the generator objective terms."""

    lambda_cls: float = 1.0
    lambda_tv: float = 1e-6
    lambda_r: float = 10.0

    def __post_init__(self):
        if self.lambda_cls < 0 or self.lambda_tv < 0 or self.lambda_r < 0:
            raise ShapeError("loss weights must be non-negative")


def lsgan_d_loss(scores_real: Tensor, scores_fake: Tensor) -> Tensor:
    """mean((D(real) - 1)^2) + mean(D(fake)^2)."""
    r = ad.add_scalar(scores_real, -1.0)
    real_term = ad.mean(ad.mul(r, r))
    fake_term = ad.mean(ad.mul(scores_fake, scores_fake))
    return ad.add(real_term, fake_term)


def lsgan_g_loss(scores_fake: Tensor) -> Tensor:
    """mean((D(fake) - 1)^2): the generator side of the least-squares game."""
    f = ad.add_scalar(scores_fake, -1.0)
    return ad.mean(ad.mul(f, f))


def reconstruction_loss(x: Tensor, x_hat: Tensor) -> Tensor:
    """Per-element mean L1 distance between an image and its reconstruction."""
    return ad.mean(ad.absolute(ad.sub(x_hat, x)))


def classifier_loss_real(logits: Tensor, c: int) -> Tensor:
    """-log softmax(logits)[c] on a real style image; trains the classifier."""
    return ad.softmax_cross_entropy(logits, c)


def classifier_loss_generated(logits: Tensor, c: int) -> Tensor:
    """-log softmax(logits)[c] on a stylized image; trains the generator.

    The caller freezes classifier parameters in this term, so the gradient
    reaches only the generator inputs of the logits.
    """
    return ad.softmax_cross_entropy(logits, c)


def tv_loss(img: Tensor) -> Tensor:
    """Total variation: sum of sqrt(dx^2 + dy^2 + eps) over pixel positions.

    Only positions with both a right and a down neighbor contribute; summed
    over channels and batch.
    """
    if img.data.ndim != 4:
        raise ShapeError(f"tv_loss needs a rank-4 image, got shape {img.shape}")
    h, w = img.shape[2], img.shape[3]
    if h < 2 or w < 2:
        raise ShapeError(f"tv_loss needs spatial extents >= 2, got {h}x{w}")
    base = ad.crop2d(img, (0, h - 1), (0, w - 1))
    right = ad.crop2d(img, (0, h - 1), (1, w))
    down = ad.crop2d(img, (1, h), (0, w - 1))
    dx = ad.sub(right, base)
    dy = ad.sub(down, base)
    mag = ad.add_scalar(ad.add(ad.mul(dx, dx), ad.mul(dy, dy)), TV_EPS)
    return ad.tensor_sum(ad.sqrt(mag))


def generator_objective(adv: Tensor, cls: Tensor, tv: Tensor, w: LossWeights) -> Tensor:
    """adv + lambda_cls * cls + lambda_tv * tv.

    The reconstruction term is not part of this sum; it drives its own
    optimization step, weighted by lambda_r, in the training loop.
    """
    out = ad.add(adv, ad.scale(cls, w.lambda_cls))
    return ad.add(out, ad.scale(tv, w.lambda_tv))
