"""Networks: gated generator and patch discriminator with style classifier.

Generator layout (full width; the width-scale knob multiplies every channel
count, desk-scale runs use 0.25):

    encoder   conv 7x7 s1 32 (reflect 3) | conv 3x3 s2 64 | conv 3x3 s2 128,
              each followed by instance norm + relu
    branches  one stack of residual blocks (128 ch) per style; the gate picks
              or convexly blends branch outputs
    decoder   5 residual blocks (128) | up-conv 3x3 x2 64 | up-conv 3x3 x2 32
              | conv 7x7 s1 3 (reflect 3) + tanh

The discriminator is a 70x70-receptive-field patch network: 4x4 convolutions
with strides 2/2/2/1 (channels 64/128/256/512, leaky relu 0.2, instance norm
on all but the first), then two sibling 4x4 heads sharing that trunk: a
1-channel real/fake score map and a K-channel style logit map.

All parameters live in flat name->Tensor dicts so checkpoints have stable,
unique entry names; prefixes ("enc.", "b3.", "dec.", ...) select the update
groups used by the training phases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import GateIndexError, ShapeError

INIT_STD = 0.02  # every convolution kernel: zero-mean Gaussian, seeded


def _ch(base: int, width_scale: float) -> int:
    return max(1, int(round(base * width_scale)))


def _conv_entries(params, rng, name, c_in, c_out, k, norm=True, transpose=False, dtype=np.float32):
    shape = (c_in, c_out, k, k) if transpose else (c_out, c_in, k, k)
    params[f"{name}.weight"] = ad.parameter(ad.gaussian_init(rng, shape, INIT_STD, dtype))
    params[f"{name}.bias"] = ad.parameter(np.zeros(c_out, dtype=dtype))
    if norm:
        params[f"{name}.gamma"] = ad.parameter(np.ones(c_out, dtype=dtype))
        params[f"{name}.beta"] = ad.parameter(np.zeros(c_out, dtype=dtype))


def _residual_entries(params, rng, name, c, dtype=np.float32):
    _conv_entries(params, rng, f"{name}.c1", c, c, 3, dtype=dtype)
    _conv_entries(params, rng, f"{name}.c2", c, c, 3, dtype=dtype)


@dataclass
class GeneratorParams:
    """Encoder + K gated branches + decoder parameters."""

    style_count: int
    width_scale: float
    branch_depth: int
    params: dict[str, Tensor] = field(default_factory=dict)

    @property
    def feature_channels(self) -> int:
        return _ch(128, self.width_scale)

    def names(self, prefix: str) -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]

    def encoder_names(self) -> list[str]:
        return self.names("enc.")

    def branch_names(self, c: int) -> list[str]:
        if not (0 <= c < self.style_count):
            raise GateIndexError(f"branch {c} out of range [0, {self.style_count})")
        return self.names(f"b{c}.")

    def decoder_names(self) -> list[str]:
        return self.names("dec.")

    def subset(self, names) -> dict[str, Tensor]:
        return {n: self.params[n] for n in names}


@dataclass
class DiscriminatorParams:
    """Shared convolutional trunk with adversarial and classifier heads."""

    style_count: int
    width_scale: float
    params: dict[str, Tensor] = field(default_factory=dict)

    def trunk_names(self) -> list[str]:
        return [n for n in self.params if n.startswith("d.")]

    def head_names(self) -> list[str]:
        return [n for n in self.params if n.startswith(("adv.", "cls."))]


def init_generator(style_count: int, width_scale: float = 1.0, branch_depth: int = 1,
                   seed: int = 0, dtype=np.float32) -> GeneratorParams:
    """Freshly initialized generator; rng consumption order is fixed."""
    if style_count < 1:
        raise GateIndexError(f"style_count must be >= 1, got {style_count}")
    if branch_depth not in (1, 2):
        raise ShapeError(f"branch_depth must be 1 or 2, got {branch_depth}")
    rng = np.random.default_rng(seed)
    g = GeneratorParams(style_count, width_scale, branch_depth)
    c32, c64, c128 = (_ch(b, width_scale) for b in (32, 64, 128))
    p = g.params
    _conv_entries(p, rng, "enc.c0", 3, c32, 7, dtype=dtype)
    _conv_entries(p, rng, "enc.c1", c32, c64, 3, dtype=dtype)
    _conv_entries(p, rng, "enc.c2", c64, c128, 3, dtype=dtype)
    for c in range(style_count):
        for j in range(branch_depth):
            _residual_entries(p, rng, f"b{c}.r{j}", c128, dtype=dtype)
    for j in range(5):
        _residual_entries(p, rng, f"dec.r{j}", c128, dtype=dtype)
    _conv_entries(p, rng, "dec.u0", c128, c64, 3, transpose=True, dtype=dtype)
    _conv_entries(p, rng, "dec.u1", c64, c32, 3, transpose=True, dtype=dtype)
    _conv_entries(p, rng, "dec.out", c32, 3, 7, norm=False, dtype=dtype)
    return g


def append_branch(gen: GeneratorParams, seed: int, dtype=np.float32) -> GeneratorParams:
    """New generator with one freshly initialized branch appended.

    Existing tensors are shared, not copied, so the pre-existing styles stay
    bit-identical.
    """
    rng = np.random.default_rng(seed)
    out = GeneratorParams(gen.style_count + 1, gen.width_scale, gen.branch_depth,
                          dict(gen.params))
    for j in range(gen.branch_depth):
        _residual_entries(out.params, rng, f"b{gen.style_count}.r{j}",
                          gen.feature_channels, dtype=dtype)
    return out


def init_discriminator(style_count: int, width_scale: float = 1.0, seed: int = 0,
                       dtype=np.float32) -> DiscriminatorParams:
    rng = np.random.default_rng(seed)
    d = DiscriminatorParams(style_count, width_scale)
    widths = [_ch(b, width_scale) for b in (64, 128, 256, 512)]
    p = d.params
    _conv_entries(p, rng, "d.c0", 3, widths[0], 4, norm=False, dtype=dtype)
    _conv_entries(p, rng, "d.c1", widths[0], widths[1], 4, dtype=dtype)
    _conv_entries(p, rng, "d.c2", widths[1], widths[2], 4, dtype=dtype)
    _conv_entries(p, rng, "d.c3", widths[2], widths[3], 4, dtype=dtype)
    _conv_entries(p, rng, "adv.head", widths[3], 1, 4, norm=False, dtype=dtype)
    _conv_entries(p, rng, "cls.head", widths[3], style_count, 4, norm=False, dtype=dtype)
    return d


def extend_classifier_head(disc: DiscriminatorParams, seed: int,
                           dtype=np.float32) -> DiscriminatorParams:
    """Discriminator with a (K+1)-way classifier: old logit rows copied,
    the new row freshly initialized."""
    rng = np.random.default_rng(seed)
    out = DiscriminatorParams(disc.style_count + 1, disc.width_scale, dict(disc.params))
    w_old = disc.params["cls.head.weight"].data
    b_old = disc.params["cls.head.bias"].data
    new_row = ad.gaussian_init(rng, (1,) + w_old.shape[1:], INIT_STD, dtype)
    out.params["cls.head.weight"] = ad.parameter(np.concatenate([w_old, new_row], axis=0))
    out.params["cls.head.bias"] = ad.parameter(
        np.concatenate([b_old, np.zeros(1, dtype=dtype)]))
    return out


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def _conv_in_relu(x, p, name, stride, padding, act="relu"):
    y = ad.conv2d(x, p[f"{name}.weight"], p[f"{name}.bias"], stride, padding)
    y = ad.instance_norm(y, p[f"{name}.gamma"], p[f"{name}.beta"])
    if act == "relu":
        y = ad.relu(y)
    elif act == "leaky":
        y = ad.leaky_relu(y, 0.2)
    return y


def _residual_block(x, p, name):
    y = _conv_in_relu(x, p, f"{name}.c1", 1, ("zero", 1), act="relu")
    y = _conv_in_relu(y, p, f"{name}.c2", 1, ("zero", 1), act="none")
    return ad.add(x, y)


def encoder_forward(x: Tensor, gen: GeneratorParams) -> Tensor:
    """Image (N, 3, H, W) with H, W divisible by 4 -> features at H/4 x W/4."""
    if x.data.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"encoder input must be (N, 3, H, W), got {x.shape}")
    if x.shape[2] % 4 or x.shape[3] % 4:
        raise ShapeError(f"encoder spatial extents must be divisible by 4, got {x.shape[2:]}")
    p = gen.params
    y = _conv_in_relu(x, p, "enc.c0", 1, ("reflect", 3))
    y = _conv_in_relu(y, p, "enc.c1", 2, ("zero", 1))
    y = _conv_in_relu(y, p, "enc.c2", 2, ("zero", 1))
    return y


@dataclass(frozen=True)
class StyleWeights:
    """Convex gate weights over the K branches."""

    alpha: tuple[float, ...]

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=np.float64)
        if (a < 0).any():
            raise ShapeError(f"style weights must be non-negative, got {self.alpha}")
        if abs(float(a.sum()) - 1.0) > 1e-6:
            raise ShapeError(f"style weights must sum to 1, got sum {a.sum()!r}")

    @classmethod
    def one_hot(cls, c: int, style_count: int) -> "StyleWeights":
        if not (0 <= c < style_count):
            raise GateIndexError(f"style {c} out of range [0, {style_count})")
        return cls(tuple(1.0 if i == c else 0.0 for i in range(style_count)))

    @classmethod
    def blend(cls, c1: int, c2: int, alpha: float, style_count: int) -> "StyleWeights":
        """alpha weights c1, (1 - alpha) weights c2."""
        w = [0.0] * style_count
        w[c1] += alpha
        w[c2] += 1.0 - alpha
        return cls(tuple(w))


def branch_forward(f: Tensor, gen: GeneratorParams, c: int) -> Tensor:
    y = f
    for j in range(gen.branch_depth):
        y = _residual_block(y, gen.params, f"b{c}.r{j}")
    return y


def gated_transform(f: Tensor, gen: GeneratorParams, weights: StyleWeights) -> Tensor:
    """Convex blend of branch outputs; exact single-branch pass for one-hot.

    Zero-weight branches are skipped and a weight of exactly 1.0 applies no
    scaling, so one-hot weights reproduce the plain branch output bit for
    bit.
    """
    if len(weights.alpha) != gen.style_count:
        raise ShapeError(
            f"got {len(weights.alpha)} gate weights for {gen.style_count} branches")
    out = None
    for c, w in enumerate(weights.alpha):
        if w == 0.0:
            continue
        y = branch_forward(f, gen, c)
        if w != 1.0:
            y = ad.scale(y, w)
        out = y if out is None else ad.add(out, y)
    if out is None:
        raise ShapeError("style weights are all zero")
    return out


def decoder_forward(f: Tensor, gen: GeneratorParams) -> Tensor:
    """Features -> 3-channel image at 4x spatial scale, values in (-1, 1)."""
    if f.data.ndim != 4 or f.shape[1] != gen.feature_channels:
        raise ShapeError(
            f"decoder input must be (N, {gen.feature_channels}, h, w), got {f.shape}")
    p = gen.params
    y = f
    for j in range(5):
        y = _residual_block(y, p, f"dec.r{j}")
    y = ad.conv2d_transpose(y, p["dec.u0.weight"], p["dec.u0.bias"])
    y = ad.instance_norm(y, p["dec.u0.gamma"], p["dec.u0.beta"])
    y = ad.relu(y)
    y = ad.conv2d_transpose(y, p["dec.u1.weight"], p["dec.u1.bias"])
    y = ad.instance_norm(y, p["dec.u1.gamma"], p["dec.u1.beta"])
    y = ad.relu(y)
    y = ad.conv2d(y, p["dec.out.weight"], p["dec.out.bias"], 1, ("reflect", 3))
    return ad.tanh(y)


def generator_forward(x: Tensor, gen: GeneratorParams, c: int) -> Tensor:
    """Stylize x with branch c: decoder(branch_c(encoder(x)))."""
    f = encoder_forward(x, gen)
    t = gated_transform(f, gen, StyleWeights.one_hot(c, gen.style_count))
    return decoder_forward(t, gen)


def reconstruct(x: Tensor, gen: GeneratorParams) -> Tensor:
    """Auto-encoder path: decoder(encoder(x)); the gate is skipped entirely."""
    return decoder_forward(encoder_forward(x, gen), gen)


def discriminator_trunk(x: Tensor, disc: DiscriminatorParams) -> Tensor:
    if x.data.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"discriminator input must be (N, 3, H, W), got {x.shape}")
    p = disc.params
    y = ad.conv2d(x, p["d.c0.weight"], p["d.c0.bias"], 2, ("zero", 1))
    y = ad.leaky_relu(y, 0.2)
    y = _conv_in_relu(y, p, "d.c1", 2, ("zero", 1), act="leaky")
    y = _conv_in_relu(y, p, "d.c2", 2, ("zero", 1), act="leaky")
    y = _conv_in_relu(y, p, "d.c3", 1, ("zero", 1), act="leaky")
    return y


def discriminator_heads(x: Tensor, disc: DiscriminatorParams) -> tuple[Tensor, Tensor]:
    """One trunk pass feeding both heads: (patch score map, style logit map)."""
    t = discriminator_trunk(x, disc)
    p = disc.params
    adv = ad.conv2d(t, p["adv.head.weight"], p["adv.head.bias"], 1, ("zero", 1))
    cls = ad.conv2d(t, p["cls.head.weight"], p["cls.head.bias"], 1, ("zero", 1))
    return adv, cls


def discriminate(x: Tensor, disc: DiscriminatorParams) -> Tensor:
    """1-channel patch score map (unbounded least-squares scores)."""
    t = discriminator_trunk(x, disc)
    p = disc.params
    return ad.conv2d(t, p["adv.head.weight"], p["adv.head.bias"], 1, ("zero", 1))


def pooled_logits(cls_map: Tensor) -> Tensor:
    """Spatially averaged per-patch logits: (N, K, h, w) -> (N, K)."""
    return ad.spatial_mean(cls_map)


def classify_style(x: Tensor, disc: DiscriminatorParams) -> tuple[Tensor, np.ndarray]:
    """K-channel patch logit map plus the pooled class distribution."""
    t = discriminator_trunk(x, disc)
    p = disc.params
    cls = ad.conv2d(t, p["cls.head.weight"], p["cls.head.bias"], 1, ("zero", 1))
    z = pooled_logits(cls).data
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return cls, e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# receptive field
# ---------------------------------------------------------------------------


def discriminator_layers(width_scale: float = 1.0) -> list[tuple]:
    """Layer descriptors (kind, kernel, stride, padding) from input to head."""
    del width_scale  # channel widths do not change the geometry
    return [("conv", 4, 2, 1), ("conv", 4, 2, 1), ("conv", 4, 2, 1),
            ("conv", 4, 1, 1), ("conv", 4, 1, 1)]


def receptive_geometry(layers) -> tuple[int, int, int]:
    """(field, jump, offset): output unit i covers input [i*jump + offset,
    i*jump + offset + field)."""
    a, b = 0, 1
    jump = 1
    for layer in reversed(list(layers)):
        kind, k, s, p = layer
        if kind != "conv":
            raise ShapeError(f"unsupported layer kind '{kind}' in receptive field chain")
        a = a * s - p
        b = (b - 1) * s - p + k
    for layer in layers:
        jump *= layer[2]
    return b - a, jump, a


def receptive_field(layers) -> int:
    """Receptive field of one output unit of a convolution chain."""
    return receptive_geometry(layers)[0]


# ---------------------------------------------------------------------------
# introspection
# ---------------------------------------------------------------------------


def count_params(params: dict[str, Tensor]) -> int:
    return sum(t.data.size for t in params.values())


def visualize_branch_feature(gen: GeneratorParams, branch: int, channel: int,
                             magnitude: float, extent: tuple[int, int] = (8, 8),
                             seed: int = 0) -> Tensor:
    """Decode a single-channel noise activation through one branch.

    Builds a feature map that is zero everywhere except ``channel``, which is
    filled with seeded Gaussian noise scaled by ``magnitude``, then runs it
    through branch ``branch`` and the decoder.
    """
    if not (0 <= branch < gen.style_count):
        raise GateIndexError(f"branch {branch} out of range [0, {gen.style_count})")
    c = gen.feature_channels
    if not (0 <= channel < c):
        raise GateIndexError(f"channel {channel} out of range [0, {c})")
    rng = np.random.default_rng(seed)
    dtype = gen.params["enc.c0.weight"].data.dtype
    feat = np.zeros((1, c) + tuple(extent), dtype=dtype)
    feat[0, channel] = (rng.standard_normal(extent) * magnitude).astype(dtype)
    t = branch_forward(Tensor(feat), gen, branch)
    return decoder_forward(t, gen)
