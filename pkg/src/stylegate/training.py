"""Adversarial training loop: alternating discriminator/classifier, generator,
and auto-encoder updates with Adam, a replay buffer, and crop augmentation.

Each outer iteration performs, in order:

1. ``k_d`` discriminator steps: stylize the batch (generator untaped, hence
   frozen), route the fakes through the replay buffer, then take one Adam
   step on trunk + both heads against the least-squares real/fake loss plus
   the real-image classifier loss.
2. ``k_g`` generator steps: fresh stylization on tape, discriminator
   parameters frozen, one Adam step on encoder + selected branch + decoder
   against adversarial + classifier + total-variation terms.
3. One auto-encoder step (skipped when lambda_r == 0): reconstruct the batch
   with the gate bypassed and take one Adam step on encoder + decoder against
   lambda_r times the L1 reconstruction loss.

The three phases own independent Adam states. Every random draw comes from
two seeded streams (the loop stream and the buffer stream) in a fixed order,
so a run is bit-reproducible and resumable from a checkpoint.

Texture-synthesis mode feeds standard-normal noise as the content batch and
random crops of the texture images as the real samples.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import losses as ls
from . import models as md
from .autodiff import Tensor
from .config import MODE_TEXTURE, TrainConfig
from .errors import DatasetError, ModeError, NonFiniteLossError, ShapeError

ADAM_BETA1 = 0.5  # GAN convention; paper-cited Adam with lr only
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

BUFFER_CAPACITY = 50


class AdamState:
    """Per-parameter first/second moments and step counters."""

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def entries(self):
        for name in self.m:
            yield name, self.m[name], self.v[name], self.t[name]


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> tuple[dict[str, Tensor], AdamState]:
    """Bias-corrected Adam update, in place, on the listed parameters only."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} != param shape "
                             f"{p.data.shape} for '{name}'")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
            state.m[name], state.v[name], state.t[name] = m, v, 0
        else:
            v = state.v[name]
        t = state.t[name] + 1
        state.t[name] = t
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1 - ADAM_BETA2) * (g * g)
        m_hat = m / (1 - ADAM_BETA1 ** t)
        v_hat = v / (1 - ADAM_BETA2 ** t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)).astype(p.data.dtype)
    return params, state


class ReplayBuffer:
    """Fixed-capacity history of generated images for discriminator updates.

    Stored images are detached copies with their style labels. While filling,
    every fresh image is stored and returned; once full, each query returns
    the fresh image with probability 0.5, otherwise a uniformly chosen stored
    image whose slot the fresh image takes.
    """

    def __init__(self, rng: np.random.Generator, capacity: int = BUFFER_CAPACITY):
        self.capacity = capacity
        self.images: list[np.ndarray] = []
        self.labels: list[int] = []
        self.rng = rng

    def __len__(self):
        return len(self.images)

    def query(self, fresh: np.ndarray, label: int) -> tuple[np.ndarray, int]:
        fresh = np.array(fresh, copy=True)
        if len(self.images) < self.capacity:
            self.images.append(fresh)
            self.labels.append(int(label))
            return fresh, int(label)
        if self.rng.random() < 0.5:
            return fresh, int(label)
        i = int(self.rng.integers(self.capacity))
        old_img, old_label = self.images[i], self.labels[i]
        self.images[i] = fresh
        self.labels[i] = int(label)
        return old_img, old_label


# ---------------------------------------------------------------------------
# input pipeline
# ---------------------------------------------------------------------------


def _resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resample with half-pixel centers; (C, H, W) in/out."""
    c, h, w = img.shape
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(img.dtype)[None, :, None]
    wx = (xs - x0).astype(img.dtype)[None, None, :]
    rows = img[:, y0, :] * (1 - wy) + img[:, y1, :] * wy
    return rows[:, :, x0] * (1 - wx) + rows[:, :, x1] * wx


def augment(img: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    """Resize to scale_size^2, flip horizontally with probability 0.5, then
    crop image_size^2 at a uniform offset. Draw order: flip, top, left."""
    if img.ndim != 3:
        raise ShapeError(f"augment expects a (C, H, W) image, got shape {img.shape}")
    s, ss = cfg.image_size, cfg.scale_size
    scaled = _resize_bilinear(img, ss, ss)
    if rng.random() < 0.5:
        scaled = scaled[:, :, ::-1]
    top = int(rng.integers(0, ss - s + 1))
    left = int(rng.integers(0, ss - s + 1))
    return np.ascontiguousarray(scaled[:, top:top + s, left:left + s])


def sample_noise(cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    """Standard-normal content batch for texture synthesis."""
    if cfg.mode != MODE_TEXTURE:
        raise ModeError(f"sample_noise requires mode '{MODE_TEXTURE}', got '{cfg.mode}'")
    return rng.standard_normal(
        (cfg.batch_size, 3, cfg.image_size, cfg.image_size), dtype=np.float32)


@dataclass
class StyleDataset:
    """In-memory dataset: content images plus K style collections."""

    collections: list[list[np.ndarray]]
    content: list[np.ndarray] = field(default_factory=list)
    style_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.collections or any(len(c) == 0 for c in self.collections):
            raise DatasetError("every style collection must be non-empty")
        if not self.style_names:
            self.style_names = [f"style{i}" for i in range(len(self.collections))]

    @property
    def style_count(self) -> int:
        return len(self.collections)


# ---------------------------------------------------------------------------
# the three update phases
# ---------------------------------------------------------------------------


@dataclass
class TrainState:
    """Everything train_step mutates: params, optimizers, buffer, streams."""

    gen: md.GeneratorParams
    disc: md.DiscriminatorParams
    opt_d: AdamState
    opt_g: AdamState
    opt_ae: AdamState
    buffer: ReplayBuffer
    rng: np.random.Generator
    iteration: int = 0


def _check_finite_loss(value: float, phase: str, iteration: int, extra=None):
    if not np.isfinite(value):
        record = {"iteration": iteration, "phase": phase, "loss": float(value)}
        if extra:
            record.update(extra)
        raise NonFiniteLossError(f"non-finite {phase} loss at iteration {iteration}", record)


def _frozen(tensors):
    class _Freeze:
        def __enter__(self):
            for t in tensors:
                t.requires_grad = False

        def __exit__(self, *exc):
            for t in tensors:
                t.requires_grad = True
            return False

    return _Freeze()


def _discriminator_phase(state: TrainState, x: np.ndarray, y: np.ndarray, c: int,
                         cfg: TrainConfig, extra_cls: list | None = None) -> float:
    """One D/C update; the generator runs untaped so it stays frozen.

    ``extra_cls`` optionally appends (image_array, label) pairs whose
    classifier loss joins the update (used for replayed styles during
    incremental training).
    """
    fake = md.generator_forward(Tensor(x), state.gen, c).data
    buffered = [state.buffer.query(fake[i], c)[0] for i in range(fake.shape[0])]
    fake_b = Tensor(np.stack(buffered))

    with ad.Tape() as tape:
        adv_real, cls_real_map = md.discriminator_heads(Tensor(y), state.disc)
        adv_fake = md.discriminate(fake_b, state.disc)
        loss = ad.add(ls.lsgan_d_loss(adv_real, adv_fake),
                      ls.classifier_loss_real(md.pooled_logits(cls_real_map), c))
        if extra_cls:
            for img, label in extra_cls:
                _, cls_map = md.discriminator_heads(Tensor(img), state.disc)
                loss = ad.add(loss, ls.classifier_loss_real(md.pooled_logits(cls_map), label))
    grads = ad.backward(tape, loss)
    value = loss.item()
    _check_finite_loss(value, "discriminator", state.iteration)
    names = [n for n in state.disc.params if grads.get(state.disc.params[n]) is not None]
    adam_step({n: state.disc.params[n] for n in names},
              {n: grads[state.disc.params[n]] for n in names},
              state.opt_d, cfg.learning_rate)
    return value


def _generator_phase(state: TrainState, x: np.ndarray, c: int, cfg: TrainConfig,
                     opt: AdamState | None = None,
                     update_names: list[str] | None = None) -> tuple[float, float, float]:
    """One generator update; discriminator parameters are frozen."""
    weights = ls.LossWeights(cfg.lambda_cls, cfg.lambda_tv, cfg.lambda_r)
    with _frozen(list(state.disc.params.values())):
        with ad.Tape() as tape:
            fake = md.generator_forward(Tensor(x), state.gen, c)
            adv_map, cls_map = md.discriminator_heads(fake, state.disc)
            g_adv = ls.lsgan_g_loss(adv_map)
            g_cls = ls.classifier_loss_generated(md.pooled_logits(cls_map), c)
            g_tv = ls.tv_loss(fake)
            loss = ls.generator_objective(g_adv, g_cls, g_tv, weights)
        grads = ad.backward(tape, loss)
    _check_finite_loss(loss.item(), "generator", state.iteration)
    if update_names is None:
        update_names = (state.gen.encoder_names() + state.gen.branch_names(c)
                        + state.gen.decoder_names())
    opt = state.opt_g if opt is None else opt
    params = {n: state.gen.params[n] for n in update_names}
    adam_step(params, {n: grads[params[n]] for n in params}, opt, cfg.learning_rate)
    return g_adv.item(), g_cls.item(), g_tv.item()


def _autoencoder_phase(state: TrainState, x: np.ndarray, cfg: TrainConfig) -> float:
    """One encoder+decoder update on the weighted reconstruction loss."""
    xt = Tensor(x)
    with ad.Tape() as tape:
        recon = ls.reconstruction_loss(xt, md.reconstruct(xt, state.gen))
        loss = ad.scale(recon, cfg.lambda_r)
    grads = ad.backward(tape, loss)
    value = recon.item()
    _check_finite_loss(value, "autoencoder", state.iteration)
    names = state.gen.encoder_names() + state.gen.decoder_names()
    params = {n: state.gen.params[n] for n in names}
    adam_step(params, {n: grads[params[n]] for n in params}, state.opt_ae, cfg.learning_rate)
    return value


def train_step(state: TrainState, batch, cfg: TrainConfig) -> dict:
    """One outer iteration on a single batch ``(x, (y, c))``.

    The same batch serves all ``k_d`` and ``k_g`` inner steps; with the
    default k_d = k_g = 1 each batch is consumed once.
    """
    x, (y, c) = batch
    if not (0 <= c < state.gen.style_count):
        raise ShapeError(f"style index {c} out of range [0, {state.gen.style_count})")
    it = state.iteration
    d_loss = 0.0
    for _ in range(cfg.k_d):
        d_loss = _discriminator_phase(state, x, y, c, cfg)
    g_adv = g_cls = g_tv = 0.0
    for _ in range(cfg.k_g):
        g_adv, g_cls, g_tv = _generator_phase(state, x, c, cfg)
    recon = None
    if cfg.lambda_r > 0:
        recon = _autoencoder_phase(state, x, cfg)
    state.iteration = it + 1
    return {"iteration": it, "d_loss": d_loss, "g_adv": g_adv,
            "g_cls": g_cls, "tv": g_tv, "recon": recon}


# ---------------------------------------------------------------------------
# outer loops
# ---------------------------------------------------------------------------


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def rng_from_state(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)


def init_state(cfg: TrainConfig, style_count: int) -> TrainState:
    """Fresh parameters, optimizers, buffer, and streams from cfg.seed."""
    ss = np.random.SeedSequence(cfg.seed)
    seeds = ss.spawn(4)
    gen = md.init_generator(style_count, cfg.width_scale, cfg.branch_depth, seed=seeds[0])
    disc = md.init_discriminator(style_count, cfg.width_scale, seed=seeds[1])
    return TrainState(
        gen=gen, disc=disc,
        opt_d=AdamState(), opt_g=AdamState(), opt_ae=AdamState(),
        buffer=ReplayBuffer(np.random.Generator(np.random.PCG64(seeds[2]))),
        rng=np.random.Generator(np.random.PCG64(seeds[3])),
    )


def _sample_batch(state: TrainState, data: StyleDataset, cfg: TrainConfig):
    """Fixed draw order: style, then per-image collection indices and
    augmentation draws, then the content batch."""
    rng = state.rng
    c = int(rng.integers(data.style_count))
    coll = data.collections[c]
    ys = np.stack([augment(coll[int(rng.integers(len(coll)))], cfg, rng)
                   for _ in range(cfg.batch_size)])
    if cfg.mode == MODE_TEXTURE:
        xs = sample_noise(cfg, rng)
    else:
        if not data.content:
            raise DatasetError("style_transfer mode needs a non-empty content set")
        xs = np.stack([augment(data.content[int(rng.integers(len(data.content)))], cfg, rng)
                       for _ in range(cfg.batch_size)])
    return xs, (ys, c)


def _open_log(out_dir: Path | None):
    if out_dir is None:
        return None
    out_dir.mkdir(parents=True, exist_ok=True)
    return open(out_dir / "metrics.jsonl", "a", encoding="utf-8")


def _write_record(log_fh, record: dict) -> None:
    if log_fh is not None:
        log_fh.write(json.dumps(record, sort_keys=True) + "\n")
        log_fh.flush()


def train(cfg: TrainConfig, data: StyleDataset, out_dir: str | Path | None = None,
          resume: str | Path | None = None):
    """Run the full loop; returns (generator, discriminator, metric records).

    When ``out_dir`` is given, appends metric records to ``metrics.jsonl``
    and writes checkpoints (every ``checkpoint_interval`` iterations when
    positive, and always at the end). ``resume`` restores a checkpoint,
    including optimizer moments, replay buffer, and stream positions, so the
    continued run is bit-identical to an uninterrupted one.
    """
    k = data.style_count
    if cfg.style_count and cfg.style_count != k:
        raise DatasetError(
            f"config says {cfg.style_count} styles but the dataset has {k} collections")
    if resume is not None:
        from . import dataio
        state, saved_cfg, _ = dataio.restore_train_state(resume, expect_styles=k)
        mismatched = [key for key, val in saved_cfg.to_dict().items()
                      if key != "iterations" and val != getattr(cfg, key)]
        if mismatched:
            raise DatasetError(
                f"resume config differs from checkpoint on fields {mismatched}")
    else:
        state = init_state(cfg, k)

    out_path = Path(out_dir) if out_dir is not None else None
    log_fh = _open_log(out_path)
    records = []
    final_written = False
    try:
        for i in range(state.iteration, cfg.iterations):
            t0 = time.perf_counter()
            batch = _sample_batch(state, data, cfg)
            record = train_step(state, batch, cfg)
            record["wall_ms"] = (time.perf_counter() - t0) * 1000.0
            if i % cfg.log_interval == 0:
                records.append(record)
                _write_record(log_fh, record)
            done = i + 1
            if out_path is not None and (
                    (cfg.checkpoint_interval and done % cfg.checkpoint_interval == 0)
                    or done == cfg.iterations):
                from . import dataio
                name = "checkpoint_final.ckpt" if done == cfg.iterations \
                    else f"checkpoint_{done:06d}.ckpt"
                dataio.save_checkpoint(out_path / name, state, cfg,
                                       style_names=data.style_names)
                final_written = final_written or done == cfg.iterations
        if out_path is not None and not final_written:
            from . import dataio
            dataio.save_checkpoint(out_path / "checkpoint_final.ckpt", state, cfg,
                                   style_names=data.style_names)
    finally:
        if log_fh is not None:
            log_fh.close()
    return state.gen, state.disc, records


def incremental_add_style(gen: md.GeneratorParams, disc: md.DiscriminatorParams,
                          new_collection: list[np.ndarray], cfg: TrainConfig,
                          content: list[np.ndarray] | None = None,
                          out_dir: str | Path | None = None):
    """Learn one new style while every existing parameter stays bit-frozen.

    Appends a fresh branch and a (K+1)-th classifier logit row, then trains
    only the new branch plus the discriminator (trunk and heads) on the new
    collection. Old styles are replayed as frozen-generator outputs feeding
    the classifier, so the extended head keeps the existing styles separated.
    The encoder/decoder are frozen, so there is no auto-encoder step.
    """
    if not new_collection:
        raise DatasetError("the new style collection is empty")
    k_old = gen.style_count
    ss = np.random.SeedSequence(cfg.seed)
    seeds = ss.spawn(4)
    gen2 = md.append_branch(gen, seed=seeds[0])
    disc2 = md.extend_classifier_head(disc, seed=seeds[1])
    state = TrainState(
        gen=gen2, disc=disc2,
        opt_d=AdamState(), opt_g=AdamState(), opt_ae=AdamState(),
        buffer=ReplayBuffer(np.random.Generator(np.random.PCG64(seeds[2]))),
        rng=np.random.Generator(np.random.PCG64(seeds[3])),
    )

    frozen_names = (gen2.encoder_names() + gen2.decoder_names()
                    + [n for c in range(k_old) for n in gen2.branch_names(c)])
    frozen_tensors = [gen2.params[n] for n in frozen_names]
    new_branch = gen2.branch_names(k_old)

    def sample_content(rng):
        if cfg.mode == MODE_TEXTURE:
            return sample_noise(cfg, rng)
        if not content:
            raise DatasetError("style_transfer mode needs a content set for add-style")
        return np.stack([augment(content[int(rng.integers(len(content)))], cfg, rng)
                         for _ in range(cfg.batch_size)])

    out_path = Path(out_dir) if out_dir is not None else None
    log_fh = _open_log(out_path)
    records = []
    try:
        with _frozen(frozen_tensors):
            for i in range(cfg.iterations):
                t0 = time.perf_counter()
                rng = state.rng
                y = np.stack([augment(new_collection[int(rng.integers(len(new_collection)))],
                                      cfg, rng) for _ in range(cfg.batch_size)])
                x = sample_content(rng)
                c_old = int(rng.integers(k_old))
                x_replay = sample_content(rng)
                replay_img = md.generator_forward(Tensor(x_replay), state.gen, c_old).data
                d_loss = 0.0
                for _ in range(cfg.k_d):
                    d_loss = _discriminator_phase(state, x, y, k_old, cfg,
                                                  extra_cls=[(replay_img, c_old)])
                g_adv = g_cls = g_tv = 0.0
                for _ in range(cfg.k_g):
                    g_adv, g_cls, g_tv = _generator_phase(
                        state, x, k_old, cfg, opt=state.opt_g, update_names=new_branch)
                state.iteration += 1
                record = {"iteration": i, "d_loss": d_loss, "g_adv": g_adv,
                          "g_cls": g_cls, "tv": g_tv, "recon": None,
                          "wall_ms": (time.perf_counter() - t0) * 1000.0}
                if i % cfg.log_interval == 0:
                    records.append(record)
                    _write_record(log_fh, record)
    finally:
        if log_fh is not None:
            log_fh.close()
    if out_path is not None:
        from . import dataio
        dataio.save_checkpoint(out_path / "checkpoint_final.ckpt", state, cfg)
    return state.gen, state.disc, records
