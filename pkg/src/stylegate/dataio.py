"""Image codec, dataset indexing, and checkpoint persistence.

Images
    8-bit PNG (and PPM as the dependency-free fallback). Byte b maps to
    2*b/255 - 1 on load; saving rounds half-up and clamps, so an 8-bit image
    survives a load/save round trip byte-identically.

Checkpoints
    A single binary container::

        8 bytes   magic  b"STYLEGCK"
        4 bytes   format version (little-endian uint32)
        8 bytes   header length  (little-endian uint64)
        N bytes   header JSON (sorted keys, compact separators)
        M bytes   payload: the entries' raw array data

    The header holds the entry manifest (name, shape, dtype, byte offset),
    the run metadata (config snapshot, iteration, rng stream states, Adam
    step counters), and a SHA-256 digest of the payload. Entries are written
    in sorted-name order with explicit little-endian dtypes, so identical
    state serializes to identical bytes on any platform. Only semantic
    training fields are snapshotted (no filesystem paths), which keeps a
    resumed run's final checkpoint byte-identical to an uninterrupted one.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import models as md
from . import training as tr
from .autodiff import parameter
from .config import TrainConfig
from .errors import (CheckpointError, ChecksumError, DatasetError,
                     ImageDecodeError, ImageWriteError, ShapeError, VersionError)

logger = logging.getLogger("stylegate")

SUPPORTED_SUFFIXES = (".png", ".ppm")

CHECKPOINT_MAGIC = b"STYLEGCK"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------


def load_image(path: str | Path) -> np.ndarray:
    """Decode to (3, H, W) float32 in [-1, 1]."""
    path = Path(path)
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise ImageDecodeError(f"unsupported image format '{path.suffix}' for '{path}'")
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except FileNotFoundError:
        raise ImageDecodeError(f"image file not found: '{path}'") from None
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as e:
        raise ImageDecodeError(f"cannot decode image '{path}': {e}") from None
    chw = arr.transpose(2, 0, 1)
    return chw.astype(np.float32) * np.float32(2.0 / 255.0) - np.float32(1.0)


def save_image(img: np.ndarray, path: str | Path) -> None:
    """Encode (3, H, W) values in [-1, 1]; rounds half-up, clamps to 8 bits."""
    path = Path(path)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"save_image expects (3, H, W), got shape {img.shape}")
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise ImageWriteError(f"unsupported image format '{path.suffix}' for '{path}'")
    if not path.parent.is_dir():
        raise ImageWriteError(f"parent directory does not exist: '{path.parent}'")
    scaled = (img.astype(np.float64) + 1.0) * 127.5
    quantized = np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)
    Image.fromarray(quantized.transpose(1, 2, 0), mode="RGB").save(path)


# ---------------------------------------------------------------------------
# dataset indexing
# ---------------------------------------------------------------------------


@dataclass
class DatasetIndex:
    """File-level view of a directory-per-style dataset."""

    content_files: list[Path]
    style_collections: list[list[Path]]
    style_names: list[str]
    skipped: int = 0

    @property
    def counts(self) -> list[int]:
        return [len(c) for c in self.style_collections]

    @property
    def style_count(self) -> int:
        return len(self.style_collections)


def _list_images(directory: Path) -> tuple[list[Path], int]:
    if not directory.is_dir():
        raise DatasetError(f"dataset directory does not exist: '{directory}'")
    files, skipped = [], 0
    for p in sorted(directory.iterdir(), key=lambda q: q.name):
        if not p.is_file():
            continue
        if p.suffix.lower() in SUPPORTED_SUFFIXES:
            files.append(p)
        else:
            skipped += 1
    return files, skipped


def index_dataset(style_dirs: list[str | Path], content_dir: str | Path | None = None,
                  style_names: list[str] | None = None) -> DatasetIndex:
    """Deterministic lexicographic index; empty collections are errors."""
    collections = []
    skipped = 0
    for d in style_dirs:
        files, s = _list_images(Path(d))
        if not files:
            raise DatasetError(f"style collection directory '{d}' has no images")
        collections.append(files)
        skipped += s
    content: list[Path] = []
    if content_dir:
        content, s = _list_images(Path(content_dir))
        skipped += s
    if style_names is None or not style_names:
        style_names = [Path(d).name for d in style_dirs]
    if len(style_names) != len(collections):
        raise DatasetError(
            f"{len(style_names)} style names for {len(collections)} collections")
    if skipped:
        logger.warning("index_dataset skipped %d non-image files", skipped)
    return DatasetIndex(content, collections, list(style_names), skipped)


def load_dataset(index: DatasetIndex) -> tr.StyleDataset:
    """Decode everything in the index into an in-memory StyleDataset."""
    collections = [[load_image(p) for p in coll] for coll in index.style_collections]
    content = [load_image(p) for p in index.content_files]
    return tr.StyleDataset(collections=collections, content=content,
                           style_names=list(index.style_names))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


_DTYPES = {"<f4": np.dtype("<f4"), "<i8": np.dtype("<i8")}


def _entry_dtype(arr: np.ndarray) -> str:
    if arr.dtype.kind == "f":
        return "<f4"
    if arr.dtype.kind == "i":
        return "<i8"
    raise CheckpointError(f"unsupported checkpoint dtype {arr.dtype}")


def write_container(path: str | Path, entries: dict[str, np.ndarray], meta: dict) -> None:
    """Serialize named arrays plus JSON metadata with a payload checksum."""
    manifest = []
    payload = bytearray()
    for name in sorted(entries):
        arr = entries[name]
        code = _entry_dtype(arr)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": code,
                         "offset": len(payload), "nbytes": len(raw)})
        payload.extend(raw)
    header = {
        "entries": manifest,
        "meta": meta,
        "payload_sha256": hashlib.sha256(bytes(payload)).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(bytes(payload))


def read_container(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Inverse of write_container; verifies magic, version, and checksum."""
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint '{path}': {e}") from None
    if len(blob) < 20 or blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"'{path}' is not a stylegate checkpoint")
    (version,) = struct.unpack("<I", blob[8:12])
    if version != CHECKPOINT_VERSION:
        raise VersionError(
            f"checkpoint '{path}' has format version {version}, expected {CHECKPOINT_VERSION}")
    (header_len,) = struct.unpack("<Q", blob[12:20])
    try:
        header = json.loads(blob[20:20 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"checkpoint '{path}' header corrupt: {e}") from None
    payload = blob[20 + header_len:]
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header.get("payload_sha256"):
        raise ChecksumError(f"checkpoint '{path}' payload checksum mismatch")
    entries = {}
    for ent in header["entries"]:
        dt = _DTYPES[ent["dtype"]]
        raw = payload[ent["offset"]:ent["offset"] + ent["nbytes"]]
        arr = np.frombuffer(raw, dtype=dt).reshape(ent["shape"]).copy()
        entries[ent["name"]] = arr
    return entries, header["meta"]


def save_checkpoint(path: str | Path, state: tr.TrainState, cfg: TrainConfig,
                    style_names: list[str] | None = None) -> None:
    """Persist the full training state for bit-exact resume."""
    entries: dict[str, np.ndarray] = {}
    for name, t in state.gen.params.items():
        entries[f"gen.{name}"] = t.data
    for name, t in state.disc.params.items():
        entries[f"disc.{name}"] = t.data
    opt_t = {}
    for opt_name, opt in (("opt_d", state.opt_d), ("opt_g", state.opt_g),
                          ("opt_ae", state.opt_ae)):
        opt_t[opt_name] = dict(opt.t)
        for pname in opt.m:
            entries[f"{opt_name}.m.{pname}"] = opt.m[pname]
            entries[f"{opt_name}.v.{pname}"] = opt.v[pname]
    if state.buffer.images:
        entries["buffer.images"] = np.stack(state.buffer.images)
        entries["buffer.labels"] = np.asarray(state.buffer.labels, dtype=np.int64)
    meta = {
        "kind": "stylegate-checkpoint",
        "config": cfg.to_dict(),
        "iteration": state.iteration,
        "style_names": list(style_names) if style_names else
                       [f"style{i}" for i in range(state.gen.style_count)],
        "gen": {"style_count": state.gen.style_count,
                "width_scale": state.gen.width_scale,
                "branch_depth": state.gen.branch_depth},
        "disc": {"style_count": state.disc.style_count,
                 "width_scale": state.disc.width_scale},
        "opt_t": opt_t,
        "buffer_capacity": state.buffer.capacity,
        "rng": {"loop": state.rng.bit_generator.state,
                "buffer": state.buffer.rng.bit_generator.state},
    }
    write_container(path, entries, meta)


def restore_train_state(path: str | Path, expect_styles: int | None = None
                        ) -> tuple[tr.TrainState, TrainConfig, list[str]]:
    """Rebuild a TrainState (params, optimizers, buffer, streams) from disk.

    ``expect_styles`` guards against resuming into a dataset with a different
    collection count; incremental extension goes through append_branch /
    extend_classifier_head instead.
    """
    entries, meta = read_container(path)
    if meta.get("kind") != "stylegate-checkpoint":
        raise CheckpointError(f"'{path}' does not hold a training checkpoint")
    gmeta = meta["gen"]
    if expect_styles is not None and gmeta["style_count"] != expect_styles:
        raise CheckpointError(
            f"checkpoint has {gmeta['style_count']} style branches but the run "
            f"expects {expect_styles}; use add-style to extend a trained model")
    gen = md.GeneratorParams(gmeta["style_count"], gmeta["width_scale"],
                             gmeta["branch_depth"])
    disc = md.DiscriminatorParams(meta["disc"]["style_count"], meta["disc"]["width_scale"])
    for key, arr in entries.items():
        if key.startswith("gen."):
            gen.params[key[len("gen."):]] = parameter(arr)
        elif key.startswith("disc."):
            disc.params[key[len("disc."):]] = parameter(arr)
    opts = {"opt_d": tr.AdamState(), "opt_g": tr.AdamState(), "opt_ae": tr.AdamState()}
    for opt_name, opt in opts.items():
        for key, arr in entries.items():
            prefix_m, prefix_v = f"{opt_name}.m.", f"{opt_name}.v."
            if key.startswith(prefix_m):
                opt.m[key[len(prefix_m):]] = arr.astype(np.float32)
            elif key.startswith(prefix_v):
                opt.v[key[len(prefix_v):]] = arr.astype(np.float32)
        opt.t = {k: int(v) for k, v in meta["opt_t"][opt_name].items()}
    buffer = tr.ReplayBuffer(tr.rng_from_state(meta["rng"]["buffer"]),
                             capacity=meta["buffer_capacity"])
    if "buffer.images" in entries:
        buffer.images = [np.array(a) for a in entries["buffer.images"]]
        buffer.labels = [int(v) for v in entries["buffer.labels"]]
    state = tr.TrainState(
        gen=gen, disc=disc, opt_d=opts["opt_d"], opt_g=opts["opt_g"],
        opt_ae=opts["opt_ae"], buffer=buffer,
        rng=tr.rng_from_state(meta["rng"]["loop"]),
        iteration=int(meta["iteration"]),
    )
    cfg = TrainConfig.from_dict(meta["config"])
    return state, cfg, list(meta["style_names"])
