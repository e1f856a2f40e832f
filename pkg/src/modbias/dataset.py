"""Colored-digit dataset construction and on-disk format.

A dataset directory holds one split: `manifest.json` (seed, rho, regime,
palette, assignment map, realized color-label counts) plus `samples.bin`
(little-endian u32 count, then per sample: u8 label, u8 color index, 2352
bytes of 28x28x3 RGB, channels last).

Color injection: each digit class d has a map color A(d). The train split
takes the map color with probability rho and a uniformly random palette
color otherwise, so the count matrix stays off-diagonal. Test splits are
pure-condition: every sample takes its map color, which makes each regime
an unmixed measurement (in-domain test = train's dominant condition, ood
test = the deranged condition). The in-domain regime uses the identity map
for both splits; ood keeps identity for train and a seeded derangement for
test.
"""

import dataclasses
import json
import os
import struct

import numpy as np

from . import synth
from .errors import SeedMissing, StaleCache, Truncated

FORMAT_VERSION = 1
IMAGE_BYTES = 28 * 28 * 3

COLOR_NAMES = ["red", "green", "blue", "yellow", "magenta",
               "cyan", "orange", "purple", "brown", "pink"]

PALETTE_U8 = np.array([
    [255, 0, 0], [0, 255, 0], [0, 0, 255], [255, 255, 0], [255, 0, 255],
    [0, 255, 255], [255, 128, 0], [128, 0, 255], [150, 75, 0], [255, 180, 193],
], dtype=np.uint8)

PALETTE = PALETTE_U8.astype(np.float64) / 255.0

DEFAULT_N_TRAIN = 16000
DEFAULT_N_TEST = 5000


@dataclasses.dataclass
class ColoredSplit:
    """One split: quantized pixels plus per-sample label and color index."""

    pixels: np.ndarray   # (n, 2352) uint8, 28x28x3 channels-last
    labels: np.ndarray   # (n,) uint8
    bias: np.ndarray     # (n,) uint8 color indices
    manifest: dict

    def __len__(self):
        return len(self.labels)

    def float_pixels(self, idx=slice(None)):
        """Pixels as float64 in [0, 1]."""
        return self.pixels[idx].astype(np.float64) / 255.0


def colorize(image, color):
    """Tint a grayscale image: out[r][c][ch] = image[r][c] * color[ch].

    `image` is (..., 28, 28) float in [0, 1]; `color` a length-3 float RGB
    triple in [0, 1]. Zero-intensity pixels stay black.
    """
    image = np.asarray(image, dtype=np.float64)
    color = np.asarray(color, dtype=np.float64)
    return image[..., None] * color


def recover_gray(colored, color):
    """Invert colorize using the brightest palette channel."""
    color = np.asarray(color, dtype=np.float64)
    ch = int(np.argmax(color))
    return np.asarray(colored)[..., ch] / color[ch]


def derangement(seed, kind="random"):
    """A permutation of 0..9 with no fixed points.

    kind="cyclic" shifts every class by one; kind="random" rejection-samples
    a seeded permutation until it has no fixed point.
    """
    ident = np.arange(10)
    if kind == "cyclic":
        return np.roll(ident, 1)
    rng = np.random.default_rng(seed + 104729)
    while True:
        perm = rng.permutation(10)
        if not np.any(perm == ident):
            return perm


def assign_colors(labels, regime, split, seed, rho, derangement_kind="random"):
    """Color indices for a split.

    Train samples take the split's map color with probability rho, else a
    uniformly random palette color. Test samples always take the map color
    (pure condition). In-domain regime maps every class to its own color on
    both splits; ood regime keeps the identity map for train and a seeded
    derangement for test.
    """
    labels = np.asarray(labels)
    amap = np.arange(10)
    if regime == "ood" and split == "test":
        amap = derangement(seed, derangement_kind)
    k = amap[labels].astype(np.uint8)
    if split == "train" and rho < 1.0:
        crng = np.random.default_rng(seed + 77)
        flip = crng.random(len(labels)) >= rho
        k[flip] = crng.integers(0, 10, int(flip.sum())).astype(np.uint8)
    return k


def quantize_colored(gray_u8, color_idx):
    """Apply palette tint in 8-bit arithmetic: floor(gray * pal / 255)."""
    rgb = (gray_u8[..., None].astype(np.uint16)
           * PALETTE_U8[color_idx][:, None, None, :]) // 255
    return rgb.astype(np.uint8)


def _counts(labels, bias):
    counts = np.zeros((10, 10), dtype=np.int64)
    np.add.at(counts, (bias.astype(np.int64), labels.astype(np.int64)), 1)
    return counts


def _make_split(gray, labels, split, regime, seed, rho, derangement_kind):
    k = assign_colors(labels, regime, split, seed, rho, derangement_kind)
    gray_u8 = np.clip(gray * 255, 0, 255).astype(np.uint8)
    rgb = quantize_colored(gray_u8, k)
    amap = np.arange(10)
    if regime == "ood" and split == "test":
        amap = derangement(seed, derangement_kind)
    manifest = {
        "format_version": FORMAT_VERSION,
        "split": split,
        "regime": regime,
        "seed": int(seed),
        "rho": float(rho),
        "derangement": derangement_kind if regime == "ood" else None,
        "palette": PALETTE_U8.tolist(),
        "color_names": COLOR_NAMES,
        "assignment": amap.tolist(),
        "counts": _counts(labels, k).tolist(),
        "n": int(len(labels)),
    }
    return ColoredSplit(rgb.reshape(len(labels), -1), labels.astype(np.uint8),
                        k.astype(np.uint8), manifest)


def build_dataset(regime="iid", seed=0, rho=0.9, n_train=DEFAULT_N_TRAIN,
                  n_test=DEFAULT_N_TEST, derangement_kind="random",
                  gray_source=None):
    """Build (train, test) ColoredSplits for one regime.

    With no gray_source the stroke synthesizer generates the digits; pass
    gray_source=(train_images, train_labels, test_images, test_labels) with
    float [0,1] images to colorize an external corpus instead. Equal
    arguments give byte-identical splits.
    """
    if gray_source is None:
        rng = np.random.default_rng(seed)
        gray_tr, y_tr = synth.synthesize_gray(n_train, rng)
        gray_te, y_te = synth.synthesize_gray(n_test, rng)
    else:
        gray_tr, y_tr, gray_te, y_te = gray_source
        gray_tr = np.asarray(gray_tr, dtype=np.float64)
        gray_te = np.asarray(gray_te, dtype=np.float64)
        y_tr = np.asarray(y_tr)
        y_te = np.asarray(y_te)
    train = _make_split(gray_tr, y_tr, "train", regime, seed, rho, derangement_kind)
    test = _make_split(gray_te, y_te, "test", regime, seed, rho, derangement_kind)
    return train, test


def write_split(split, out_dir):
    """Write manifest.json + samples.bin; overwrites with identical bytes."""
    os.makedirs(out_dir, exist_ok=True)
    n = len(split)
    rec = np.empty((n, 2 + IMAGE_BYTES), dtype=np.uint8)
    rec[:, 0] = split.labels
    rec[:, 1] = split.bias
    rec[:, 2:] = split.pixels
    with open(os.path.join(out_dir, "samples.bin"), "wb") as fh:
        fh.write(struct.pack("<I", n))
        fh.write(rec.tobytes())
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(split.manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_split(path):
    """Read a split directory back into a ColoredSplit."""
    with open(os.path.join(path, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    if "seed" not in manifest:
        raise SeedMissing(f"manifest in {path} lacks a seed")
    with open(os.path.join(path, "samples.bin"), "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise Truncated("samples.bin header")
    n = struct.unpack("<I", raw[:4])[0]
    need = 4 + n * (2 + IMAGE_BYTES)
    if len(raw) < need:
        raise Truncated(f"samples.bin needs {need} bytes, got {len(raw)}")
    if manifest.get("n") != n:
        raise StaleCache(
            f"manifest n={manifest.get('n')} but samples.bin holds {n}")
    rec = np.frombuffer(raw[4:need], dtype=np.uint8).reshape(n, 2 + IMAGE_BYTES)
    return ColoredSplit(rec[:, 2:].copy(), rec[:, 0].copy(), rec[:, 1].copy(),
                        manifest)


def write_dataset(out_dir, train, test):
    write_split(train, os.path.join(out_dir, "train"))
    write_split(test, os.path.join(out_dir, "test"))


def load_dataset(root):
    return (load_split(os.path.join(root, "train")),
            load_split(os.path.join(root, "test")))
