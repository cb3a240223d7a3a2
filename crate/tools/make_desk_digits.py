#!/usr/bin/env python3
"""Build the desk-scale handwritten-digit dataset under data/mnist-desk/.

Takes the 1797 real 8x8 handwritten digits bundled with scikit-learn,
upscales them to 28x28 with bilinear interpolation, and writes standard
IDX files (the MNIST binary layout: magic 0x00000803 / 0x00000801,
big-endian dimensions). The full-size MNIST files are a drop-in
replacement: point `data_dir` at a directory containing them.

Deterministic: fixed permutation seed, fixed split sizes.
"""

import struct
from pathlib import Path

import numpy as np
from PIL import Image
from sklearn.datasets import load_digits

OUT = Path(__file__).resolve().parent.parent / "data" / "mnist-desk"
TRAIN = 1500
SEED = 20240001


def write_images(path: Path, images: np.ndarray) -> None:
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path: Path, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main() -> None:
    digits = load_digits()
    images = digits.images  # (1797, 8, 8) float in 0..16
    labels = digits.target.astype(np.uint8)

    upscaled = np.zeros((len(images), 28, 28), dtype=np.uint8)
    for i, img in enumerate(images):
        pil = Image.fromarray((img / 16.0 * 255.0).astype(np.uint8), mode="L")
        upscaled[i] = np.asarray(pil.resize((28, 28), Image.BILINEAR))

    order = np.random.RandomState(SEED).permutation(len(images))
    train_idx, test_idx = order[:TRAIN], order[TRAIN:]

    OUT.mkdir(parents=True, exist_ok=True)
    write_images(OUT / "train-images-idx3-ubyte", upscaled[train_idx])
    write_labels(OUT / "train-labels-idx1-ubyte", labels[train_idx])
    write_images(OUT / "t10k-images-idx3-ubyte", upscaled[test_idx])
    write_labels(OUT / "t10k-labels-idx1-ubyte", labels[test_idx])
    print(f"wrote {TRAIN} train / {len(test_idx)} test digits to {OUT}")


if __name__ == "__main__":
    main()
