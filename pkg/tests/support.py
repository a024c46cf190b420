"""Shared test helpers: finite-difference oracles and dataset fixtures."""

from __future__ import annotations

import os
from fractions import Fraction

import numpy as np


def central_difference(f, x, h=1e-5):
    """Dense central finite differences of a scalar function of an array."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        grad[idx] = (f(xp) - f(xm)) / (2.0 * h)
    return grad


def assert_grad_close(analytic, numeric, rtol=1e-3, atol=1e-6, label=""):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    assert analytic.shape == numeric.shape
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    bad = np.abs(analytic - numeric) > atol + rtol * scale
    assert not bad.any(), (
        f"{label} gradient mismatch at {np.argwhere(bad)[:5].tolist()}: "
        f"analytic {analytic[bad][:5]} vs numeric {numeric[bad][:5]}"
    )


def probe_loss(out, weights):
    """Random-projection scalar probe: sum(out * weights)."""
    return float(np.sum(np.asarray(out, dtype=np.float64) * weights))


def round_half_even_fraction(x: Fraction) -> int:
    """Exact round-to-nearest-even of a rational (the oracle rounding rule)."""
    floor = x.numerator // x.denominator
    rem = x - floor
    if rem > Fraction(1, 2):
        return floor + 1
    if rem < Fraction(1, 2):
        return floor
    return floor if floor % 2 == 0 else floor + 1


def oracle_fx_dot_raw(raw_a, raw_b, fmt) -> int:
    """Exact-rational dot-product oracle: one final quantization, saturating."""
    total = sum(int(x) * int(y) for x, y in zip(raw_a, raw_b))
    raw = round_half_even_fraction(Fraction(total, fmt.scale))
    return min(max(raw, fmt.raw_min), fmt.raw_max)


def direct_conv2d(x, weight, bias, stride, padding):
    """Naive sliding-window convolution oracle, float64."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    batch, chans, h, w = x.shape
    filters, _, k, _ = weight.shape
    xp = np.zeros((batch, chans, h + 2 * padding, w + 2 * padding))
    xp[:, :, padding : padding + h, padding : padding + w] = x
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    out = np.zeros((batch, filters, h_out, w_out))
    for b in range(batch):
        for f in range(filters):
            for i in range(h_out):
                for j in range(w_out):
                    patch = xp[b, :, i * stride : i * stride + k, j * stride : j * stride + k]
                    out[b, f, i, j] = np.sum(patch * weight[f]) + bias[f]
    return out


def write_cifar_dir(dirpath, n_per_batch=40, seed=0):
    """Write a CIFAR-10-binary-format directory with random records.

    Returns (train_pixels, train_labels, test_pixels, test_labels) as the
    raw uint8 arrays that were serialized.
    """
    rng = np.random.default_rng(seed)
    os.makedirs(dirpath, exist_ok=True)

    def make_split(n, names):
        all_pixels, all_labels = [], []
        for name in names:
            labels = rng.integers(0, 10, size=n, dtype=np.uint8)
            pixels = rng.integers(0, 256, size=(n, 3, 32, 32), dtype=np.uint8)
            records = np.concatenate(
                [labels[:, None], pixels.reshape(n, -1)], axis=1
            ).astype(np.uint8)
            records.tofile(os.path.join(dirpath, name))
            all_pixels.append(pixels)
            all_labels.append(labels)
        return np.concatenate(all_pixels), np.concatenate(all_labels)

    train = make_split(n_per_batch, [f"data_batch_{i}.bin" for i in range(1, 6)])
    test = make_split(n_per_batch, ["test_batch.bin"])
    return train[0], train[1], test[0], test[1]


def dataset_to_cifar_dir(dirpath, train_ds, test_ds, norm):
    """Serialize normalized datasets back into CIFAR binary files.

    Inverts the loader's normalization and quantizes to uint8, splitting the
    train set over the five batch files.  Returns the datasets that an exact
    re-load should produce (i.e. built from the serialized uint8 pixels).
    """
    os.makedirs(dirpath, exist_ok=True)
    means = np.asarray(norm.means, dtype=np.float64).reshape(1, 3, 1, 1)
    stds = np.asarray(norm.stds, dtype=np.float64).reshape(1, 3, 1, 1)

    def to_uint8(images):
        pixels = (np.asarray(images, np.float64) * stds + means) * 255.0
        return np.clip(np.rint(pixels), 0, 255).astype(np.uint8)

    def write(name, pixels, labels):
        records = np.concatenate(
            [labels.astype(np.uint8)[:, None], pixels.reshape(len(labels), -1)], axis=1
        )
        records.tofile(os.path.join(dirpath, name))

    train_pix = to_uint8(train_ds.images)
    test_pix = to_uint8(test_ds.images)
    splits = np.array_split(np.arange(len(train_ds.labels)), 5)
    for i, pick in enumerate(splits, start=1):
        write(f"data_batch_{i}.bin", train_pix[pick], train_ds.labels[pick])
    write("test_batch.bin", test_pix, test_ds.labels)
