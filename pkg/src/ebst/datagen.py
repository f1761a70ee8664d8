"""Synthetic domain-shift datasets and CSV ingest.

All randomness flows through numpy's PCG64 generator via :func:`rng_stream`,
which derives an independent, reproducible stream per (seed, purpose) pair so
dataset noise, weight init and sampler noise never interleave.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ParseError


def rng_stream(seed: int, purpose: str) -> np.random.Generator:
    """PCG64 stream keyed by (crc32 of the purpose tag, seed).

    crc32 is stable across platforms and Python processes, unlike hash().
    """
    return np.random.default_rng([zlib.crc32(purpose.encode("utf-8")), int(seed)])


@dataclass
class DomainDataset:
    """Feature matrix with integer labels; -1 marks an unlabeled sample.

    ``eval_labels`` holds the hidden ground truth of a target dataset. It is
    meant for the evaluation entry point only and must never feed a training
    path.
    """

    features: np.ndarray  # [n, d]
    labels: np.ndarray    # [n], int, -1 = unlabeled
    domain: str           # "source" | "target"
    d: int
    k: int
    eval_labels: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.features.shape[0]


# Unit-circle centers of the two canonical arcs. The cloud sits at (0, 2.6),
# away from the origin, so rotating about the origin (the covariate-shift
# inducer) both displaces and re-orients it.
MOON_UPPER_CENTER = (-0.5, 2.35)
MOON_LOWER_CENTER = (0.5, 2.85)


def gen_two_moons(n: int, noise_sd: float, seed: int) -> DomainDataset:
    """Two interleaved half-circles with Gaussian perturbation, n/2 per class.

    Class 0 sits on the upper arc of the unit circle at MOON_UPPER_CENTER,
    class 1 on the lower arc of the unit circle at MOON_LOWER_CENTER,
    t in [0, pi]. noise_sd = 0 gives the bare arcs; identical arguments give
    bit-identical datasets.
    """
    if n < 2 or n % 2:
        raise ConfigError(f"n must be even and >= 2, got {n}")
    if noise_sd < 0:
        raise ConfigError("noise_sd must be >= 0")
    m = n // 2
    t = np.linspace(0.0, np.pi, m)
    ux, uy = MOON_UPPER_CENTER
    lx, ly = MOON_LOWER_CENTER
    upper = np.column_stack([ux + np.cos(t), uy + np.sin(t)])
    lower = np.column_stack([lx - np.cos(t), ly - np.sin(t)])
    feats = np.vstack([upper, lower])
    if noise_sd > 0:
        feats = feats + rng_stream(seed, "dataset").normal(0.0, noise_sd, feats.shape)
    labels = np.repeat([0, 1], m)
    return DomainDataset(feats, labels, "source", 2, 2)


def rotate_domain(ds: DomainDataset, theta_degrees: float) -> DomainDataset:
    """Rotate 2-D features about the origin; labels survive only as hidden truth."""
    if ds.d != 2:
        raise ConfigError(f"rotation needs 2-D features, dataset has d={ds.d}")
    theta = np.radians(theta_degrees)
    rot = np.array([[np.cos(theta), -np.sin(theta)],
                    [np.sin(theta), np.cos(theta)]])
    truth = ds.eval_labels if ds.eval_labels is not None else ds.labels
    return DomainDataset(
        features=ds.features @ rot.T,
        labels=np.full(len(ds), -1, dtype=np.int64),
        domain="target",
        d=2,
        k=ds.k,
        eval_labels=truth.copy(),
    )


def gen_gaussian_shift(n: int, k: int, mean_shift, seed: int):
    """K unit-variance clusters for a source set, plus a translated target.

    Cluster centers sit on a radius-3 circle in the first two feature dims
    (on a line when d == 1). The target set redraws the same per-class counts
    from the "dataset-target" stream and translates them by ``mean_shift``,
    so a zero shift gives an identically distributed (not identical) set.
    """
    shift = np.asarray(mean_shift, dtype=np.float64).ravel()
    d = shift.size
    if d < 1:
        raise ConfigError("mean_shift must have at least one component")
    if n < k:
        raise ConfigError(f"need n >= k, got n={n}, k={k}")
    counts = np.full(k, n // k)
    counts[: n % k] += 1
    centers = np.zeros((k, d))
    if d == 1:
        centers[:, 0] = 3.0 * np.arange(k)
    else:
        angles = 2.0 * np.pi * np.arange(k) / k
        centers[:, 0] = 3.0 * np.cos(angles)
        centers[:, 1] = 3.0 * np.sin(angles)

    def draw(rng, offset):
        feats = np.vstack([
            centers[c] + offset + rng.normal(0.0, 1.0, (counts[c], d)) for c in range(k)
        ])
        labels = np.repeat(np.arange(k), counts)
        return feats, labels

    src_feats, src_labels = draw(rng_stream(seed, "dataset"), np.zeros(d))
    tgt_feats, tgt_labels = draw(rng_stream(seed, "dataset-target"), shift)
    source = DomainDataset(src_feats, src_labels, "source", d, k)
    target = DomainDataset(tgt_feats, np.full(n, -1, dtype=np.int64), "target", d, k,
                           eval_labels=tgt_labels)
    return source, target


def _expected_header(d: int):
    return [f"f{i + 1}" for i in range(d)] + ["label"]


def load_csv(path, k: Optional[int] = None) -> DomainDataset:
    """Read a "f1,...,fD,label" CSV; label -1 marks an unlabeled row.

    When ``k`` is omitted it is inferred as max(label) + 1 over labeled rows
    (0 for a fully unlabeled or empty file).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ParseError("line 1: missing header")
        header = [h.strip() for h in header]
        if len(header) < 2 or header != _expected_header(len(header) - 1):
            raise ParseError(f"line 1: header must be f1,...,fD,label, got {','.join(header)}")
        d = len(header) - 1
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise ParseError(f"line {lineno}: expected {d + 1} fields, got {len(row)}")
            try:
                feats.append([float(c) for c in row[:d]])
            except ValueError:
                raise ParseError(f"line {lineno}: non-numeric feature value") from None
            try:
                label = int(row[d])
            except ValueError:
                raise ParseError(f"line {lineno}: non-integer label {row[d]!r}") from None
            if label < -1:
                raise ParseError(f"line {lineno}: label must be >= -1, got {label}")
            if k is not None and label >= k:
                raise ParseError(f"line {lineno}: label {label} out of range for k={k}")
            labels.append(label)
    features = np.array(feats, dtype=np.float64).reshape(len(labels), d)
    label_arr = np.array(labels, dtype=np.int64)
    labeled = label_arr[label_arr >= 0]
    k_eff = k if k is not None else (int(labeled.max()) + 1 if labeled.size else 0)
    domain = "target" if label_arr.size and (label_arr == -1).all() else "source"
    return DomainDataset(features, label_arr, domain, d, k_eff)


def write_csv(ds: DomainDataset, path) -> None:
    """Write the visible part of a dataset (hidden truth never leaves)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_expected_header(ds.d))
        for row, label in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
