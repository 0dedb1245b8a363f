"""MiniBooNE particle-identification data: parsing, labelling, splitting.

The UCI file starts with a line holding the signal and background counts,
followed by one whitespace-separated row of 50 reals per event; the signal
(electron neutrino) events come first.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

N_FEATURES = 50
MINIBOONE_N_SIGNAL = 36_499
MINIBOONE_N_BACKGROUND = 93_565
DEFAULT_N_TRAIN = 91_044
DEFAULT_TRAIN_FRACTION = DEFAULT_N_TRAIN / (MINIBOONE_N_SIGNAL + MINIBOONE_N_BACKGROUND)

DOWNLOAD_HINT = (
    "download MiniBooNE_PID.txt from the UCI Machine Learning Repository "
    "(https://archive.ics.uci.edu/dataset/199/miniboone+particle+identification) "
    "and pass it with --dataset, or use --synthetic"
)


class DataFormatError(ValueError):
    pass


class ChecksumMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RawDataset:
    features: np.ndarray  # (N, 50), signal rows first
    n_signal: int
    n_background: int
    synthetic: bool = False

    @property
    def n_total(self):
        return self.n_signal + self.n_background

    def labels(self):
        """1 for the leading ``n_signal`` rows (signal), 0 for the rest."""
        y = np.zeros(self.n_total)
        y[: self.n_signal] = 1.0
        return y

    def checksum(self):
        return dataset_checksum(self)


def dataset_checksum(raw: RawDataset) -> str:
    h = hashlib.sha256()
    h.update(f"{raw.n_signal} {raw.n_background}\n".encode())
    h.update(np.ascontiguousarray(raw.features, dtype="<f8").tobytes())
    return h.hexdigest()


def load_raw(path) -> RawDataset:
    path = Path(path)
    with open(path) as fh:
        first = fh.readline()
        counts = first.split()
        if len(counts) != 2:
            raise DataFormatError(f"{path}:1: expected two integer counts, got {first.strip()!r}")
        try:
            n_signal, n_background = int(counts[0]), int(counts[1])
        except ValueError as exc:
            raise DataFormatError(f"{path}:1: counts must be integers: {first.strip()!r}") from exc
        rows = []
        for lineno, line in enumerate(fh, 2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != N_FEATURES:
                raise DataFormatError(f"{path}:{lineno}: expected {N_FEATURES} values, found {len(parts)}")
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
    if len(rows) != n_signal + n_background:
        raise DataFormatError(
            f"{path}: header announces {n_signal} + {n_background} = {n_signal + n_background} rows, found {len(rows)}"
        )
    features = np.array(rows, dtype=np.float64).reshape(len(rows), N_FEATURES)
    return RawDataset(features, n_signal, n_background)


def write_raw(raw: RawDataset, path):
    """Write in the UCI layout (used for fixtures and for caching synthetic data)."""
    with open(path, "w") as fh:
        fh.write(f"{raw.n_signal} {raw.n_background}\n")
        for row in raw.features:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def synthetic_fallback(seed: int, n_signal: int = MINIBOONE_N_SIGNAL, n_background: int = MINIBOONE_N_BACKGROUND) -> RawDataset:
    """Seeded stand-in with class-dependent Gaussian feature means.

    Classes overlap (unit variances, mean offsets of a few tenths), so the task
    is learnable but not separable.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3,)))
    shift = rng.normal(0.0, 0.3, size=N_FEATURES)
    base = rng.normal(0.0, 1.0, size=N_FEATURES)
    signal = rng.normal(base + shift, 1.0, size=(n_signal, N_FEATURES))
    background = rng.normal(base - shift, 1.0, size=(n_background, N_FEATURES))
    return RawDataset(np.vstack([signal, background]), n_signal, n_background, synthetic=True)


@dataclass(frozen=True, eq=False)
class SplitDataset:
    train_X: np.ndarray
    train_y: np.ndarray
    test_X: np.ndarray
    test_y: np.ndarray
    split_seed: int
    train_fraction: float
    permutation: np.ndarray
    source_checksum: str

    @property
    def n_train(self):
        return len(self.train_y)

    @property
    def n_test(self):
        return len(self.test_y)


def n_train_for(n_total: int, train_fraction: float) -> int:
    # tolerate representation error in fractions such as 91044/130064
    return int(math.floor(train_fraction * n_total + 1e-9))


def label_and_split(raw: RawDataset, split_seed: int, train_fraction: float = DEFAULT_TRAIN_FRACTION) -> SplitDataset:
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(np.random.SeedSequence(split_seed, spawn_key=(4,)))
    perm = rng.permutation(raw.n_total)
    return _apply_split(raw, perm, split_seed, train_fraction)


def _apply_split(raw, perm, split_seed, train_fraction):
    n_train = n_train_for(raw.n_total, train_fraction)
    labels = raw.labels()
    tr, te = perm[:n_train], perm[n_train:]
    return SplitDataset(
        raw.features[tr], labels[tr], raw.features[te], labels[te],
        int(split_seed), float(train_fraction), perm, dataset_checksum(raw),
    )


def zscore(split: SplitDataset) -> SplitDataset:
    """Standardize features with training-set statistics (exploratory; off by default)."""
    mu = split.train_X.mean(axis=0)
    sd = split.train_X.std(axis=0)
    sd[sd == 0] = 1.0
    return SplitDataset(
        (split.train_X - mu) / sd, split.train_y, (split.test_X - mu) / sd, split.test_y,
        split.split_seed, split.train_fraction, split.permutation, split.source_checksum,
    )


SPLIT_FIELDS = ("source_checksum", "seed", "fraction", "n_train", "n_test")


def persist_split(split: SplitDataset, path):
    """Write ``<path>`` (key=value metadata) and ``<path>.idx`` (one index per line)."""
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(f"source_checksum={split.source_checksum}\n")
        fh.write(f"seed={split.split_seed}\n")
        fh.write(f"fraction={split.train_fraction!r}\n")
        fh.write(f"n_train={split.n_train}\n")
        fh.write(f"n_test={split.n_test}\n")
    np.savetxt(path.with_name(path.name + ".idx"), split.permutation, fmt="%d")


def load_split(path, raw: RawDataset) -> SplitDataset:
    """Rebuild a persisted split; refuses if ``raw`` is not the dataset it was made from."""
    path = Path(path)
    meta = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise DataFormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            meta[key] = value
    missing = [f for f in SPLIT_FIELDS if f not in meta]
    if missing:
        raise DataFormatError(f"{path}: missing metadata fields {missing}")
    actual = dataset_checksum(raw)
    if meta["source_checksum"] != actual:
        raise ChecksumMismatchError(f"{path}: split made from dataset {meta['source_checksum'][:12]}..., got {actual[:12]}...")
    perm = np.loadtxt(path.with_name(path.name + ".idx"), dtype=np.int64, ndmin=1)
    if len(perm) != raw.n_total or not np.array_equal(np.sort(perm), np.arange(raw.n_total)):
        raise DataFormatError(f"{path}.idx is not a permutation of {raw.n_total} rows")
    split = _apply_split(raw, perm, int(meta["seed"]), float(meta["fraction"]))
    if (split.n_train, split.n_test) != (int(meta["n_train"]), int(meta["n_test"])):
        raise DataFormatError(f"{path}: recorded sizes {meta['n_train']}/{meta['n_test']} do not match")
    return split
