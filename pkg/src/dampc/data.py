"""Feature sets, CSV I/O, synthetic domain-shift generators and batching."""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass
from typing import Iterator, Tuple

import numpy as np

from .numerics import Rng, as_matrix


class DataError(ValueError):
    pass


@dataclass
class LabeledSet:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.features = as_matrix(self.features)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] < 1:
            raise DataError("a labeled set needs at least one row")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError(f"{self.labels.size} labels for {self.features.shape[0]} rows")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise DataError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


@dataclass
class UnlabeledSet:
    features: np.ndarray

    def __post_init__(self):
        self.features = as_matrix(self.features)
        if self.features.shape[0] < 1:
            raise DataError("an unlabeled set needs at least one row")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def load_features_csv(path, has_labels: bool):
    """Read comma-separated features; with labels the last column is the class."""
    rows = []
    labels = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            toks = [t.strip() for t in line.split(",")]
            if lineno == 1 and not _is_number(toks[0]):
                continue
            if width is None:
                width = len(toks)
            elif len(toks) != width:
                raise DataError(f"{path}:{lineno}: expected {width} fields, got {len(toks)}")
            feat_toks = toks[:-1] if has_labels else toks
            try:
                vals = [float(t) for t in feat_toks]
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: {e}") from e
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
            if has_labels:
                lab = toks[-1]
                try:
                    y = int(lab)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: label {lab!r} is not an integer") from None
                if y < 0:
                    raise DataError(f"{path}:{lineno}: negative label {y}")
                labels.append(y)
    if not rows:
        raise DataError(f"{path}: no data rows")
    if has_labels and width < 2:
        raise DataError(f"{path}: a labeled file needs at least one feature column")
    X = np.array(rows, dtype=np.float64)
    if has_labels:
        y = np.array(labels, dtype=np.int64)
        return LabeledSet(X, y, int(y.max()) + 1)
    return UnlabeledSet(X)


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_float(x: float) -> str:
    """17 significant digits, locale independent."""
    return repr(float(x))


def features_to_csv(features, labels=None) -> str:
    X = as_matrix(features)
    d = X.shape[1]
    header = [f"f{k}" for k in range(d)] + (["label"] if labels is not None else [])
    lines = [",".join(header)]
    for i, row in enumerate(X):
        toks = [format_float(v) for v in row]
        if labels is not None:
            toks.append(str(int(labels[i])))
        lines.append(",".join(toks))
    return "\n".join(lines) + "\n"


def write_features_csv(path, data) -> None:
    if isinstance(data, LabeledSet):
        atomic_write_text(path, features_to_csv(data.features, data.labels))
    else:
        atomic_write_text(path, features_to_csv(data.features))


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def _normals(rng: Rng, shape):
    return rng.normal_array(int(np.prod(shape))).reshape(shape)


def gen_shifted_blobs(n_per_class: int, d: int, n_classes: int, shift, scale: float = 1.0,
                      seed: int = 0) -> Tuple[LabeledSet, UnlabeledSet, LabeledSet]:
    """Gaussian classes around means on a radius-5 sphere.

    The target domain moves every class mean by ``shift`` and scales the
    noise by ``scale``.  The third return value holds the target labels and
    is meant for evaluation only.
    """
    if d < 2 or n_classes < 2 or not scale > 0:
        raise ValueError("need d >= 2, n_classes >= 2 and scale > 0")
    shift = np.asarray(shift, dtype=np.float64).ravel()
    if shift.size != d:
        raise ValueError(f"shift has {shift.size} entries for d={d}")
    rng = Rng(seed)
    dirs = _normals(rng, (n_classes, d))
    means = 5.0 * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    labels = np.repeat(np.arange(n_classes), n_per_class)
    Xs = means[labels] + _normals(rng, (labels.size, d))
    Xt = means[labels] + shift + scale * _normals(rng, (labels.size, d))
    perm_s = rng.permutation(labels.size)
    perm_t = rng.permutation(labels.size)
    source = LabeledSet(Xs[perm_s], labels[perm_s], n_classes)
    truth = LabeledSet(Xt[perm_t], labels[perm_t], n_classes)
    return source, UnlabeledSet(truth.features.copy()), truth


def class_means_blobs(d: int, n_classes: int, seed: int) -> np.ndarray:
    """The generating means of :func:`gen_shifted_blobs` for a given seed."""
    dirs = _normals(Rng(seed), (n_classes, d))
    return 5.0 * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def _moons(n, noise, rng):
    # centred so that a 180 degree rotation maps one moon onto the other
    half = n // 2
    t = math.pi * rng.uniform_array(n)
    outer = np.stack([np.cos(t[:half]), np.sin(t[:half])], axis=1)
    inner = np.stack([1.0 - np.cos(t[half:]), 0.5 - np.sin(t[half:])], axis=1)
    X = np.vstack([outer, inner]) - np.array([0.5, 0.25])
    X += noise * _normals(rng, X.shape)
    y = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(n - half, dtype=np.int64)])
    perm = rng.permutation(n)
    return X[perm], y[perm]


def gen_two_moons(n: int, noise: float = 0.1, rotation_deg: float = 0.0,
                  seed: int = 0) -> Tuple[LabeledSet, UnlabeledSet, LabeledSet]:
    if n < 4 or n % 2:
        raise ValueError("two moons needs an even n >= 4")
    rng = Rng(seed)
    Xs, ys = _moons(n, noise, rng.spawn())
    Xt, yt = _moons(n, noise, rng.spawn())
    a = math.radians(rotation_deg)
    R = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    Xt = Xt @ R.T
    truth = LabeledSet(Xt, yt, 2)
    return LabeledSet(Xs, ys, 2), UnlabeledSet(Xt.copy()), truth


# ---------------------------------------------------------------------------
# standardization
# ---------------------------------------------------------------------------

@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, X) -> np.ndarray:
        return (as_matrix(X) - self.mean) / self.std

    def inverse(self, Z) -> np.ndarray:
        return as_matrix(Z) * self.std + self.mean


def standardize_fit_apply(source, target):
    """Fit per-feature mean/std on the source only and apply to both domains."""
    Xs = source.features
    if Xs.shape[0] < 2:
        raise DataError("standardization needs at least 2 source rows")
    stats = Standardizer(Xs.mean(axis=0), np.maximum(Xs.std(axis=0), 1e-8))

    def remap(ds):
        if isinstance(ds, LabeledSet):
            return LabeledSet(stats.apply(ds.features), ds.labels.copy(), ds.n_classes)
        return UnlabeledSet(stats.apply(ds.features))

    return remap(source), remap(target), stats


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def batch_bounds(n: int, batch_size: int):
    """Batch slices over ``n`` rows; a final batch under 2 rows joins the previous one."""
    bounds = [(s, min(s + batch_size, n)) for s in range(0, n, batch_size)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < 2:
        last = bounds.pop()
        bounds[-1] = (bounds[-1][0], last[1])
    return bounds


class BatchPairIterator:
    """Paired source/target mini-batches.

    Each call to :meth:`epoch` reshuffles both domains from the iterator's
    own rng.  Every source row is visited once; target rows are drawn by
    cycling that epoch's target permutation.
    """

    def __init__(self, source: LabeledSet, target: UnlabeledSet, batch_size: int, rng: Rng):
        if batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if len(source) < 2:
            raise DataError("need at least 2 source rows")
        self.source = source
        self.target = target
        self.batch_size = batch_size
        self.rng = rng

    def __len__(self):
        return len(batch_bounds(len(self.source), self.batch_size))

    def epoch_indices(self):
        ps = self.rng.permutation(len(self.source))
        pt = self.rng.permutation(len(self.target))
        out = []
        cursor = 0
        nt = len(pt)
        for lo, hi in batch_bounds(len(ps), self.batch_size):
            k = hi - lo
            t_idx = pt[(cursor + np.arange(k)) % nt]
            cursor = (cursor + k) % nt
            out.append((ps[lo:hi], t_idx))
        return out

    def epoch(self) -> Iterator[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        for s_idx, t_idx in self.epoch_indices():
            yield self.source.features[s_idx], self.source.labels[s_idx], self.target.features[t_idx]


def batch_pairs(source: LabeledSet, target: UnlabeledSet, batch_size: int, rng: Rng) -> BatchPairIterator:
    return BatchPairIterator(source, target, batch_size, rng)


def shifted_blobs_task(seed: int = 0, n_per_class: int = 200, d: int = 16, n_classes: int = 4,
                       shift_norm: float = 3.0, scale: float = 1.0, standardize: bool = True):
    """The repository's fixed desk-scale shift task.

    The shift has norm ``shift_norm`` and points from the mean of class 0
    towards the mean of class 1, so a source-only classifier pushes target
    class 0 across its decision boundary.
    """
    means = class_means_blobs(d, n_classes, seed)
    direction = means[1] - means[0]
    shift = shift_norm * direction / np.linalg.norm(direction)
    source, target, truth = gen_shifted_blobs(n_per_class, d, n_classes, shift, scale, seed)
    if standardize:
        source, truth, _ = standardize_fit_apply(source, truth)
        target = UnlabeledSet(truth.features.copy())
    return source, target, truth
