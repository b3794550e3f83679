"""GLM losses, datasets and the derivatives of the ridge objective.

The objective is

    J(theta; D) = sum_i f(x_i . theta; y_i) + (lam / 2) ||theta||^2

and the perturbed objective adds ``b . theta``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, NotAMember

LOGISTIC = "logistic"
SQUARED = "squared"
LOSS_KINDS = (LOGISTIC, SQUARED)


@dataclass(frozen=True)
class DataPoint:
    x: np.ndarray
    y: float

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", float(self.y))

    @property
    def d(self) -> int:
        return self.x.shape[0]

    def same_as(self, other: "DataPoint") -> bool:
        return self.y == other.y and np.array_equal(self.x, other.x)


@dataclass(frozen=True)
class Dataset:
    """An immutable design matrix ``X`` (n x d) with labels ``y``."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(0, 0) if X.size == 0 else X.reshape(-1, 1)
        y = np.array(self.y, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"{X.shape[0]} rows but {y.shape[0]} labels")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def empty(cls, d: int) -> "Dataset":
        return cls(np.zeros((0, d)), np.zeros(0))

    @classmethod
    def from_points(cls, points: Sequence[DataPoint], d: int | None = None) -> "Dataset":
        if not points:
            if d is None:
                raise ValueError("dimension required for an empty dataset")
            return cls.empty(d)
        dims = {p.d for p in points}
        if len(dims) != 1 or (d is not None and d not in dims):
            raise DimensionMismatch(f"mixed dimensions {sorted(dims)}")
        return cls(np.stack([p.x for p in points]), np.array([p.y for p in points]))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.n

    def point(self, i: int) -> DataPoint:
        return DataPoint(self.X[i], self.y[i])

    def points(self) -> list[DataPoint]:
        return [self.point(i) for i in range(self.n)]

    def index_of(self, z: DataPoint) -> int:
        """Index of the first exact match of ``z``, or -1."""
        if z.d != self.d or self.n == 0:
            return -1
        hits = np.flatnonzero(np.all(self.X == z.x, axis=1) & (self.y == z.y))
        return int(hits[0]) if hits.size else -1

    def contains(self, z: DataPoint) -> bool:
        return self.index_of(z) >= 0

    def add(self, z: DataPoint) -> "Dataset":
        _check_dim(z.d, self.d)
        return Dataset(np.vstack([self.X, z.x[None, :]]), np.append(self.y, z.y))

    def remove(self, z: DataPoint) -> "Dataset":
        i = self.index_of(z)
        if i < 0:
            raise NotAMember("point is not in the dataset")
        keep = np.arange(self.n) != i
        return Dataset(self.X[keep], self.y[keep])


@dataclass(frozen=True)
class GlmLoss:
    """A convex loss ``f(t; y)`` applied to ``t = x . theta``.

    ``xi`` bounds ``|f'|`` and ``beta`` bounds ``f''`` when ``||x|| <= 1``.
    """

    kind: str
    xi: float = field(init=False)
    beta: float = field(init=False)

    def __post_init__(self):
        if self.kind == LOGISTIC:
            xi, beta = 1.0, 0.25
        elif self.kind == SQUARED:
            xi, beta = math.inf, 1.0
        else:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "beta", beta)

    def f(self, t, y):
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == SQUARED:
            return 0.5 * (t - y) ** 2
        # log(1 + e^t) = max(t, 0) + log1p(e^-|t|)
        return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t))) - y * t

    def df(self, t, y):
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == SQUARED:
            return t - y
        return sigmoid(t) - y

    def d2f(self, t, y):
        t = np.asarray(t, dtype=float)
        if self.kind == SQUARED:
            return np.ones(np.broadcast(t, np.asarray(y)).shape)
        # s(1 - s) written through e^-|t| so it never rounds to zero early
        e = np.exp(-np.abs(t))
        out = e / (1.0 + e) ** 2
        return np.broadcast_to(out, np.broadcast(t, np.asarray(y)).shape).copy()


def sigmoid(t):
    t = np.asarray(t, dtype=float)
    e = np.exp(-np.abs(t))
    return np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass(frozen=True)
class ObjectiveSpec:
    loss: GlmLoss
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")

    @classmethod
    def of(cls, kind: str, lam: float) -> "ObjectiveSpec":
        return cls(GlmLoss(kind), float(lam))


def _check_dim(got: int, want: int, what: str = "vector") -> None:
    if got != want:
        raise DimensionMismatch(f"{what} has dimension {got}, expected {want}")


def _vec(v, d: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    _check_dim(v.shape[0], d, what)
    return v


def objective_value(spec: ObjectiveSpec, D: Dataset, theta, b) -> float:
    theta = _vec(theta, D.d, "theta")
    b = _vec(b, D.d, "b")
    t = D.X @ theta
    data = float(np.sum(spec.loss.f(t, D.y))) if D.n else 0.0
    return data + 0.5 * spec.lam * float(theta @ theta) + float(b @ theta)


def objective_grad(spec: ObjectiveSpec, D: Dataset, theta, b) -> np.ndarray:
    theta = _vec(theta, D.d, "theta")
    b = _vec(b, D.d, "b")
    g = spec.lam * theta + b
    if D.n:
        g = g + D.X.T @ spec.loss.df(D.X @ theta, D.y)
    return g


def objective_hessian(spec: ObjectiveSpec, D: Dataset, theta) -> np.ndarray:
    theta = _vec(theta, D.d, "theta")
    H = spec.lam * np.eye(D.d)
    if D.n:
        w = spec.loss.d2f(D.X @ theta, D.y)
        H = H + (D.X * w[:, None]).T @ D.X
    return 0.5 * (H + H.T)


def point_grad(loss: GlmLoss, z: DataPoint, theta) -> np.ndarray:
    """Gradient of the single-point loss: ``f'(x . theta; y) x``."""
    theta = _vec(theta, z.d, "theta")
    return float(loss.df(z.x @ theta, z.y)) * z.x


def point_hessian(loss: GlmLoss, z: DataPoint, theta) -> np.ndarray:
    theta = _vec(theta, z.d, "theta")
    return float(loss.d2f(z.x @ theta, z.y)) * np.outer(z.x, z.x)


def normalize(D: Dataset, clip_labels: bool = False) -> Dataset:
    """Scale all features by the largest row norm if any row exceeds 1.

    With ``clip_labels`` the labels are clipped to [-1, 1].
    """
    X = np.array(D.X)
    y = np.array(D.y)
    if D.n:
        top = float(np.max(np.linalg.norm(X, axis=1)))
        if top > 1.0:
            X = X / top
    if clip_labels:
        y = np.clip(y, -1.0, 1.0)
    return Dataset(X, y)


def read_csv(path: str | Path) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        if header[-1].strip() != "label":
            raise ValueError(f"{path}: last column must be 'label'")
        d = len(header) - 1
        rows = [[float(v) for v in row] for row in reader if row]
    if any(len(r) != d + 1 for r in rows):
        raise DimensionMismatch(f"{path}: ragged rows")
    if not rows:
        return Dataset.empty(d)
    arr = np.array(rows)
    return Dataset(arr[:, :d], arr[:, d])


def write_csv(D: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(D.d)] + ["label"])
        for i in range(D.n):
            w.writerow([repr(float(v)) for v in D.X[i]] + [repr(float(D.y[i]))])
