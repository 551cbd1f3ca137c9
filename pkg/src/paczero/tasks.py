"""Desk-scale training tasks with per-record losses.

All tasks expose the same surface: a fixed public record universe, a
deterministic per-record loss, vectorized evaluation over all records, and
accuracy-style metrics on held-out dev/test splits drawn from the same
distribution under disjoint sub-seeds.  Everything is reproducible from the
task seed alone; parameters are plain float64 vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import substream

__all__ = ["LossTask", "BlobsTask", "XorMlpTask", "QuadraticTask", "make_task"]

_TRAIN_SPLIT, _DEV_SPLIT, _TEST_SPLIT = 0, 1, 2
_GEOMETRY_KEY, _INIT_KEY = 10, 11


class LossTask:
    """Interface shared by the toy tasks."""

    name: str = "base"
    dim: int
    n_records: int

    def per_sample_losses(self, theta: np.ndarray) -> np.ndarray:
        """Loss of every training record at theta, shape (n_records,)."""
        raise NotImplementedError

    def per_sample_loss(self, theta: np.ndarray, i: int) -> float:
        if not 0 <= i < self.n_records:
            raise IndexError(f"record index {i} outside 0..{self.n_records - 1}")
        return float(self.per_sample_losses(theta)[i])

    def eval_metric(self, theta: np.ndarray, split: str = "dev") -> float:
        """Evaluation score in [0, 1] on a held-out split."""
        raise NotImplementedError

    def init_params(self) -> np.ndarray:
        raise NotImplementedError

    def spec_dict(self) -> dict:
        """Constructor arguments, sufficient to rebuild the task."""
        raise NotImplementedError

    def _check_theta(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta must have shape ({self.dim},), got {theta.shape}")
        return theta


class BlobsTask(LossTask):
    """Binary logistic regression on two Gaussian clusters in R^10.

    The clusters sit at +-(separation/2) along a hidden unit direction and
    are strictly separable: every sample is redrawn until its projection on
    that direction clears the margin.  Within-class noise is tight along
    the separating direction and wide orthogonal to it, so a trained
    separator scores near 1.0 while a random parameter vector scores near
    chance.  Parameters are (weights, bias), dim = input_dim + 1.
    """

    name = "blobs"

    def __init__(
        self,
        n_records: int = 128,
        input_dim: int = 10,
        seed: int = 7,
        separation: float = 3.0,
        margin: float = 0.5,
        axis_noise: float = 0.3,
        perp_noise: float = 1.5,
    ):
        if n_records < 4 or n_records % 4 != 0:
            raise ValueError("n_records must be a positive multiple of 4")
        if margin <= 0.0 or separation / 2.0 < margin:
            raise ValueError("need separation/2 >= margin > 0 for separable clusters")
        self.n_records = n_records
        self.input_dim = input_dim
        self.dim = input_dim + 1
        self.seed = seed
        self.separation = separation
        self.margin = margin
        self.axis_noise = axis_noise
        self.perp_noise = perp_noise

        g = substream(seed, _GEOMETRY_KEY).standard_normal(input_dim)
        self.axis = g / np.linalg.norm(g)
        self.x_train, self.y_train = self._sample(n_records, _TRAIN_SPLIT)
        self.x_dev, self.y_dev = self._sample(n_records // 4, _DEV_SPLIT)
        self.x_test, self.y_test = self._sample(n_records // 2, _TEST_SPLIT)

    def _sample(self, count: int, split: int) -> tuple[np.ndarray, np.ndarray]:
        rng = substream(self.seed, split)
        labels = np.where(np.arange(count) % 2 == 0, 1.0, -1.0)
        xs = np.empty((count, self.input_dim))
        for i, label in enumerate(labels):
            while True:
                noise = rng.standard_normal(self.input_dim)
                along = float(noise @ self.axis)
                perp = noise - along * self.axis
                x = (
                    label * (self.separation / 2.0) * self.axis
                    + self.axis_noise * along * self.axis
                    + self.perp_noise * perp
                )
                if label * float(x @ self.axis) >= self.margin:
                    xs[i] = x
                    break
        return xs, labels

    def _margins(self, theta, xs, ys):
        theta = self._check_theta(theta)
        return ys * (xs @ theta[:-1] + theta[-1])

    def per_sample_losses(self, theta: np.ndarray) -> np.ndarray:
        # softplus(-margin), stable at both tails
        return np.logaddexp(0.0, -self._margins(theta, self.x_train, self.y_train))

    def eval_metric(self, theta: np.ndarray, split: str = "dev") -> float:
        xs, ys = {
            "dev": (self.x_dev, self.y_dev),
            "test": (self.x_test, self.y_test),
            "train": (self.x_train, self.y_train),
        }[split]
        scores = xs @ np.asarray(theta, dtype=float)[:-1] + theta[-1]
        predicted = np.where(scores >= 0.0, 1.0, -1.0)
        return float(np.mean(predicted == ys))

    def init_params(self) -> np.ndarray:
        return np.zeros(self.dim)

    def spec_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "input_dim": self.input_dim,
            "seed": self.seed,
            "separation": self.separation,
            "margin": self.margin,
            "axis_noise": self.axis_noise,
            "perp_noise": self.perp_noise,
        }


class XorMlpTask(LossTask):
    """Two-layer tanh network (10 -> hidden -> 1) on a noisy XOR layout.

    The first two input coordinates carry the checkerboard signal (label is
    the sign of x1*x2), the rest are distractor noise.  Logistic loss on
    the network output.
    """

    name = "xor_mlp"

    def __init__(
        self,
        n_records: int = 128,
        input_dim: int = 10,
        hidden: int = 16,
        seed: int = 11,
        corner_noise: float = 0.3,
    ):
        if n_records < 8 or n_records % 4 != 0:
            raise ValueError("n_records must be a positive multiple of 4")
        if input_dim < 2:
            raise ValueError("need at least the two signal coordinates")
        self.n_records = n_records
        self.input_dim = input_dim
        self.hidden = hidden
        self.seed = seed
        self.corner_noise = corner_noise
        self.dim = input_dim * hidden + hidden + hidden + 1

        self.x_train, self.y_train = self._sample(n_records, _TRAIN_SPLIT)
        self.x_dev, self.y_dev = self._sample(max(4, n_records // 4), _DEV_SPLIT)
        self.x_test, self.y_test = self._sample(max(4, n_records // 2), _TEST_SPLIT)

    def _sample(self, count: int, split: int):
        rng = substream(self.seed, split)
        corners = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
        idx = np.arange(count) % 4
        xy = corners[idx] + self.corner_noise * rng.standard_normal((count, 2))
        rest = rng.standard_normal((count, self.input_dim - 2))
        xs = np.concatenate([xy, rest], axis=1)
        labels = np.where(xy[:, 0] * xy[:, 1] > 0.0, 1.0, -1.0)
        return xs, labels

    def _unpack(self, theta: np.ndarray):
        theta = self._check_theta(theta)
        d, h = self.input_dim, self.hidden
        w1 = theta[: d * h].reshape(d, h)
        b1 = theta[d * h : d * h + h]
        w2 = theta[d * h + h : d * h + 2 * h]
        b2 = theta[-1]
        return w1, b1, w2, b2

    def _forward(self, theta, xs):
        w1, b1, w2, b2 = self._unpack(theta)
        return np.tanh(xs @ w1 + b1) @ w2 + b2

    def per_sample_losses(self, theta: np.ndarray) -> np.ndarray:
        return np.logaddexp(0.0, -self.y_train * self._forward(theta, self.x_train))

    def eval_metric(self, theta: np.ndarray, split: str = "dev") -> float:
        xs, ys = {
            "dev": (self.x_dev, self.y_dev),
            "test": (self.x_test, self.y_test),
            "train": (self.x_train, self.y_train),
        }[split]
        predicted = np.where(self._forward(theta, xs) >= 0.0, 1.0, -1.0)
        return float(np.mean(predicted == ys))

    def init_params(self) -> np.ndarray:
        rng = substream(self.seed, _INIT_KEY)
        d, h = self.input_dim, self.hidden
        w1 = rng.standard_normal((d, h)) / math.sqrt(d)
        w2 = rng.standard_normal(h) / math.sqrt(h)
        return np.concatenate([w1.ravel(), np.zeros(h), w2, np.zeros(1)])

    def spec_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "input_dim": self.input_dim,
            "hidden": self.hidden,
            "seed": self.seed,
            "corner_noise": self.corner_noise,
        }


class QuadraticTask(LossTask):
    """Per-record quadratic bowls: loss_i(theta) = 0.5 * ||theta - a_i||^2.

    The two-point derivative estimator is exact here (no curvature error in
    the symmetric difference), which makes this the oracle task for
    estimator and update arithmetic.  With identical targets every subset
    agrees at every step, forcing unanimity.
    """

    name = "quadratic"

    def __init__(
        self,
        n_records: int = 16,
        dim: int = 10,
        seed: int = 3,
        target_spread: float = 1.0,
        identical_targets: bool = False,
    ):
        if n_records < 1:
            raise ValueError("need at least one record")
        self.n_records = n_records
        self.dim = dim
        self.seed = seed
        self.target_spread = target_spread
        self.identical_targets = identical_targets
        rng = substream(seed, _GEOMETRY_KEY)
        if identical_targets:
            shared = rng.standard_normal(dim) * target_spread
            self.targets = np.tile(shared, (n_records, 1))
        elif target_spread == 0.0:
            self.targets = np.zeros((n_records, dim))
        else:
            self.targets = rng.standard_normal((n_records, dim)) * target_spread

    def per_sample_losses(self, theta: np.ndarray) -> np.ndarray:
        theta = self._check_theta(theta)
        diffs = theta[None, :] - self.targets
        return 0.5 * np.sum(diffs * diffs, axis=1)

    def eval_metric(self, theta: np.ndarray, split: str = "dev") -> float:
        # squashed mean loss; monotone in distance to the target cloud
        return 1.0 / (1.0 + float(np.mean(self.per_sample_losses(theta))))

    def init_params(self) -> np.ndarray:
        return np.ones(self.dim)

    def spec_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "dim": self.dim,
            "seed": self.seed,
            "target_spread": self.target_spread,
            "identical_targets": self.identical_targets,
        }


_TASKS = {"blobs": BlobsTask, "xor_mlp": XorMlpTask, "quadratic": QuadraticTask}


def make_task(name: str, **params) -> LossTask:
    if name not in _TASKS:
        raise ValueError(f"unknown task {name!r}; available: {sorted(_TASKS)}")
    return _TASKS[name](**params)
