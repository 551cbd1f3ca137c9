"""Zeroth-order training loop over the release mechanism.

The optimizer never sees per-sample gradients: each step draws public
random directions, measures symmetric finite differences of every record's
loss along them, hands the resulting scalar vectors to the mechanism, and
moves the parameters by the released values times the directions.  The
probe directions are a deterministic function of (seed, step, slot) and
carry no information about the secret subset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import rng as rngmod
from .mechanism import (
    MechanismSpec,
    ReleaseMechanism,
    StepRecord,
    SubsetDesign,
    build_balanced_design,
)
from .tasks import LossTask

__all__ = [
    "TrainConfig",
    "TranscriptHeader",
    "Transcript",
    "TrainResult",
    "TwoPointNumericsError",
    "clip_scalar",
    "two_point_scalar",
    "apply_update",
    "train",
]


class TwoPointNumericsError(ArithmeticError):
    """A probed loss came back non-finite."""

    def __init__(self, record_index: int, theta_norm: float):
        self.record_index = record_index
        self.theta_norm = theta_norm
        super().__init__(
            f"non-finite two-point estimate for record {record_index} "
            f"at |theta| = {theta_norm:.6g}"
        )


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run."""

    steps: int = 500
    learning_rate: float = 0.05
    lr_decay: float = 0.0          # eta_t = learning_rate / (1 + lr_decay*(t-1))
    weight_decay: float = 0.0
    smoothing: float = 1e-3        # probe half-width mu
    seed: int = 0
    dev_eval_interval: int = 25
    load_best_dev: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.lr_decay < 0.0:
            raise ValueError("lr_decay must be nonnegative")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be nonnegative")
        if self.smoothing <= 0.0:
            raise ValueError("smoothing must be positive")
        if self.dev_eval_interval < 1:
            raise ValueError("dev_eval_interval must be >= 1")

    def eta(self, t: int) -> float:
        return self.learning_rate / (1.0 + self.lr_decay * (t - 1))


def clip_scalar(g, c: float):
    """sign(g) * min(|g|, c); identity when c = inf.  Works elementwise."""
    if not c > 0.0:
        raise ValueError("clip bound must be positive (may be inf)")
    return np.clip(g, -c, c)


def two_point_scalar(
    task: LossTask, theta: np.ndarray, i: int, z: np.ndarray, mu: float
) -> float:
    """Symmetric-difference estimate of the directional derivative of
    record i's loss at theta along z."""
    if mu <= 0.0:
        raise ValueError("smoothing mu must be positive")
    up = task.per_sample_loss(theta + mu * z, i)
    down = task.per_sample_loss(theta - mu * z, i)
    value = (up - down) / (2.0 * mu)
    if not math.isfinite(value):
        raise TwoPointNumericsError(i, float(np.linalg.norm(theta)))
    return value


def _two_point_all(task: LossTask, theta, z, mu: float) -> np.ndarray:
    up = task.per_sample_losses(theta + mu * z)
    down = task.per_sample_losses(theta - mu * z)
    values = (up - down) / (2.0 * mu)
    bad = ~np.isfinite(values)
    if np.any(bad):
        raise TwoPointNumericsError(
            int(np.flatnonzero(bad)[0]), float(np.linalg.norm(theta))
        )
    return values


def apply_update(
    theta: np.ndarray, eta: float, weight_decay: float, y: float, z: np.ndarray
) -> np.ndarray:
    """theta' = (1 - eta*weight_decay) * theta - eta * y * z; pure."""
    return (1.0 - eta * weight_decay) * np.asarray(theta, dtype=float) - eta * y * z


@dataclass(frozen=True)
class TranscriptHeader:
    """Everything public needed to replay a run: configs, seeds, and a
    content hash of the subset design (the design itself is regenerated
    from its seed on load and checked against the hash)."""

    variant: str
    task_name: str
    task_params: dict
    train: dict
    mechanism: dict
    n_records: int
    n_subsets: int
    t_total: int
    k: int
    run_seed: int
    design_seed: int
    design_hash: str


@dataclass
class Transcript:
    """Public record of a run: header plus one line per released bit."""

    header: TranscriptHeader
    records: list[StepRecord]
    dev_evals: list[tuple[int, float]] = field(default_factory=list)
    cum_mi: float = 0.0
    unanimity_bits: int = 0
    total_bits: int = 0

    def free_fraction(self) -> float:
        return self.unanimity_bits / self.total_bits if self.total_bits else 0.0


@dataclass
class TrainResult:
    params: np.ndarray
    transcript: Transcript
    design: SubsetDesign
    secret_index: int
    dev_best_step: int
    dev_best_metric: float
    final_params: np.ndarray
    final_posterior: np.ndarray | None = None
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)


def _mechanism_dict(spec: MechanismSpec) -> dict:
    d = asdict(spec)
    d["clip"] = "inf" if math.isinf(spec.clip) else spec.clip
    return d


def train(
    task: LossTask,
    config: TrainConfig,
    mech_spec: MechanismSpec,
    design: SubsetDesign | None = None,
    secret_index: int | None = None,
    snapshot_steps: tuple[int, ...] = (),
) -> TrainResult:
    """Run the full release-and-update loop.

    The design and secret index are derived from the run seed when not
    supplied.  Returns the chosen parameters (best-dev checkpoint when
    configured, else final), the public transcript, and the run's secrets
    for evaluation by the harness.
    """
    if design is None:
        design = build_balanced_design(
            task.n_records, mech_spec.resolved_subsets(),
            seed=int(rngmod.substream(config.seed, rngmod.DESIGN_STREAM).integers(2**63)),
        )
    if design.n_records != task.n_records:
        raise ValueError("design and task disagree on the number of records")
    if secret_index is None:
        secret_index = int(
            rngmod.substream(config.seed, rngmod.SECRET_STREAM).integers(design.n_subsets)
        )

    mech_rng = rngmod.substream(config.seed, rngmod.MECHANISM_STREAM)
    mechanism = ReleaseMechanism(
        mech_spec, design, horizon=config.steps, rng=mech_rng, secret_index=secret_index
    )

    theta = task.init_params()
    records: list[StepRecord] = []
    dev_evals: list[tuple[int, float]] = []
    best_metric, best_step, best_theta = -math.inf, 0, theta.copy()
    snapshots: dict[int, np.ndarray] = {}

    for t in range(1, config.steps + 1):
        directions = [
            rngmod.direction(config.seed, t, slot, task.dim)
            for slot in range(mech_spec.k)
        ]
        scalars = [
            _two_point_all(task, theta, z, config.smoothing) for z in directions
        ]
        ys, step_records = mechanism.step(t, scalars)
        records.extend(step_records)
        moved = directions[0] * ys[0]
        for y, z in zip(ys[1:], directions[1:]):
            moved = moved + y * z
        theta = apply_update(
            theta, config.eta(t), config.weight_decay, 1.0, moved / mech_spec.k
        )
        if t % config.dev_eval_interval == 0 or t == config.steps:
            metric = task.eval_metric(theta, "dev")
            dev_evals.append((t, metric))
            if metric > best_metric:
                best_metric, best_step, best_theta = metric, t, theta.copy()
        if t in snapshot_steps:
            snapshots[t] = theta.copy()

    header = TranscriptHeader(
        variant=mech_spec.variant,
        task_name=task.name,
        task_params=task.spec_dict(),
        train=asdict(config),
        mechanism=_mechanism_dict(mech_spec),
        n_records=task.n_records,
        n_subsets=design.n_subsets,
        t_total=config.steps,
        k=mech_spec.k,
        run_seed=config.seed,
        design_seed=design.seed,
        design_hash=design.content_hash(),
    )
    transcript = Transcript(
        header=header,
        records=records,
        dev_evals=dev_evals,
        cum_mi=mechanism.ledger.mi_spent,
        unanimity_bits=mechanism.ledger.unanimity_bits,
        total_bits=mechanism.ledger.total_bits,
    )
    chosen = best_theta if config.load_best_dev else theta
    internal = (
        None if mech_spec.variant == "surrogate"
        else mechanism.posterior.probabilities()
    )
    return TrainResult(
        params=chosen,
        transcript=transcript,
        design=design,
        secret_index=secret_index,
        dev_best_step=best_step,
        dev_best_metric=best_metric,
        final_params=theta,
        final_posterior=internal,
        snapshots=snapshots,
    )
