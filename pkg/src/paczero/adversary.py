"""Bayes-optimal membership inference against released transcripts.

The attacker knows everything public: the record universe, the candidate
subsets, the probe directions (seeded), the training configuration, and the
released values including the pre-quantization observations and their noise
levels.  From these it can rebuild the exact parameter trajectory, recompute
every candidate's sign at every step, and hold the same posterior over the
secret index that the mechanism maintained internally.  Membership of a
record is then its posterior-weighted frequency across candidate subsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import rng as rngmod
from .accounting import mia_posterior_bound
from .engine import TrainConfig, Transcript, apply_update, train, _two_point_all
from .mechanism import (
    BRANCH_DISAGREEMENT,
    MechanismSpec,
    Posterior,
    SubsetDesign,
    build_balanced_design,
    subset_signs,
)
from .tasks import LossTask, make_task

__all__ = [
    "replay_posterior",
    "membership_attack",
    "MiaExperimentResult",
    "empirical_mia_experiment",
]


def _spec_from_header(transcript: Transcript) -> MechanismSpec:
    raw = dict(transcript.header.mechanism)
    if raw.get("clip") == "inf":
        raw["clip"] = math.inf
    return MechanismSpec(**raw)


def replay_posterior(
    transcript: Transcript, design: SubsetDesign, task: LossTask | None = None
) -> np.ndarray:
    """Reconstruct the observer's posterior over the secret index from
    public information only.

    Replays the parameter trajectory implied by the released values and the
    seeded directions, recomputes every candidate sign vector, and applies
    exactly the Bayes updates the noisy releases induce.  Matches the
    mechanism's internal posterior bit for bit on an honest transcript.
    """
    header = transcript.header
    spec = _spec_from_header(transcript)
    if spec.variant == "surrogate":
        raise ValueError("surrogate releases have no calibrated posterior to replay")
    if design.content_hash() != header.design_hash:
        raise ValueError("design does not match the transcript's design hash")
    if task is None:
        task = make_task(header.task_name, **header.task_params)
    config = TrainConfig(**header.train)

    theta = task.init_params()
    posterior = Posterior.uniform(design.n_subsets)
    records = transcript.records
    idx = 0
    for t in range(1, header.t_total + 1):
        moved = None
        for slot in range(spec.k):
            rec = records[idx]
            idx += 1
            if rec.t != t or rec.slot != slot:
                raise ValueError(
                    f"transcript records out of order at step {t} slot {slot}"
                )
            z = rngmod.direction(header.run_seed, t, slot, task.dim)
            if rec.branch == BRANCH_DISAGREEMENT:
                scalars = _two_point_all(task, theta, z, config.smoothing)
                signs = subset_signs(scalars, design, spec.clip)
                posterior = posterior.updated_by_observation(
                    rec.y_tilde, signs, rec.sigma
                )
            contribution = rec.y * z
            moved = contribution if moved is None else moved + contribution
        theta = apply_update(
            theta, config.eta(t), config.weight_decay, 1.0, moved / spec.k
        )
    return posterior.probabilities()


def membership_attack(
    posterior_probs: np.ndarray, design: SubsetDesign, record_index: int
) -> tuple[float, bool]:
    """Posterior membership probability of one record and the Bayes guess
    (ties guess member, since the prior is exactly one half)."""
    if not 0 <= record_index < design.n_records:
        raise IndexError(f"record index {record_index} outside the universe")
    probs = np.asarray(posterior_probs, dtype=float)
    if probs.shape != (design.n_subsets,):
        raise ValueError("posterior shape does not match the design")
    p_member = float(probs @ design.membership[record_index].astype(float))
    return p_member, p_member >= 0.5


@dataclass
class MiaExperimentResult:
    trials: int
    successes: int
    empirical_rate: float
    bound: float
    prior: float
    standard_error: float  # conservative binomial half-width, 0.5/sqrt(trials)

    def sound(self, z: float = 3.0) -> bool:
        return self.empirical_rate <= self.bound + z * self.standard_error


def empirical_mia_experiment(
    task: LossTask,
    mech_spec: MechanismSpec,
    train_config: TrainConfig,
    trials: int,
    seed: int,
) -> MiaExperimentResult:
    """Monte-Carlo success rate of the Bayes-optimal membership attacker.

    Every trial draws a fresh design and secret, trains, replays the
    posterior from the public transcript, and attacks one uniformly chosen
    record.  The empirical success rate is compared against the posterior
    bound implied by the run's total information budget at prior 1/2.
    """
    if trials < 100:
        raise ValueError("need at least 100 trials for a meaningful rate")
    n_subsets = mech_spec.resolved_subsets()
    successes = 0
    for trial in range(trials):
        streams = rngmod.substream(seed, rngmod.TRIAL_STREAM, trial)
        design_seed = int(streams.integers(2**63))
        run_seed = int(streams.integers(2**63))
        secret = int(streams.integers(n_subsets))
        target = int(streams.integers(task.n_records))
        design = build_balanced_design(task.n_records, n_subsets, design_seed)
        config = replace(train_config, seed=run_seed)
        result = train(task, config, mech_spec, design=design, secret_index=secret)
        probs = replay_posterior(result.transcript, design, task)
        _, guess = membership_attack(probs, design, target)
        truth = bool(design.membership[target, secret])
        successes += guess == truth
    rate = successes / trials
    budget = mech_spec.mi_total if mech_spec.bit_rule() == "mi" else 0.0
    return MiaExperimentResult(
        trials=trials,
        successes=successes,
        empirical_rate=rate,
        bound=mia_posterior_bound(budget, 0.5),
        prior=0.5,
        standard_error=0.5 / math.sqrt(trials),
    )
