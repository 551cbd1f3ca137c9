"""Per-step release mechanism.

Each training step reduces the per-sample derivative estimates to one sign
bit per candidate subset, then releases a single value whose information
about the secret subset index is either exactly zero (unanimity across
candidates, or a fair coin) or exactly the calibrated budget for that step
(sign plus Gaussian noise at the noise level that makes the channel carry
beta_t nats).

The Bayes posterior over the candidate index that an observer of the
releases can hold is maintained here in log-space and is part of the
mechanism state: the budget allocator reads the current agreement
probability from it, and the noisy releases update it.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .binary_channel import binary_entropy, invert_channel_mi
from .rng import substream

__all__ = [
    "DesignError",
    "MechanismSpec",
    "SubsetDesign",
    "Posterior",
    "BudgetLedger",
    "StepRecord",
    "build_balanced_design",
    "subset_signs",
    "agreement_probability",
    "is_unanimous",
    "agreed_sign",
    "adaptive_budget",
    "mi_step",
    "zpl_step",
    "surrogate_release",
    "k_aggregate_step",
    "ReleaseMechanism",
]

TAU_DEFAULT = 1e-12
ENTROPY_CAP_FACTOR = 0.999
# Allocations at or below this are numerically indistinguishable from an
# exhausted budget; the step degenerates to a fair coin (sigma -> infinity).
MIN_CALIBRATABLE_MI = 1e-15

VARIANTS = ("paczero_mi", "paczero_zpl", "surrogate", "k_aggregate")
INNER_VARIANTS = ("paczero_mi", "paczero_zpl")
SURROGATE_MODES = ("raw_full", "quant_full", "raw_half", "quant_half", "random_sign")

BRANCH_UNANIMITY = "unanimity"
BRANCH_DISAGREEMENT = "disagreement"
BRANCH_COIN = "zpl_coin"
BRANCH_SURROGATE = "surrogate"


class DesignError(RuntimeError):
    """Subset design could not be sampled under its constraints."""


@dataclass(frozen=True)
class SubsetDesign:
    """Public candidate subsets of the record universe.

    ``membership[i, m]`` says whether record i belongs to subset m.  Every
    record sits in exactly half of the subsets, which pins the prior
    membership probability of any single record at 1/2.  The secret index
    (which subset actually trains) is held by the experiment harness, not
    by release logic.
    """

    membership: np.ndarray
    seed: int
    secret_index: int | None = None

    def __post_init__(self):
        m = self.membership
        if m.ndim != 2 or m.dtype != np.bool_:
            raise ValueError("membership must be a 2-d boolean array")
        n, k = m.shape
        if n < 1:
            raise ValueError("need at least one record")
        if k < 2 or k % 2 != 0:
            raise ValueError(f"number of subsets must be even and >= 2, got {k}")
        row_sums = m.sum(axis=1)
        if not np.all(row_sums == k // 2):
            raise ValueError("every record must belong to exactly half the subsets")
        if np.any(m.sum(axis=0) == 0):
            raise ValueError("empty subset in design")

    @property
    def n_records(self) -> int:
        return self.membership.shape[0]

    @property
    def n_subsets(self) -> int:
        return self.membership.shape[1]

    def subset_members(self, m: int) -> np.ndarray:
        """Indices of subset m's records, ascending."""
        return np.flatnonzero(self.membership[:, m])

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.n_records}x{self.n_subsets}:".encode())
        h.update(np.packbits(self.membership, axis=None).tobytes())
        return h.hexdigest()


def build_balanced_design(
    n_records: int, n_subsets: int, seed: int, max_attempts: int = 100
) -> SubsetDesign:
    """Sample a design where each record joins a uniformly random half of
    the subsets; resample (next sub-seed) while any subset is empty."""
    if n_subsets < 2 or n_subsets % 2 != 0:
        raise ValueError(f"number of subsets must be even and >= 2, got {n_subsets}")
    if n_records < 1:
        raise ValueError("need at least one record")
    half = n_subsets // 2
    for attempt in range(max_attempts):
        rng = substream(seed, attempt)
        # argsort of iid uniforms = uniformly random half per row
        order = np.argsort(rng.random((n_records, n_subsets)), axis=1)
        membership = np.zeros((n_records, n_subsets), dtype=bool)
        rows = np.repeat(np.arange(n_records), half)
        membership[rows, order[:, :half].ravel()] = True
        if np.all(membership.sum(axis=0) > 0):
            return SubsetDesign(membership=membership, seed=seed)
    raise DesignError(
        f"no design with all {n_subsets} subsets nonempty over {n_records} "
        f"records after {max_attempts} attempts"
    )


def _logsumexp(a: np.ndarray) -> float:
    m = float(np.max(a))
    if not math.isfinite(m):
        return m
    return m + math.log(float(np.sum(np.exp(a - m))))


@dataclass(frozen=True)
class Posterior:
    """Distribution over candidate subset indices, kept in log-space so
    support only shrinks by genuine underflow, never by hard zeroing."""

    log_weights: np.ndarray

    @classmethod
    def uniform(cls, n_candidates: int) -> "Posterior":
        if n_candidates < 1:
            raise ValueError("need at least one candidate")
        return cls(np.full(n_candidates, -math.log(n_candidates)))

    @property
    def n_candidates(self) -> int:
        return self.log_weights.shape[0]

    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def updated_by_observation(
        self, y_tilde: float, signs: np.ndarray, sigma: float
    ) -> "Posterior":
        """Bayes update after seeing y_tilde = sign + N(0, sigma^2); the
        Gaussian normalizer is common to all candidates and drops out."""
        if sigma <= 0.0:
            raise ValueError("observation update needs sigma > 0")
        lw = self.log_weights - (y_tilde - signs) ** 2 / (2.0 * sigma**2)
        return Posterior(lw - _logsumexp(lw))


@dataclass
class StepRecord:
    """Public per-release line of the transcript.

    One record per released bit: ``slot`` is 0 for the base variants and
    indexes the aggregated directions otherwise.  ``cum_mi`` and
    ``unanimity_count`` are running ledger totals filled in by the ledger
    owner after the charge.
    """

    t: int
    slot: int
    branch: str
    q_plus: float | None
    sigma: float | None
    y: float
    y_tilde: float | None
    beta_t: float
    beta_used: float
    cum_mi: float = 0.0
    unanimity_count: int = 0


@dataclass
class BudgetLedger:
    """Running account of allocated vs consumed information.

    ``mi_spent`` is the ordered float sum of consumed budgets; the remaining
    budget is always recomputed as mi_total - mi_spent so that any validator
    replaying the same charges in the same order reproduces it bit for bit.
    """

    mi_total: float
    mi_spent: float = 0.0
    unanimity_bits: int = 0
    total_bits: int = 0

    def remaining(self) -> float:
        return max(0.0, self.mi_total - self.mi_spent)

    def charge(self, record: StepRecord) -> None:
        if record.beta_used not in (0.0, record.beta_t):
            raise ValueError(
                f"consumed budget must be 0 or the allocation, got "
                f"{record.beta_used} vs {record.beta_t} at step {record.t}"
            )
        self.mi_spent += record.beta_used
        self.total_bits += 1
        if record.branch == BRANCH_UNANIMITY:
            self.unanimity_bits += 1
        record.cum_mi = self.mi_spent
        record.unanimity_count = self.unanimity_bits

    def free_fraction(self) -> float:
        return self.unanimity_bits / self.total_bits if self.total_bits else 0.0


@dataclass(frozen=True)
class MechanismSpec:
    """What to release each step and under which information contract."""

    variant: str = "paczero_mi"
    mi_total: float = 0.0
    n_subsets: int | None = None
    clip: float = math.inf
    unanimity_tolerance: float = TAU_DEFAULT
    surrogate_mode: str | None = None
    k: int = 1
    inner_variant: str = "paczero_mi"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "k_aggregate" and self.inner_variant not in INNER_VARIANTS:
            raise ValueError(f"unknown inner variant {self.inner_variant!r}")
        if self.variant == "surrogate":
            if self.surrogate_mode not in SURROGATE_MODES:
                raise ValueError(f"unknown surrogate mode {self.surrogate_mode!r}")
        elif self.surrogate_mode is not None:
            raise ValueError("surrogate_mode only applies to the surrogate variant")
        if self.bit_rule() == "mi":
            if not (math.isfinite(self.mi_total) and self.mi_total > 0.0):
                raise ValueError("a positive total information budget is required")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.variant != "k_aggregate" and self.k != 1:
            raise ValueError("k > 1 requires the k_aggregate variant")
        if self.n_subsets is not None and (self.n_subsets < 2 or self.n_subsets % 2):
            raise ValueError("n_subsets must be even and >= 2")
        if not self.clip > 0.0:
            raise ValueError("clip must be positive (may be inf)")
        if not 0.0 < self.unanimity_tolerance < 0.5:
            raise ValueError("unanimity tolerance must lie in (0, 0.5)")

    def bit_rule(self) -> str:
        v = self.inner_variant if self.variant == "k_aggregate" else self.variant
        if v == "paczero_mi":
            return "mi"
        if v == "paczero_zpl":
            return "zpl"
        return "surrogate"

    def resolved_subsets(self) -> int:
        if self.n_subsets is not None:
            return self.n_subsets
        return 126 if self.bit_rule() == "zpl" else 128


def subset_signs(scalars: np.ndarray, design: SubsetDesign, clip: float) -> np.ndarray:
    """Clip each per-sample scalar to [-clip, clip], average over every
    subset's members in ascending index order, and take signs (sign(0)=+1)."""
    scalars = np.asarray(scalars, dtype=float)
    if scalars.shape != (design.n_records,):
        raise ValueError(
            f"expected {design.n_records} scalars, got shape {scalars.shape}"
        )
    if not clip > 0.0:
        raise ValueError("clip must be positive (may be inf)")
    clipped = np.clip(scalars, -clip, clip)
    means = np.empty(design.n_subsets)
    for m in range(design.n_subsets):
        members = design.subset_members(m)
        means[m] = clipped[members].sum() / members.size
    return np.where(means >= 0.0, 1, -1).astype(np.int64)


def agreement_probability(posterior: Posterior, signs: np.ndarray) -> float:
    """Posterior probability that the secret subset's sign is +1."""
    if signs.shape[0] != posterior.n_candidates:
        raise ValueError("signs and posterior disagree on candidate count")
    # normalized weights can land an ulp outside [0, 1] after exp-summing
    return float(min(max(posterior.probabilities()[signs > 0].sum(), 0.0), 1.0))


def is_unanimous(q_plus: float, tau: float = TAU_DEFAULT) -> bool:
    return q_plus <= tau or q_plus >= 1.0 - tau


def agreed_sign(q_plus: float) -> int:
    return 1 if q_plus >= 0.5 else -1


def adaptive_budget(ledger: BudgetLedger, t: int, horizon: int, q_plus: float) -> float:
    """Spread the unspent budget over the remaining steps, then cap below
    the sign entropy so the channel inversion stays feasible."""
    if not 1 <= t <= horizon:
        raise ValueError(f"step {t} outside horizon 1..{horizon}")
    beta = ledger.remaining() / (horizon - t + 1)
    return min(beta, ENTROPY_CAP_FACTOR * binary_entropy(q_plus))


def mi_step(
    posterior: Posterior,
    signs: np.ndarray,
    secret_index: int,
    beta_t: float,
    rng: np.random.Generator,
    tau: float = TAU_DEFAULT,
) -> tuple[float, Posterior, StepRecord]:
    """Calibrated-information release of one sign bit.

    Unanimity releases the agreed sign for free and leaves the posterior
    untouched; an exhausted budget degenerates to a fair coin; otherwise the
    secret subset's sign is released through Gaussian noise calibrated so
    the bit carries exactly beta_t nats, and the posterior absorbs the
    pre-quantization observation.
    """
    q_plus = agreement_probability(posterior, signs)
    if is_unanimous(q_plus, tau):
        y = float(agreed_sign(q_plus))
        record = StepRecord(
            t=0, slot=0, branch=BRANCH_UNANIMITY, q_plus=q_plus, sigma=None,
            y=y, y_tilde=None, beta_t=beta_t, beta_used=0.0,
        )
        return y, posterior, record
    if beta_t <= MIN_CALIBRATABLE_MI:
        y = -1.0 if rng.integers(2) == 0 else 1.0
        record = StepRecord(
            t=0, slot=0, branch=BRANCH_COIN, q_plus=q_plus, sigma=None,
            y=y, y_tilde=None, beta_t=beta_t, beta_used=0.0,
        )
        return y, posterior, record
    sigma = invert_channel_mi(q_plus, beta_t)
    y_tilde = float(signs[secret_index]) + sigma * float(rng.standard_normal())
    y = 1.0 if y_tilde >= 0.0 else -1.0
    record = StepRecord(
        t=0, slot=0, branch=BRANCH_DISAGREEMENT, q_plus=q_plus, sigma=sigma,
        y=y, y_tilde=y_tilde, beta_t=beta_t, beta_used=beta_t,
    )
    return y, posterior.updated_by_observation(y_tilde, signs, sigma), record


def zpl_step(
    posterior: Posterior,
    signs: np.ndarray,
    secret_index: int,
    rng: np.random.Generator,
    tau: float = TAU_DEFAULT,
) -> tuple[float, Posterior, StepRecord]:
    """Zero-leakage release: agreed sign on unanimity, otherwise a fair
    coin that never reads the secret, so the posterior never moves."""
    q_plus = agreement_probability(posterior, signs)
    if is_unanimous(q_plus, tau):
        y = float(agreed_sign(q_plus))
        branch = BRANCH_UNANIMITY
    else:
        y = -1.0 if rng.integers(2) == 0 else 1.0
        branch = BRANCH_COIN
    record = StepRecord(
        t=0, slot=0, branch=branch, q_plus=q_plus, sigma=None,
        y=y, y_tilde=None, beta_t=0.0, beta_used=0.0,
    )
    return y, posterior, record


def surrogate_release(
    mode: str,
    scalars: np.ndarray,
    design: SubsetDesign,
    secret_index: int,
    clip: float,
    rng: np.random.Generator,
) -> float:
    """Non-private ablation releases; no information accounting applies."""
    if mode not in SURROGATE_MODES:
        raise ValueError(f"unknown surrogate mode {mode!r}")
    if mode == "random_sign":
        return -1.0 if rng.integers(2) == 0 else 1.0
    clipped = np.clip(np.asarray(scalars, dtype=float), -clip, clip)
    if mode in ("raw_full", "quant_full"):
        value = float(clipped.sum() / clipped.size)
    else:
        members = design.subset_members(secret_index)
        value = float(clipped[members].sum() / members.size)
    if mode.startswith("quant"):
        return 1.0 if value >= 0.0 else -1.0
    return value


def k_aggregate_step(
    posterior: Posterior,
    signs_per_slot: list[np.ndarray],
    secret_index: int,
    beta_step: float,
    inner_variant: str,
    rng: np.random.Generator,
    tau: float = TAU_DEFAULT,
    remaining: float = math.inf,
) -> tuple[list[float], Posterior, list[StepRecord]]:
    """Release one bit per aggregated direction, splitting the step budget
    evenly and threading a single shared posterior through the sub-releases.
    Total consumption never exceeds beta_step (or the remaining budget)."""
    if inner_variant not in INNER_VARIANTS:
        raise ValueError(f"unknown inner variant {inner_variant!r}")
    n_slots = len(signs_per_slot)
    if n_slots < 1:
        raise ValueError("need at least one direction")
    ys: list[float] = []
    records: list[StepRecord] = []
    for slot, signs in enumerate(signs_per_slot):
        if inner_variant == "paczero_zpl":
            y, posterior, record = zpl_step(posterior, signs, secret_index, rng, tau)
        else:
            q_plus = agreement_probability(posterior, signs)
            beta_bit = beta_step / n_slots
            beta_bit = min(
                beta_bit, ENTROPY_CAP_FACTOR * binary_entropy(q_plus), remaining
            )
            beta_bit = max(beta_bit, 0.0)
            y, posterior, record = mi_step(
                posterior, signs, secret_index, beta_bit, rng, tau
            )
            remaining = max(0.0, remaining - record.beta_used)
        record.slot = slot
        ys.append(y)
        records.append(record)
    return ys, posterior, records


class ReleaseMechanism:
    """Stateful per-run wrapper: owns the posterior, the ledger, and the
    noise stream, and turns per-direction scalar vectors into releases."""

    def __init__(
        self,
        spec: MechanismSpec,
        design: SubsetDesign,
        horizon: int,
        rng: np.random.Generator,
        secret_index: int,
    ):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0 <= secret_index < design.n_subsets:
            raise ValueError("secret index outside the design")
        if spec.resolved_subsets() != design.n_subsets:
            raise ValueError(
                f"spec expects {spec.resolved_subsets()} subsets, design has "
                f"{design.n_subsets}"
            )
        self.spec = spec
        self.design = design
        self.horizon = horizon
        self.rng = rng
        self.secret_index = secret_index
        self.posterior = Posterior.uniform(design.n_subsets)
        total = spec.mi_total if spec.bit_rule() == "mi" else 0.0
        self.ledger = BudgetLedger(mi_total=total)

    def step(self, t: int, scalars_per_slot: list[np.ndarray]) -> tuple[list[float], list[StepRecord]]:
        if len(scalars_per_slot) != self.spec.k:
            raise ValueError(
                f"expected {self.spec.k} scalar vectors, got {len(scalars_per_slot)}"
            )
        if self.spec.variant == "surrogate":
            y = surrogate_release(
                self.spec.surrogate_mode, scalars_per_slot[0], self.design,
                self.secret_index, self.spec.clip, self.rng,
            )
            record = StepRecord(
                t=t, slot=0, branch=BRANCH_SURROGATE, q_plus=None, sigma=None,
                y=y, y_tilde=None, beta_t=0.0, beta_used=0.0,
            )
            self.ledger.charge(record)
            return [y], [record]

        signs_per_slot = [
            subset_signs(s, self.design, self.spec.clip) for s in scalars_per_slot
        ]
        rule = self.spec.bit_rule()
        if rule == "mi":
            beta_step = self.ledger.remaining() / (self.horizon - t + 1)
        else:
            beta_step = 0.0
        inner = "paczero_zpl" if rule == "zpl" else "paczero_mi"
        ys, self.posterior, records = k_aggregate_step(
            self.posterior, signs_per_slot, self.secret_index, beta_step,
            inner, self.rng, self.spec.unanimity_tolerance,
            remaining=self.ledger.remaining(),
        )
        for record in records:
            record.t = t
            self.ledger.charge(record)
        return ys, records
