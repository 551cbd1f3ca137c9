"""Information-to-attack-success arithmetic and transcript validation.

The privacy contract is a bound on membership-inference success: if the
releases carry at most `mi` nats about the secret, any attacker's success
probability p obeys kl(p || prior) <= mi (binary KL, nats).  This module
inverts that bound, converts DP parameters to the same currency for
reference, and audits finished transcripts by re-deriving every budget
decision from public information alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .binary_channel import binary_entropy, channel_mi
from .engine import Transcript
from .mechanism import (
    BRANCH_COIN,
    BRANCH_DISAGREEMENT,
    BRANCH_SURROGATE,
    BRANCH_UNANIMITY,
    ENTROPY_CAP_FACTOR,
    MIN_CALIBRATABLE_MI,
    MechanismSpec,
    agreed_sign,
    is_unanimous,
)

__all__ = [
    "kl_binary",
    "mia_posterior_bound",
    "dp_eps_to_mia_bound",
    "matched_mi_for_dp",
    "ValidationReport",
    "validate_transcript",
]

_PROB_CEILING = 1.0 - 1e-15
_BISECT_TOL = 1e-12
# Budget re-derivation must reproduce the mechanism's arithmetic; any
# daylight beyond accumulated rounding is a violation.
_REPLAY_TOL = 1e-12
_CALIBRATION_TOL = 1e-9


def kl_binary(p: float, q: float) -> float:
    """KL(Bernoulli(p) || Bernoulli(q)) in nats; 0*log(0) = 0; divergence
    against a degenerate q is signaled as inf."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p out of range: {p!r}")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q out of range: {q!r}")
    if q == 0.0 or q == 1.0:
        return 0.0 if p == q else math.inf
    terms = 0.0
    if p > 0.0:
        terms += p * math.log(p / q)
    if p < 1.0:
        terms += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    return terms


def mia_posterior_bound(mi: float, prior: float) -> float:
    """Largest attack success probability consistent with `mi` nats.

    Solves kl(p || prior) = mi for p on [prior, 1) by bisection (kl is
    increasing there); saturates at 1 when even near-certainty is allowed.
    Absolute tolerance 1e-12 on the returned probability.
    """
    if not 0.0 < prior < 1.0:
        raise ValueError(f"prior must lie strictly inside (0, 1): {prior!r}")
    if not mi >= 0.0:
        raise ValueError(f"information must be nonnegative: {mi!r}")
    if mi == 0.0:
        return prior
    if mi >= kl_binary(_PROB_CEILING, prior):
        return 1.0
    lo, hi = prior, _PROB_CEILING
    while hi - lo > _BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if kl_binary(mid, prior) < mi:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def dp_eps_to_mia_bound(eps: float, delta: float) -> float:
    """Reference conversion: the classical MIA ceiling e^eps/(1+e^eps) + delta
    for an (eps, delta)-DP mechanism, clamped to 1."""
    if not eps >= 0.0:
        raise ValueError(f"eps must be nonnegative: {eps!r}")
    if not 0.0 <= delta < 1.0:
        raise ValueError(f"delta must lie in [0, 1): {delta!r}")
    return min(1.0, 1.0 / (1.0 + math.exp(-eps)) + delta)


def matched_mi_for_dp(eps: float, delta: float, prior: float) -> float:
    """Information budget whose posterior bound equals the DP MIA ceiling.

    This is an attack-success match only, not a DP guarantee; a saturated
    ceiling (bound = 1) has no finite match and is signaled as inf.
    """
    if not 0.0 < prior < 1.0:
        raise ValueError(f"prior must lie strictly inside (0, 1): {prior!r}")
    bound = dp_eps_to_mia_bound(eps, delta)
    if bound >= 1.0:
        return math.inf
    return kl_binary(bound, prior)


@dataclass
class ValidationReport:
    ok: bool
    variant: str
    message: str
    first_violation: str | None
    bits_checked: int
    cum_mi: float
    recorded_cum_mi: float
    mi_total: float
    unanimity_bits: int
    residual_tolerance_mi: float
    non_private: bool = False

    def __str__(self) -> str:
        status = "OK" if self.ok else "VIOLATION"
        return f"[{status}] {self.message}"


def _spec_from_header(transcript: Transcript) -> MechanismSpec:
    raw = dict(transcript.header.mechanism)
    if raw.get("clip") == "inf":
        raw["clip"] = math.inf
    return MechanismSpec(**raw)


def validate_transcript(
    transcript: Transcript, spec: MechanismSpec | None = None
) -> ValidationReport:
    """Audit a finished run from its public transcript.

    Re-derives every per-bit allocation (remaining budget spread over the
    remaining steps, split across aggregated directions, capped below the
    sign entropy), confirms each branch decision and the zero-or-all
    consumption dichotomy, re-checks the noise calibration against the
    recorded sigma, and recomputes the cumulative spend in release order.
    Unanimity steps taken under the tolerance rather than exact agreement
    contribute a residual entropy term that is reported separately and
    never added to the cumulative total.
    """
    if spec is None:
        spec = _spec_from_header(transcript)
    header = transcript.header
    horizon, k = header.t_total, spec.k
    rule = spec.bit_rule()
    tau = spec.unanimity_tolerance

    def fail(where: str, detail: str) -> ValidationReport:
        return ValidationReport(
            ok=False, variant=spec.variant,
            message=f"{where}: {detail}", first_violation=where,
            bits_checked=len(transcript.records), cum_mi=math.nan,
            recorded_cum_mi=transcript.cum_mi, mi_total=spec.mi_total,
            unanimity_bits=transcript.unanimity_bits,
            residual_tolerance_mi=math.nan,
        )

    if len(transcript.records) != horizon * k:
        return fail(
            "structure",
            f"expected {horizon * k} release records, found {len(transcript.records)}",
        )

    if rule == "surrogate":
        for idx, rec in enumerate(transcript.records):
            if rec.branch != BRANCH_SURROGATE or rec.beta_used != 0.0:
                return fail(f"step {rec.t}", "surrogate record carries accounting")
        return ValidationReport(
            ok=True, variant=spec.variant,
            message="non-private surrogate run; information accounting skipped",
            first_violation=None, bits_checked=len(transcript.records),
            cum_mi=0.0, recorded_cum_mi=transcript.cum_mi, mi_total=0.0,
            unanimity_bits=transcript.unanimity_bits,
            residual_tolerance_mi=0.0, non_private=True,
        )

    mi_total = spec.mi_total if rule == "mi" else 0.0
    spent = 0.0
    unanimity_bits = 0
    residual = 0.0
    idx = 0
    for t in range(1, horizon + 1):
        remaining_step = max(0.0, mi_total - spent)
        beta_step = remaining_step / (horizon - t + 1) if rule == "mi" else 0.0
        remaining = max(0.0, mi_total - spent)
        for slot in range(k):
            rec = transcript.records[idx]
            idx += 1
            where = f"step {t} slot {slot}"
            if rec.t != t or rec.slot != slot:
                return fail(where, f"out-of-order record (t={rec.t}, slot={rec.slot})")
            q = rec.q_plus
            if q is None or not 0.0 <= q <= 1.0:
                return fail(where, f"agreement probability {q!r} out of range")
            if rec.y not in (-1.0, 1.0):
                return fail(where, f"released bit {rec.y!r} is not a sign")

            if rule == "zpl":
                expected_beta = 0.0
                expected_branch = (
                    BRANCH_UNANIMITY if is_unanimous(q, tau) else BRANCH_COIN
                )
            else:
                expected_beta = max(
                    0.0,
                    min(
                        beta_step / k,
                        ENTROPY_CAP_FACTOR * binary_entropy(q),
                        remaining,
                    ),
                )
                if is_unanimous(q, tau):
                    expected_branch = BRANCH_UNANIMITY
                elif expected_beta <= MIN_CALIBRATABLE_MI:
                    expected_branch = BRANCH_COIN
                else:
                    expected_branch = BRANCH_DISAGREEMENT

            if rec.branch != expected_branch:
                return fail(
                    where,
                    f"branch {rec.branch!r} contradicts public prefix "
                    f"(expected {expected_branch!r} at q_plus={q})",
                )
            if abs(rec.beta_t - expected_beta) > _REPLAY_TOL:
                return fail(
                    where,
                    f"allocated budget {rec.beta_t!r} does not re-derive "
                    f"(expected {expected_beta!r})",
                )
            expected_used = expected_beta if expected_branch == BRANCH_DISAGREEMENT else 0.0
            if rec.beta_used not in (0.0, rec.beta_t):
                return fail(where, "consumption is neither zero nor the allocation")
            if abs(rec.beta_used - expected_used) > _REPLAY_TOL:
                return fail(
                    where,
                    f"consumed {rec.beta_used!r}, public prefix implies {expected_used!r}",
                )

            if expected_branch == BRANCH_UNANIMITY:
                unanimity_bits += 1
                residual += binary_entropy(q)
                if rec.y != float(agreed_sign(q)):
                    return fail(where, "unanimity release differs from the agreed sign")
                if rec.sigma is not None or rec.y_tilde is not None:
                    return fail(where, "unanimity release carries noise fields")
            elif expected_branch == BRANCH_COIN:
                if rec.sigma is not None or rec.y_tilde is not None:
                    return fail(where, "coin release carries noise fields")
            else:
                if rec.sigma is None or rec.sigma <= 0.0:
                    return fail(where, f"disagreement release lacks a noise level")
                if rec.y_tilde is None:
                    return fail(where, "disagreement release lacks the pre-quantized value")
                if rec.y != (1.0 if rec.y_tilde >= 0.0 else -1.0):
                    return fail(where, "released sign mismatches the pre-quantized value")
                calibrated = channel_mi(q, rec.sigma)
                if abs(calibrated - rec.beta_t) > _CALIBRATION_TOL:
                    return fail(
                        where,
                        f"noise level carries {calibrated} nats, allocation was {rec.beta_t}",
                    )

            spent += rec.beta_used
            remaining = max(0.0, remaining - rec.beta_used)
            if abs(rec.cum_mi - spent) > _REPLAY_TOL:
                return fail(
                    where,
                    f"running total {rec.cum_mi!r} mismatches re-derived {spent!r}",
                )
            if rec.unanimity_count != unanimity_bits:
                return fail(where, "unanimity counter mismatches re-derived count")

    if rule == "zpl" and spent != 0.0:
        return fail("total", f"zero-leakage run reports positive spend {spent!r}")
    if spent > mi_total:
        return fail(
            "total", f"cumulative information {spent!r} exceeds the budget {mi_total!r}"
        )

    return ValidationReport(
        ok=True, variant=spec.variant,
        message=(
            f"transcript sound: {spent:.6g} of {mi_total:.6g} nats spent over "
            f"{len(transcript.records)} releases ({unanimity_bits} unanimous)"
        ),
        first_violation=None, bits_checked=len(transcript.records),
        cum_mi=spent, recorded_cum_mi=transcript.cum_mi, mi_total=mi_total,
        unanimity_bits=unanimity_bits, residual_tolerance_mi=residual,
    )
