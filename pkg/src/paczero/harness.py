"""Experiment harness: configs, run artifacts, sweeps, and bound tables.

A run is fully described by one nested config (task, mechanism, train,
seeds).  Artifacts per seed are a line-delimited JSON transcript (header,
one object per released bit, summary trailer), the secret index in a
separate file, and a metrics file; each experiment folder gets a summary
CSV with fixed columns and a pooled mean/std row.  Identical config and
seed reproduce the transcript byte for byte; the design is regenerated
from its recorded seed on load and checked against a content hash.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .accounting import (
    ValidationReport,
    dp_eps_to_mia_bound,
    matched_mi_for_dp,
    mia_posterior_bound,
    validate_transcript,
)
from .engine import TrainConfig, Transcript, TranscriptHeader, TrainResult, train
from .mechanism import MechanismSpec, StepRecord, SubsetDesign, build_balanced_design
from .tasks import LossTask, make_task

__all__ = [
    "ConfigError",
    "SchemaError",
    "ExperimentConfig",
    "write_transcript",
    "load_transcript",
    "load_design",
    "run_experiment",
    "ExperimentSummary",
    "sweep_mi_plateau",
    "sweep_t_ladder",
    "sweep_decomposition",
    "sweep_k",
    "report_bounds",
    "output_root",
]

OUTPUT_ROOT_ENV = "PACZERO_OUTPUT_ROOT"
FORMAT_VERSION = 1

SUMMARY_COLUMNS = (
    "variant", "budget", "T", "seed", "dev", "test", "f", "cum_mi", "wallclock"
)

_HEADER_KEYS = {
    "type", "format_version", "variant", "task_name", "task_params", "train",
    "mechanism", "n_records", "n_subsets", "t_total", "k", "run_seed",
    "design_seed", "design_hash",
}
_RELEASE_KEYS = {
    "type", "t", "slot", "branch", "q_plus", "sigma", "y", "y_tilde",
    "beta_t", "beta_used", "cum_mi", "unanimity_count",
}
_SUMMARY_KEYS = {"type", "cum_mi", "unanimity_bits", "total_bits", "dev_evals"}


class ConfigError(ValueError):
    """Experiment config failed schema validation."""


class SchemaError(ValueError):
    """Transcript file does not match the documented schema."""


def output_root(explicit: str | None = None) -> Path:
    """Resolve the artifact root: explicit flag, then the environment
    override, then ./runs."""
    if explicit:
        return Path(explicit)
    env = os.environ.get(OUTPUT_ROOT_ENV)
    return Path(env) if env else Path("runs")


# ---------------------------------------------------------------------------
# experiment config


@dataclass(frozen=True)
class ExperimentConfig:
    task: dict
    mechanism: MechanismSpec
    train: TrainConfig
    seeds: tuple[int, ...] = (0, 1, 2)
    label: str = "experiment"
    output_dir: str | None = None

    def make_task(self) -> LossTask:
        params = {k: v for k, v in self.task.items() if k != "name"}
        return make_task(self.task["name"], **params)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        allowed = {"task", "mechanism", "train", "seeds", "label", "output_dir"}
        unknown = set(raw) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        task = raw.get("task")
        if not isinstance(task, dict) or "name" not in task:
            raise ConfigError("task: must be a mapping with a 'name' key")
        mech_raw = dict(raw.get("mechanism") or {})
        if mech_raw.get("clip") in ("inf", ".inf"):
            mech_raw["clip"] = math.inf
        try:
            mechanism = MechanismSpec(**mech_raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"mechanism: {exc}") from exc
        try:
            train_cfg = TrainConfig(**(raw.get("train") or {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"train: {exc}") from exc
        seeds = raw.get("seeds", (0, 1, 2))
        if isinstance(seeds, int):
            seeds = (seeds,)
        if not (
            isinstance(seeds, (list, tuple))
            and seeds
            and all(isinstance(s, int) for s in seeds)
        ):
            raise ConfigError("seeds: must be an integer or a nonempty list of integers")
        label = raw.get("label", "experiment")
        if not isinstance(label, str) or not label:
            raise ConfigError("label: must be a nonempty string")
        out = raw.get("output_dir")
        if out is not None and not isinstance(out, str):
            raise ConfigError("output_dir: must be a string path")
        return cls(
            task=task, mechanism=mechanism, train=train_cfg,
            seeds=tuple(seeds), label=label, output_dir=out,
        )

    @classmethod
    def from_yaml(
        cls, path: str | Path, overrides: list[str] | None = None
    ) -> "ExperimentConfig":
        raw = yaml.safe_load(Path(path).read_text())
        if raw is None:
            raw = {}
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form key.path=value")
            dotted, value = item.split("=", 1)
            _set_dotted(raw, dotted.strip(), yaml.safe_load(value))
        return cls.from_dict(raw)


def _set_dotted(tree: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = tree
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot descend into {key!r} in override {dotted!r}")
    node[keys[-1]] = value


# ---------------------------------------------------------------------------
# transcript persistence


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def transcript_lines(transcript: Transcript) -> list[str]:
    header = dataclasses.asdict(transcript.header)
    header["type"] = "header"
    header["format_version"] = FORMAT_VERSION
    lines = [_dump_line(header)]
    for rec in transcript.records:
        obj = dataclasses.asdict(rec)
        obj["type"] = "release"
        lines.append(_dump_line(obj))
    lines.append(
        _dump_line(
            {
                "type": "summary",
                "cum_mi": transcript.cum_mi,
                "unanimity_bits": transcript.unanimity_bits,
                "total_bits": transcript.total_bits,
                "dev_evals": [[t, m] for t, m in transcript.dev_evals],
            }
        )
    )
    return lines


def write_transcript(path: str | Path, transcript: Transcript) -> None:
    Path(path).write_text("\n".join(transcript_lines(transcript)) + "\n")


def _require_keys(obj: dict, expected: set[str], where: str) -> None:
    got = set(obj)
    if got != expected:
        extra, missing = sorted(got - expected), sorted(expected - got)
        problems = []
        if extra:
            problems.append(f"unknown fields {extra}")
        if missing:
            problems.append(f"missing fields {missing}")
        raise SchemaError(f"{where}: " + "; ".join(problems))


def load_transcript(path: str | Path) -> Transcript:
    """Parse a transcript file, rejecting any line that deviates from the
    documented schema (exact field sets per line type)."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise SchemaError("empty transcript file")
    header_obj = json.loads(lines[0])
    if header_obj.get("type") != "header":
        raise SchemaError("first line must be the header")
    _require_keys(header_obj, _HEADER_KEYS, "header")
    if header_obj["format_version"] != FORMAT_VERSION:
        raise SchemaError(f"unsupported format version {header_obj['format_version']}")
    header_obj.pop("type")
    header_obj.pop("format_version")
    header = TranscriptHeader(**header_obj)

    if len(lines) < 2:
        raise SchemaError("missing summary line")
    summary_obj = json.loads(lines[-1])
    if summary_obj.get("type") != "summary":
        raise SchemaError("last line must be the summary")
    _require_keys(summary_obj, _SUMMARY_KEYS, "summary")

    records = []
    for n, line in enumerate(lines[1:-1], start=2):
        obj = json.loads(line)
        if obj.get("type") != "release":
            raise SchemaError(f"line {n}: expected a release record")
        _require_keys(obj, _RELEASE_KEYS, f"line {n}")
        obj.pop("type")
        records.append(StepRecord(**obj))

    return Transcript(
        header=header,
        records=records,
        dev_evals=[(int(t), float(m)) for t, m in summary_obj["dev_evals"]],
        cum_mi=summary_obj["cum_mi"],
        unanimity_bits=summary_obj["unanimity_bits"],
        total_bits=summary_obj["total_bits"],
    )


def load_design(transcript: Transcript) -> SubsetDesign:
    """Regenerate the public design from its recorded seed and verify the
    content hash recorded in the header."""
    design = build_balanced_design(
        transcript.header.n_records,
        transcript.header.n_subsets,
        transcript.header.design_seed,
    )
    if design.content_hash() != transcript.header.design_hash:
        raise SchemaError("regenerated design does not match the recorded hash")
    return design


# ---------------------------------------------------------------------------
# runs and summaries


@dataclass
class RunRow:
    variant: str
    budget: float
    steps: int
    seed: int
    dev: float
    test: float
    free_fraction: float
    cum_mi: float
    wallclock: float
    validation: ValidationReport | None = None

    def csv_values(self) -> list:
        return [
            self.variant, _format_float(self.budget), self.steps, self.seed,
            _format_float(self.dev), _format_float(self.test),
            _format_float(self.free_fraction), _format_float(self.cum_mi),
            _format_float(self.wallclock),
        ]


def _format_float(x: float) -> str:
    return f"{x:.6g}"


@dataclass
class ExperimentSummary:
    config: ExperimentConfig
    rows: list[RunRow]
    results: list[TrainResult] = field(default_factory=list)

    def pooled(self, attr: str) -> tuple[float, float]:
        values = np.array([getattr(r, attr) for r in self.rows], dtype=float)
        sd = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        return float(np.mean(values)), sd

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(SUMMARY_COLUMNS)
        for row in self.rows:
            writer.writerow(row.csv_values())
        pooled = [self.rows[0].variant, _format_float(self.rows[0].budget),
                  self.rows[0].steps, "pooled"]
        for attr in ("dev", "test", "free_fraction", "cum_mi", "wallclock"):
            mean, sd = self.pooled(attr)
            pooled.append(f"{mean:.6g}±{sd:.3g}")
        writer.writerow(pooled)
        return buf.getvalue()

    def first_violation(self) -> str | None:
        for row in self.rows:
            if row.validation is not None and not row.validation.ok:
                return row.validation.message
        return None


def _budget_of(spec: MechanismSpec) -> float:
    return spec.mi_total if spec.bit_rule() == "mi" else 0.0


def run_experiment(
    config: ExperimentConfig,
    out_dir: Path | None = None,
    validate: bool = True,
    snapshot_steps: tuple[int, ...] = (),
) -> ExperimentSummary:
    """Train once per seed, evaluate, validate, and optionally persist."""
    task = config.make_task()
    rows: list[RunRow] = []
    results: list[TrainResult] = []
    for seed in config.seeds:
        cfg = replace(config.train, seed=seed)
        start = time.perf_counter()
        result = train(task, cfg, config.mechanism, snapshot_steps=snapshot_steps)
        wallclock = time.perf_counter() - start
        transcript = result.transcript
        report = validate_transcript(transcript) if validate else None
        row = RunRow(
            variant=config.mechanism.variant,
            budget=_budget_of(config.mechanism),
            steps=cfg.steps,
            seed=seed,
            dev=task.eval_metric(result.params, "dev"),
            test=task.eval_metric(result.params, "test"),
            free_fraction=transcript.free_fraction(),
            cum_mi=transcript.cum_mi,
            wallclock=wallclock,
            validation=report,
        )
        rows.append(row)
        results.append(result)
        if out_dir is not None:
            seed_dir = Path(out_dir) / f"seed_{seed}"
            seed_dir.mkdir(parents=True, exist_ok=True)
            write_transcript(seed_dir / "transcript.jsonl", transcript)
            (seed_dir / "secret.json").write_text(
                _dump_line({"secret_index": result.secret_index}) + "\n"
            )
            (seed_dir / "metrics.json").write_text(
                _dump_line(
                    {
                        "dev": row.dev,
                        "test": row.test,
                        "free_fraction": row.free_fraction,
                        "cum_mi": row.cum_mi,
                        "dev_best_step": result.dev_best_step,
                        "validation_ok": None if report is None else report.ok,
                    }
                )
                + "\n"
            )
            if report is not None:
                (seed_dir / "validation.json").write_text(
                    _dump_line(dataclasses.asdict(report)) + "\n"
                )
    summary = ExperimentSummary(config=config, rows=rows, results=results)
    if out_dir is not None:
        (Path(out_dir) / "summary.csv").write_text(summary.csv_text())
    return summary


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepResult:
    name: str
    columns: tuple[str, ...]
    rows: list[list]
    notes: dict = field(default_factory=dict)

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(self.columns)
        writer.writerows(self.rows)
        return buf.getvalue()


def sweep_mi_plateau(
    config: ExperimentConfig,
    budgets: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1, 0.33, 0.68),
    out_dir: Path | None = None,
) -> SweepResult:
    """Same recipe across total budgets; reports per-budget pooled metrics
    and the spread (max minus min) of the pooled test metric."""
    rows = []
    means = []
    budget_ok = True
    for budget in budgets:
        spec = replace(config.mechanism, variant="paczero_mi", mi_total=budget)
        summary = run_experiment(replace(config, mechanism=spec), out_dir=None)
        dev_m, _ = summary.pooled("dev")
        test_m, _ = summary.pooled("test")
        f_m, _ = summary.pooled("free_fraction")
        cum_m = max(r.cum_mi for r in summary.rows)
        budget_ok &= all(r.cum_mi <= budget for r in summary.rows)
        means.append(test_m)
        rows.append([
            _format_float(budget), _format_float(dev_m), _format_float(test_m),
            _format_float(f_m), _format_float(cum_m),
        ])
    spread = max(means) - min(means)
    result = SweepResult(
        name="mi_plateau",
        columns=("budget", "dev", "test", "f", "max_cum_mi"),
        rows=rows,
        notes={"test_spread": spread, "within_budget": budget_ok},
    )
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "sweep_mi.csv").write_text(result.csv_text())
    return result


def sweep_t_ladder(
    config: ExperimentConfig,
    rungs: tuple[int, ...] = (250, 500, 1000),
    out_dir: Path | None = None,
) -> SweepResult:
    """One trajectory per seed out to max(rungs); dev/test evaluated at the
    parameters held at each rung (no checkpoint selection)."""
    rungs = tuple(sorted(rungs))
    horizon = rungs[-1]
    task = None
    per_rung: dict[int, list[tuple[float, float]]] = {r: [] for r in rungs}
    long_config = replace(
        config,
        train=replace(config.train, steps=horizon, load_best_dev=False),
    )
    summary = run_experiment(long_config, out_dir=None, snapshot_steps=rungs)
    task = long_config.make_task()
    for result in summary.results:
        for rung in rungs:
            theta = result.snapshots[rung]
            per_rung[rung].append(
                (task.eval_metric(theta, "dev"), task.eval_metric(theta, "test"))
            )
    rows = []
    rung_test_means = {}
    for rung in rungs:
        pairs = np.array(per_rung[rung])
        rows.append([
            rung, _format_float(float(pairs[:, 0].mean())),
            _format_float(float(pairs[:, 1].mean())),
        ])
        rung_test_means[rung] = float(pairs[:, 1].mean())
    best_rung = max(rung_test_means, key=rung_test_means.get)
    drift = None
    if best_rung * 4 in rung_test_means:
        drift = rung_test_means[best_rung * 4] - rung_test_means[best_rung]
    result = SweepResult(
        name="t_ladder",
        columns=("T", "dev", "test"),
        rows=rows,
        notes={
            "best_rung": best_rung,
            "drift_at_4x": drift,
            "test_means": rung_test_means,
        },
    )
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "sweep_t.csv").write_text(result.csv_text())
    return result


_DECOMP_VARIANTS = (
    ("surrogate", "raw_full"), ("surrogate", "quant_full"),
    ("surrogate", "raw_half"), ("surrogate", "quant_half"),
    ("surrogate", "random_sign"), ("paczero_mi", None), ("paczero_zpl", None),
)


def sweep_decomposition(
    config: ExperimentConfig, out_dir: Path | None = None
) -> SweepResult:
    """Private variants against the non-private release ladder on the same
    task, seeds, and schedule."""
    rows = []
    notes = {}
    for variant, mode in _DECOMP_VARIANTS:
        if variant == "surrogate":
            spec = replace(
                config.mechanism, variant=variant, surrogate_mode=mode, k=1,
            )
            label = mode
        else:
            spec = replace(config.mechanism, variant=variant, surrogate_mode=None, k=1)
            label = variant
        summary = run_experiment(replace(config, mechanism=spec), out_dir=None)
        dev_m, _ = summary.pooled("dev")
        test_m, _ = summary.pooled("test")
        f_m, _ = summary.pooled("free_fraction")
        rows.append([
            label, _format_float(dev_m), _format_float(test_m), _format_float(f_m),
        ])
        notes[label] = {"dev": dev_m, "test": test_m, "f": f_m}
    result = SweepResult(
        name="decomposition", columns=("release", "dev", "test", "f"),
        rows=rows, notes=notes,
    )
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "sweep_decomp.csv").write_text(result.csv_text())
    return result


def sweep_k(
    config: ExperimentConfig,
    ks: tuple[int, ...] = (1, 2, 4),
    out_dir: Path | None = None,
) -> SweepResult:
    """Directions-per-step ladder under a fixed total budget."""
    inner = (
        config.mechanism.inner_variant
        if config.mechanism.variant == "k_aggregate"
        else config.mechanism.variant
    )
    if inner not in ("paczero_mi", "paczero_zpl"):
        raise ConfigError("k sweep needs a private variant")
    rows = []
    for k in ks:
        spec = replace(
            config.mechanism, variant="k_aggregate", inner_variant=inner, k=k,
        )
        summary = run_experiment(replace(config, mechanism=spec), out_dir=None)
        dev_m, _ = summary.pooled("dev")
        test_m, _ = summary.pooled("test")
        f_m, _ = summary.pooled("free_fraction")
        cum_m = max(r.cum_mi for r in summary.rows)
        rows.append([
            k, _format_float(dev_m), _format_float(test_m), _format_float(f_m),
            _format_float(cum_m),
        ])
    result = SweepResult(
        name="k_ladder", columns=("k", "dev", "test", "f", "max_cum_mi"), rows=rows,
    )
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "sweep_k.csv").write_text(result.csv_text())
    return result


# ---------------------------------------------------------------------------
# bound tables

BOUNDS_DISCLAIMER = (
    "DP rows are attack-success reference points only: matching the "
    "membership-inference ceiling of an (eps, delta)-DP mechanism does not "
    "confer differential privacy at those parameters."
)


def report_bounds(
    mi_values: tuple[float, ...] = (0.0, 1 / 128, 0.25, 0.33, 0.68),
    eps_values: tuple[float, ...] = (0.1, 1.0, 2.0, 6.0),
    delta: float = 1e-5,
    prior: float = 0.5,
) -> SweepResult:
    """Information budgets, their attack-success ceilings, and DP reference
    rows expressed in the same currency."""
    rows = []
    for mi in mi_values:
        note = "zero-leakage (DP eps = 0 reference)" if mi == 0.0 else ""
        rows.append([
            "mi", _format_float(mi), "",
            _format_float(mia_posterior_bound(mi, prior)), note,
        ])
    for eps in eps_values:
        bound = dp_eps_to_mia_bound(eps, delta)
        matched = matched_mi_for_dp(eps, delta, prior)
        rows.append([
            "dp", f"eps={_format_float(eps)}", f"delta={_format_float(delta)}",
            _format_float(bound),
            f"matched_mi={_format_float(matched)}",
        ])
    return SweepResult(
        name="bounds",
        columns=("kind", "value", "param", "mia_bound", "note"),
        rows=rows,
        notes={"disclaimer": BOUNDS_DISCLAIMER, "prior": prior},
    )
