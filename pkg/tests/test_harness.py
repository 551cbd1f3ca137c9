import json
import math
from pathlib import Path

import numpy as np
import pytest

from paczero import cli
from paczero.harness import (
    BOUNDS_DISCLAIMER,
    ConfigError,
    ExperimentConfig,
    SchemaError,
    SUMMARY_COLUMNS,
    load_design,
    load_transcript,
    output_root,
    report_bounds,
    run_experiment,
    sweep_decomposition,
    sweep_k,
    sweep_mi_plateau,
    sweep_t_ladder,
    transcript_lines,
    write_transcript,
)


def base_raw(**over) -> dict:
    raw = {
        "task": {"name": "blobs", "n_records": 16, "seed": 3},
        "mechanism": {
            "variant": "paczero_mi", "mi_total": 0.25, "n_subsets": 8, "clip": 1.0,
        },
        "train": {"steps": 12, "learning_rate": 0.05, "dev_eval_interval": 6},
        "seeds": [0, 1],
        "label": "unit",
    }
    raw.update(over)
    return raw


def write_config(tmp_path: Path, raw: dict) -> Path:
    import yaml

    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


class TestExperimentConfig:
    def test_happy_path(self):
        cfg = ExperimentConfig.from_dict(base_raw())
        assert cfg.mechanism.mi_total == 0.25
        assert cfg.train.steps == 12
        assert cfg.seeds == (0, 1)
        assert cfg.label == "unit"
        assert cfg.make_task().n_records == 16

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            ExperimentConfig.from_dict(base_raw(budget=0.3))

    def test_task_requires_name(self):
        with pytest.raises(ConfigError, match="task"):
            ExperimentConfig.from_dict(base_raw(task={"n_records": 16}))

    def test_mechanism_errors_are_attributed(self):
        raw = base_raw(mechanism={"variant": "paczero_mi", "mi_total": -1.0})
        with pytest.raises(ConfigError, match="^mechanism: "):
            ExperimentConfig.from_dict(raw)
        raw = base_raw(mechanism={"variant": "paczero_mi", "mi_total": 0.1, "bogus": 1})
        with pytest.raises(ConfigError, match="^mechanism: "):
            ExperimentConfig.from_dict(raw)

    def test_train_errors_are_attributed(self):
        with pytest.raises(ConfigError, match="^train: "):
            ExperimentConfig.from_dict(base_raw(train={"steps": 0}))
        with pytest.raises(ConfigError, match="^train: "):
            ExperimentConfig.from_dict(base_raw(train={"walrus": 1}))

    def test_seed_normalization(self):
        assert ExperimentConfig.from_dict(base_raw(seeds=7)).seeds == (7,)
        with pytest.raises(ConfigError, match="seeds"):
            ExperimentConfig.from_dict(base_raw(seeds=[]))
        with pytest.raises(ConfigError, match="seeds"):
            ExperimentConfig.from_dict(base_raw(seeds=["a"]))

    def test_label_and_output_dir_validation(self):
        with pytest.raises(ConfigError, match="label"):
            ExperimentConfig.from_dict(base_raw(label=""))
        with pytest.raises(ConfigError, match="output_dir"):
            ExperimentConfig.from_dict(base_raw(output_dir=3))

    def test_clip_inf_spelling(self):
        raw = base_raw(
            mechanism={"variant": "paczero_zpl", "n_subsets": 8, "clip": "inf"}
        )
        cfg = ExperimentConfig.from_dict(raw)
        assert cfg.mechanism.clip == math.inf

    def test_from_yaml_with_overrides(self, tmp_path):
        path = write_config(tmp_path, base_raw())
        cfg = ExperimentConfig.from_yaml(
            path, ["mechanism.mi_total=0.5", "train.steps=7", "seeds=9"]
        )
        assert cfg.mechanism.mi_total == 0.5
        assert cfg.train.steps == 7
        assert cfg.seeds == (9,)

    def test_malformed_override(self, tmp_path):
        path = write_config(tmp_path, base_raw())
        with pytest.raises(ConfigError, match="override"):
            ExperimentConfig.from_yaml(path, ["train.steps 7"])

    def test_output_root_resolution(self, monkeypatch):
        monkeypatch.delenv("PACZERO_OUTPUT_ROOT", raising=False)
        assert output_root() == Path("runs")
        monkeypatch.setenv("PACZERO_OUTPUT_ROOT", "/tmp/elsewhere")
        assert output_root() == Path("/tmp/elsewhere")
        assert output_root("explicit") == Path("explicit")


@pytest.fixture(scope="module")
def small_summary(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    config = ExperimentConfig.from_dict(base_raw())
    return config, out, run_experiment(config, out_dir=out)


class TestTranscriptIO:
    def test_roundtrip_is_byte_identical(self, small_summary):
        _, out, summary = small_summary
        path = out / "seed_0" / "transcript.jsonl"
        original = path.read_text()
        reloaded = load_transcript(path)
        assert "\n".join(transcript_lines(reloaded)) + "\n" == original
        assert reloaded.cum_mi == summary.rows[0].cum_mi

    def test_design_regenerates_and_verifies(self, small_summary):
        _, out, summary = small_summary
        transcript = load_transcript(out / "seed_0" / "transcript.jsonl")
        design = load_design(transcript)
        assert design.content_hash() == transcript.header.design_hash
        assert design.n_records == 16

    def test_design_hash_mismatch_rejected(self, small_summary, tmp_path):
        import dataclasses

        _, out, _ = small_summary
        transcript = load_transcript(out / "seed_0" / "transcript.jsonl")
        forged = dataclasses.replace(
            transcript, header=dataclasses.replace(
                transcript.header, design_hash="0" * 64
            )
        )
        with pytest.raises(SchemaError, match="hash"):
            load_design(forged)

    def write_tampered(self, out, tmp_path, mutate) -> Path:
        lines = (out / "seed_0" / "transcript.jsonl").read_text().splitlines()
        lines = mutate(lines)
        bad = tmp_path / "tampered.jsonl"
        bad.write_text("\n".join(lines) + "\n")
        return bad

    def test_unknown_field_rejected(self, small_summary, tmp_path):
        _, out, _ = small_summary

        def add_field(lines):
            obj = json.loads(lines[1])
            obj["smuggled"] = 1
            lines[1] = json.dumps(obj)
            return lines

        with pytest.raises(SchemaError, match="unknown fields"):
            load_transcript(self.write_tampered(out, tmp_path, add_field))

    def test_missing_field_rejected(self, small_summary, tmp_path):
        _, out, _ = small_summary

        def drop_field(lines):
            obj = json.loads(lines[1])
            obj.pop("q_plus")
            lines[1] = json.dumps(obj)
            return lines

        with pytest.raises(SchemaError, match="missing fields"):
            load_transcript(self.write_tampered(out, tmp_path, drop_field))

    def test_header_must_come_first(self, small_summary, tmp_path):
        _, out, _ = small_summary
        with pytest.raises(SchemaError, match="header"):
            load_transcript(
                self.write_tampered(out, tmp_path, lambda ls: ls[1:] + ls[:1])
            )

    def test_summary_must_come_last(self, small_summary, tmp_path):
        _, out, _ = small_summary
        with pytest.raises(SchemaError, match="summary"):
            load_transcript(
                self.write_tampered(out, tmp_path, lambda ls: ls[:-1])
            )

    def test_format_version_checked(self, small_summary, tmp_path):
        _, out, _ = small_summary

        def bump_version(lines):
            obj = json.loads(lines[0])
            obj["format_version"] = 99
            lines[0] = json.dumps(obj)
            return lines

        with pytest.raises(SchemaError, match="version"):
            load_transcript(self.write_tampered(out, tmp_path, bump_version))

    def test_empty_file_rejected(self, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        with pytest.raises(SchemaError, match="empty"):
            load_transcript(empty)


class TestRunExperiment:
    def test_artifact_layout(self, small_summary):
        config, out, summary = small_summary
        for seed in config.seeds:
            seed_dir = out / f"seed_{seed}"
            for name in (
                "transcript.jsonl", "secret.json", "metrics.json", "validation.json",
            ):
                assert (seed_dir / name).exists(), name
        assert (out / "summary.csv").exists()

    def test_summary_csv_shape(self, small_summary):
        config, out, summary = small_summary
        lines = (out / "summary.csv").read_text().splitlines()
        assert lines[0] == ",".join(SUMMARY_COLUMNS)
        assert len(lines) == 1 + len(config.seeds) + 1  # header, rows, pooled
        assert "pooled" in lines[-1]
        assert "±" in lines[-1]

    def test_all_runs_validate(self, small_summary):
        _, _, summary = small_summary
        assert summary.first_violation() is None
        for row in summary.rows:
            assert row.validation is not None and row.validation.ok
            assert row.cum_mi <= 0.25

    def test_metrics_json_content(self, small_summary):
        config, out, summary = small_summary
        metrics = json.loads((out / "seed_0" / "metrics.json").read_text())
        assert metrics["dev"] == summary.rows[0].dev
        assert metrics["test"] == summary.rows[0].test
        assert metrics["validation_ok"] is True

    def test_secret_stays_out_of_public_artifacts(self, small_summary):
        config, out, _ = small_summary
        secret = json.loads((out / "seed_0" / "secret.json").read_text())
        assert set(secret) == {"secret_index"}
        transcript_text = (out / "seed_0" / "transcript.jsonl").read_text()
        assert "secret" not in transcript_text

    def test_rerun_is_byte_identical(self, tmp_path):
        config = ExperimentConfig.from_dict(base_raw(seeds=[4]))
        a, b = tmp_path / "a", tmp_path / "b"
        run_experiment(config, out_dir=a)
        run_experiment(config, out_dir=b)
        assert (
            (a / "seed_4" / "transcript.jsonl").read_bytes()
            == (b / "seed_4" / "transcript.jsonl").read_bytes()
        )

    def test_pooled_statistics(self, small_summary):
        _, _, summary = small_summary
        mean, sd = summary.pooled("test")
        values = [r.test for r in summary.rows]
        assert mean == pytest.approx(float(np.mean(values)))
        assert sd == pytest.approx(float(np.std(values, ddof=1)))


class TestSweeps:
    def test_mi_plateau_structure(self):
        config = ExperimentConfig.from_dict(base_raw(seeds=[0]))
        result = sweep_mi_plateau(config, budgets=(0.01, 0.33))
        assert result.columns == ("budget", "dev", "test", "f", "max_cum_mi")
        assert len(result.rows) == 2
        assert result.notes["within_budget"] is True
        assert result.notes["test_spread"] >= 0.0
        for row, budget in zip(result.rows, (0.01, 0.33)):
            assert float(row[4]) <= budget * (1 + 1e-6)

    def test_t_ladder_single_trajectory(self, tmp_path):
        config = ExperimentConfig.from_dict(base_raw(seeds=[0, 1]))
        result = sweep_t_ladder(config, rungs=(25, 100), out_dir=tmp_path)
        assert [row[0] for row in result.rows] == [25, 100]
        assert set(result.notes["test_means"]) == {25, 100}
        assert result.notes["best_rung"] in (25, 100)
        drift = result.notes["drift_at_4x"]
        means = result.notes["test_means"]
        if result.notes["best_rung"] == 25:
            assert drift == pytest.approx(means[100] - means[25])
        else:
            assert drift is None
        assert (tmp_path / "sweep_t.csv").exists()

    def test_decomposition_ladder(self):
        config = ExperimentConfig.from_dict(base_raw(seeds=[0, 1]))
        result = sweep_decomposition(config)
        labels = [row[0] for row in result.rows]
        assert labels == [
            "raw_full", "quant_full", "raw_half", "quant_half",
            "random_sign", "paczero_mi", "paczero_zpl",
        ]
        assert set(result.notes) == set(labels)
        for label in labels:
            assert 0.0 <= result.notes[label]["test"] <= 1.0

    def test_k_ladder(self):
        config = ExperimentConfig.from_dict(base_raw(seeds=[0]))
        result = sweep_k(config, ks=(1, 2))
        assert [row[0] for row in result.rows] == [1, 2]
        for row in result.rows:
            assert float(row[4]) <= 0.25 * (1 + 1e-6)

    def test_k_ladder_rejects_surrogate(self):
        raw = base_raw(
            mechanism={
                "variant": "surrogate", "surrogate_mode": "raw_full",
                "n_subsets": 8, "clip": 1.0,
            }
        )
        config = ExperimentConfig.from_dict(raw)
        with pytest.raises(ConfigError, match="private"):
            sweep_k(config, ks=(1,))


class TestReportBounds:
    def test_rows_and_notes(self):
        result = report_bounds(
            mi_values=(0.0, 0.33), eps_values=(1.0, 2.0), delta=1e-5
        )
        assert len(result.rows) == 4
        kinds = [row[0] for row in result.rows]
        assert kinds == ["mi", "mi", "dp", "dp"]
        zero_row = result.rows[0]
        assert zero_row[3] == "0.5"
        assert "zero-leakage" in zero_row[4]
        for row in result.rows[2:]:
            assert row[1].startswith("eps=")
            assert "matched_mi=" in row[4]
        assert result.notes["disclaimer"] == BOUNDS_DISCLAIMER

    def test_bounds_monotone_in_mi(self):
        result = report_bounds(mi_values=(0.0, 0.1, 0.33, 0.68), eps_values=())
        bounds = [float(row[3]) for row in result.rows]
        assert bounds == sorted(bounds)
        assert bounds[0] == 0.5


class TestCli:
    def test_bounds_command(self, capsys):
        assert cli.main(["bounds", "--mi", "0.0", "0.33", "--eps", "2.0"]) == 0
        out = capsys.readouterr().out
        assert "mia_bound" in out
        assert BOUNDS_DISCLAIMER in out

    def test_run_command_with_override(self, tmp_path, capsys):
        path = write_config(tmp_path, base_raw(seeds=[0]))
        code = cli.main(
            [
                "run", "--config", str(path), "--out", str(tmp_path / "runs"),
                "--set", "train.steps=8", "--set", "label=cli_case",
            ]
        )
        out = capsys.readouterr().out
        assert code == 0
        assert "artifacts:" in out
        run_dir = tmp_path / "runs" / "cli_case"
        assert (run_dir / "summary.csv").exists()
        transcript = load_transcript(run_dir / "seed_0" / "transcript.jsonl")
        assert transcript.header.t_total == 8

    def test_validate_command_accepts_honest_transcript(self, tmp_path, capsys):
        path = write_config(tmp_path, base_raw(seeds=[0]))
        cli.main(["run", "--config", str(path), "--out", str(tmp_path / "runs")])
        capsys.readouterr()
        transcript_path = tmp_path / "runs" / "unit" / "seed_0" / "transcript.jsonl"
        assert cli.main(["validate", str(transcript_path)]) == 0
        assert "OK" in capsys.readouterr().out

    def test_validate_command_rejects_tampered_release(self, tmp_path, capsys):
        path = write_config(tmp_path, base_raw(seeds=[0]))
        cli.main(["run", "--config", str(path), "--out", str(tmp_path / "runs")])
        capsys.readouterr()
        transcript_path = tmp_path / "runs" / "unit" / "seed_0" / "transcript.jsonl"
        lines = transcript_path.read_text().splitlines()
        for n, line in enumerate(lines[1:-1], start=1):
            obj = json.loads(line)
            if obj["branch"] == "disagreement":
                obj["y"] = -obj["y"]
                lines[n] = json.dumps(obj, sort_keys=True, separators=(",", ":"))
                break
        else:
            pytest.skip("no contested release to tamper with")
        transcript_path.write_text("\n".join(lines) + "\n")
        assert cli.main(["validate", str(transcript_path)]) == 1
        err = capsys.readouterr().err
        assert "FAILED invariant" in err

    def test_bad_config_fails_cleanly(self, tmp_path, capsys):
        path = write_config(tmp_path, base_raw(seeds="florp"))
        assert cli.main(["run", "--config", str(path)]) == 1
        assert "FAILED invariant" in capsys.readouterr().err

    def test_missing_config_fails_cleanly(self, tmp_path, capsys):
        assert cli.main(["run", "--config", str(tmp_path / "nope.yaml")]) == 1
        assert "missing file" in capsys.readouterr().err

    def test_attack_command(self, tmp_path, capsys):
        raw = base_raw(seeds=[0])
        raw["train"]["steps"] = 8
        path = write_config(tmp_path, raw)
        code = cli.main(
            ["attack", "--config", str(path), "--trials", "100", "--attack-seed", "5"]
        )
        out = capsys.readouterr().out
        assert code == 0
        assert "rate=" in out and "bound=" in out

    def test_sweep_mi_command(self, tmp_path, capsys):
        path = write_config(tmp_path, base_raw(seeds=[0]))
        code = cli.main(
            [
                "sweep-mi", "--config", str(path),
                "--out", str(tmp_path / "runs"), "--budgets", "0.01", "0.33",
            ]
        )
        out = capsys.readouterr().out
        assert code == 0
        assert "test-metric spread" in out
        assert (tmp_path / "runs" / "unit" / "sweep_mi.csv").exists()
