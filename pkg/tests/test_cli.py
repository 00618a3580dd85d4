import builtins
from pathlib import Path

import pytest

from privfed.cli import main
from privfed.config import ExperimentConfig, write_config


def cfg_file(tmp_path, **overrides) -> Path:
    base = dict(task_num_samples=400, institutions_count=4, rounds=2,
                local_epochs=2, lr=1.0, seed=3, output_dir=str(tmp_path / "out"))
    base.update(overrides)
    path = tmp_path / "exp.cfg"
    write_config(ExperimentConfig(**base), path)
    return path


class TestRun:
    def test_run_exit_zero_and_artifacts(self, tmp_path, capsys):
        config = cfg_file(tmp_path)
        assert main(["run", "--config", str(config)]) == 0
        out = tmp_path / "out"
        assert (out / "report.records").exists()
        assert (out / "report.txt").exists()
        assert (out / "audit.chain").exists()
        assert "status=completed" in capsys.readouterr().out

    def test_seed_and_out_overrides(self, tmp_path):
        config = cfg_file(tmp_path)
        other = tmp_path / "elsewhere"
        assert main(["run", "--config", str(config), "--seed", "9",
                     "--out", str(other)]) == 0
        records = (other / "report.records").read_text()
        assert '"seed": 9' in records

    def test_invalid_config_exits_2_listing_fields(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("rounds=0\ndp.epsilon=-1\n")
        assert main(["run", "--config", str(path)]) == 2
        err = capsys.readouterr().err
        assert "rounds" in err and "dp.epsilon" in err


class TestVerifyAudit:
    @pytest.fixture()
    def artifacts(self, tmp_path):
        config = cfg_file(tmp_path)
        main(["run", "--config", str(config)])
        out = tmp_path / "out"
        return {
            "chain": out / "audit.chain",
            "proof": out / "inst00.budget.proof",
            "policy": out / "audit.policy",
        }

    def test_compliant_run_exits_zero(self, artifacts):
        assert main(["verify-audit", "--chain", str(artifacts["chain"]),
                     "--proof", str(artifacts["proof"]),
                     "--policy", str(artifacts["policy"])]) == 0

    def test_tampered_proof_exits_two(self, artifacts, tmp_path):
        text = artifacts["proof"].read_text()
        i = text.index("chain_head=") + len("chain_head=")
        flip = "0" if text[i] != "0" else "1"
        bad = tmp_path / "bad.proof"
        bad.write_text(text[:i] + flip + text[i + 1:])
        assert main(["verify-audit", "--chain", str(artifacts["chain"]),
                     "--proof", str(bad),
                     "--policy", str(artifacts["policy"])]) == 2

    def test_stricter_policy_exits_one(self, artifacts, tmp_path):
        text = artifacts["policy"].read_text().replace(
            "max_epsilon_per_institution=4.0", "max_epsilon_per_institution=0.5")
        strict = tmp_path / "strict.policy"
        strict.write_text(text)
        assert main(["verify-audit", "--chain", str(artifacts["chain"]),
                     "--proof", str(artifacts["proof"]),
                     "--policy", str(strict)]) == 1

    def test_unparseable_exits_three_with_location(self, artifacts, tmp_path, capsys):
        mangled = tmp_path / "mangled.chain"
        lines = artifacts["chain"].read_text().split("\n")
        lines[2] = "zzz"
        mangled.write_text("\n".join(lines))
        assert main(["verify-audit", "--chain", str(mangled),
                     "--proof", str(artifacts["proof"]),
                     "--policy", str(artifacts["policy"])]) == 3
        assert "line 3" in capsys.readouterr().err

    def test_reads_only_the_three_inputs(self, artifacts, monkeypatch):
        # the auditor workflow must not touch datasets, models, or reports
        allowed = {Path(p).name for p in artifacts.values()}
        opened = []
        real_open = builtins.open

        def spy(file, *args, **kwargs):
            opened.append(Path(str(file)).name)
            return real_open(file, *args, **kwargs)

        monkeypatch.setattr(builtins, "open", spy)
        assert main(["verify-audit", "--chain", str(artifacts["chain"]),
                     "--proof", str(artifacts["proof"]),
                     "--policy", str(artifacts["policy"])]) == 0
        assert set(opened) <= allowed


class TestSweepAndReport:
    def test_sweep_table_columns(self, tmp_path, capsys):
        config = cfg_file(tmp_path, task_num_samples=800, institutions_count=8)
        assert main(["sweep", "--config", str(config), "--seeds", "2"]) == 0
        out = capsys.readouterr().out
        header = next(l for l in out.split("\n") if l.startswith("metric"))
        assert header.index("no-dp") < header.index("eps=4") < header.index("eps=2")

    def test_report_rerenders_records(self, tmp_path, capsys):
        config = cfg_file(tmp_path)
        main(["run", "--config", str(config)])
        capsys.readouterr()
        records = tmp_path / "out" / "report.records"
        assert main(["report", "--records", str(records)]) == 0
        assert "privfed report" in capsys.readouterr().out


def test_govern_train_smoke(tmp_path, capsys):
    config = cfg_file(tmp_path, governance_enabled=True, governance_episodes=5)
    assert main(["govern-train", "--config", str(config), "--episodes", "5"]) == 0
    assert "violations" in capsys.readouterr().out
