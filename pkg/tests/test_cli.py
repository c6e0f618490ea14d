import csv
import json

import pytest

from sdiff.cli import main
from sdiff.data import load_interactions
from sdiff.synthetic import clustered_dataset, two_block_dataset, write_interactions_file

FAST = ["--epochs", "8", "--eval-every", "4", "--patience", "3", "--lr", "1e-3",
        "--hidden", "32", "--time-dim", "8", "--film-hidden", "4", "--batch-size", "20"]


@pytest.fixture(scope="module")
def data_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "corpus.tsv"
    write_interactions_file(clustered_dataset(n_users=60, n_items=40, n_clusters=4, seed=3), path)
    return str(path)


@pytest.fixture(scope="module")
def other_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "other.tsv"
    write_interactions_file(two_block_dataset(20, 16), path)
    return str(path)


def run_pipeline(data_file, out, seed="0"):
    base = ["--data", data_file, "--out", out, "--seed", seed, "--deterministic"]
    assert main(["prepare", *base, "--k", "8"]) == 0
    assert main(["train", *base, *FAST]) == 0
    assert main(["recommend", *base, "--topk", "5"]) == 0
    assert main(["evaluate", *base, "--topk", "5,10", "--runs", "2"]) == 0


class TestPipeline:
    def test_end_to_end_artifacts(self, data_file, tmp_path):
        out = tmp_path / "run"
        run_pipeline(data_file, str(out))
        for name in ("split.txt", "basis.bin", "model.ckpt", "training_log.csv",
                     "recommendations.txt", "metrics.csv", "manifest_train.json"):
            assert (out / name).exists(), name

    def test_recommendations_exclude_history_and_rank(self, data_file, tmp_path):
        out = tmp_path / "run"
        run_pipeline(data_file, str(out))
        m = load_interactions(data_file)
        seen = {}
        for line in (out / "recommendations.txt").read_text().splitlines():
            user, item, rank, score = line.split()
            seen.setdefault(user, []).append((int(rank), item, float(score)))
        assert len(seen) == m.n_users
        for user, entries in seen.items():
            ranks = [r for r, _, _ in entries]
            assert ranks == list(range(1, len(ranks) + 1))
            scores = [s for _, _, s in entries]
            assert scores == sorted(scores, reverse=True)

    def test_training_log_columns(self, data_file, tmp_path):
        out = tmp_path / "run"
        run_pipeline(data_file, str(out))
        rows = list(csv.DictReader((out / "training_log.csv").open()))
        assert set(rows[0]) == {"epoch", "loss", "val_recall@10", "val_ndcg@10", "wall_ms"}
        assert all(r["wall_ms"] == "0" for r in rows)  # deterministic mode

    def test_hash_mismatch_single_line_error(self, data_file, other_file, tmp_path, capsys):
        out = tmp_path / "run"
        base = ["--data", data_file, "--out", str(out), "--deterministic"]
        assert main(["prepare", *base, "--k", "8"]) == 0
        code = main(["train", "--data", other_file, "--out", str(out),
                     "--deterministic", *FAST])
        assert code == 1
        err = capsys.readouterr().err.strip().splitlines()[-1]
        assert err.startswith("error:") and "hash" in err and "\n" not in err

    def test_failed_command_removes_partial_artifacts(self, other_file, tmp_path, capsys):
        out = tmp_path / "run"
        base = ["--data", other_file, "--out", str(out), "--deterministic"]
        assert main(["prepare", *base, "--k", "8"]) == 0
        # corrupt basis triggers a load failure inside train
        (out / "basis.bin").write_bytes(b"garbage")
        assert main(["train", *base, *FAST]) == 1
        assert not (out / "model.ckpt").exists()
        assert not (out / "training_log.csv").exists()

    def test_determinism_byte_identical(self, data_file, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        run_pipeline(data_file, str(out_a), seed="5")
        run_pipeline(data_file, str(out_b), seed="5")
        for name in ("split.txt", "basis.bin", "model.ckpt", "training_log.csv",
                     "recommendations.txt", "metrics.csv"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name

    def test_unknown_user_id_errors(self, data_file, tmp_path, capsys):
        out = tmp_path / "run"
        base = ["--data", data_file, "--out", str(out), "--deterministic"]
        assert main(["prepare", *base, "--k", "8"]) == 0
        assert main(["train", *base, *FAST]) == 0
        users = tmp_path / "users.txt"
        users.write_text("nobody\n")
        assert main(["recommend", *base, "--topk", "3", "--users", str(users)]) == 1
        assert "unknown user" in capsys.readouterr().err

    def test_users_file_subset(self, data_file, tmp_path):
        out = tmp_path / "run"
        base = ["--data", data_file, "--out", str(out), "--deterministic"]
        assert main(["prepare", *base, "--k", "8"]) == 0
        assert main(["train", *base, *FAST]) == 0
        users = tmp_path / "users.txt"
        users.write_text("u3\nu7\n")
        assert main(["recommend", *base, "--topk", "3", "--users", str(users)]) == 0
        lines = (out / "recommendations.txt").read_text().splitlines()
        assert {ln.split()[0] for ln in lines} == {"u3", "u7"}


class TestConfigFile:
    def test_config_supplies_defaults_flags_win(self, data_file, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("k = 6\nseed 9\n# comment\n")
        out1 = tmp_path / "c1"
        assert main(["prepare", "--data", data_file, "--out", str(out1),
                     "--config", str(cfg), "--deterministic"]) == 0
        manifest = json.loads((out1 / "manifest_prepare.json").read_text())
        assert manifest["config"]["k"] == 6
        assert manifest["config"]["seed"] == 9
        out2 = tmp_path / "c2"
        assert main(["prepare", "--data", data_file, "--out", str(out2),
                     "--config", str(cfg), "--k", "4", "--deterministic"]) == 0
        manifest2 = json.loads((out2 / "manifest_prepare.json").read_text())
        assert manifest2["config"]["k"] == 4

    def test_malformed_config(self, data_file, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("justakey\n")
        assert main(["prepare", "--data", data_file, "--out", str(tmp_path / "x"),
                     "--config", str(cfg)]) == 1
        assert capsys.readouterr().err.startswith("error:")


class TestSnrCommand:
    def test_csv_columns_and_contrast(self, tmp_path):
        out = tmp_path / "snr"
        assert main(["snr", "--variant", "vp", "--variant", "iso",
                     "--out", str(out), "--deterministic"]) == 0
        rows = list(csv.DictReader((out / "snr.csv").open()))
        assert set(rows[0]) == {"variant", "t", "frequency_index", "d",
                               "alpha", "sigma", "snr", "bound"}
        tau = max(float(r["t"]) for r in rows)
        iso_end = max(float(r["snr"]) for r in rows
                      if r["variant"] == "iso" and float(r["t"]) == tau)
        vp_end_min = min(float(r["snr"]) for r in rows
                         if r["variant"] == "vp" and float(r["t"]) == tau)
        bound = float(rows[0]["bound"])
        assert iso_end < bound <= vp_end_min

    def test_basis_frequencies(self, data_file, tmp_path):
        out = tmp_path / "run"
        base = ["--data", data_file, "--out", str(out), "--deterministic"]
        assert main(["prepare", *base, "--k", "8"]) == 0
        snr_out = tmp_path / "snr"
        assert main(["snr", "--variant", "vp", "--basis", str(out / "basis.bin"),
                     "--out", str(snr_out), "--deterministic"]) == 0
        rows = list(csv.DictReader((snr_out / "snr.csv").open()))
        n_freq = len({r["frequency_index"] for r in rows})
        assert n_freq == 8


class TestAblateSweep:
    def test_ablate_rows_and_direction(self, data_file, tmp_path):
        out = tmp_path / "abl"
        assert main(["ablate", "--data", data_file, "--out", str(out), "--seed", "0",
                     "--deterministic", "--k", "8", "--topk", "5",
                     "--epochs", "30", "--eval-every", "15", "--patience", "5",
                     "--lr", "1e-3", "--hidden", "64", "--time-dim", "8",
                     "--film-hidden", "4", "--batch-size", "20"]) == 0
        rows = {r["variant"]: r for r in csv.DictReader((out / "ablation.csv").open())}
        assert set(rows) == {"vp", "ve", "iso"}
        assert float(rows["vp"]["recall@5"]) >= float(rows["iso"]["recall@5"])
        assert float(rows["vp"]["log10_snr_at_tau"]) > float(rows["iso"]["log10_snr_at_tau"])

    def test_sweep_grid(self, data_file, tmp_path):
        out = tmp_path / "swp"
        assert main(["sweep", "--data", data_file, "--out", str(out), "--seed", "0",
                     "--deterministic", "--k", "8", "--topk", "5",
                     "--sweep-alpha-min", "0,0.1", "--sweep-sigma-max", "0.45",
                     "--epochs", "4", "--eval-every", "4", "--patience", "2",
                     "--lr", "1e-3", "--hidden", "32", "--time-dim", "8",
                     "--film-hidden", "4", "--batch-size", "20"]) == 0
        rows = list(csv.DictReader((out / "sweep.csv").open()))
        assert len(rows) == 2
        assert {r["alpha_min"] for r in rows} == {"0", "0.1"}

    def test_sweep_rank_slicing(self, data_file, tmp_path):
        out = tmp_path / "swpk"
        assert main(["sweep", "--data", data_file, "--out", str(out), "--seed", "0",
                     "--deterministic", "--topk", "5", "--sweep-rank", "4,8",
                     "--epochs", "4", "--eval-every", "4", "--patience", "2",
                     "--lr", "1e-3", "--hidden", "32", "--time-dim", "8",
                     "--film-hidden", "4", "--batch-size", "20"]) == 0
        rows = list(csv.DictReader((out / "sweep.csv").open()))
        assert {r["rank"] for r in rows} == {"4", "8"}


class TestArgumentErrors:
    def test_unknown_command_exits(self):
        with pytest.raises(SystemExit):
            main(["confabulate"])

    def test_missing_required_flag(self):
        with pytest.raises(SystemExit):
            main(["prepare", "--out", "/tmp/x"])
