import csv
import json

import numpy as np

from storycloze.cli import default_ablation_matrix, main
from storycloze.training import read_manifest

FAST = ["--hidden", "6", "--word-dim", "8", "--batch-size", "8",
        "--epochs", "2"]


def run_train(tmp_path, name="ck.bin", extra=(), seed="3", n="20"):
    out = tmp_path / name
    code = main(["train", "--synthetic", n, "--seed", seed,
                 "--out", str(out), *FAST, *extra])
    assert code == 0
    return out


class TestCmdTrain:
    def test_writes_checkpoint_and_log(self, tmp_path, capsys):
        out = run_train(tmp_path)
        assert out.exists()
        log = tmp_path / "ck.bin.log.jsonl"
        lines = log.read_text().strip().split("\n")
        assert len(lines) == 2  # one per epoch
        rec = json.loads(lines[0])
        assert {"epoch", "train_loss", "dev_acc"} <= set(rec)

    def test_missing_data_exits_2_naming_path(self, tmp_path, capsys):
        code = main(["train", "--data", "/nope/missing.csv",
                     "--out", str(tmp_path / "x.bin")])
        assert code == 2
        assert "/nope/missing.csv" in capsys.readouterr().err

    def test_features_recorded_in_manifest(self, tmp_path):
        out = run_train(tmp_path, extra=["--features", "cs"])
        manifest = read_manifest(str(out))
        assert manifest["feature_turns"] == 2

    def test_byte_identical_reruns(self, tmp_path):
        a = run_train(tmp_path, "a.bin")
        b = run_train(tmp_path, "b.bin")
        assert a.read_bytes() == b.read_bytes()
        assert ((tmp_path / "a.bin.log.jsonl").read_bytes()
                == (tmp_path / "b.bin.log.jsonl").read_bytes())


class TestCmdEval:
    def test_prints_accuracy_and_writes_csv(self, tmp_path, capsys):
        ck = run_train(tmp_path)
        pred = tmp_path / "pred.csv"
        code = main(["eval", "--synthetic", "20", "--seed", "3",
                     "--checkpoint", str(ck), "--out", str(pred)])
        assert code == 0
        out = capsys.readouterr().out
        assert "accuracy: " in out
        acc_text = out.split("accuracy: ")[1].split()[0]
        assert len(acc_text.split(".")[1]) == 4  # four decimals
        assert float(acc_text) >= 0.95  # overfit synthetic run
        rows = list(csv.DictReader(pred.open()))
        assert len(rows) == 20

    def test_eval_twice_identical_bytes(self, tmp_path):
        ck = run_train(tmp_path)
        p1, p2 = tmp_path / "p1.csv", tmp_path / "p2.csv"
        for p in (p1, p2):
            assert main(["eval", "--synthetic", "20", "--seed", "3",
                         "--checkpoint", str(ck), "--out", str(p)]) == 0
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupt_checkpoint(self, tmp_path, capsys):
        ck = run_train(tmp_path)
        raw = bytearray(ck.read_bytes())
        raw[100] ^= 0xFF
        ck.write_bytes(bytes(raw))
        code = main(["eval", "--synthetic", "20", "--seed", "3",
                     "--checkpoint", str(ck), "--out", str(tmp_path / "p.csv")])
        assert code == 1
        assert "checksum" in capsys.readouterr().err.lower()


class TestCmdVisualize:
    def test_turn_files_and_shapes(self, tmp_path):
        ck = run_train(tmp_path)
        heat = tmp_path / "heat"
        code = main(["visualize", "--synthetic", "20", "--seed", "3",
                     "--checkpoint", str(ck), "--story-id", "syn-3-0002",
                     "--out", str(heat)])
        assert code == 0
        csvs = sorted(heat.glob("*.csv"))
        svgs = sorted(heat.glob("*.svg"))
        assert len(csvs) == 3 and len(svgs) == 3  # csm -> three turns
        rows = list(csv.reader(csvs[0].open()))
        n_tokens, width = len(rows) - 1, len(rows[1]) - 1
        assert width == 12  # 2 * hidden
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        assert values.shape == (n_tokens, 12)
        assert np.all(np.isfinite(values))

    def test_unknown_story_id(self, tmp_path, capsys):
        ck = run_train(tmp_path)
        code = main(["visualize", "--synthetic", "20", "--seed", "3",
                     "--checkpoint", str(ck), "--story-id", "nope",
                     "--out", str(tmp_path / "h")])
        assert code == 1
        assert "nope" in capsys.readouterr().err

    def test_deterministic_svg(self, tmp_path):
        ck = run_train(tmp_path)
        h1, h2 = tmp_path / "h1", tmp_path / "h2"
        for h in (h1, h2):
            assert main(["visualize", "--synthetic", "20", "--seed", "3",
                         "--checkpoint", str(ck), "--story-id", "syn-3-0002",
                         "--out", str(h)]) == 0
        for a, b in zip(sorted(h1.iterdir()), sorted(h2.iterdir())):
            assert a.read_bytes() == b.read_bytes()


class TestCmdAblate:
    def test_matrix_has_sixteen_defaults(self):
        matrix = default_ablation_matrix()
        assert len(matrix) == 16
        assert matrix[0][0] == "full"
        names = [n for n, _ in matrix]
        assert len(set(names)) == 16

    def test_subset_run_emits_rows(self, tmp_path):
        out = tmp_path / "abl.csv"
        code = main(["ablate", "--synthetic", "12", "--seed", "2", *FAST,
                     "--configs", "full,no-exposition-mem,features-c",
                     "--out", str(out)])
        assert code == 0
        rows = list(csv.DictReader(out.open()))
        assert [r["config"] for r in rows] == ["full", "no-exposition-mem",
                                               "features-c"]
        assert all(r["status"] == "ok" for r in rows)
        assert all(r["dev_acc"] for r in rows)
        assert all(r["test_acc"] for r in rows)
        # deem changes no parameter count
        counts = {r["config"]: int(r["param_count"]) for r in rows}
        assert counts["full"] == counts["no-exposition-mem"]

    def test_unknown_config_rejected(self, tmp_path, capsys):
        code = main(["ablate", "--synthetic", "12", "--configs", "bogus",
                     "--out", str(tmp_path / "a.csv")])
        assert code == 2
