"""CLI contract tests: subcommands, exit codes, determinism, echoes."""

import hashlib
import json
from pathlib import Path

import pytest

import featalign.tensor as tensor_mod
from featalign.bench.dataset_io import read_split
from featalign.cli import main as cli_main
from featalign.gradcheck import run_gradcheck


def tree_digest(root: Path) -> dict:
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = hashlib.sha256(path.read_bytes()).hexdigest()
    return out


GEN_ARGS = [
    "--seed", "9", "--frames", "4", "--candidates", "3", "--val-candidates", "2",
    "--pairs", "3", "--n-pos", "24", "--n-neg", "24", "--size", "32",
]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_ds")
    assert cli_main(["generate", "--out", str(root)] + GEN_ARGS) == 0
    return root


@pytest.fixture(scope="module")
def weights(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_w") / "w.gnnw"
    rc = cli_main(
        [
            "train", "--dataset", str(dataset), "--out", str(out), "--epochs", "1",
            "--base-width", "4", "--descriptor-dim", "4", "--levels", "2",
            "--val-candidates", "0",
        ]
    )
    assert rc == 0
    return out


class TestGenerate:
    def test_three_splits_with_disjoint_seeds(self, dataset):
        seeds = set()
        for name in ("train", "val", "test"):
            split = read_split(dataset / name)
            seeds.add(split.manifest["seed"])
            assert split.manifest["config_echo"]["frames"] == 4
        assert len(seeds) == 3

    def test_zero_frames_is_usage_error(self, tmp_path):
        rc = cli_main(["generate", "--out", str(tmp_path / "x"), "--frames", "0"])
        assert rc == 1

    def test_regenerate_byte_identical(self, tmp_path):
        out = tmp_path / "regen"
        args = ["generate", "--out", str(out)] + GEN_ARGS
        assert cli_main(args) == 0
        first = tree_digest(out)
        assert cli_main(args) == 0
        assert tree_digest(out) == first

    def test_config_echoed_everywhere(self, dataset):
        echo = json.loads((dataset / "run_config.json").read_text())
        assert echo["command"] == "generate"
        assert "version" in echo


class TestEvaluate:
    def test_intensity_needs_no_weights(self, dataset, tmp_path):
        out = tmp_path / "ev"
        rc = cli_main(
            [
                "evaluate", "--dataset", str(dataset), "--out", str(out),
                "--methods", "intensity", "--points", "96",
            ]
        )
        assert rc == 0
        assert (out / "curve_intensity.csv").exists()
        assert (out / "curves.svg").exists()

    def test_threshold_grids_identical_across_methods(self, dataset, weights, tmp_path):
        out = tmp_path / "ev2"
        rc = cli_main(
            [
                "evaluate", "--dataset", str(dataset), "--out", str(out),
                "--methods", "intensity,features", "--weights", str(weights),
                "--points", "96",
            ]
        )
        assert rc == 0
        col = lambda p: [row.split(",")[0] for row in p.read_text().splitlines()[1:]]
        assert col(out / "curve_intensity.csv") == col(out / "curve_features.csv")
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary) == {"intensity", "features"}

    def test_missing_weights_is_data_fault(self, dataset, tmp_path):
        rc = cli_main(
            [
                "evaluate", "--dataset", str(dataset), "--out", str(tmp_path / "ev3"),
                "--methods", "features", "--weights", str(tmp_path / "nope.gnnw"),
            ]
        )
        assert rc == 2

    def test_unknown_method_is_usage_error(self, dataset, tmp_path):
        rc = cli_main(
            [
                "evaluate", "--dataset", str(dataset), "--out", str(tmp_path / "ev4"),
                "--methods", "telepathy",
            ]
        )
        assert rc == 1

    def test_missing_dataset_is_data_fault(self, tmp_path):
        rc = cli_main(
            ["evaluate", "--dataset", str(tmp_path / "void"), "--out", str(tmp_path / "e")]
        )
        assert rc == 2


class TestAlign:
    def test_prints_result_json(self, dataset, capsys):
        rc = cli_main(["align", "--dataset", str(dataset), "--candidate", "0",
                       "--method", "intensity", "--points", "96"])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert {"converged", "pose", "translation_error"} <= set(payload)

    def test_candidate_out_of_range(self, dataset):
        rc = cli_main(["align", "--dataset", str(dataset), "--candidate", "99"])
        assert rc == 1


class TestGradcheckCommand:
    def test_passes_on_default_seed(self, capsys):
        assert cli_main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "all gradient checks passed" in out
        assert "network+losses" in out

    def test_sabotaged_backward_rule_fails(self, monkeypatch, capsys):
        original = tensor_mod._relu_grad
        monkeypatch.setattr(
            tensor_mod, "_relu_grad", lambda x, g: original(x, g) * 1.05
        )
        rc = cli_main(["gradcheck"])
        assert rc == 3
        out = capsys.readouterr().out
        assert "FAIL" in out

    def test_report_lists_every_block(self):
        reports = run_gradcheck(seed=2)
        names = {r.name for r in reports}
        assert {"conv2d", "bilinear_sample", "inv2x2", "network+losses"} <= names
        assert all(r.max_relative_error < 1e-4 for r in reports)


class TestUsage:
    def test_no_command_is_usage_error(self):
        assert cli_main([]) == 1

    def test_bad_flag_is_usage_error(self):
        assert cli_main(["generate", "--out", "x", "--no-such-flag"]) == 1

    def test_output_root_env_var(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FEATALIGN_OUTPUT_ROOT", str(tmp_path))
        rc = cli_main(["generate", "--out", "nested/ds"] + GEN_ARGS)
        assert rc == 0
        assert (tmp_path / "nested" / "ds" / "train" / "manifest.json").exists()
