"""CLI: subcommand wiring, determinism, exit codes, end-to-end pipeline."""

from __future__ import annotations

from pathlib import Path

import pytest

from dermatriage.cli import main
from dermatriage.corpus.manifest import DatasetManifest, Origin, Split

from conftest import make_corpus_tree


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_missing_checkpoint_exits_1(tmp_path, capsys):
    code = main(
        ["evaluate", "--checkpoint", str(tmp_path / "missing.weights"),
         "--manifest", str(tmp_path / "m.tsv")]
    )
    assert code == 1
    assert "checkpoint not found" in capsys.readouterr().err


def test_split_same_seed_byte_identical(tmp_path, capsys):
    tree = make_corpus_tree(tmp_path / "corpus", per_class=12, side=24)

    def pipeline(manifest_path: Path) -> bytes:
        assert main(["ingest", "--corpus-dir", str(tree), "--manifest", str(manifest_path)]) == 0
        assert main(
            ["split", "--manifest", str(manifest_path), "--test-per-class", "1", "--seed", "7"]
        ) == 0
        return manifest_path.read_bytes()

    first = pipeline(tmp_path / "m1.tsv")
    second = pipeline(tmp_path / "m2.tsv")
    assert first == second


def test_config_file_with_flag_override(tmp_path):
    tree = make_corpus_tree(tmp_path / "corpus", per_class=4, side=24)
    config = tmp_path / "pipeline.cfg"
    config.write_text(
        f"# pipeline config\ncorpus_dir = {tree}\nmanifest = {tmp_path / 'from_config.tsv'}\nseed = 3\n"
    )
    assert main(["ingest", "--config", str(config)]) == 0
    assert (tmp_path / "from_config.tsv").exists()
    # flag wins over the config file
    override = tmp_path / "override.tsv"
    assert main(["ingest", "--config", str(config), "--manifest", str(override)]) == 0
    assert override.exists()


def test_full_pipeline_end_to_end(tmp_path, capsys):
    tree = make_corpus_tree(tmp_path / "corpus", per_class=12, side=32)
    manifest_path = tmp_path / "manifest.tsv"
    ckpt_dir = tmp_path / "ckpts"

    assert main(["ingest", "--corpus-dir", str(tree), "--manifest", str(manifest_path)]) == 0
    assert main(
        ["split", "--manifest", str(manifest_path), "--test-per-class", "1", "--seed", "5"]
    ) == 0
    manifest = DatasetManifest.load(manifest_path)
    assert len(manifest.select(split=Split.TEST)) == 9
    assert len(manifest.select(split=Split.VALIDATION)) == 9  # round(0.10 * 11) per class

    assert main(
        ["augment", "--manifest", str(manifest_path), "--target", "12", "--seed", "5"]
    ) == 0
    manifest = DatasetManifest.load(manifest_path)
    augmented = [r for r in manifest.records if r.origin is Origin.AUGMENTED]
    assert len(augmented) == 9 * 2  # 10 train originals topped up to 12
    assert all(r.split is Split.TRAIN for r in augmented)

    assert main(
        ["train", "--manifest", str(manifest_path), "--backbone", "resnet18",
         "--strategy", "FULL", "--checkpoint-dir", str(ckpt_dir),
         "--epochs", "1", "--batch-size", "8", "--no-pretrained", "--seed", "5"]
    ) == 0
    out = capsys.readouterr().out
    weights = ckpt_dir / "best.weights"
    assert weights.exists()
    assert str(weights) in out
    assert (ckpt_dir / "ResNet18.summary").exists()
    assert (ckpt_dir / "ResNet18.history").exists()

    report_path = ckpt_dir / "ResNet18.eval"
    assert main(
        ["evaluate", "--checkpoint", str(weights), "--manifest", str(manifest_path),
         "--report-out", str(report_path)]
    ) == 0
    assert report_path.exists()
    assert "top1_accuracy=" in report_path.read_text()

    assert main(["report", "--runs-dir", str(ckpt_dir)]) == 0
    table = capsys.readouterr().out
    assert "ResNet18" in table
    assert "Validation" in table
