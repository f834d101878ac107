"""End-to-end command tests driven through main(argv).

A tiny 32x32 micro-dataset plus a 2-epoch training run back the synthesize
and resume checks; everything heavier lives in the acceptance suite.
"""

import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image

from posegen import __version__
from posegen.cli import build_parser, configure_workers, main
from posegen.config import build_perceptual, load_run_config
from posegen.metrics import ToyClassifier, save_classifier
from posegen.trainer import make_state, save_checkpoint

FIXTURES = Path(__file__).parent / "fixtures"
KEYPOINTS = FIXTURES / "standing_figure.keypoints.json"
GOLDEN_PNG = FIXTURES / "standing_figure_256_w4.png"

TINY_CONFIG = """
data.root = {root}
out.dir = {out}
train.epochs = {epochs}
train.seed = 3
generator.base_channels = 8
generator.n_res_blocks = 1
generator.lstm_hidden_channels = 16
generator.image_size = 32x32
perceptual.arch = toy
"""


def write_config(path, root, out, epochs=2, extra=""):
    path.write_text(TINY_CONFIG.format(root=root, out=out, epochs=epochs)
                    + extra)
    return path


@pytest.fixture(scope="module")
def micro_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("micro") / "data"
    assert main(["make-microdataset", "--out", str(root), "--skus", "2",
                 "--items-per-sku", "2", "--size", "32x32", "--seed", "5"]) == 0
    return root


@pytest.fixture(scope="module")
def trained_run(micro_root, tmp_path_factory):
    base = tmp_path_factory.mktemp("trained")
    cfg = write_config(base / "run.cfg", micro_root, base / "out")
    assert main(["train", "--config", str(cfg)]) == 0
    return base / "out"


def test_rasterize_writes_png(tmp_path):
    out = tmp_path / "pose.png"
    assert main(["rasterize", "--keypoints", str(KEYPOINTS), "--out", str(out),
                 "--size", "64x48"]) == 0
    with Image.open(out) as img:
        assert img.size == (48, 64)


def test_rasterize_matches_golden_fixture(tmp_path):
    out = tmp_path / "pose.png"
    assert main(["rasterize", "--keypoints", str(KEYPOINTS), "--out", str(out),
                 "--size", "256x256", "--line-width", "4"]) == 0
    assert out.read_bytes() == GOLDEN_PNG.read_bytes()


def test_rasterize_schema_error_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.keypoints.json"
    bad.write_text(json.dumps({"frame_size": [64, 64],
                               "points": [[1, 1, 1]] * 17}))
    assert main(["rasterize", "--keypoints", str(bad),
                 "--out", str(tmp_path / "x.png")]) == 2
    assert "error" in capsys.readouterr().err


def test_rasterize_missing_file_exits_2(tmp_path):
    assert main(["rasterize", "--keypoints", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "x.png")]) == 2


def test_missing_required_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["rasterize", "--out", "x.png"])
    assert exc.value.code == 2


@pytest.mark.parametrize("command,flags", [
    ("rasterize", ["--keypoints", "--out", "--size", "--line-width"]),
    ("train", ["--config", "--resume", "--mode"]),
    ("synthesize", ["--ckpt", "--sources", "--keypoints", "--out"]),
    ("evaluate", ["--gen", "--target", "--splits", "--classifier", "--csv"]),
    ("make-microdataset", ["--out", "--skus", "--items-per-sku", "--size",
                           "--seed"]),
])
def test_help_lists_every_flag_with_default(command, flags, capsys):
    with pytest.raises(SystemExit) as exc:
        main([command, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for flag in flags:
        assert flag in text
    assert text.count("default") >= len(flags) - 1


def test_make_microdataset_layout(micro_root):
    pngs = sorted(micro_root.glob("train/*/*.png"))
    jsons = sorted(micro_root.glob("train/*/*.keypoints.json"))
    assert len(pngs) == 4 and len(jsons) == 4
    assert (micro_root / "dataset.meta.json").is_file()


def test_make_microdataset_rejects_bad_counts(tmp_path, capsys):
    assert main(["make-microdataset", "--out", str(tmp_path / "d"),
                 "--skus", "1"]) == 2
    assert "num_skus" in capsys.readouterr().err


def test_make_microdataset_seed_reproducible(tmp_path, micro_root):
    again = tmp_path / "again"
    assert main(["make-microdataset", "--out", str(again), "--skus", "2",
                 "--items-per-sku", "2", "--size", "32x32", "--seed", "5"]) == 0
    for path in sorted(micro_root.glob("train/*/*.png")):
        twin = again / path.relative_to(micro_root)
        assert twin.read_bytes() == path.read_bytes()


def test_train_writes_log_and_checkpoint(trained_run):
    lines = (trained_run / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 4  # 2 epochs x 2 SKUs
    record = json.loads(lines[0])
    assert {"step", "epoch", "l1", "lr"} <= record.keys()
    assert (trained_run / "final.ckpt").is_file()


def test_train_bad_config_key_exits_2(tmp_path, micro_root, capsys):
    cfg = write_config(tmp_path / "run.cfg", micro_root, tmp_path / "out",
                       extra="trian.mode = multi\n")
    assert main(["train", "--config", str(cfg)]) == 2
    assert "trian.mode" in capsys.readouterr().err


def test_train_missing_config_exits_2(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_train_resume_matches_uninterrupted(micro_root, tmp_path):
    cfg_full = write_config(tmp_path / "full.cfg", micro_root,
                            tmp_path / "full", epochs=2)
    assert main(["train", "--config", str(cfg_full)]) == 0
    full_lines = (tmp_path / "full/metrics.jsonl").read_text().splitlines()

    cfg_half = write_config(tmp_path / "half.cfg", micro_root,
                            tmp_path / "half", epochs=1)
    assert main(["train", "--config", str(cfg_half)]) == 0
    cfg_tail = write_config(tmp_path / "tail.cfg", micro_root,
                            tmp_path / "tail", epochs=2)
    assert main(["train", "--config", str(cfg_tail), "--resume",
                 str(tmp_path / "half/final.ckpt")]) == 0
    tail_lines = (tmp_path / "tail/metrics.jsonl").read_text().splitlines()

    half_lines = (tmp_path / "half/metrics.jsonl").read_text().splitlines()
    assert half_lines + tail_lines == full_lines


def test_synthesize_deterministic_output(trained_run, micro_root, tmp_path):
    ckpt = trained_run / "final.ckpt"
    source = str(next(iter(sorted(micro_root.glob("train/*/*.png")))))
    kp = str(next(iter(sorted(micro_root.glob("train/*/*.keypoints.json")))))
    out1, out2 = tmp_path / "a.png", tmp_path / "b.png"
    for out in (out1, out2):
        assert main(["synthesize", "--ckpt", str(ckpt), "--sources", source,
                     "--keypoints", kp, "--out", str(out)]) == 0
    with Image.open(out1) as img:
        assert img.size == (32, 32)
    assert out1.read_bytes() == out2.read_bytes()


def test_synthesize_multi_accepts_two_sources(trained_run, micro_root, tmp_path):
    pngs = sorted(str(p) for p in micro_root.glob("train/*/*.png"))
    kp = str(next(iter(sorted(micro_root.glob("train/*/*.keypoints.json")))))
    assert main(["synthesize", "--ckpt", str(trained_run / "final.ckpt"),
                 "--sources", ",".join(pngs[:2]), "--keypoints", kp,
                 "--out", str(tmp_path / "y.png")]) == 0


def test_synthesize_source_count_gates(trained_run, micro_root, tmp_path,
                                       capsys):
    pngs = sorted(str(p) for p in micro_root.glob("train/*/*.png"))
    kp = str(next(iter(sorted(micro_root.glob("train/*/*.keypoints.json")))))
    assert main(["synthesize", "--ckpt", str(trained_run / "final.ckpt"),
                 "--sources", ",".join(pngs * 2), "--keypoints", kp,
                 "--out", str(tmp_path / "y.png")]) == 2
    assert "source count" in capsys.readouterr().err


def test_synthesize_single_mode_rejects_three_sources(micro_root, tmp_path,
                                                      capsys):
    cfg = load_run_config(write_config(tmp_path / "s.cfg", micro_root,
                                       tmp_path / "out", epochs=1,
                                       extra="train.mode = single\n"))
    state = make_state(cfg.train, cfg.generator, build_perceptual(cfg))
    ckpt = save_checkpoint(state, tmp_path / "single.ckpt")
    pngs = sorted(str(p) for p in micro_root.glob("train/*/*.png"))
    kp = str(next(iter(sorted(micro_root.glob("train/*/*.keypoints.json")))))
    assert main(["synthesize", "--ckpt", str(ckpt),
                 "--sources", ",".join(pngs[:3]), "--keypoints", kp,
                 "--out", str(tmp_path / "y.png")]) == 2
    assert "single-source" in capsys.readouterr().err
    assert main(["synthesize", "--ckpt", str(ckpt), "--sources", pngs[0],
                 "--keypoints", kp, "--out", str(tmp_path / "y.png")]) == 0


def test_evaluate_identical_dirs(micro_root, tmp_path, capsys):
    gen = tmp_path / "gen"
    gen.mkdir()
    for i, png in enumerate(sorted(micro_root.glob("train/*/*.png"))):
        shutil.copy(png, gen / f"img_{i:02d}.png")
    target = tmp_path / "target"
    shutil.copytree(gen, target)
    csv_path = tmp_path / "per_image.csv"
    assert main(["evaluate", "--gen", str(gen), "--target", str(target),
                 "--splits", "2", "--csv", str(csv_path)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["ssim_mean"] == pytest.approx(1.0, abs=1e-9)
    assert payload["is_non_comparable"] is True
    assert payload["tool_version"] == __version__
    assert payload["n_images"] == 4
    rows = csv_path.read_text().splitlines()
    assert rows[0] == "name,ssim" and len(rows) == 5


def test_evaluate_with_classifier_asset(micro_root, tmp_path, capsys):
    gen = tmp_path / "gen"
    gen.mkdir()
    for i, png in enumerate(sorted(micro_root.glob("train/*/*.png"))):
        shutil.copy(png, gen / f"img_{i:02d}.png")
    clf_path = save_classifier(ToyClassifier(num_classes=6, seed=9),
                               tmp_path / "clf.npz")
    assert main(["evaluate", "--gen", str(gen), "--target", str(gen),
                 "--splits", "1", "--classifier", str(clf_path)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["is_non_comparable"] is False
    assert 1.0 - 1e-6 <= payload["is_mean"] <= 6.0 + 1e-6


def test_evaluate_unmatched_dirs_exit_1(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    Image.new("RGB", (16, 16)).save(a / "only_here.png")
    assert main(["evaluate", "--gen", str(a), "--target", str(b)]) == 1
    assert "no filename-matched" in capsys.readouterr().err


def test_workers_env_var(monkeypatch):
    monkeypatch.setenv("POSEGEN_NUM_WORKERS", "3")
    try:
        assert configure_workers() == 3
        assert torch.get_num_threads() == 3
        monkeypatch.setenv("POSEGEN_NUM_WORKERS", "not-a-number")
        assert configure_workers() == 0
        assert torch.get_num_threads() == 1
    finally:
        torch.set_num_threads(1)


def test_module_entry_point_reports_version():
    proc = subprocess.run([sys.executable, "-m", "posegen.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert f"posegen {__version__}" in proc.stdout


def test_console_script_installed():
    assert shutil.which("posegen") is not None


def test_parser_covers_all_subcommands():
    parser = build_parser()
    text = parser.format_help()
    for name in ("rasterize", "train", "synthesize", "evaluate",
                 "make-microdataset"):
        assert name in text
