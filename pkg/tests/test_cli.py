import json
import subprocess
import sys

import pytest

from landmark_curves.cli import main, render_svg
from landmark_curves.evaluation import parse_keyvalue

import numpy as np

TINY = ["image_size=64", "channels=8", "encoder_widths=4,4,4,4", "hidden_dim=16", "heads=2",
        "num_proposals=2", "num_ref_points=7", "sampling_points=1", "batch_size=2"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["synth", "--seed", "3", "--count", "3", "--size", "64", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory, data):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--data", str(data), "--out", str(out), "epochs=2", *TINY]) == 0
    return out


def test_synth_writes_files_deterministically(tmp_path, data):
    assert main(["synth", "--seed", "3", "--count", "3", "--size", "64", "--out", str(tmp_path)]) == 0
    for name in ("annotations.json", "img_000.png", "img_002_depth.png"):
        assert (tmp_path / name).read_bytes() == (data / name).read_bytes()
    assert len(json.loads((tmp_path / "annotations.json").read_text())["images"]) == 3


def test_synth_count_zero_is_usage_error(tmp_path):
    assert main(["synth", "--count", "0", "--out", str(tmp_path)]) == 2


def test_train_outputs(trained, capsys):
    lines = (trained / "metrics.tsv").read_text().splitlines()
    assert len(lines) == 3
    rows = [[float(v) for v in ln.split("\t")] for ln in lines[1:]]
    assert all(np.all(np.isfinite(r)) for r in rows)
    for name in ("checkpoint.bin", "config.txt", "loss.png", "train_report.kv", "train_report.png"):
        assert (trained / name).exists()
    assert "hidden_dim=16" in (trained / "config.txt").read_text()


def test_bad_config_key_names_it(tmp_path, data, capsys):
    assert main(["train", "--data", str(data), "--out", str(tmp_path), "bogus_key=1"]) == 2
    assert "bogus_key" in capsys.readouterr().err


def test_config_file_and_override_precedence(tmp_path, data):
    cfg = tmp_path / "c.txt"
    cfg.write_text("epochs=1\nhidden_dim=32\n")
    out = tmp_path / "o"
    assert main(["train", "--data", str(data), "--out", str(out), "--config", str(cfg), "--seed", "5",
                 *TINY]) == 0
    text = (out / "config.txt").read_text()
    assert "hidden_dim=16" in text and "epochs=1" in text and "seed=5" in text


def test_resume_continues_bit_identically(tmp_path, data):
    full, part = tmp_path / "full", tmp_path / "part"
    assert main(["train", "--data", str(data), "--out", str(full), "epochs=4", *TINY]) == 0
    assert main(["train", "--data", str(data), "--out", str(part), "epochs=2", *TINY]) == 0
    assert main(["train", "--data", str(data), "--out", str(part), "--resume", str(part / "checkpoint.bin"),
                 "epochs=4", *TINY]) == 0
    assert (full / "metrics.tsv").read_text() == (part / "metrics.tsv").read_text()


def test_eval_report_matches_stdout(tmp_path, data, trained, capsys):
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(trained / "checkpoint.bin"), "--data", str(data),
                 "--out", str(tmp_path)]) == 0
    stdout = capsys.readouterr().out
    table, kv_text = stdout.split("---\n")
    kv = parse_keyvalue((tmp_path / "report.kv").read_text())
    assert kv == parse_keyvalue(kv_text)
    mean_row = [ln for ln in table.splitlines() if ln.startswith("mean")][0].split()
    assert [float(v) for v in mean_row[1:]] == pytest.approx([float(kv[k]) for k in ("dsc", "iou", "assd")],
                                                             abs=1e-4)
    assert (tmp_path / "report.png").exists() and (tmp_path / "report.txt").exists()


def test_eval_empty_dataset(tmp_path, trained):
    (tmp_path / "annotations.json").write_text('{"images": []}')
    assert main(["eval", "--checkpoint", str(trained / "checkpoint.bin"), "--data", str(tmp_path),
                 "--out", str(tmp_path / "o")]) == 2


def test_missing_checkpoint(tmp_path, data):
    for cmd in ("eval", "infer", "render"):
        assert main([cmd, "--checkpoint", str(tmp_path / "nope.bin"), "--data", str(data),
                     "--out", str(tmp_path)]) == 2


def test_infer_curves_file(tmp_path, data, trained):
    assert main(["infer", "--checkpoint", str(trained / "checkpoint.bin"), "--image", str(data / "img_001.png"),
                 "--out", str(tmp_path), "--threshold", "0"]) == 0
    doc = json.loads((tmp_path / "curves.json").read_text())
    (img,) = doc["images"]
    assert img["name"] == "img_001"
    assert all(len(img["stage3"][c]) == 2 for c in ("ridge", "ligament", "silhouette"))
    rec = img["stage3"]["ridge"][0]
    assert len(rec["control_points"]) == 6 and 0 <= rec["score"] <= 1


def test_render_threshold_zero_draws_all(tmp_path, data, trained):
    assert main(["render", "--checkpoint", str(trained / "checkpoint.bin"), "--data", str(data),
                 "--out", str(tmp_path), "--threshold", "0"]) == 0
    svg = (tmp_path / "img_000.svg").read_text()
    assert svg.count('class="stage3"') == 6 and svg.count('class="stage0"') == 6
    assert 'class="gt"' in svg and 'class="mask"' in svg
    assert main(["render", "--checkpoint", str(trained / "checkpoint.bin"), "--data", str(data),
                 "--out", str(tmp_path / "hi"), "--threshold", "1.01"]) == 0
    assert 'class="stage3"' not in (tmp_path / "hi" / "img_000.svg").read_text()


def test_render_svg_strokes_distinct():
    img = np.zeros((4, 32, 32))
    c = np.linspace([0.1, 0.1], [0.9, 0.9], 6)
    svg = render_svg(img, [[c]], [[c]], ["ridge"], gt=[[c[[0, -1]]]], dilation_px=2)
    assert svg.startswith("<svg") and 'stroke-width="5"' in svg
    strokes = {line.split('stroke="')[1].split('"')[0] for line in svg.splitlines()
               if 'class="gt"' in line or 'class="stage' in line}
    assert len(strokes) == 3


def test_module_entry_point_usage_error(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "landmark_curves.cli", "train"], capture_output=True)
    assert proc.returncode == 2
