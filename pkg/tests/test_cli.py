"""Command-line interface: flows, output formats, exit codes."""

import json
import os
import re

import numpy as np
import pytest

from cwic import cli
from cwic.dataio import load_image, save_image
from cwic.errors import NumericError


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A trained tiny checkpoint plus a few images to exercise flows."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    data.mkdir()
    rng = np.random.default_rng(0)
    for i in range(3):
        xs, ys = np.meshgrid(np.linspace(0, 1, 64), np.linspace(0, 1, 64))
        f = rng.uniform(1, 3)
        img = np.stack([np.sin(2 * np.pi * f * xs),
                        np.cos(2 * np.pi * f * ys),
                        np.full_like(xs, 0.5)]).astype(np.float32) * 0.5 + 0.5
        save_image(str(data / f"img{i}.png"), img)
    ckpt = str(root / "model.bin")
    rc = cli.main(["train", "--data", str(data), "--out", ckpt,
                   "--channels", "8", "--heads", "2", "--steps", "5",
                   "--batch", "1"])
    assert rc == 0
    return {"root": root, "data": str(data), "ckpt": ckpt}


def test_help_exits_zero(capsys):
    assert cli.main(["--help"]) == 0
    assert "selfcheck" in capsys.readouterr().out


def test_unknown_flag_exits_config(capsys):
    assert cli.main(["train", "--data", "x", "--out", "y", "--frobnicate"]) == 2


def test_unknown_command_exits_config():
    assert cli.main(["transmogrify"]) == 2


def test_train_reports_loss_trajectory(workdir, capsys, tmp_path):
    out = str(tmp_path / "m2.bin")
    log = str(tmp_path / "m2.jsonl")
    rc = cli.main(["train", "--data", workdir["data"], "--out", out,
                   "--channels", "8", "--heads", "2", "--steps", "3",
                   "--batch", "1", "--log", log])
    assert rc == 0
    text = capsys.readouterr().out
    assert re.search(r"done in [\d.]+s: L [\d.]+ -> [\d.]+, checkpoint", text)
    with open(log) as f:
        assert len([json.loads(s) for s in f]) == 3


def test_train_quality_and_lambda_conflict(workdir):
    rc = cli.main(["train", "--data", workdir["data"], "--out", "/tmp/x.bin",
                   "--quality", "2", "--lambda", "0.09"])
    assert rc == 2


def test_train_missing_dataset_dir(tmp_path):
    rc = cli.main(["train", "--data", str(tmp_path / "nope"),
                   "--out", str(tmp_path / "m.bin")])
    assert rc == 2


def test_encode_prints_bpp(workdir, capsys, tmp_path):
    bin_path = str(tmp_path / "a.cwbs")
    rc = cli.main(["encode", "--ckpt", workdir["ckpt"],
                   "--input", os.path.join(workdir["data"], "img0.png"),
                   "--out", bin_path])
    assert rc == 0
    out = capsys.readouterr().out.strip()
    assert re.fullmatch(r"bpp=\d+\.\d{4}", out)
    assert os.path.getsize(bin_path) > 0


def test_encode_verify_prints_psnr(workdir, capsys, tmp_path):
    bin_path = str(tmp_path / "b.cwbs")
    rc = cli.main(["encode", "--ckpt", workdir["ckpt"],
                   "--input", os.path.join(workdir["data"], "img1.png"),
                   "--out", bin_path, "--verify"])
    assert rc == 0
    out = capsys.readouterr().out.strip()
    assert re.fullmatch(r"bpp=\d+\.\d{4} psnr=\d+\.\d{4}", out)


def test_decode_round_trip(workdir, capsys, tmp_path):
    bin_path = str(tmp_path / "c.cwbs")
    png_path = str(tmp_path / "c.png")
    src = os.path.join(workdir["data"], "img2.png")
    assert cli.main(["encode", "--ckpt", workdir["ckpt"], "--input", src,
                     "--out", bin_path]) == 0
    assert cli.main(["decode", "--ckpt", workdir["ckpt"], "--input", bin_path,
                     "--out", png_path]) == 0
    img = load_image(png_path)
    assert img.shape == (3, 64, 64)


def test_decode_wrong_checkpoint_exits_4_writes_nothing(workdir, capsys,
                                                        tmp_path):
    bin_path = str(tmp_path / "d.cwbs")
    src = os.path.join(workdir["data"], "img0.png")
    assert cli.main(["encode", "--ckpt", workdir["ckpt"], "--input", src,
                     "--out", bin_path]) == 0
    other = str(tmp_path / "other.bin")
    assert cli.main(["train", "--data", workdir["data"], "--out", other,
                     "--channels", "8", "--heads", "2", "--steps", "1",
                     "--batch", "1", "--quality", "2"]) == 0
    out_path = str(tmp_path / "d.png")
    rc = cli.main(["decode", "--ckpt", other, "--input", bin_path,
                   "--out", out_path])
    assert rc == 4
    assert not os.path.exists(out_path)


def test_decode_corrupt_stream_exits_5(workdir, tmp_path):
    bin_path = str(tmp_path / "e.cwbs")
    src = os.path.join(workdir["data"], "img0.png")
    assert cli.main(["encode", "--ckpt", workdir["ckpt"], "--input", src,
                     "--out", bin_path]) == 0
    raw = bytearray(open(bin_path, "rb").read())
    raw[len(raw) // 2] ^= 0xFF
    open(bin_path, "wb").write(bytes(raw))
    rc = cli.main(["decode", "--ckpt", workdir["ckpt"], "--input", bin_path,
                   "--out", str(tmp_path / "e.png")])
    assert rc == 5


def test_decode_truncated_stream_exits_5(workdir, tmp_path):
    bin_path = str(tmp_path / "f.cwbs")
    src = os.path.join(workdir["data"], "img0.png")
    assert cli.main(["encode", "--ckpt", workdir["ckpt"], "--input", src,
                     "--out", bin_path]) == 0
    raw = open(bin_path, "rb").read()
    open(bin_path, "wb").write(raw[:len(raw) - 5])
    rc = cli.main(["decode", "--ckpt", workdir["ckpt"], "--input", bin_path,
                   "--out", str(tmp_path / "f.png")])
    assert rc == 5


def test_numeric_abort_exits_3(workdir, tmp_path, monkeypatch):
    import cwic.training

    def explode(*a, **kw):
        raise NumericError("non-finite gradient for parameter 'w'")

    monkeypatch.setattr(cwic.training, "train", explode)
    rc = cli.main(["train", "--data", workdir["data"],
                   "--out", str(tmp_path / "m.bin")])
    assert rc == 3


def test_eval_writes_csv_and_summary(workdir, capsys, tmp_path):
    csv_path = str(tmp_path / "rd.csv")
    rc = cli.main(["eval", "--ckpt", workdir["ckpt"],
                   "--data", workdir["data"], "--out", csv_path])
    assert rc == 0
    out = capsys.readouterr().out
    assert re.search(r"3 images: bpp=[\d.]+ psnr=[\d.]+ msssim_db=[\d.]+", out)
    with open(csv_path) as f:
        lines = f.read().strip().splitlines()
    assert lines[0].startswith("file,bpp,psnr_db,msssim,msssim_db")
    assert len(lines) == 5  # header + 3 images + mean
    assert lines[-1].startswith("mean,")


def test_plot_from_csv(workdir, tmp_path, capsys):
    csv_path = str(tmp_path / "rd.csv")
    assert cli.main(["eval", "--ckpt", workdir["ckpt"],
                     "--data", workdir["data"], "--out", csv_path]) == 0
    plot_path = str(tmp_path / "rd.png")
    rc = cli.main(["plot", csv_path, "--out", plot_path])
    assert rc == 0
    assert os.path.getsize(plot_path) > 0


def test_selfcheck_all_pass(capsys):
    rc = cli.main(["selfcheck"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "6/6 checks passed" in out
    assert "[FAIL]" not in out


def test_selfcheck_corrupt_checkpoint_exits_1(workdir, tmp_path, capsys):
    bad = str(tmp_path / "bad.bin")
    raw = bytearray(open(workdir["ckpt"], "rb").read())
    raw[0] ^= 0xFF
    open(bad, "wb").write(bytes(raw))
    rc = cli.main(["selfcheck", "--ckpt", bad])
    out = capsys.readouterr().out
    assert rc == 1
    assert "5/6 checks passed" in out


def test_missing_input_file_exits_config(workdir, tmp_path):
    rc = cli.main(["encode", "--ckpt", workdir["ckpt"],
                   "--input", str(tmp_path / "missing.png"),
                   "--out", str(tmp_path / "x.cwbs")])
    assert rc == 2
