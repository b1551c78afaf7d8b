"""Rate-distortion evaluation over real coded bitstreams, CSV and plots.

Rates come from actual coded bytes, never from entropy estimates. Rows are
emitted in filename order with a trailing mean row, so repeated runs produce
identical CSVs.
"""

from __future__ import annotations

import csv
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import bitstream, dataio, metrics
from . import tensor as tt
from .errors import CwicError, IngestError
from .model import CodecModel
from .tensor import Tensor

CSV_COLUMNS = ("file", "bpp", "psnr_db", "msssim", "msssim_db")


@dataclass
class RDPoint:
    file: str
    bpp: float
    psnr_db: float
    msssim: float
    msssim_db: float
    lam: float = 0.0
    checkpoint_id: str = ""


def _rd_point(name: str, img: np.ndarray, model: CodecModel,
              checkpoint_id: str) -> RDPoint:
    data, info = bitstream.encode_image(img, model)
    out = bitstream.decode_image(data, model)
    with tt.no_grad():
        ms = metrics.ms_ssim(Tensor(img[None]), Tensor(out[None])).item()
    ms = float(min(ms, 1.0))
    return RDPoint(file=name, bpp=info.bpp, psnr_db=metrics.psnr(img, out),
                   msssim=ms, msssim_db=metrics.msssim_db(ms),
                   lam=model.cfg.lam, checkpoint_id=checkpoint_id)


def evaluate(model: CodecModel, image_dir: str,
             checkpoint_id: str = "") -> list:
    """Code every readable image in the directory; returns per-image points
    followed by a mean point (file name "mean")."""
    if not checkpoint_id:
        checkpoint_id = model.cfg.hash_hex()
    paths = dataio.list_images(image_dir)
    if not paths:
        raise IngestError(f"{image_dir}: no images found")
    points = []
    for p in paths:
        try:
            img = dataio.load_image(p)
            points.append(_rd_point(os.path.basename(p), img, model,
                                    checkpoint_id))
        except CwicError as e:
            print(f"warning: skipping {p}: {e}", file=sys.stderr)
    if not points:
        raise IngestError(f"{image_dir}: every image failed to evaluate")
    mean_ms = float(np.mean([q.msssim for q in points]))
    points.append(RDPoint(
        file="mean",
        bpp=float(np.mean([q.bpp for q in points])),
        psnr_db=float(np.mean([q.psnr_db for q in points])),
        msssim=mean_ms,
        msssim_db=metrics.msssim_db(mean_ms),
        lam=model.cfg.lam,
        checkpoint_id=checkpoint_id))
    return points


def write_csv(points: list, path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for q in points:
            w.writerow([q.file, f"{q.bpp:.6f}", f"{q.psnr_db:.6f}",
                        f"{q.msssim:.8f}", f"{q.msssim_db:.6f}"])


def read_csv(path: str) -> list:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise IngestError(f"{path}: not an evaluation CSV")
    out = []
    for row in rows[1:]:
        out.append(RDPoint(file=row[0], bpp=float(row[1]),
                           psnr_db=float(row[2]), msssim=float(row[3]),
                           msssim_db=float(row[4])))
    return out


def plot_rd(csv_paths: list, out_path: str) -> None:
    """RD curves from evaluation CSVs: bpp vs PSNR and vs MS-SSIM (dB).

    Each CSV contributes its mean point; points are joined sorted by bpp.
    A single point degenerates to a marker.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    means = []
    for p in csv_paths:
        rows = [q for q in read_csv(p) if q.file == "mean"]
        if not rows:
            raise IngestError(f"{p}: CSV has no mean row")
        means.append(rows[0])
    if not means:
        raise IngestError("no CSV inputs")
    means.sort(key=lambda q: q.bpp)
    xs = [q.bpp for q in means]
    style = "o-" if len(means) > 1 else "o"

    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].plot(xs, [q.psnr_db for q in means], style)
    axes[0].set_xlabel("bpp")
    axes[0].set_ylabel("PSNR (dB)")
    axes[1].plot(xs, [q.msssim_db for q in means], style)
    axes[1].set_xlabel("bpp")
    axes[1].set_ylabel("MS-SSIM (dB)")
    for ax in axes:
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
