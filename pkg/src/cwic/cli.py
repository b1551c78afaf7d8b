"""Command line surface: train, encode, decode, eval, plot, selfcheck.

Exit codes: 0 success, 1 selfcheck failure, 2 configuration or input error
(including unknown flags), 3 numeric abort during training, 4 bitstream and
checkpoint configs disagree, 5 corrupt bitstream.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import __version__, bitstream, dataio, entropy, evaluation, metrics
from . import tensor as tt
from .checkpoint import load_checkpoint, load_model, save_checkpoint
from .errors import (ConfigError, CwicError, DecodeError, DimensionError,
                     HashMismatchError, IngestError, NumericError)
from .model import CodecModel, ModelConfig, lambda_for_quality, quantize
from .rangecoder import rc_decode, rc_encode
from .tensor import Tensor

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_HASH_MISMATCH = 4
EXIT_CORRUPT = 5


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cwic",
                                description="learned image codec tools")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="cmd", required=True)

    t = sub.add_parser("train", help="train a model on a directory of images")
    t.add_argument("--data", required=True, help="directory of PNG/PPM images")
    t.add_argument("--out", required=True, help="output checkpoint path")
    t.add_argument("--lambda", dest="lam", type=float,
                   help="RD weight (alternative to --quality)")
    t.add_argument("--quality", type=int,
                   help="grid index: 1..6 for mse, 1..3 for msssim")
    t.add_argument("--metric", choices=("mse", "msssim"), default="mse")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--channels", type=int, default=64, help="encoder channels N")
    t.add_argument("--latent-channels", type=int, default=None,
                   help="latent channels M (default: N)")
    t.add_argument("--window", type=int, default=4, help="attention window")
    t.add_argument("--heads", type=int, default=4, help="attention heads")
    t.add_argument("--no-cwam", action="store_true", help="disable attention")
    t.add_argument("--no-feature", action="store_true",
                   help="disable feature coding stages")
    t.add_argument("--steps", type=int, default=300)
    t.add_argument("--batch", type=int, default=4)
    t.add_argument("--crop", type=int, default=64)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--log", default=None, help="JSONL training log path")
    t.add_argument("--ckpt-every", type=int, default=0)
    t.add_argument("--val-frac", type=float, default=0.0)
    t.add_argument("--split-seed", type=int, default=0)
    t.add_argument("-v", "--verbose", action="store_true")

    e = sub.add_parser("encode", help="compress an image to a bitstream")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--input", required=True, help="PNG or PPM image")
    e.add_argument("--out", required=True, help="bitstream output path")
    e.add_argument("--verify", action="store_true",
                   help="decode locally and report PSNR")
    e.add_argument("-v", "--verbose", action="store_true")

    d = sub.add_parser("decode", help="decompress a bitstream to an image")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--input", required=True, help="bitstream path")
    d.add_argument("--out", required=True, help="PNG or PPM output path")
    d.add_argument("-v", "--verbose", action="store_true")

    v = sub.add_parser("eval", help="rate-distortion evaluation to CSV")
    v.add_argument("--ckpt", required=True)
    v.add_argument("--data", required=True, help="directory of images")
    v.add_argument("--out", required=True, help="CSV output path")
    v.add_argument("-v", "--verbose", action="store_true")

    g = sub.add_parser("plot", help="RD curves from evaluation CSVs")
    g.add_argument("csvs", nargs="+", help="evaluation CSV files")
    g.add_argument("--out", required=True, help="plot image path")

    s = sub.add_parser("selfcheck", help="fast invariant suite")
    s.add_argument("--ckpt", default=None,
                   help="also validate this checkpoint file")
    return p


def _model_config(args) -> ModelConfig:
    if args.lam is not None and args.quality is not None:
        raise ConfigError("give either --lambda or --quality, not both")
    if args.quality is not None:
        lam = lambda_for_quality(args.quality, args.metric)
    elif args.lam is not None:
        lam = args.lam
    else:
        lam = lambda_for_quality(4 if args.metric == "mse" else 2, args.metric)
    return ModelConfig(n=args.channels, m=args.latent_channels,
                       window=args.window, heads=args.heads, lam=lam,
                       metric=args.metric, seed=args.seed,
                       use_cwam=not args.no_cwam,
                       use_feature=not args.no_feature)


def cmd_train(args) -> int:
    from .training import TrainConfig, train
    if not os.path.isdir(args.data):
        raise ConfigError(f"{args.data}: dataset directory does not exist")
    mcfg = _model_config(args)
    tcfg = TrainConfig(steps=args.steps, batch_size=args.batch, crop=args.crop,
                       base_lr=args.lr, out_path=args.out, log_path=args.log,
                       checkpoint_every=args.ckpt_every,
                       val_frac=args.val_frac, split_seed=args.split_seed)
    if args.verbose:
        print(f"config: {mcfg.to_json()}")
        print(f"training {tcfg.steps} steps, batch {tcfg.batch_size}, "
              f"crop {tcfg.crop}")
    t0 = time.time()
    result = train(args.data, mcfg, tcfg)
    first = next(r["L"] for r in result.history if "L" in r)
    msg = (f"done in {time.time() - t0:.1f}s: L {first:.4f} -> "
           f"{result.final_loss:.4f}, checkpoint {result.checkpoint_path}")
    if result.val_loss is not None:
        msg += f", val L {result.val_loss:.4f}"
    print(msg)
    return EXIT_OK


def cmd_encode(args) -> int:
    model, _ = load_model(args.ckpt)
    img = dataio.load_image(args.input)
    data, info = bitstream.encode_image(img, model)
    with open(args.out, "wb") as f:
        f.write(data)
    if args.verbose:
        print(f"{info.total_bytes} bytes (z {info.len_z}, y {info.len_y}), "
              f"estimated {info.est_bpp:.4f} bpp")
    if args.verify:
        out = bitstream.decode_image(data, model)
        print(f"bpp={info.bpp:.4f} psnr={metrics.psnr(img, out):.4f}")
    else:
        print(f"bpp={info.bpp:.4f}")
    return EXIT_OK


def cmd_decode(args) -> int:
    model, _ = load_model(args.ckpt)
    with open(args.input, "rb") as f:
        data = f.read()
    img = bitstream.decode_image(data, model)
    dataio.save_image(args.out, img)
    if args.verbose:
        print(f"wrote {args.out} ({img.shape[2]}x{img.shape[1]})")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = load_model(args.ckpt)
    points = evaluation.evaluate(model, args.data,
                                 checkpoint_id=model.cfg.hash_hex())
    evaluation.write_csv(points, args.out)
    mean = points[-1]
    print(f"{len(points) - 1} images: bpp={mean.bpp:.4f} "
          f"psnr={mean.psnr_db:.4f} msssim_db={mean.msssim_db:.4f}")
    return EXIT_OK


def cmd_plot(args) -> int:
    evaluation.plot_rd(args.csvs, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _check_coder() -> None:
    rng = np.random.default_rng(11)
    mu = rng.normal(0, 2, 400)
    sigma = rng.uniform(0.2, 6.0, 400)
    table = entropy.build_gaussian_tables(mu, sigma)
    values = np.rint(mu + rng.normal(0, 1, 400) * sigma).astype(np.int64)
    values[::97] += 400  # force escapes
    if not np.array_equal(rc_decode(rc_encode(values, table), table, 400), values):
        raise CwicError("round trip mismatch")


def _check_gradients() -> None:
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(0, 1, (1, 2, 6, 6)), dtype=np.float64,
               requires_grad=True)
    w = Tensor(rng.normal(0, 0.5, (3, 2, 3, 3)), dtype=np.float64,
               requires_grad=True)
    (tt.conv2d(x, w, pad=1) ** 2.0).sum().backward()
    eps = 1e-6
    idx = (0, 1, 3, 2)
    base = x.data.copy()
    xp = base.copy(); xp[idx] += eps
    xm = base.copy(); xm[idx] -= eps
    with tt.no_grad():
        fp = (tt.conv2d(Tensor(xp), Tensor(w.data), pad=1) ** 2.0).sum().item()
        fm = (tt.conv2d(Tensor(xm), Tensor(w.data), pad=1) ** 2.0).sum().item()
    num = (fp - fm) / (2 * eps)
    rel = abs(num - x.grad[idx]) / max(abs(num), 1e-12)
    if rel > 1e-6:
        raise CwicError(f"conv gradient off by {rel:.2e}")


def _check_cwam() -> None:
    from .cwam import Cwam
    rng = np.random.default_rng(2)
    att = Cwam(8, window=4, heads=2, rng=rng)
    f = Tensor(rng.normal(0, 1, (1, 8, 16, 16)).astype(np.float32))
    out1 = att(f).data
    if out1.shape != f.shape:
        raise CwicError("shape not preserved")
    bumped = f.data.copy()
    bumped[0, :, 15, 15] += 3.0
    out2 = att(Tensor(bumped)).data
    if not np.array_equal(out1[:, :, :4, :4], out2[:, :, :4, :4]):
        raise CwicError("far pixel leaked into a distant window")


def _check_quantizer() -> None:
    v = Tensor(np.array([[0.4, -1.6, 0.5, 1.5]], dtype=np.float32),
               requires_grad=True)
    r = quantize(v, "round").data
    if not np.array_equal(r, [[0.0, -2.0, 0.0, 2.0]]):
        raise CwicError(f"rounding wrong: {r}")
    s = quantize(v, "ste")
    s.sum().backward()
    if not np.array_equal(v.grad, np.ones_like(v.grad)):
        raise CwicError("ste gradient is not identity")
    n = quantize(Tensor(np.zeros((1, 16), np.float32)), "noise", seed=1).data
    if np.abs(n).max() > 0.5:
        raise CwicError("noise outside half-unit bound")


def _check_metrics() -> None:
    rng = np.random.default_rng(3)
    x = Tensor(rng.random((1, 3, 32, 32), dtype=np.float32))
    if abs(metrics.ms_ssim(x, x).item() - 1.0) > 1e-6:
        raise CwicError("self MS-SSIM is not 1")
    if metrics.psnr(x, x) != 100.0:
        raise CwicError("PSNR cap missing")
    p = entropy.gaussian_likelihood(
        Tensor(np.zeros((1, 1))), Tensor(np.zeros((1, 1))),
        Tensor(np.ones((1, 1)))).item()
    if abs(p - 0.3829249) > 1e-4:
        raise CwicError(f"unit Gaussian mass wrong: {p}")


def _check_checkpoint(path) -> None:
    if path is not None:
        load_checkpoint(path)
        return
    import tempfile
    cfg = ModelConfig(n=8, m=8, hyper=4, heads=2, seed=1)
    model = CodecModel(cfg)
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "ck.bin")
        save_checkpoint(p, model, step=7)
        restored, ck = load_model(p)
        if ck.step != 7:
            raise CwicError("step not preserved")
        for (ka, pa), (kb, pb) in zip(model.named_params(),
                                      restored.named_params()):
            if ka != kb or not np.array_equal(pa.data, pb.data):
                raise CwicError(f"parameter {ka} not bit-exact")


def cmd_selfcheck(args) -> int:
    checks = [
        ("range coder round trip", _check_coder),
        ("gradient spot check", _check_gradients),
        ("window attention locality", _check_cwam),
        ("quantizer modes", _check_quantizer),
        ("metrics and likelihood", _check_metrics),
        ("checkpoint round trip", lambda: _check_checkpoint(args.ckpt)),
    ]
    failed = 0
    for name, fn in checks:
        t0 = time.time()
        try:
            fn()
            print(f"[ok]   {name} ({time.time() - t0:.2f}s)")
        except Exception as e:
            failed += 1
            print(f"[FAIL] {name}: {e}")
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_CHECK_FAILED


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on bad flags, 0 on --help
        return int(e.code or 0)
    handlers = {"train": cmd_train, "encode": cmd_encode,
                "decode": cmd_decode, "eval": cmd_eval, "plot": cmd_plot,
                "selfcheck": cmd_selfcheck}
    try:
        return handlers[args.cmd](args)
    except HashMismatchError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_HASH_MISMATCH
    except DecodeError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CORRUPT
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, IngestError, DimensionError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
