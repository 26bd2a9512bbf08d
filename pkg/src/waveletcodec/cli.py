"""Command-line interface.

Subcommands: compress, decompress, eval, dwt, report, train-toy.
Exit codes: 0 success, 2 argument error, 3 I/O error, 4 decode error,
5 config error.

``WECODEC_THREADS`` caps worker threads.  The reference implementation is
serial (BLAS pools are pinned to one thread before numpy loads), so output
is independent of the value; it is still validated.
"""

from __future__ import annotations

import argparse
import os
import sys


def _setup_threads() -> None:
    threads = os.environ.get("WECODEC_THREADS")
    if threads is not None:
        try:
            if int(threads) < 1:
                raise ValueError
        except ValueError:
            raise _CliArgumentError(
                f"WECODEC_THREADS must be a positive integer, got {threads!r}")
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")


class _CliArgumentError(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wecodec",
                                description="wavelet-domain learned image codec")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compress", help="encode an image to a bitstream")
    c.add_argument("-i", "--input", required=True)
    c.add_argument("-o", "--output", required=True)
    c.add_argument("--model", required=True)
    c.add_argument("--profile", choices=["toy", "paper"])

    d = sub.add_parser("decompress", help="decode a bitstream to an image")
    d.add_argument("-i", "--input", required=True)
    d.add_argument("-o", "--output", required=True)
    d.add_argument("--model", required=True)

    e = sub.add_parser("eval", help="PSNR (and MS-SSIM) between two images")
    e.add_argument("-a", "--reference", required=True)
    e.add_argument("-b", "--distorted", required=True)
    e.add_argument("--msssim", action="store_true")

    w = sub.add_parser("dwt", help="subband energy/entropy report for an image")
    w.add_argument("-i", "--input", required=True)
    w.add_argument("--wavelet", choices=["haar", "5/3", "9/7"], default="9/7")
    w.add_argument("--levels", type=int, default=1)
    w.add_argument("--channel-wavelet", choices=["haar", "5/3", "9/7", "none"],
                   default="none")
    w.add_argument("--report", action="store_true")

    r = sub.add_parser("report", help="per-subband bit allocation of a bitstream")
    r.add_argument("-i", "--input", required=True)
    r.add_argument("--model", required=True)
    r.add_argument("--ref", help="reference image for PSNR/MS-SSIM rows")

    t = sub.add_parser("train-toy", help="desk-scale two-stage training")
    t.add_argument("--stage", type=int, choices=[1, 2], required=True)
    t.add_argument("--lambda", dest="lam", type=float, default=0.013)
    t.add_argument("--metric", choices=["mse", "msssim"], default="mse")
    t.add_argument("--w1", type=float, default=1.2)
    t.add_argument("--w2", type=float, default=0.8)
    t.add_argument("--iters", type=int, default=2000)
    t.add_argument("--seed", type=int, default=42)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume")
    t.add_argument("--trace", help="loss trace CSV path (default OUT.trace.csv)")
    t.add_argument("--log-every", type=int, default=100)
    return p


def _kind(name: str):
    from .wavelet import WaveletKind
    return {"haar": WaveletKind.HAAR_ORTHONORMAL,
            "5/3": WaveletKind.LEGALL_5_3_REVERSIBLE,
            "9/7": WaveletKind.CDF_9_7}[name]


def _cmd_compress(args) -> int:
    from .imageio import read_image
    from .model import CodecModel
    from .pipeline import encode_image_details
    from .errors import ConfigError
    model = CodecModel.load(args.model)
    if args.profile and model.cfg.profile != args.profile:
        raise ConfigError(f"model profile is {model.cfg.profile!r}, "
                          f"requested {args.profile!r}")
    img = read_image(args.input)
    res = encode_image_details(img, model)
    with open(args.output, "wb") as f:
        f.write(res.bitstream)
    npix = img.shape[1] * img.shape[2]
    print(f"encoded {args.input} -> {args.output}")
    print(f"pixels\t{img.shape[2]}x{img.shape[1]}")
    print(f"bytes\t{len(res.bitstream)}")
    print(f"bpp\t{len(res.bitstream) * 8 / npix:.6f}")
    print(f"model_parameters\t{model.param_total()}")
    return 0


def _cmd_decompress(args) -> int:
    from .imageio import write_image
    from .model import CodecModel
    from .pipeline import decode_image
    model = CodecModel.load(args.model)
    with open(args.input, "rb") as f:
        bitstream = f.read()
    img = decode_image(bitstream, model)
    write_image(args.output, img)
    print(f"decoded {args.input} -> {args.output} "
          f"({img.shape[2]}x{img.shape[1]})")
    return 0


def _cmd_eval(args) -> int:
    import numpy as np
    from .imageio import read_image
    from .metrics import ms_ssim, ms_ssim_db, psnr
    a = read_image(args.reference).astype(np.float64) / 255.0
    b = read_image(args.distorted).astype(np.float64) / 255.0
    print(f"psnr_db\t{psnr(a, b):.4f}")
    if args.msssim:
        v = ms_ssim(a, b)
        print(f"msssim\t{v:.6f}")
        print(f"msssim_db\t{ms_ssim_db(v):.4f}")
    return 0


def _subband_stats(label, arr):
    import numpy as np
    energy = float(np.sum(arr.astype(np.float64) ** 2))
    vals, counts = np.unique(np.rint(arr), return_counts=True)
    p = counts / counts.sum()
    entropy = float(-(p * np.log2(p)).sum())
    return f"{label}\t{arr.size}\t{energy:.4f}\t{entropy:.4f}"


def _cmd_dwt(args) -> int:
    import numpy as np
    from .imageio import read_image
    from .wavelet import dwt2_multi, dwt3
    img = read_image(args.input).astype(np.float64)
    lines = ["subband\tcount\tenergy\tentropy"]
    if args.channel_wavelet != "none":
        sb = dwt3(img, _kind(args.channel_wavelet), _kind(args.wavelet),
                  args.levels)
        for g in ("L", "H"):
            pyr = sb.group(g)
            lines.append(_subband_stats(f"{g}LL{pyr.levels}", pyr.ll))
            for lvl in range(pyr.levels, 0, -1):
                lh, hl, hh = pyr.details[lvl - 1]
                lines.append(_subband_stats(f"{g}LH{lvl}", lh))
                lines.append(_subband_stats(f"{g}HL{lvl}", hl))
                lines.append(_subband_stats(f"{g}HH{lvl}", hh))
    else:
        pyr = dwt2_multi(img, _kind(args.wavelet), args.levels)
        lines.append(_subband_stats(f"LL{pyr.levels}", pyr.ll))
        for lvl in range(pyr.levels, 0, -1):
            lh, hl, hh = pyr.details[lvl - 1]
            lines.append(_subband_stats(f"LH{lvl}", lh))
            lines.append(_subband_stats(f"HL{lvl}", hl))
            lines.append(_subband_stats(f"HH{lvl}", hh))
    print("\n".join(lines))
    return 0


def _cmd_report(args) -> int:
    from .imageio import read_image
    from .model import CodecModel
    from .trainer import report_subbands
    model = CodecModel.load(args.model)
    with open(args.input, "rb") as f:
        bitstream = f.read()
    reference = read_image(args.ref) if args.ref else None
    rep = report_subbands(model, bitstream=bitstream, reference=reference)
    sys.stdout.write(rep.to_tsv())
    return 0


def _cmd_train_toy(args) -> int:
    from pathlib import Path
    from .errors import ArgumentError
    from .imageio import read_image
    from .model import CodecModel, toy_config
    from .trainer import TrainConfig, train_loop
    data = Path(args.data)
    paths = sorted(list(data.glob("*.png")) + list(data.glob("*.ppm")))
    if not paths:
        raise ArgumentError(f"no .png/.ppm crops under {data}")
    crops = [read_image(p) for p in paths]
    if args.resume:
        model = CodecModel.load(args.resume)
    else:
        model = CodecModel(toy_config(lambda_value=args.lam, metric=args.metric))
    cfg = TrainConfig(lam=args.lam, metric=args.metric, stage=args.stage,
                      w1=args.w1, w2=args.w2, iterations=args.iters,
                      seed=args.seed)
    result = train_loop(model, crops, cfg, log_every=args.log_every)
    model.save(args.out)
    trace_path = args.trace or (args.out + ".trace.csv")
    with open(trace_path, "w") as f:
        f.write("iteration,loss,D,bpp_latent,bpp_z\n")
        for r in result.trace:
            f.write(f"{r.iteration},{r.loss:.8f},{r.distortion:.8f},"
                    f"{r.bpp_latent:.8f},{r.bpp_z:.8f}\n")
    print(f"saved model to {args.out}; trace to {trace_path}")
    return 0


_COMMANDS = {
    "compress": _cmd_compress,
    "decompress": _cmd_decompress,
    "eval": _cmd_eval,
    "dwt": _cmd_dwt,
    "report": _cmd_report,
    "train-toy": _cmd_train_toy,
}


def main(argv=None) -> int:
    try:
        _setup_threads()
    except _CliArgumentError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    parser = _build_parser()
    args = parser.parse_args(argv)

    from .errors import (ArgumentError, ConfigError, DecodeError,
                         IOFormatError, NumericError, RangeError, ShapeError)
    try:
        return _COMMANDS[args.command](args)
    except (ArgumentError, ShapeError, RangeError) as e:
        print(f"argument error: {e}", file=sys.stderr)
        return 2
    except (IOFormatError, FileNotFoundError, IsADirectoryError,
            PermissionError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3
    except DecodeError as e:
        print(f"decode error: {e}", file=sys.stderr)
        return 4
    except (ConfigError, NumericError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
