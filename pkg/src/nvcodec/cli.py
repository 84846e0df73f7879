"""Command-line interface: train, encode, decode, eval, bdrate, sweep.

Exit codes: 0 success, 2 usage, 3 data error, 4 hash or format mismatch.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import codec
from . import metrics as M
from . import nn
from . import video_io as V
from .config import CodecConfig, parse_config_file
from .errors import BitstreamError, DataError
from .training import train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_FORMAT = 4


def _load_corpus(data_dir: Path) -> list[np.ndarray]:
    """Each .y4m/.rgb/.raw/.npy file or PNG subdirectory is one sequence."""
    if not data_dir.is_dir():
        raise DataError(f"data directory {data_dir} does not exist")
    corpus = []
    for entry in sorted(data_dir.iterdir()):
        if entry.is_dir():
            corpus.append(V.read_png_dir(entry).frames)
        elif entry.suffix.lower() == ".npy":
            arr = np.load(entry)
            if arr.ndim != 4 or arr.shape[1] != 3:
                raise DataError(
                    f"{entry.name}: expected a (T,3,H,W) array, got {arr.shape}"
                )
            corpus.append(np.asarray(arr, dtype=np.float64))
        elif entry.suffix.lower() in (".y4m", ".rgb", ".raw"):
            corpus.append(V.ingest(entry).frames)
    if not corpus:
        raise DataError(f"no sequences found in {data_dir}")
    return corpus


def _cmd_train(args) -> int:
    config = parse_config_file(args.config, kind="train")
    corpus = _load_corpus(Path(args.data))
    models, log = train(config, corpus)
    nn.save_checkpoint(args.out, models)
    print(f"trained {len(corpus)} sequences, final loss {log.final_loss:.4f}")
    print(f"checkpoint written to {args.out}")
    return EXIT_OK


def _cmd_encode(args) -> int:
    models = codec.models_from_checkpoint(args.ckpt)
    frames = V.ingest(args.input).frames
    result = codec.encode_sequence(frames, models,
                                   CodecConfig(gop=args.gop))
    Path(args.out).write_bytes(result.blob)
    for stat in result.stats:
        print(f"frame {stat.index:3d} {stat.frame_type} "
              f"{stat.byte_count:6d} bytes  {stat.bpp:.4f} bpp")
    pixels = frames.shape[0] * frames.shape[2] * frames.shape[3]
    print(f"total {len(result.blob)} bytes, "
          f"{8.0 * len(result.blob) / pixels:.4f} bpp")
    return EXIT_OK


def _cmd_decode(args) -> int:
    models = codec.models_from_checkpoint(args.ckpt)
    blob = Path(args.input).read_bytes()
    # decode fully before creating any output: a hash or format mismatch
    # must leave the output directory untouched
    frames = codec.decode_sequence(blob, models)
    written = V.write_png_dir(args.out, V.VideoSequence(frames))
    print(f"decoded {len(written)} frames into {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    ref = V.ingest(args.ref).frames
    dec = V.read_png_dir(args.dec).frames
    if ref.shape != dec.shape:
        raise DataError(
            f"reference {ref.shape} and decode {dec.shape} disagree"
        )
    report_dir = Path(args.report)
    report_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for t in range(ref.shape[0]):
        quality = M.ms_ssim(ref[t], dec[t])
        rows.append((t, quality, M.to_db(quality)))
    mean_quality = float(np.mean([r[1] for r in rows]))
    out_csv = report_dir / "metrics.csv"
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "ms_ssim", "ms_ssim_db"])
        for t, quality, db in rows:
            writer.writerow([t, f"{quality:.6f}", f"{db:.4f}"])
        writer.writerow(["mean", f"{mean_quality:.6f}",
                         f"{M.to_db(mean_quality):.4f}"])
    print(f"mean MS-SSIM {mean_quality:.6f} "
          f"({M.to_db(mean_quality):.4f} dB) over {len(rows)} frames")
    print(f"report written to {out_csv}")
    return EXIT_OK


def _read_curve_csv(path) -> M.RDCurve:
    points = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        columns = set(reader.fieldnames or ())
        rate_key = "rate_bpp" if "rate_bpp" in columns else "rate"
        if rate_key not in columns or "ms_ssim" not in columns:
            raise DataError(
                f"{path}: need rate_bpp (or rate) and ms_ssim columns, "
                f"got {sorted(columns)}"
            )
        for row in reader:
            try:
                points.append(M.RDPoint(float(row[rate_key]),
                                        float(row["ms_ssim"])))
            except ValueError:
                continue  # prose rows such as BD-Rate summaries
    if len(points) < 4:
        raise DataError(f"{path}: need at least 4 curve points, "
                        f"got {len(points)}")
    points.sort(key=lambda p: p.rate)
    return M.RDCurve(points)


def _cmd_bdrate(args) -> int:
    anchor = _read_curve_csv(args.anchor)
    test = _read_curve_csv(args.test)
    delta = M.bd_rate(anchor, test)
    print(f"BD-Rate {delta:+.2f}%")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    paths = [p for p in args.ckpts.split(",") if p]
    checkpoints = [codec.models_from_checkpoint(p) for p in paths]
    frames = V.ingest(args.input).frames
    curve = codec.rd_sweep(frames, checkpoints, CodecConfig(gop=args.gop))
    label = Path(args.input).stem
    written = M.rd_table_report({label: {"sweep": curve}}, args.report)
    for point in curve.points:
        print(f"rate {point.rate:.4f} bpp  MS-SSIM {point.ms_ssim:.4f} "
              f"({point.db:.2f} dB)")
    for path in sorted(written.values()):
        print(f"report written to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nvcodec",
        description="Desk-scale learned video codec",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the three-stage training")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(func=_cmd_train)

    p_enc = sub.add_parser("encode", help="encode a video to a bitstream")
    p_enc.add_argument("--ckpt", required=True)
    p_enc.add_argument("--input", required=True)
    p_enc.add_argument("--gop", type=int, default=8)
    p_enc.add_argument("--out", required=True)
    p_enc.set_defaults(func=_cmd_encode)

    p_dec = sub.add_parser("decode", help="decode a bitstream to PNG frames")
    p_dec.add_argument("--ckpt", required=True)
    p_dec.add_argument("--input", required=True)
    p_dec.add_argument("--out", required=True)
    p_dec.set_defaults(func=_cmd_decode)

    p_eval = sub.add_parser("eval", help="score decoded frames against a reference")
    p_eval.add_argument("--ref", required=True)
    p_eval.add_argument("--dec", required=True)
    p_eval.add_argument("--report", required=True)
    p_eval.set_defaults(func=_cmd_eval)

    p_bd = sub.add_parser("bdrate", help="BD-Rate between two curve CSVs")
    p_bd.add_argument("--anchor", required=True)
    p_bd.add_argument("--test", required=True)
    p_bd.set_defaults(func=_cmd_bdrate)

    p_sweep = sub.add_parser("sweep", help="rate-distortion sweep over checkpoints")
    p_sweep.add_argument("--ckpts", required=True,
                         help="comma-separated checkpoint paths")
    p_sweep.add_argument("--input", required=True)
    p_sweep.add_argument("--gop", type=int, default=8)
    p_sweep.add_argument("--report", required=True)
    p_sweep.set_defaults(func=_cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BitstreamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
