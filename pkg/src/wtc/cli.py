"""``wtc`` command line: synth, prune, quantize, pack, unpack, analyze, sweep,
compare-rounding, compare-huffman.

Reports go to ``--output`` (stdout when omitted or ``-``); diagnostics go to
stderr. Exit status is 0 on success, 1 on any I/O or validation failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from wtc.accounting import SIZE_FIELDS, WidthPolicy, render_rows, size_rows
from wtc.container import load_container, save_container, tensor_record, write_records
from wtc.pipeline import (
    HUFFMAN_FIELDS,
    Reduction,
    analyze_tensors,
    huffman_tensors,
    rounding_tensors,
    sweep_tensors,
)
from wtc.reduce import PruneSpec, prune, quantize
from wtc.sweep import DEFAULT_SPARSITIES, DEFAULT_WIDTHS, LAYER_FIELDS, ROUNDING_FIELDS, SWEEP_FIELDS
from wtc.tensor import SynthParams, block_width_for, synth_layers, synth_lenet


class CliError(Exception):
    pass


def _widths(text: str) -> list[int]:
    try:
        out = [int(w) for w in text.split(",") if w.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad width list {text!r}") from None
    if not out or any(w < 1 for w in out):
        raise argparse.ArgumentTypeError("widths must be positive integers")
    return out


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return v


def _fractions(text: str) -> list[float]:
    return [_fraction(s) for s in text.split(",") if s.strip()]


def _non_negative(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"{text} is negative")
    return v


def _scale(text: str):
    if text in ("auto", "threshold"):
        return text
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("--scale takes auto, threshold or a positive number") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("--scale must be positive")
    return v


def _bits(text: str) -> int:
    v = int(text)
    if not 2 <= v <= 16:
        raise argparse.ArgumentTypeError("--bits must lie in [2, 16]")
    return v


def _add_io(p, output_required=False):
    p.add_argument("--input", required=True, help="input container")
    p.add_argument("--output", required=output_required, default=None,
                   help="output path" + ("" if output_required else " (default: stdout)"))


def _add_reduce(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--threshold", type=_non_negative, help="prune |w| below this value")
    g.add_argument("--target-sparsity", type=_fraction, help="prune this fraction of weights")
    p.add_argument("--bits", type=_bits, default=16)
    p.add_argument("--rounding", choices=("truncate", "nearest"), default="nearest")
    p.add_argument("--scale", type=_scale, default="auto", help="auto | threshold | <float>")


def _add_policy(p):
    p.add_argument("--width-policy", choices=("theoretical", "fixed32"), default="fixed32")
    p.add_argument("--pointer", choices=("unique", "location"), default="unique",
                   help="what a repeat reference addresses, for size accounting")


def _add_report(p):
    p.add_argument("--report", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wtc", description="Shared-block weight tensor compaction")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a container of planted-redundancy tensors")
    p.add_argument("--output", required=True)
    p.add_argument("--rows", type=int, default=64)
    p.add_argument("--cols", type=int, default=64)
    p.add_argument("--block-width", type=int, default=4)
    p.add_argument("--unique", type=int, default=16)
    p.add_argument("--sparsity", type=_fraction, default=0.6)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lenet-shapes", action="store_true",
                   help="LeNet-5 conv1/conv2/fc3/fc4 shapes instead of --rows/--cols")

    p = sub.add_parser("prune", help="magnitude-prune float32 tensors")
    _add_io(p, output_required=True)
    _add_reduce(p)

    p = sub.add_parser("quantize", help="prune (optional) and quantize to q16")
    _add_io(p, output_required=True)
    _add_reduce(p)

    p = sub.add_parser("pack", help="store reduced tensors as BSR/SBSR/Huffman sections")
    _add_io(p, output_required=True)
    _add_reduce(p)
    p.add_argument("--format", choices=("bsr", "sbsr", "ehuff", "vhuff"), default="sbsr")
    p.add_argument("--widths", type=_widths, default=[4], help="FC block width (first value)")

    p = sub.add_parser("unpack", help="decode packed sections back to raw q16 tensors")
    _add_io(p, output_required=True)

    p = sub.add_parser("analyze", help="per-layer sizes and compaction ratios")
    _add_io(p)
    _add_reduce(p)
    _add_policy(p)
    _add_report(p)
    p.add_argument("--widths", type=_widths, default=[4], help="FC block width (first value)")
    p.add_argument("--sparsities", type=_fractions, nargs="?", const=list(DEFAULT_SPARSITIES),
                   default=None, help="batch mode over target sparsities (bare flag: 0.4,0.6,0.8)")
    p.add_argument("--breakdown", default=None, help="also write per-component rows here")

    p = sub.add_parser("sweep", help="SBSR size per block width")
    _add_io(p)
    _add_reduce(p)
    _add_policy(p)
    _add_report(p)
    p.add_argument("--widths", type=_widths, default=list(DEFAULT_WIDTHS))
    p.add_argument("--fc-only", action="store_true")

    p = sub.add_parser("compare-rounding", help="truncation vs rounding sharing")
    _add_io(p)
    _add_reduce(p)
    _add_policy(p)
    _add_report(p)
    p.add_argument("--widths", type=_widths, default=[4], help="FC block width (first value)")

    p = sub.add_parser("compare-huffman", help="element vs vector Huffman vs SBSR")
    _add_io(p)
    _add_reduce(p)
    _add_policy(p)
    _add_report(p)
    p.add_argument("--widths", type=_widths, default=[2, 4])
    return parser


def reduction_from(args) -> Reduction:
    if args.target_sparsity is not None:
        spec = PruneSpec.at_sparsity(args.target_sparsity)
    else:
        spec = PruneSpec.at_threshold(args.threshold or 0.0)
    return Reduction(spec, args.bits, args.rounding, args.scale)


def policy_from(args) -> WidthPolicy:
    return WidthPolicy(args.width_policy, args.pointer)


def _load(path):
    if not Path(path).is_file():
        raise CliError(f"cannot read input container {path}")
    return load_container(path)


def _emit(text: str, path) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def analyze_report(tensors, reduction, fc_width, policy, fmt, sparsities=None):
    """Summary text and long-form breakdown text for ``analyze``."""
    if sparsities:
        reports = []
        for s in sparsities:
            red = Reduction(PruneSpec.at_sparsity(s), reduction.bits, reduction.rounding, reduction.scale)
            for r in analyze_tensors(tensors, red, fc_width, policy):
                reports.append((f"{r.layer}@{s:g}", r))
    else:
        reports = [(r.layer, r) for r in analyze_tensors(tensors, reduction, fc_width, policy)]
    summary = []
    long_rows = []
    for label, r in reports:
        row = r.row()
        row["layer"] = label
        summary.append(row)
        long_rows.extend(size_rows(label, r.sizes))
    return render_rows(summary, LAYER_FIELDS, fmt), render_rows(long_rows, SIZE_FIELDS, fmt)


def sweep_report(tensors, reduction, widths, policy, fmt, fc_only=False) -> str:
    rows = [row for res in sweep_tensors(tensors, reduction, widths, policy, fc_only) for row in res.rows()]
    return render_rows(rows, SWEEP_FIELDS, fmt)


def cmd_synth(args) -> None:
    if args.lenet_shapes:
        tensors = synth_lenet(args.unique, args.sparsity, args.seed, args.block_width)
    else:
        tensors = synth_layers(
            SynthParams(args.rows, args.cols, args.block_width, args.unique, args.sparsity,
                        args.seed, args.layers)
        )
    save_container(tensors, args.output)


def cmd_prune(args) -> None:
    red = reduction_from(args)
    out = []
    for t in _load(args.input):
        if t.dtype != "float32":
            raise CliError(f"{t.name}: prune needs float32 weights, found {t.dtype}")
        out.append(prune(t, red.spec))
    save_container(out, args.output)


def cmd_quantize(args) -> None:
    red = reduction_from(args)
    out = []
    for t in _load(args.input):
        if t.dtype == "q16":
            out.append(quantize(t, red.grid_for(t)))
        else:
            out.append(red.apply(t)[0])
    save_container(out, args.output)


def cmd_pack(args) -> None:
    red = reduction_from(args)
    records = []
    for t in _load(args.input):
        q, _ = red.apply(t)
        records.append(tensor_record(q, args.format, block_width_for(q, args.widths[0])))
    write_records(records, args.output)


def cmd_unpack(args) -> None:
    save_container(_load(args.input), args.output)


def cmd_analyze(args) -> None:
    summary, breakdown = analyze_report(
        _load(args.input), reduction_from(args), args.widths[0], policy_from(args),
        args.report, args.sparsities,
    )
    _emit(summary, args.output)
    if args.breakdown:
        Path(args.breakdown).write_text(breakdown)


def cmd_sweep(args) -> None:
    text = sweep_report(_load(args.input), reduction_from(args), args.widths, policy_from(args),
                        args.report, args.fc_only)
    _emit(text, args.output)


def cmd_compare_rounding(args) -> None:
    reports = rounding_tensors(_load(args.input), reduction_from(args), args.widths[0], policy_from(args))
    _emit(render_rows([r.row() for r in reports], ROUNDING_FIELDS, args.report), args.output)


def cmd_compare_huffman(args) -> None:
    rows = huffman_tensors(_load(args.input), reduction_from(args), args.widths, policy_from(args))
    _emit(render_rows(rows, HUFFMAN_FIELDS, args.report), args.output)


COMMANDS = {
    "synth": cmd_synth,
    "prune": cmd_prune,
    "quantize": cmd_quantize,
    "pack": cmd_pack,
    "unpack": cmd_unpack,
    "analyze": cmd_analyze,
    "sweep": cmd_sweep,
    "compare-rounding": cmd_compare_rounding,
    "compare-huffman": cmd_compare_huffman,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except (CliError, ValueError, KeyError, OSError, ZeroDivisionError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"wtc {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
