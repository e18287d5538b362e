import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from wtc import formats
from wtc.accounting import FIXED32
from wtc.cli import analyze_report, main, sweep_report
from wtc.container import load_container, save_container
from wtc.pipeline import Reduction, analyze_tensors, sweep_tensors
from wtc.reduce import PruneSpec
from wtc.tensor import DenseTensor, flatten_to_matrix, synth_conv, synth_planted


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def planted(tmp_path, capsys):
    path = tmp_path / "planted.wtc"
    code, _, _ = run(
        ["synth", "--output", path, "--rows", 40, "--cols", 16, "--block-width", 4,
         "--unique", 5, "--sparsity", 0.5, "--layers", 3, "--seed", 7],
        capsys,
    )
    assert code == 0
    return path


def _csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_analyze_reports_one_row_per_layer(planted, capsys):
    code, out, _ = run(["analyze", "--input", planted], capsys)
    assert code == 0
    rows = _csv(out)
    assert [r["layer"] for r in rows] == ["layer0", "layer1", "layer2"]


def test_analyze_matches_library(planted, capsys):
    code, out, _ = run(["analyze", "--input", planted, "--scale", 2.0 ** -12, "--report", "json"], capsys)
    assert code == 0
    cli_rows = json.loads(out)
    tensors = load_container(planted)
    red = Reduction(scale=2.0 ** -12)
    lib = analyze_tensors(tensors, red, 4, FIXED32)
    assert [r["cr_over_bsr"] for r in cli_rows] == [r.cr_over_bsr for r in lib]
    assert all(r.n_unique <= 5 for r in lib)


def test_unreadable_path_names_it(tmp_path, capsys):
    missing = tmp_path / "nope.wtc"
    code, out, err = run(["analyze", "--input", missing], capsys)
    assert code != 0
    assert str(missing) in err and out == ""


def test_corrupt_container_fails_cleanly(tmp_path, capsys):
    bad = tmp_path / "bad.wtc"
    bad.write_bytes(b"WTC1garbage")
    code, _, err = run(["sweep", "--input", bad], capsys)
    assert code == 1 and "error" in err


def test_pack_unpack_round_trip(planted, tmp_path, capsys):
    q = tmp_path / "q.wtc"
    assert run(["quantize", "--input", planted, "--output", q, "--target-sparsity", 0.6], capsys)[0] == 0
    originals = load_container(q)
    for fmt in ("bsr", "sbsr", "ehuff", "vhuff"):
        packed, back = tmp_path / f"{fmt}.wtc", tmp_path / f"{fmt}.out.wtc"
        assert run(["pack", "--input", q, "--output", packed, "--format", fmt], capsys)[0] == 0
        assert run(["unpack", "--input", packed, "--output", back], capsys)[0] == 0
        assert load_container(back) == originals
        assert [t.values.tobytes() for t in load_container(back)] == [t.values.tobytes() for t in originals]


def test_sbsr_and_vhuff_decode_identically(planted, tmp_path, capsys):
    a, b = tmp_path / "a.wtc", tmp_path / "b.wtc"
    run(["pack", "--input", planted, "--output", a, "--format", "sbsr"], capsys)
    run(["pack", "--input", planted, "--output", b, "--format", "vhuff", "--widths", 8], capsys)
    assert load_container(a) == load_container(b)


def test_pack_all_zero_tensor(tmp_path, capsys):
    src, packed = tmp_path / "z.wtc", tmp_path / "zp.wtc"
    save_container([DenseTensor("z", (6, 8), "float32", np.zeros(48))], src)
    assert run(["pack", "--input", src, "--output", packed], capsys)[0] == 0
    (t,) = load_container(packed)
    assert t.dtype == "q16" and not t.values.any()
    assert packed.stat().st_size < src.stat().st_size


def test_sweep_matches_library(planted, capsys):
    code, out, _ = run(["sweep", "--input", planted, "--widths", "1,2,4"], capsys)
    assert code == 0
    lib = sweep_tensors(load_container(planted), Reduction(), [1, 2, 4])
    best = {r["layer"]: int(r["best_width"]) for r in _csv(out)}
    assert best == {res.layer: res.best_width for res in lib}


def test_single_width_sweep(planted, capsys):
    _, out, _ = run(["sweep", "--input", planted, "--widths", "8"], capsys)
    assert {r["best_width"] for r in _csv(out)} == {"8"}


def test_fc_only_on_conv_container_is_empty(tmp_path, capsys):
    path = tmp_path / "conv.wtc"
    save_container([synth_conv((4, 3, 5, 5), 2, 0.5, seed=1)], path)
    code, out, _ = run(["sweep", "--input", path, "--fc-only"], capsys)
    assert code == 0
    assert _csv(out) == []
    code, out, _ = run(["sweep", "--input", path, "--fc-only", "--report", "json"], capsys)
    assert json.loads(out) == []


def test_synth_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.wtc", tmp_path / "b.wtc"
    for p in (a, b):
        run(["synth", "--output", p, "--seed", 42, "--layers", 2], capsys)
    assert a.read_bytes() == b.read_bytes()


def test_synth_unique_one(tmp_path, capsys):
    p = tmp_path / "u.wtc"
    run(["synth", "--output", p, "--unique", 1, "--sparsity", 0.3], capsys)
    (t,) = load_container(p)
    q = np.rint(np.asarray(flatten_to_matrix(t)) * 4096).astype(np.int16)
    assert formats.to_sbsr(q, 1, 4).n_unique == 1


def test_synth_lenet_shapes(tmp_path, capsys):
    p = tmp_path / "l.wtc"
    assert run(["synth", "--output", p, "--lenet-shapes"], capsys)[0] == 0
    shapes = [t.shape for t in load_container(p)]
    assert shapes == [(20, 1, 5, 5), (50, 20, 5, 5), (500, 800), (10, 500)]


def test_analyze_breakdown_and_batch(planted, tmp_path, capsys):
    bd = tmp_path / "bd.csv"
    code, out, _ = run(["analyze", "--input", planted, "--sparsities", "--breakdown", bd], capsys)
    assert code == 0
    labels = [r["layer"] for r in _csv(out)]
    assert labels[:3] == ["layer0@0.4", "layer1@0.4", "layer2@0.4"] and len(labels) == 9
    comps = {r["component"] for r in _csv(bd.read_text())}
    assert {"S_flag", "H_Idx", "BSR_idx", "total"} <= comps


def test_compare_commands_run(planted, capsys):
    code, out, _ = run(["compare-rounding", "--input", planted, "--target-sparsity", 0.5], capsys)
    assert code == 0 and len(_csv(out)) == 3
    code, out, _ = run(["compare-huffman", "--input", planted, "--widths", "2,4"], capsys)
    assert code == 0 and len(_csv(out)) == 6


def test_output_written_to_file(planted, tmp_path, capsys):
    dest = tmp_path / "r.csv"
    code, out, _ = run(["analyze", "--input", planted, "--output", dest], capsys)
    assert code == 0 and out == ""
    expect, _ = analyze_report(load_container(planted), Reduction(), 4, FIXED32, "csv")
    assert dest.read_text() == expect


def test_sweep_report_helper_equals_cli(planted, capsys):
    _, out, _ = run(["sweep", "--input", planted, "--threshold", 0.1], capsys)
    red = Reduction(PruneSpec.at_threshold(0.1))
    assert out == sweep_report(load_container(planted), red, [1, 2, 4, 8, 16], FIXED32, "csv")


def test_module_entry_point(planted):
    proc = subprocess.run(
        [sys.executable, "-m", "wtc.cli", "analyze", "--input", str(planted)],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert proc.stdout.startswith("layer,layer_kind,")


def test_conv_layers_keep_kernel_width(tmp_path, capsys):
    p = tmp_path / "c.wtc"
    save_container([synth_conv((4, 3, 5, 5), 2, 0.5, seed=3), synth_planted(8, 8, 2, 2, 0.0, seed=1)], p)
    _, out, _ = run(["sweep", "--input", p, "--widths", "1,2"], capsys)
    widths = [(r["layer"], r["width"]) for r in _csv(out)]
    assert widths == [("conv", "5"), ("synth", "1"), ("synth", "2")]
