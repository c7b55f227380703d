"""Command-line surfaces: iftool and ifrm-bench."""

import csv
import hashlib

import pytest

from ifrm.cli import bench_main, iftool_main, parse_sizes

COUNTER_SRC = """\
.ifunc counter
.import ctr_inc 0 0
.func get_max_size locals=0
    push 0
    ret
.func payload_init locals=0
    push 0
    ret
.func main locals=0
    call ctr_inc
    ret
"""


@pytest.fixture()
def source_file(tmp_path):
    path = tmp_path / "counter.ifasm"
    path.write_text(COUNTER_SRC)
    return path


def test_parse_sizes_span():
    assert parse_sizes("1..1048576") == tuple(1 << i for i in range(21))
    assert parse_sizes("8..8") == (8,)
    assert parse_sizes("3..5") == (4,)
    with pytest.raises(ValueError):
        parse_sizes("5..7")


def test_parse_sizes_list_and_single():
    assert parse_sizes("1,64,4096") == (1, 64, 4096)
    assert parse_sizes("512") == (512,)


def test_iftool_asm_dis_digest(source_file, tmp_path, capsys):
    out = tmp_path / "counter.ifn"
    assert iftool_main(["asm", str(source_file), "-o", str(out)]) == 0
    data = out.read_bytes()
    assert data.startswith(b"IFNC")

    assert iftool_main(["digest", str(out)]) == 0
    printed = capsys.readouterr().out.strip().splitlines()[-1]
    assert printed == hashlib.sha256(data).hexdigest()

    assert iftool_main(["dis", str(out)]) == 0
    text = capsys.readouterr().out
    assert ".ifunc counter" in text and "call ctr_inc" in text

    # Disassembly assembles back to the identical file.
    round_trip = tmp_path / "round.ifasm"
    round_trip.write_text(text)
    out2 = tmp_path / "round.ifn"
    assert iftool_main(["asm", str(round_trip), "-o", str(out2)]) == 0
    assert out2.read_bytes() == data


def test_iftool_asm_default_output(source_file):
    assert iftool_main(["asm", str(source_file)]) == 0
    assert source_file.with_suffix(".ifn").exists()


def test_iftool_asm_bad_source(tmp_path, capsys):
    bad = tmp_path / "bad.ifasm"
    bad.write_text(".ifunc x\n.func main locals=0\n    frobnicate\n")
    assert iftool_main(["asm", str(bad)]) == 1
    assert "error:" in capsys.readouterr().err


def test_iftool_digest_malformed(tmp_path, capsys):
    junk = tmp_path / "junk.ifn"
    junk.write_bytes(b"IFNC\x01trunc")
    assert iftool_main(["digest", str(junk)]) == 1
    assert "error:" in capsys.readouterr().err


def test_iftool_missing_file(capsys):
    assert iftool_main(["dis", "/no/such/file.ifn"]) == 1
    assert "error:" in capsys.readouterr().err


def test_bench_latency_loopback_csv(tmp_path, capsys):
    out = tmp_path / "lat.csv"
    code = bench_main(
        [
            "latency", "--loopback", "--sizes", "1,64", "--iters", "4", "--warmup", "1",
            "--out", str(out), "--no-figures", "--lib-dir", str(tmp_path / "lib"),
        ]
    )
    assert code == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 4  # two modes x two sizes
    modes = {r["mode"] for r in rows}
    assert modes == {"ifunc", "am"}


def test_bench_throughput_single_mode(tmp_path):
    out = tmp_path / "tp.csv"
    code = bench_main(
        [
            "throughput", "--loopback", "--mode", "am", "--sizes", "1", "--iters", "64",
            "--batch", "16", "--out", str(out), "--no-figures",
            "--lib-dir", str(tmp_path / "lib"),
        ]
    )
    assert code == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 1 and rows[0]["iterations"] == "64"


def test_bench_demo_xor(tmp_path, capsys):
    code = bench_main(["demo-xor", "--loopback", "--lib-dir", str(tmp_path / "lib")])
    assert code == 0
    assert "intact" in capsys.readouterr().out


def test_bench_report_renders_figures(tmp_path, capsys):
    out = tmp_path / "r.csv"
    assert (
        bench_main(
            [
                "latency", "--loopback", "--sizes", "1,16", "--iters", "3", "--warmup", "1",
                "--out", str(out), "--no-figures", "--lib-dir", str(tmp_path / "lib"),
            ]
        )
        == 0
    )
    assert bench_main(["report", "--csv", str(out)]) == 0
    for suffix in ("_latency.png", "_rate.png"):
        path = tmp_path / f"r{suffix}"
        assert path.exists()
        assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_bench_figures_alongside_csv_by_default(tmp_path):
    out = tmp_path / "auto.csv"
    code = bench_main(
        [
            "latency", "--loopback", "--mode", "ifunc", "--sizes", "4", "--iters", "3",
            "--warmup", "1", "--out", str(out), "--lib-dir", str(tmp_path / "lib"),
        ]
    )
    assert code == 0
    assert (tmp_path / "auto_latency.png").exists()
    assert (tmp_path / "auto_rate.png").exists()


def test_bench_unknown_address(tmp_path, capsys):
    code = bench_main(
        [
            "latency", "--connect", "127.0.0.1:1", "--sizes", "1", "--iters", "2",
            "--out", str(tmp_path / "x.csv"), "--no-figures",
            "--lib-dir", str(tmp_path / "lib"),
        ]
    )
    assert code == 1
