import csv
import io
import os
import signal
import subprocess
import sys
import time

import pytest

from tpmrng.bench import read_csv
from tpmrng.cli import EXIT_ABORTED, EXIT_IO, EXIT_OK, EXIT_QUALITY, EXIT_USAGE, main
from tpmrng.devices import BiasedStream, UniformStream


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_bench_atmel_full_sweep(tmp_path, capsys):
    out = tmp_path / "atmel.csv"
    code, stdout, _ = run(capsys, "bench", "--backend", "atmel", "--out", str(out))
    assert code == EXIT_OK
    with open(out) as fh:
        records = read_csv(fh)
    assert len(records) == 2048
    assert all(r.returned_size == 768 for r in records if r.request_size >= 768)
    assert "peak throughput" in stdout and "size at peak: 538" in stdout


def test_bench_intel_window_shows_chunk_jump(tmp_path, capsys):
    out = tmp_path / "intel.csv"
    code, _, _ = run(capsys, "bench", "--backend", "intel", "--min", "60", "--max", "70", "--out", str(out))
    assert code == EXIT_OK
    with open(out) as fh:
        rows = {r.request_size: r for r in read_csv(fh)}
    assert sorted(rows) == list(range(60, 71))
    steps = {s: rows[s + 1].mean_duration - rows[s].mean_duration for s in range(60, 70)}
    assert steps[64] == 1500.0 + 25000.0
    assert all(steps[s] == 1500.0 for s in steps if s != 64)


def test_bench_unknown_backend(capsys):
    code, _, err = run(capsys, "bench", "--backend", "nosuch")
    assert code == EXIT_USAGE
    for name in ("infineon", "intel", "atmel", "sinosun", "os", "file:"):
        assert name in err


def test_bench_bad_bounds(capsys):
    code, _, err = run(capsys, "bench", "--backend", "intel", "--min", "10", "--max", "5")
    assert code == EXIT_USAGE


def test_bench_csv_to_stdout(capsys):
    code, out, err = run(capsys, "bench", "--backend", "sinosun", "--min", "1", "--max", "3", "--reps", "1")
    assert code == EXIT_OK
    assert out.splitlines()[0] == "request_size,returned_size,mean_duration_us,throughput_bps"
    assert len(out.splitlines()) == 4
    assert "peak throughput" in err


def test_bench_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        run(capsys, "bench", "--backend", "infineon", "--seed", "5", "--max", "300", "--out", str(path))
    assert a.read_bytes() == b.read_bytes()


def test_bench_file_backend_exhaustion(tmp_path, capsys):
    src = tmp_path / "src.bin"
    src.write_bytes(bytes(100))
    out = tmp_path / "o.csv"
    code, _, err = run(capsys, "bench", "--backend", f"file:{src}", "--max", "50", "--reps", "1", "--out", str(out))
    assert code == EXIT_IO
    assert "sweep stopped at request size 14" in err
    assert len(out.read_text().splitlines()) == 1 + 13


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bench", "--reps", "many"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == EXIT_USAGE


def test_collect_sinosun_deterministic(tmp_path, capsys):
    paths = [tmp_path / "s1.bin", tmp_path / "s2.bin"]
    for p in paths:
        code, out, _ = run(capsys, "collect", "--backend", "sinosun", "--seed", "42", "--total", "1048576",
                           "--request-size", "2048", "--out", str(p), "--quiet")
        assert code == EXIT_OK
        assert "status: completed" in out
    assert paths[0].stat().st_size == 1048576
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert paths[0].read_bytes() == UniformStream(42).take(1048576)


def test_collect_infineon_truncation_warning(tmp_path, capsys):
    out = tmp_path / "i.bin"
    code, stdout, err = run(capsys, "collect", "--backend", "infineon", "--total", "5000",
                            "--request-size", "4096", "--out", str(out), "--quiet")
    assert code == EXIT_OK
    assert "at most 1259 bytes" in err
    assert "calls: 4" in stdout and "truncated_calls: 4" in stdout
    assert out.read_bytes() == UniformStream(0).take(5000)


def test_collect_progress_lines(tmp_path, capsys):
    code, _, err = run(capsys, "collect", "--backend", "intel", "--total", "10000", "--request-size", "100",
                       "--progress-every", "25", "--out", str(tmp_path / "p.bin"))
    assert code == EXIT_OK
    lines = [l for l in err.splitlines() if l.startswith("[collect]")]
    assert len(lines) == 4
    assert "average speed" in lines[0]


def test_collect_requires_total_and_out(tmp_path, capsys):
    assert run(capsys, "collect", "--backend", "intel", "--out", str(tmp_path / "x"))[0] == EXIT_USAGE
    assert run(capsys, "collect", "--backend", "intel", "--total", "10")[0] == EXIT_USAGE


def test_collect_unwritable_output(tmp_path, capsys):
    code, _, err = run(capsys, "collect", "--backend", "intel", "--total", "10",
                       "--out", str(tmp_path / "no" / "such" / "dir.bin"))
    assert code == EXIT_IO


def test_collect_bias_needs_simulator(tmp_path, capsys):
    code, _, _ = run(capsys, "collect", "--backend", "os", "--bias", "0.1", "--total", "10",
                     "--out", str(tmp_path / "x.bin"))
    assert code == EXIT_USAGE
    assert not (tmp_path / "x.bin").exists()


def test_collect_interrupt_subprocess(tmp_path):
    out = tmp_path / "partial.bin"
    proc = subprocess.Popen(
        [sys.executable, "-m", "tpmrng", "collect", "--backend", "sinosun", "--total", str(10**12),
         "--out", str(out), "--quiet"],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
    )
    deadline = time.time() + 30
    while (not out.exists() or out.stat().st_size == 0) and time.time() < deadline:
        time.sleep(0.02)
    proc.send_signal(signal.SIGINT)
    stdout, _ = proc.communicate(timeout=30)
    assert proc.returncode == EXIT_ABORTED
    assert "status: aborted" in stdout
    written = int(next(l for l in stdout.splitlines() if l.startswith("bytes_written")).split(":")[1])
    assert 0 < written < 10**12
    assert out.stat().st_size == written


def test_analyze_all_zero(tmp_path, capsys):
    path = tmp_path / "z.bin"
    path.write_bytes(bytes(2**20))
    code, out, _ = run(capsys, "analyze", str(path))
    assert code == EXIT_QUALITY
    entropy_line = next(l for l in out.splitlines() if l.strip().startswith("entropy"))
    assert "0.00" in entropy_line
    chi_line = next(l for l in out.splitlines() if l.strip().startswith("chi square"))
    assert chi_line.rstrip().endswith("fail")


def test_analyze_good_data_passes(tmp_path, capsys):
    path = tmp_path / "g.bin"
    path.write_bytes(UniformStream(0).take(10 * 2**20))
    code, out, _ = run(capsys, "analyze", str(path))
    assert code == EXIT_OK
    assert out.count("pass") == 10 and "fail" not in out


def test_analyze_biased_data_fails(tmp_path, capsys):
    path = tmp_path / "b.bin"
    path.write_bytes(BiasedStream(0, 0.1).take(2**20))
    assert run(capsys, "analyze", str(path))[0] == EXIT_QUALITY


def test_analyze_pieces_and_csv(tmp_path, capsys):
    path = tmp_path / "g.bin"
    path.write_bytes(UniformStream(1).take(105_000))
    code, out, _ = run(capsys, "analyze", str(path), "--pieces", "10")
    assert out.count("== ") == 11
    code, out, _ = run(capsys, "analyze", str(path), "--pieces", "10", "--format", "csv")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert list(rows[0]) == ["piece", "level", "metric", "value", "label"]
    assert len(rows) == 11 * 2 * 7
    assert {r["piece"] for r in rows} == {"all"} | {str(i) for i in range(1, 11)}
    assert {r["level"] for r in rows} == {"byte", "bit"}
    assert {r["label"] for r in rows} <= {"pass", "suspect", "fail"}


def test_analyze_csv_undefined_serial(tmp_path, capsys):
    path = tmp_path / "c.bin"
    path.write_bytes(b"\x42" * 600)
    _, out, _ = run(capsys, "analyze", str(path), "--format", "csv")
    row = next(r for r in csv.DictReader(io.StringIO(out)) if r["metric"] == "serial_correlation")
    assert row["value"] == "undefined" and row["label"] == "fail"


def test_analyze_missing_and_short(tmp_path, capsys):
    assert run(capsys, "analyze", str(tmp_path / "missing.bin"))[0] == EXIT_IO
    short = tmp_path / "s.bin"
    short.write_bytes(bytes(5))
    assert run(capsys, "analyze", str(short))[0] == EXIT_USAGE


def test_simulate_intel(capsys):
    code, out, _ = run(capsys, "simulate", "00C1 0000000E 00000046 00000004", "--backend", "intel")
    assert code == EXIT_OK
    assert "return_code: 0" in out
    assert "random_bytes_size: 4" in out
    payload = next(l for l in out.splitlines() if l.startswith("random_bytes:")).split(":")[1].strip()
    assert len(bytes.fromhex(payload)) == 4


def test_simulate_truncated_buffer(capsys):
    code, out, _ = run(capsys, "simulate", "00C1000000", "--backend", "intel")
    assert code == EXIT_OK
    rc = int(next(l for l in out.splitlines() if l.startswith("return_code")).split(":")[1])
    assert rc != 0
    assert "random_bytes_size: 0" in out


def test_simulate_atmel_truncation(capsys):
    code, out, _ = run(capsys, "simulate", "00C10000000E0000004600000800", "--backend", "atmel")
    assert "random_bytes_size: 768" in out


def test_simulate_invalid_hex(capsys):
    assert run(capsys, "simulate", "zz")[0] == EXIT_USAGE


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[run]\nbackend = atmel\nmax = 20\nreps = 1\n\n[atmel]\nmax_request = 10\n")
    out = tmp_path / "c.csv"
    code, _, _ = run(capsys, "bench", "--config", str(cfg), "--out", str(out))
    assert code == EXIT_OK
    with open(out) as fh:
        records = read_csv(fh)
    assert len(records) == 20
    assert records[-1].returned_size == 10
    # the flag wins over the file
    code, _, _ = run(capsys, "bench", "--config", str(cfg), "--max", "5", "--out", str(out))
    with open(out) as fh:
        assert len(read_csv(fh)) == 5


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[run]\ncolour = red\n")
    assert run(capsys, "bench", "--config", str(cfg))[0] == EXIT_USAGE


def test_profiles_listing(capsys):
    code, out, _ = run(capsys, "profiles")
    assert code == EXIT_OK
    assert "max_request=1259" in out and "max_request=768" in out


def test_only_named_paths_written(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    run(capsys, "bench", "--backend", "intel", "--max", "10", "--out", "x.csv")
    run(capsys, "collect", "--backend", "intel", "--total", "100", "--out", "x.bin", "--quiet")
    run(capsys, "analyze", "x.bin")
    run(capsys, "simulate", "00C10000000E0000004600000004")
    assert sorted(os.listdir(tmp_path)) == ["x.bin", "x.csv"]
