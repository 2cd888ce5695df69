import json
import subprocess
import sys
from pathlib import Path

import pytest

from morpheus_sim import cli
from morpheus_sim.metrics import FalseNegative

DATA = Path(__file__).parent / "data"
GOLDEN_TRACE = str(DATA / "golden_trace.txt")


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_run_matches_golden(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert run("run", "--config", "preset:morpheus_all", "--trace", GOLDEN_TRACE, "--out", out) == 0
    assert out.read_text() == (DATA / "golden_report.json").read_text()
    stdout = capsys.readouterr().out
    assert "{" not in stdout  # progress only, data goes to files


def test_run_from_config_file(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[gpu]\ncache_mode_sms = 2\n[predictor]\nmode = perfect\n")
    out = tmp_path / "r.json"
    assert run("run", "--config", cfg, "--trace", GOLDEN_TRACE, "--out", out) == 0
    assert json.loads(out.read_text())["predictor"]["mode"] == "perfect"


def test_too_many_cache_mode_sms(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[gpu]\ncache_mode_sms = 52\n")
    assert run("validate", "--config", cfg) == 2
    assert "75%" in capsys.readouterr().err
    assert run("run", "--config", cfg, "--trace", GOLDEN_TRACE, "--out", tmp_path / "x.json") == 2


@pytest.mark.parametrize(
    "text",
    [
        "[gpu]\nsm_count = 68\ncompute_sms = 40\ncache_mode_sms = 30\n",
        "[gpu]\nllc_bytes = 1000\n",
        "[extended]\nrf_warps = 40\n",
        "[nonsense]\nx = 1\n",
        "[gpu]\nbogus = 1\n",
        "[gpu]\ncache_mode_sms = lots\n",
        "[timing]\nconv_hit_ns = -1\n",
        "[predictor]\nwarp_status_rows = 4\n[gpu]\ncache_mode_sms = 20\n",
        "not an ini file",
    ],
)
def test_config_errors(tmp_path, text, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text(text)
    assert run("validate", "--config", cfg) == 2
    assert capsys.readouterr().err.startswith("config error")


def test_missing_and_bad_traces(tmp_path):
    assert run("run", "--config", "preset:baseline", "--trace", tmp_path / "nope.txt", "--out", tmp_path / "o") == 3
    bad = tmp_path / "bad.txt"
    bad.write_text("#morpheus-trace v1\n0 0 R 0x107E 8\n")
    assert run("run", "--config", "preset:baseline", "--trace", bad, "--out", tmp_path / "o") == 3
    assert run("run", "--config", "preset:nope", "--trace", GOLDEN_TRACE, "--out", tmp_path / "o") == 2


def test_invariant_violation_exit_code(tmp_path, monkeypatch):
    class Broken:
        def __init__(self, cfg):
            pass

        def run(self, meta, requests):
            raise FalseNegative("1 false negative prediction(s)")

    monkeypatch.setattr(cli, "Simulator", Broken)
    assert run("run", "--config", "preset:baseline", "--trace", GOLDEN_TRACE, "--out", tmp_path / "o") == 4


def test_compare_same_config(tmp_path):
    out = tmp_path / "c.json"
    assert run("compare", "--config-a", "preset:morpheus_basic", "--config-b", "preset:morpheus_basic",
               "--trace", GOLDEN_TRACE, "--out", out) == 0
    deltas = json.loads(out.read_text())["deltas"]
    assert all(v == 0 for v in deltas.values())


def test_compare_predictor_off_vs_bloom(tmp_path):
    off = tmp_path / "off.ini"
    off.write_text("[gpu]\ncompute_sms = 41\n[predictor]\nmode = off\n")
    bloom = tmp_path / "bloom.ini"
    bloom.write_text("[gpu]\ncompute_sms = 41\n[predictor]\nmode = bloom\n")
    trace = tmp_path / "t.txt"
    spec = tmp_path / "spec.ini"
    spec.write_text("[trace]\nkind = zipfian\nalpha = 0.9\nfootprint_bytes = 16MiB\nrequest_count = 20000\n"
                    "seed = 5\ninter_arrival_cycles = 10\n")
    assert run("gen-trace", "--spec", spec, "--out", trace) == 0
    out = tmp_path / "c.json"
    assert run("compare", "--config-a", off, "--config-b", bloom, "--trace", trace, "--out", out) == 0
    doc = json.loads(out.read_text())
    assert doc["variant"]["latency"]["overall"]["mean_ns"] < doc["baseline"]["latency"]["overall"]["mean_ns"]


def test_gen_trace_errors(tmp_path):
    spec = tmp_path / "s.ini"
    spec.write_text("[trace]\nkind = zipfian\nalpha = 0\n")
    assert run("gen-trace", "--spec", spec, "--out", tmp_path / "t") == 2
    spec.write_text("[trace]\nwhat = 1\n")
    assert run("gen-trace", "--spec", spec, "--out", tmp_path / "t") == 2
    spec.write_text("[other]\n")
    assert run("gen-trace", "--spec", spec, "--out", tmp_path / "t") == 2


def sweep(tmp_path, body, monkeypatch, threads="2"):
    monkeypatch.setenv("MORPHEUS_SIM_THREADS", threads)
    spec = tmp_path / "sweep.ini"
    spec.write_text(body)
    out = tmp_path / "out"
    code = run("sweep", "--spec", spec, "--trace", GOLDEN_TRACE, "--out-dir", out)
    return code, out


def test_sweep_cache_mode_sms(tmp_path, monkeypatch):
    code, out = sweep(tmp_path, "[sweep]\nparameter = cache_mode_sms\nvalues = 0, 17, 34, 51\n", monkeypatch)
    assert code == 0
    index = json.loads((out / "index.json").read_text())
    assert len(index["runs"]) == 4 and len(list(out.glob("gpu_cache_mode_sms=*.json"))) == 4
    totals = [r["ext_bytes_total"] for r in index["runs"]]
    assert totals == sorted(totals) and len(set(totals)) == 4 and totals[0] == 0


def test_sweep_rf_warps_peaks_at_eight(tmp_path, monkeypatch):
    body = ("[sweep]\nparameter = extended.rf_warps\nvalues = 1,8,16,32,48\n"
            "[gpu]\ncache_mode_sms = 4\n[extended]\nl1_warps = 0\n")
    code, out = sweep(tmp_path, body, monkeypatch, threads="1")
    assert code == 0
    runs = json.loads((out / "index.json").read_text())["runs"]
    rf = {int(r["value"]): r["ext_rf_bytes_per_sm"] for r in runs}
    assert max(rf, key=rf.get) == 8 and rf[8] == 239 * 1024


def test_sweep_errors(tmp_path, monkeypatch):
    assert sweep(tmp_path, "[sweep]\nparameter = cache_mode_sms\nvalues =\n", monkeypatch)[0] == 2
    assert sweep(tmp_path, "[sweep]\nparameter = flux\nvalues = 1\n", monkeypatch)[0] == 2
    assert sweep(tmp_path, "[sweep]\nvalues = 1\n", monkeypatch)[0] == 2
    assert sweep(tmp_path, "[sweep]\nparameter = cache_mode_sms\nvalues = 60\n", monkeypatch)[0] == 2
    assert sweep(tmp_path, "[sweep]\nparameter = cache_mode_sms\nvalues = 1\n", monkeypatch, threads="0")[0] == 2


def test_sweep_base_file(tmp_path, monkeypatch):
    (tmp_path / "base.ini").write_text("[gpu]\ncompute_sms = 47\n[extended]\ncompression = true\n")
    code, out = sweep(tmp_path, "[sweep]\nparameter = predictor.mode\nvalues = bloom, perfect\nbase = base.ini\n",
                      monkeypatch)
    assert code == 0
    rep = json.loads((out / "predictor_mode=perfect.json").read_text())
    assert rep["config"]["extended"]["compression"] == "true" and rep["capacity"]["cache_mode_sms"] == 21


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "morpheus_sim.cli", "validate", "--config", "preset:morpheus_rf48"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "51 cache-mode SMs" in proc.stdout
