import json

import numpy as np
import pytest

from darkprobe.cli import main
from darkprobe.ingest import write_probe_log
from darkprobe.synth import SyntheticSpec, gen_markov_prober, gen_zipf_traffic, merge_streams

HEADER = "timestamp,src_ip,dst_ip,src_port,dst_port,flags\n"


@pytest.fixture
def packet_log(tmp_path):
    zipf = gen_zipf_traffic(
        SyntheticSpec("zipf_traffic", seed=1, ports=[23, 22, 80, 443, 2323], n_events=20_000,
                      n_sources=20, span=10 * 86400)
    )
    bot = gen_markov_prober(
        SyntheticSpec("markov_prober", seed=2, ports=[22, 80], transition=[[0.2, 0.8], [0.9, 0.1]],
                      n_events=3000, mean_gap=200.0, start=zipf.timestamp[0])
    )
    path = tmp_path / "log.csv"
    write_probe_log(merge_streams([zipf, bot]), path)
    return path


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_stats(tmp_path, packet_log):
    out = tmp_path / "out"
    assert main(["stats", str(packet_log), "--out", str(out)]) == 0
    ranking = (out / "stats" / "port_ranking.csv").read_text().splitlines()
    assert ranking[0] == "port,count,share"
    assert ranking[1].startswith("23,")
    man = manifest(out)
    assert man["complete"] and man["stages"] == {"stats": "ok"}
    assert "stats/port_ranking.csv" in man["files"]


def test_empty_input_warns(tmp_path):
    log = tmp_path / "empty.csv"
    log.write_text(HEADER)
    out = tmp_path / "out"
    assert main(["stats", str(log), "--out", str(out)]) == 0
    assert "no events" in manifest(out)["warnings"]
    assert (out / "stats" / "port_ranking.csv").read_text() == "port,count,share\n"


def test_usage_errors(tmp_path, capsys):
    assert main(["stats", "--out", str(tmp_path / "o")]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["forecast", "--series", "x.csv"])
    assert exc.value.code == 1


def test_data_error_exit(tmp_path, capsys):
    log = tmp_path / "bad.csv"
    log.write_text(HEADER + "1.0,10.0.0.1,10.0.0.2,1,99999,2\n")
    assert main(["ingest", str(log)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_ingest_summary(tmp_path, packet_log, capsys):
    assert main(["ingest", str(packet_log)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["probe_events"] == 23_000


def test_graph(tmp_path, packet_log):
    out = tmp_path / "g"
    assert main(["graph", str(packet_log), "--out", str(out), "--ports-top", "5"]) == 0
    text = (out / "graphs" / "matrix_all.csv").read_text().splitlines()
    assert text[0].startswith("port,")
    probs = np.array([[float(v) for v in line.split(",")[1:]] for line in text[1:]])
    nz = probs.sum(axis=1) > 0
    assert np.allclose(probs.sum(axis=1)[nz], 1.0)
    assert manifest(out)["stages"]["graph"] == "ok"


def test_series_then_forecast(tmp_path, packet_log, capsys):
    out = tmp_path / "s"
    assert main(["series", str(packet_log), "--out", str(out), "--resolution", "1h", "--ports-top", "3"]) == 0
    series_csv = out / "series" / "series_1h.csv"
    header = series_csv.read_text().splitlines()[0]
    assert header == "bucket_start,port_23,port_22,port_80"
    fout = tmp_path / "f"
    code = main(["forecast", "--series", str(series_csv), "--target-port", "23", "--p", "2",
                 "--window", "40", "--out", str(fout)])
    assert code == 0
    report = json.loads((fout / "forecast_23_ar.json").read_text())
    assert report["p"] == 2 and report["N"] == 40
    pred = (fout / "predictions_23_ar.csv").read_text().splitlines()
    assert pred[0] == "bucket_start,y_true,y_pred"
    assert len(pred) - 1 == report["n_windows"]
    code = main(["forecast", "--series", str(series_csv), "--target-port", "22", "--model", "var",
                 "--grid-search", "--p-max", "1", "--select-features", "--out", str(fout)])
    assert code == 0
    assert json.loads((fout / "forecast_22_var.json").read_text())["kind"] == "var"
    assert main(["forecast", "--series", str(series_csv), "--target-port", "9", "--p", "1",
                 "--window", "10", "--out", str(fout)]) == 1


def test_synth_command(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"specs": [
        {"kind": "zipf_traffic", "ports": [23, 80], "n_events": 100},
        {"kind": "ar", "coefficients": [1.0, 0.5], "length": 50},
    ]}))
    out = tmp_path / "syn"
    assert main(["synth", str(spec), "--out", str(out), "--seed", "7"]) == 0
    assert (out / "packets.csv").read_text().startswith(HEADER)
    assert len((out / "series_0.csv").read_text().splitlines()) == 51
    assert main(["ingest", str(out / "packets.csv")]) == 0


def test_run_from_config(tmp_path):
    cfg = tmp_path / "run.toml"
    out = tmp_path / "run"
    cfg.write_text(
        f'out = "{out}"\nresolutions = ["6h", "24h"]\nseries_ports = 3\nforecast_ports = 1\n'
        "p_max = 1\nk_max = 3\nmin_series_length = 30\n"
        '[[synth]]\nkind = "zipf_traffic"\nports = [23, 22, 80]\nn_events = 5000\nspan = 1728000.0\n'
    )
    assert main(["run", "--config", str(cfg)]) == 0
    man = manifest(out)
    assert man["complete"], man
    assert set(man["stages"]) == {"stats", "graph", "series", "forecast"}
    assert "forecast/summary_table.csv" in man["files"]


def test_parallel_run_matches_serial(tmp_path):
    body = ('resolutions = ["6h"]\nseries_ports = 3\nforecast_ports = 3\np_max = 1\nk_max = 3\n'
            '[[synth]]\nkind = "zipf_traffic"\nports = [23, 22, 80]\nn_events = 5000\nspan = 1728000.0\n')
    outs = []
    for name, jobs in (("serial", "1"), ("pool", "2")):
        cfg = tmp_path / f"{name}.toml"
        cfg.write_text(f'out = "{tmp_path / name}"\n' + body)
        assert main(["run", "--config", str(cfg), "--jobs", jobs]) == 0
        outs.append((tmp_path / name / "manifest.json").read_bytes())
    assert outs[0] == outs[1]
