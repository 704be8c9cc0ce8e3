"""Command line front end: ``darkprobe <subcommand> ...``.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 numeric degeneracy in a
required stage.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analytics, forecast, graphs, ingest, synth, timeseries
from .ingest import ParseError, ProbeBatch

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger("darkprobe")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class NumericDegeneracy(Exception):
    pass


@dataclass
class RunConfig:
    """Settings of a full pipeline run."""

    inputs: list[str] = field(default_factory=list)
    geodb: str | None = None
    out: str = "out"
    format: str = "csv"
    seed: int = 0
    jobs: int = 1
    stages: list[str] = field(default_factory=lambda: ["stats", "graph", "series", "forecast"])
    syn_ack_policy: str = "syn-only"
    top_k: int = 30
    prober_threshold: float = analytics.DEFAULT_PROBER_THRESHOLD
    rate_span: str = "capture"
    matrix_ports: int = 30
    normalize: str = "row"
    drop_self_loops: bool = False
    graph_format: str = "dot"
    max_prober_graphs: int = 50
    resolutions: list[str] = field(default_factory=lambda: list(timeseries.RESOLUTIONS))
    series_ports: int = 550
    forecast_ports: int = 10
    p_min: int = forecast.P_RANGE[0]
    p_max: int = forecast.P_RANGE[1]
    n_step: int = forecast.N_STEP
    k_max: int = forecast.DEFAULT_K_MAX
    reselect_every: int | None = None
    stride: int = 1
    min_series_length: int = 40
    synth: list[dict] = field(default_factory=list)

    @classmethod
    def from_toml(cls, path: str | Path) -> "RunConfig":
        data = tomllib.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


class Bundle:
    """Output directory plus a manifest of every file written."""

    def __init__(self, root: Path):
        self.root = root
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, str] = {}
        self.stages: dict[str, str] = {}
        self.warnings: list[str] = []

    def write(self, name: str, text: str) -> Path:
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode()
        path.write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()
        return path

    def warn(self, msg: str) -> None:
        logger.warning(msg)
        self.warnings.append(msg)

    def finish(self) -> Path:
        complete = all(s == "ok" for s in self.stages.values())
        manifest = {
            "complete": complete,
            "stages": self.stages,
            "warnings": self.warnings,
            "files": dict(sorted(self.files.items())),
        }
        path = self.root / "manifest.json"
        path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        return path


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def _stream(cfg: RunConfig):
    for path in cfg.inputs:
        yield from ingest.read_probe_batches(path, cfg.syn_ack_policy)


def _ranking_text(r: analytics.Ranking, fmt: str) -> str:
    return r.to_json() + "\n" if fmt == "json" else r.to_csv()


def stage_stats(cfg: RunConfig, bundle: Bundle, stats: analytics.TrafficStats) -> None:
    ext = "json" if cfg.format == "json" else "csv"
    ranking = analytics.traffic_by_port(stats)
    bundle.write(f"stats/port_ranking.{ext}", _ranking_text(ranking.top(cfg.top_k), cfg.format))
    curve = analytics.cumulative_coverage(ranking)
    bundle.write("stats/coverage_curve.csv", curve.to_csv())
    bundle.write(
        "stats/coverage_thresholds.json",
        json.dumps({str(k): v for k, v in curve.thresholds.items()}, sort_keys=True) + "\n",
    )
    probers = analytics.top_probers(stats, cfg.prober_threshold, cfg.rate_span)
    bundle.write("stats/top_probers.csv", analytics.probers_to_csv(probers))
    prober_ports = analytics.port_profile_of(probers)
    bundle.write(f"stats/top_prober_ports.{ext}", _ranking_text(prober_ports.top(cfg.top_k), cfg.format))
    if cfg.geodb:
        db = ingest.GeoDb.load(cfg.geodb)
        countries = analytics.traffic_by_country(stats, db)
        bundle.write(f"stats/country_ranking.{ext}", _ranking_text(countries.top(cfg.top_k), cfg.format))


def stage_graph(
    cfg: RunConfig,
    bundle: Bundle,
    events: ProbeBatch,
    stats: analytics.TrafficStats,
    per_prober: bool = True,
    matrix: bool = True,
    scopes: Sequence[str] = ("all", "top"),
) -> None:
    probers = analytics.top_probers(stats, cfg.prober_threshold, cfg.rate_span)
    top_ips = [p.src_ip for p in probers]
    counts = graphs.ports_per_prober(stats)
    bundle.write("graphs/ports_targeted_cdf.csv", graphs.ports_targeted_cdf(counts).to_csv("n_ports", "fraction_of_probers"))
    if per_prober:
        chosen = top_ips[: cfg.max_prober_graphs]
        for g in graphs.iter_prober_graphs(events, chosen, cfg.drop_self_loops):
            fmt = "json" if cfg.graph_format == "json" else "dot"
            bundle.write(f"graphs/probers/{g.src_ip}.{fmt}", graphs.export_graph(g, fmt))
    if matrix:
        ports = analytics.traffic_by_port(stats).keys()[: cfg.matrix_ports]
        if not ports:
            bundle.warn("no events: transition matrices skipped")
            return
        for scope in scopes:
            scope_ips = None if scope == "all" else top_ips
            if scope_ips is not None and not scope_ips:
                bundle.warn("no top probers: top-scope matrix is all zero")
            tm = graphs.aggregate_transition_matrix(
                events, ports, scope_ips, cfg.normalize, cfg.drop_self_loops
            )
            if cfg.format == "json":
                bundle.write(f"graphs/matrix_{scope}.json", tm.to_json() + "\n")
            else:
                bundle.write(f"graphs/matrix_{scope}.csv", tm.to_csv())


def build_series(cfg: RunConfig, stats: analytics.TrafficStats) -> dict[int, timeseries.RateMatrix]:
    ports = analytics.traffic_by_port(stats).keys()[: cfg.series_ports]
    if not ports:
        return {}
    res = sorted(timeseries.parse_resolution(r) for r in cfg.resolutions)
    finest = res[0]
    for r in res:
        if r % finest:
            raise UsageError(f"resolution {r}s is not a multiple of {finest}s")
    acc = timeseries.SeriesAccumulator(finest, ports)
    for batch in _stream(cfg):
        acc.add(batch)
    base = acc.finalize()
    return {r: timeseries.resample(base, r) for r in res}


def stage_series(cfg: RunConfig, bundle: Bundle, series: dict[int, timeseries.RateMatrix]) -> None:
    for r, m in series.items():
        bundle.write(f"series/series_{timeseries.resolution_name(r)}.csv", m.to_csv())


def _evaluate(args):
    m, j, cfg = args
    try:
        return forecast.evaluate_port(
            m, j, (cfg.p_min, cfg.p_max), cfg.n_step, cfg.k_max, cfg.reselect_every, cfg.stride
        ), None
    except forecast.ForecastError as exc:
        return None, f"port {m.ports[j]} @ {timeseries.resolution_name(m.resolution)}: {exc}"


def stage_forecast(cfg: RunConfig, bundle: Bundle, series: dict[int, timeseries.RateMatrix]) -> None:
    tasks = []
    for r, m in series.items():
        m = m.drop_partial()
        if len(m) < cfg.min_series_length:
            bundle.warn(f"{timeseries.resolution_name(r)} series has {len(m)} buckets; forecasting skipped")
            continue
        for j in range(min(cfg.forecast_ports, len(m.ports))):
            tasks.append((m, j, cfg))
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            results = list(pool.map(_evaluate, tasks))
    else:
        results = [_evaluate(t) for t in tasks]
    rows = []
    for row, err in results:
        if err:
            bundle.warn(err)
        else:
            rows.append(row)
    if tasks and not rows:
        raise NumericDegeneracy("no port could be forecast")
    bundle.write("forecast/summary_table.csv", forecast.summary_table_csv(rows))
    lines = ["port,resolution,r2_ar,r2_var,r2_gain"]
    for row in rows:
        lines.append(
            f"{row.port},{timeseries.resolution_name(row.resolution)},{row.r2_ar!r},{row.r2_var!r},"
            f"{row.r2_var - row.r2_ar!r}"
        )
    bundle.write("forecast/ar_vs_var.csv", "\n".join(lines) + "\n")
    for row in rows:
        tag = f"{row.port}_{timeseries.resolution_name(row.resolution)}"
        bundle.write(f"forecast/reports/{tag}_ar.json", row.ar.to_json() + "\n")
        bundle.write(f"forecast/reports/{tag}_var.json", row.var.to_json() + "\n")


def _synth_inputs(cfg: RunConfig, bundle: Bundle) -> None:
    batches = []
    for k, item in enumerate(cfg.synth):
        item = dict(item)
        item.setdefault("seed", cfg.seed + k)
        spec = synth.SyntheticSpec.from_dict(item)
        if spec.kind not in ("zipf_traffic", "markov_prober"):
            raise UsageError("run.synth only accepts packet-producing kinds")
        batches.append(synth.generate(spec))
    path = bundle.root / "input" / "synthetic_packets.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    ingest.write_probe_log(synth.merge_streams(batches), path)
    bundle.files["input/synthetic_packets.csv"] = hashlib.sha256(path.read_bytes()).hexdigest()
    cfg.inputs = list(cfg.inputs) + [str(path)]


def run_pipeline(cfg: RunConfig) -> int:
    """Run every enabled stage, writing outputs and ``manifest.json`` under ``cfg.out``."""
    bundle = Bundle(Path(cfg.out))
    unknown = set(cfg.stages) - {"stats", "graph", "series", "forecast"}
    if unknown:
        raise UsageError(f"unknown stages {sorted(unknown)}")
    code = EXIT_OK
    try:
        if cfg.synth:
            _synth_inputs(cfg, bundle)
        if not cfg.inputs:
            raise UsageError("no input files")
        stats = analytics.TrafficStats()
        for batch in _stream(cfg):
            stats.add(batch)
        if stats.n_events == 0:
            bundle.warn("no events")
        stage_order = [s for s in ("stats", "graph", "series", "forecast") if s in cfg.stages]
        series = None
        for stage in stage_order:
            bundle.stages[stage] = "running"
            try:
                if stage == "stats":
                    stage_stats(cfg, bundle, stats)
                elif stage == "graph":
                    events = ProbeBatch.concat(_stream(cfg))
                    stage_graph(cfg, bundle, events, stats)
                else:
                    if series is None:
                        series = build_series(cfg, stats)
                    if stage == "series":
                        stage_series(cfg, bundle, series)
                    else:
                        stage_forecast(cfg, bundle, series)
                bundle.stages[stage] = "ok"
            except NumericDegeneracy as exc:
                bundle.stages[stage] = f"failed: {exc}"
                logger.error("stage %s: %s", stage, exc)
                code = EXIT_NUMERIC
                break
            except (ParseError, forecast.ForecastError, ValueError, OSError) as exc:
                bundle.stages[stage] = f"failed: {exc}"
                logger.error("stage %s: %s", stage, exc)
                code = EXIT_DATA
                break
    finally:
        bundle.finish()
    return code


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _global_options() -> argparse.ArgumentParser:
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", help="TOML file with RunConfig keys")
    g.add_argument("--out", help="output directory")
    g.add_argument("--format", choices=["csv", "json", "dot"], help="output format")
    g.add_argument("--jobs", type=int, help="worker cap")
    g.add_argument("--seed", type=int, help="seed for synthetic data")
    g.add_argument("-v", "--verbose", action="store_true")
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_options()
    parser = _Parser(prog="darkprobe", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def inputs(p):
        p.add_argument("inputs", nargs="*", help="packet-header CSV logs")
        p.add_argument("--syn-ack-policy", choices=[x.value for x in ingest.SynPolicy])

    p = sub.add_parser("ingest", parents=[common], help="validate logs and write probe events")
    inputs(p)

    p = sub.add_parser("stats", parents=[common], help="port, prober and country rankings")
    inputs(p)
    p.add_argument("--geodb")
    p.add_argument("--top-k", type=int)
    p.add_argument("--threshold", type=float, dest="prober_threshold")
    p.add_argument("--rate-span", choices=["capture", "active"])

    p = sub.add_parser("graph", parents=[common], help="transition graphs and matrices")
    inputs(p)
    p.add_argument("--per-prober", action="store_true")
    p.add_argument("--matrix", action="store_true")
    p.add_argument("--scope", choices=["all", "top"], action="append")
    p.add_argument("--ports-top", type=int, dest="matrix_ports")
    p.add_argument("--normalize", choices=["row", "global"])
    p.add_argument("--drop-self-loops", action="store_true", default=None)
    p.add_argument("--threshold", type=float, dest="prober_threshold")
    p.add_argument("--rate-span", choices=["capture", "active"])

    p = sub.add_parser("series", parents=[common], help="per-port rate series")
    inputs(p)
    p.add_argument("--resolution", action="append", dest="resolutions")
    p.add_argument("--ports-top", type=int, dest="series_ports")

    p = sub.add_parser("forecast", parents=[common], help="rolling AR/VAR forecasts")
    p.add_argument("--series", required=True)
    p.add_argument("--target-port", type=int, required=True)
    p.add_argument("--model", choices=["ar", "var"], default="ar")
    p.add_argument("--p", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--grid-search", action="store_true")
    p.add_argument("--p-max", type=int, default=forecast.P_RANGE[1])
    p.add_argument("--resolution")
    p.add_argument("--select-features", action="store_true")
    p.add_argument("--k-max", type=int, default=forecast.DEFAULT_K_MAX)
    p.add_argument("--reselect-every", type=int)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--clamp", action="store_true", help="floor predictions at 0 in the CSV")

    p = sub.add_parser("synth", parents=[common], help="generate synthetic packet logs or series")
    p.add_argument("spec", help="JSON or TOML generator spec")

    sub.add_parser("run", parents=[common], help="full pipeline from --config")
    return parser


def _config(args) -> RunConfig:
    cfg = RunConfig.from_toml(args.config) if args.config else RunConfig()
    for name in (f.name for f in fields(RunConfig)):
        value = getattr(args, name, None)
        if value is None or (name == "inputs" and not value):
            continue
        setattr(cfg, name, value)
    return cfg


def _cmd_ingest(cfg: RunConfig, out: Path | None) -> int:
    if not cfg.inputs:
        raise UsageError("no input files")
    events = ProbeBatch.concat(_stream(cfg))
    n_src = len(np.unique(events.src_ip))
    summary = {
        "probe_events": len(events),
        "sources": n_src,
        "first": float(events.timestamp.min()) if len(events) else None,
        "last": float(events.timestamp.max()) if len(events) else None,
    }
    if out is not None:
        bundle = Bundle(out)
        lines = ["timestamp,src_ip,dst_port"] + [
            f"{ev.timestamp!r},{ev.src_ip},{ev.dst_port}" for ev in events.events()
        ]
        bundle.write("probe_events.csv", "\n".join(lines) + "\n")
        bundle.stages["ingest"] = "ok"
        bundle.finish()
    print(json.dumps(summary))
    return EXIT_OK


def _cmd_forecast(args, cfg: RunConfig, out: Path) -> int:
    m = timeseries.read_series_csv(args.series, args.resolution)
    if args.target_port not in m.ports:
        raise UsageError(f"port {args.target_port} not in {args.series}")
    target = m.column(args.target_port)
    span = forecast.validation_span(len(m))
    if args.grid_search:
        grid = forecast.grid_search(m, target, "ar", p_range=(1, args.p_max), stride=args.stride, jobs=cfg.jobs)
        params = grid.params
        report = grid.report
    else:
        if args.p is None or args.window is None:
            raise UsageError("--p and --window are required without --grid-search")
        params = forecast.DesignParams(args.p, args.window)
        report = forecast.rolling_forecast(m, target, "ar", params, span=span, stride=args.stride, clip_window=True)
    if args.model == "var":
        if args.select_features:
            report = forecast.var_forecast(m, target, params, span, args.k_max, args.reselect_every, args.stride)
        else:
            report = forecast.rolling_forecast(m, target, "var", params, span=span, stride=args.stride, clip_window=True)
    bundle = Bundle(out)
    tag = f"{args.target_port}_{args.model}"
    bundle.write(f"forecast_{tag}.json", report.to_json() + "\n")
    bundle.write(f"predictions_{tag}.csv", report.predictions_csv(m.bucket_starts, args.clamp))
    bundle.stages["forecast"] = "ok"
    bundle.finish()
    print(report.to_json())
    if report.n_degenerate == report.n_windows or not np.isfinite(report.r2):
        return EXIT_NUMERIC
    return EXIT_OK


def _cmd_synth(args, cfg: RunConfig, out: Path) -> int:
    specs = synth.load_specs(args.spec)
    if args.seed is not None:
        for k, s in enumerate(specs):
            s.seed = args.seed + k
    bundle = Bundle(out)
    packet = [s for s in specs if s.kind in ("zipf_traffic", "markov_prober")]
    if packet:
        merged = synth.merge_streams([synth.generate(s) for s in packet])
        path = out / "packets.csv"
        ingest.write_probe_log(merged, path)
        bundle.files["packets.csv"] = hashlib.sha256(path.read_bytes()).hexdigest()
    for k, s in enumerate(x for x in specs if x.kind in ("ar", "var")):
        m = synth.as_rate_matrix(synth.generate(s))
        bundle.write(f"series_{k}.csv", m.to_csv())
    bundle.stages["synth"] = "ok"
    bundle.finish()
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _config(args)
        out = Path(args.out) if args.out else None
        if args.command == "run":
            return run_pipeline(cfg)
        if args.command == "ingest":
            return _cmd_ingest(cfg, out)
        if args.command == "forecast":
            return _cmd_forecast(args, cfg, out or Path(cfg.out))
        if args.command == "synth":
            return _cmd_synth(args, cfg, out or Path(cfg.out))

        stages = {"stats": ["stats"], "graph": ["graph"], "series": ["series"]}[args.command]
        cfg.stages = stages
        if args.command == "graph":
            return _cmd_graph(args, cfg)
        return run_pipeline(cfg)
    except UsageError as exc:
        print(f"darkprobe: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, forecast.ForecastError, FileNotFoundError, ValueError) as exc:
        print(f"darkprobe: {exc}", file=sys.stderr)
        return EXIT_DATA


def _cmd_graph(args, cfg: RunConfig) -> int:
    if not cfg.inputs:
        raise UsageError("no input files")
    if args.format in ("dot", "json"):
        cfg.graph_format = args.format
    per_prober = args.per_prober or not args.matrix
    matrix = args.matrix or not args.per_prober
    bundle = Bundle(Path(cfg.out))
    stats = analytics.TrafficStats()
    for batch in _stream(cfg):
        stats.add(batch)
    if stats.n_events == 0:
        bundle.warn("no events")
    events = ProbeBatch.concat(_stream(cfg))
    stage_graph(cfg, bundle, events, stats, per_prober, matrix, args.scope or ["all", "top"])
    bundle.stages["graph"] = "ok"
    bundle.finish()
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
