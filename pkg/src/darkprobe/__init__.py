"""Darknet traffic analytics and probing-rate forecasting.

Modules:

``ingest``      packet-header CSV parsing, TCP SYN filtering, geolocation
``analytics``   port / prober / country rankings and coverage curves
``graphs``      per-prober port-transition graphs and transition matrices
``timeseries``  per-port probing-rate series at fixed resolutions
``forecast``    rolling-window AR / VAR fitting, grid search, feature selection
``synth``       seeded synthetic corpora with known ground truth
"""

from .analytics import (
    CoverageCurve,
    ProberProfile,
    Ranking,
    TrafficStats,
    cumulative_coverage,
    port_profile_of,
    top_probers,
    traffic_by_country,
    traffic_by_port,
)
from .forecast import (
    DesignParams,
    EvalReport,
    ForecastModel,
    fit_least_squares,
    fit_model,
    grid_search,
    make_design_matrix,
    pearson,
    predict_one,
    r_squared,
    rolling_forecast,
    select_features,
    var_forecast,
)
from .graphs import (
    TransitionGraph,
    TransitionMatrix,
    aggregate_transition_matrix,
    build_transition_graph,
    export_graph,
    ports_targeted_cdf,
)
from .ingest import (
    GeoDb,
    PacketRecord,
    ParseError,
    ProbeBatch,
    ProbeEvent,
    TcpFlags,
    filter_syn,
    geolocate,
    parse_record,
    read_probe_batches,
)
from .synth import SyntheticSpec, gen_ar, gen_markov_prober, gen_var, gen_zipf_traffic
from .timeseries import RateMatrix, RateSeries, bucketize, resample

__version__ = "0.1.0"

__all__ = [
    "CoverageCurve",
    "ProberProfile",
    "Ranking",
    "TrafficStats",
    "cumulative_coverage",
    "port_profile_of",
    "top_probers",
    "traffic_by_country",
    "traffic_by_port",
    "DesignParams",
    "EvalReport",
    "ForecastModel",
    "fit_least_squares",
    "fit_model",
    "grid_search",
    "make_design_matrix",
    "pearson",
    "predict_one",
    "r_squared",
    "rolling_forecast",
    "select_features",
    "var_forecast",
    "TransitionGraph",
    "TransitionMatrix",
    "aggregate_transition_matrix",
    "build_transition_graph",
    "export_graph",
    "ports_targeted_cdf",
    "GeoDb",
    "PacketRecord",
    "ParseError",
    "ProbeBatch",
    "ProbeEvent",
    "TcpFlags",
    "filter_syn",
    "geolocate",
    "parse_record",
    "read_probe_batches",
    "SyntheticSpec",
    "gen_ar",
    "gen_markov_prober",
    "gen_var",
    "gen_zipf_traffic",
    "RateMatrix",
    "RateSeries",
    "bucketize",
    "resample",
]
