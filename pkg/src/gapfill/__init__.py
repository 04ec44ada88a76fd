"""Gap filling for univariate time series.

Bi-directional forecasting fills (forward model on the pre-history,
backward model on the reversed post-history, blended across the gap),
evolutionary search over small model pipelines, six classical baselines
and a reproducible benchmark harness.
"""

from gapfill.baselines import BASELINE_FILLERS, FillerConfig
from gapfill.bidir import EnsembleCombiner, GapFillPolicy, combine, fill_bidirectional
from gapfill.errors import (
    CSVParseError,
    GapFillError,
    InsufficientDataError,
    NodeFitError,
    PipelineStructureError,
    SingularSystemError,
)
from gapfill.evo import EvoConfig, run_search
from gapfill.pipeline import Pipeline, PipelineNode, decomposition_chain, single_node
from gapfill.series import GapSegment, TimeSeries, read_csv, scan_gaps, write_csv
from gapfill.synth import GapSpec, SyntheticSpec, generate, inject_gaps

__version__ = "0.1.0"

__all__ = [
    "BASELINE_FILLERS",
    "CSVParseError",
    "EnsembleCombiner",
    "EvoConfig",
    "FillerConfig",
    "GapFillError",
    "GapFillPolicy",
    "GapSegment",
    "GapSpec",
    "InsufficientDataError",
    "NodeFitError",
    "Pipeline",
    "PipelineNode",
    "PipelineStructureError",
    "SingularSystemError",
    "SyntheticSpec",
    "TimeSeries",
    "combine",
    "decomposition_chain",
    "fill_bidirectional",
    "generate",
    "inject_gaps",
    "read_csv",
    "run_search",
    "scan_gaps",
    "single_node",
    "write_csv",
]
