"""Time-series segmentation by total-variation penalized maximum likelihood."""

from .admm import SegmentResult, extract_changepoints, reweighted_segment, segment
from .gfl import gfl_prox, solve_gfl
from .kde import KdeConfig, cluster, cluster_segments, select_bandwidth
from .types import (GAUSSIAN, LINREG, GaussianParams, ObservationSequence,
                    Segmentation, SolverConfig)

__version__ = "0.1.0"
