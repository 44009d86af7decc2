"""Linear-region discovery and absolute deviation for ReLU networks."""

from .errors import FormatError, InputError, NumericError
from .net import (ActivationPattern, ForwardResult, LayerSpec, Network, add, avgpool2d,
                  conv2d, dense, flatten, forward, forward_batch, forward_frozen,
                  forward_pair, pattern_at, relu, save)
from .modelio import load_model, model_paths, read_tensor, save_model, write_tensor
from .discovery import (CrossingRecord, RegionTrace, SegmentTask, find_lambda,
                        find_linear_regions, trace_batch)
from .deviation import (DeviationScore, absolute_deviation, interpolant_at,
                        path_deviation, region_deviation)
from .paths import (PathSpec, build_circular_paths, build_noise_paths, build_open_paths,
                    build_point_loops, load_paths, save_paths, translate_image)
from .stats import Ecdf, PairedRun, ecdf, lower_median, median_summary, positive_fraction, spearman
from .toytrain import (ToyDataset, TrainConfig, TrainResult, make_dataset, train,
                       width_sweep, zero_one_error)

__version__ = "0.1.0"
