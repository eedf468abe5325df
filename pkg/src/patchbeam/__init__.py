"""patchbeam: real-time masked dictionary-learning inpainting for tensor streams."""

import os as _os

# The TBB probe on this image is noisy and unwanted; OpenMP is the layer
# the deterministic kernels are validated against.
_os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

from .bpfa import (  # noqa: E402
    Dictionary,
    DivergenceError,
    GibbsState,
    Hyperparams,
    gibbs_epoch,
    infer,
    init_state,
    transfer_dictionary,
)
from .metrics import FrameMetrics, model_stats, psnr  # noqa: E402
from .patches import (  # noqa: E402
    CoverageError,
    PatchMatrix,
    PatchSpec,
    ShapeError,
    apply_data_consistency,
    coverage_map,
    extract_patches,
    normalize,
    reconstitute,
)
from .pipeline import FrameResult, Pipeline, ProblemConfig, ProblemHandle  # noqa: E402
from .sampling import SamplerSpec, make_mask, next_mask_adaptive, register_strategy  # noqa: E402

__version__ = "0.1.0"


def set_threads(n: int) -> int:
    """Cap engine worker threads; returns the effective count.

    Results are bit-identical for any thread count; this only trades
    latency for CPU use.
    """
    import numba

    effective = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(effective)
    return effective
