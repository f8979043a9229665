"""Continuous lidar decay-rate maps in the discrete frequency domain.

The package represents 2-D decay-rate fields by a small matrix of cosine
coefficients, evaluates closed-form measurement likelihoods and their
analytic derivatives, fits maps by maximizing the joint scan likelihood,
and benchmarks the result against decay-rate grid maps.
"""

from .derivatives import (
    GradHess,
    decay_coeff_grad,
    fd_check,
    integral_coeff_grad,
    ray_loglik_grad,
    scan_loglik_grad,
)
from .errors import CarmenParseError, InitFailureError, InvalidInputError
from .estimators import DecayMapEstimator, GridMapEstimator
from .evaluate import (
    EvalReport,
    EvalRow,
    p_ref,
    rasterize,
    render_pgm,
    rmse_pref,
    run_map_comparison,
)
from .fit import FitConfig, FitReport, fit
from .forward import (
    LidarRay,
    RayOutcome,
    ScanSet,
    SensorLimits,
    path_integral,
    prob_sub,
    prob_super,
    ray_log_likelihood,
    return_density,
    scan_log_likelihood,
    survival,
)
from .geometry import Ray2
from .grid import (
    CellSegment,
    GridDecayMap,
    GridGeometry,
    build_grid,
    grid_scan_log_likelihood,
    load_grid_map,
    sample_grid_as_field,
    save_grid_map,
    trace_ray,
)
from .dataio import (
    PatchSpec,
    RawScan,
    RobotPose,
    extract_patch,
    load_scans,
    parse_carmen,
    save_scans,
    scans_to_rays,
)
from .simulate import fan_rays, simulate_scan
from .spectral import (
    SpectralMap,
    decay_rate,
    decay_rate_gradient,
    decay_rate_on_ray,
    load_spectral_map,
    save_spectral_map,
)

__version__ = "0.1.0"
