"""capflow: volume-preserving curvature flow of convex capillary hypersurfaces
in the unit ball, with a verification harness for its conservation laws,
monotonicity, convergence, and Alexandrov-Fenchel inequalities."""

__version__ = "0.1.0"

from .cap import (CapParams, cap_center, cap_graph, cap_profile, cap_quermass,
                  cap_radius_from_quermass, resolve_sign_convention)
from .errors import (CapflowError, CheckpointError, DegenerateMetric, InfiniteRadius,
                     NotConverged, ObliquenessViolated, OutOfRange, QuadratureFailure,
                     ShellViolation, SingularPoint, StarShapeLost, StepFailure)
from .flow import FlowConfig, FlowState, TrajectoryRecord, enforce_bc, normal_speed, run, scalar_rhs, step
from .geometry import conformal_factor, to_ball, to_halfspace, xe_field
from .grid import HemisphereGrid
from .quermass import (QuermassVector, boundary_region, enclosed_volume,
                       minkowski_residual, quermass_theta, quermass_vector)
from .surface import BoundaryFrame, GraphState, SurfaceSample, boundary_frame, reconstruct
from .verify import (EstimateBundle, af_check, consistency_suite, convergence_check,
                     estimates_check, monotonicity_report, tol_disc)
