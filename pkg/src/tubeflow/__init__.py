"""Safe normal-flow times, tube constants and penalty-gradient checks for
parametrized submanifolds of R^N."""

from ._kernels import NUMBA_AVAILABLE
from .errors import (DegenerateMetric, EmptyCloud, FieldGridMismatch, NoConvergence, NotBijective,
                     NotNormal, NoValidDelta, OracleFailure, OutOfDomain, OutsideCertifiedBox,
                     OutsideTube, PipelineError, RankDeficient, SingularDE, SingularMatrix, SpecError,
                     StencilOutOfDomain, TubeflowError)
from .families import (circle, ellipse, from_spec, graph, lemniscate, load_spec, sampled, segment,
                       sphere, torus, SampledManifold)
from .flow import (FlowTrace, NormalField, StepRule, Verdict, embedding_oracle, fold_check,
                   gradient_descent_flow, immersion_check, injectivity_oracle, linear_normal_flow,
                   max_embedding_time, path_oracle, unit_normal_field)
from .manifold import ChartedManifold, curvature_summary, fundamental_forms, max_curvature_K
from .normal_bundle import (FrameField, endpoint_jacobian_DE, endpoint_map_E, focal_distance,
                            frame_jet, normal_frame)
from .penalty import (DataCloud, DistancePenalty, PhaseShift, PinnedCoordinate, VolumePenalty, Warp,
                      l2_gradient, load_cloud, normality_defect, reparametrization_invariance)
from .qift import (ImplicitProblem, TubeAnalysis, TubeConstants, qift_constants, qift_solve,
                   safe_flow_time, safe_radius_delta, tube_constants_at)

__version__ = "0.1.0"
