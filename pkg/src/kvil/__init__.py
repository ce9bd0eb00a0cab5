"""Keypoint-based visual imitation: extraction, encoding, reproduction.

The package turns a handful of demonstrated point-cloud trajectories into
a sparse set of geometric constraints (point-to-point, -line, -plane,
-curve, -surface), fits a movement primitive per constrained keypoint,
and reproduces the motion with a prioritized admittance controller.
"""

from .clustering import cluster_position, cluster_time, resolve_frames, sparsify
from .constraints import (FrameLocalTensor, LinearConstraint, Selection,
                          SpatialVariability, Thresholds,
                          build_linear_constraint, classify_linear,
                          express_in_frames, infer_dimension,
                          one_shot_extract, pca_variability, scan_linear)
from .control import (BodyState, ControllerGains, DensityModel,
                      admittance_step, aggregate_wrench, attraction_force,
                      density_force, density_force_components, fit_density,
                      priority_project, reconstruct_target)
from .demos import (CanonicalShape, DemonstrationSet, FrameBank, ObjectRecord,
                    assign_roles, build_frame_bank, compute_canonical_shape,
                    detect_frames, detect_frames_batch,
                    load_demonstration_set, load_scene,
                    write_demonstration_set, write_scene)
from .errors import (DegenerateGeometry, DegenerateObject, DegenerateRadius,
                     EmptySequence, FitDiverged, InsufficientCandidates,
                     InsufficientData, InsufficientTargets, KvilError,
                     MissingCorrespondence, NotOneShot, NumericalBlowup,
                     OutOfChart, ParseError, RankDeficient, SchemaError,
                     SpecIncompatible, UnitError)
from .extract import ExtractionConfig, extract_task
from .geometry import (RigidTransform, Trajectory, align_rigid,
                       matrix_to_rotvec, resample_normalize, rotvec_to_matrix,
                       smooth)
from .manifolds import (LinearManifold, ManifoldVariability,
                        NonlinearConstraint, PrincipalManifold,
                        classify_nonlinear, default_lambda_grid, fit_pme,
                        nonlinear_variability)
from .simulate import (Metrics, SceneInstance, SimLog, evaluate, load_simlog,
                       scene_instance, simulate_reproduction, write_simlog)
from .synth import (KINDS, GroundTruth, SyntheticTaskSpec, generate_synthetic,
                    make_scene)
from .task import (Keypoint, TaskRepresentation, assemble_task,
                   constraint_manifold, load_task, task_from_dict,
                   task_to_dict, write_task)
from .vmp import (CanonicalClock, VMPModel, fit_vmp, rollout, rollout_at,
                  rollout_with_viapoints)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
