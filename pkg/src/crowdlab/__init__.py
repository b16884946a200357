"""crowdlab: a numerical laboratory for nonlocal crowd-flow models.

Eulerian (finite-volume) and Lagrangian (particle) solvers for panic,
orderly, multi-population, and agent-coupled crowd models, together with
transport metrics (exact W1, discrete TV) and sensitivity tools
(linearized solver, directional-derivative checks, cost functionals).
"""

__version__ = "0.1.0"

from .geometry import (DomainMask, GeometryError, Grid, VectorField,
                       build_grid, is_support_contained,
                       load_walkable_bitmap, preferred_direction_field)
from .kernels import (ConvField, Kernel, KernelError, convolve,
                      eval_convolution_at, eval_convolution_grad_at,
                      make_mollifier)
from .models import (AgentSpec, AgentState, ModelError, ModelSpec, SpeedLaw,
                     agent_rhs_dog, agent_rhs_leader, agent_rhs_predator,
                     follower_velocity, multi_orderly_velocity,
                     multi_panic_velocity, orderly_velocity, panic_velocity,
                     prey_velocity)
from .scenario import DensityField, Scenario
from .fv_solver import (MetricRow, SolverAbort, SolverConfig, SolverError,
                        SolverState, Trajectory, cfl_dt, run, step)
from .lagrangian import (LagrangianConfig, LagrangianError,
                         LagrangianTrajectory, ParticleEnsemble,
                         lagrangian_step, push_forward, rasterize,
                         run_lagrangian, sample_particles)
from .transport_metrics import (BoundReport, DiscreteMeasure, MetricError,
                                kr_duality_check, stability_bound_rhs,
                                total_variation, tv_array, tv_bound_rhs,
                                w1_1d, w1_discrete)
