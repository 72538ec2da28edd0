"""Motion planning and contact-dynamics simulation for legged robots in microgravity.

The package splits into a planning stack (kinematic tree model, swing
trajectory optimization, whole-body momentum distribution, gait assembly)
and a forward-dynamics simulator with a compliant, detachable contact
model.  The `microgait` command line drives complete scenarios from YAML
configs and writes time-series results plus machine-readable summaries.
"""

from microgait.model import LinkSpec, RobotModel, load_robot
from microgait.state import SystemState
from microgait.kinematics import (
    FkResult,
    JacobianSet,
    forward_kinematics,
    jacobians,
    inverse_kinematics,
)
from microgait.body_dynamics import InertiaSet, MomentumState, inertia_matrices, system_momentum
from microgait.bezier import BezierCurve, PiecewiseQuintic
from microgait.swing import LrstWeights, ObjectiveValue, SwingPlan, swing_objective, optimize_swing
from microgait.distribution import (
    EffectiveBaseInertia,
    effective_inertia,
    base_velocity,
    support_rates,
    distribute_over_plan,
)
from microgait.gait import (
    GaitSchedule,
    MotionPlan,
    build_crawl_schedule,
    single_step_schedule,
    baseline_swing,
    assemble_plan,
)
from microgait.contact import ContactPoint, contact_force, detachment_check
from microgait.simulate import SimConfig, SimLog, pd_torques, step, run_scenario

__version__ = "0.1.0"
