"""varlab: a numerical laboratory for stationary-varifold regularity.

Discrete varifolds as weighted tangent-plane samples, tilt-excess machinery,
Q-valued Lipschitz approximation, harmonic approximation and excess-decay
experiments, plus the explicit catenoid asymptotics as desk-scale oracles.
"""

__version__ = "0.1.0"

from .errors import (
    ApproximationError,
    ConfigError,
    DimensionMismatchError,
    ResolutionError,
    VarlabError,
)
from .grassmann import BestFitResult, ProjectionPlane, best_fit_plane, hs_distance
from .qvalued import (
    QGridFunction,
    QPoint,
    dirichlet_energy,
    eta_average,
    g_metric,
    lipschitz_constant,
    weak_laplacian_pairing,
)
from .varifold import (
    Ball,
    Cylinder,
    DiscreteVarifold,
    Slab,
    VarifoldSample,
    density_ratio,
    first_variation,
    harmonicity_residual,
    isoperimetric_check,
    mass,
    monotonicity_residual,
    slab_mass,
    unit_ball_volume,
)
from .excess import (
    CylinderSpec,
    DyadicCylinderFamily,
    ExcessReport,
    GoodSet,
    cylindrical_excess,
    good_set,
    maximal_excess,
    spherical_excess,
)
from .models import (
    CatenoidSpec,
    GraphSheet,
    catenoid_d_constants,
    catenoid_excess_exact,
    catenoid_mass_exact,
    generate_catenoid,
    generate_graph,
    generate_plane,
    missed_mass,
    morrey_bound,
    q_optimize,
)
from .approx import (
    HeightBands,
    LipApproximant,
    build_lipschitz_approximant,
    height_at_density_q,
    height_bands,
    validate_lip_estimates,
    validate_lipen,
)
from .regularity import (
    DecayProfile,
    HarmonicFit,
    PredecayReport,
    decay_profile,
    harmonic_fit,
    predecay_step,
)
