"""mixflow: parabolic-hyperbolic decomposition solver for N-species
compressible mixtures driven by a pressure gradient under Darcy's law.

The model couples mass continuity for the species densities with
v = -kappa grad p and p = G(L(rho)); the solver splits it into an
implicit porous-medium-type solve for the volume extension w = L(rho),
characteristic transport of the fractions u = rho / w, and the
reconstruction rho = w u.  An independent upwind cross-diffusion solver
serves as a correctness oracle.
"""

from ._kernels import backend_name
from .coupled import (
    CoupledProblem,
    DiagnosticsLog,
    MixtureState,
    init_decomposition,
    run,
    step_decomposed,
    step_direct,
)
from .errors import CFLError, ConfigError, MixflowError, NewtonError, PicardError, SolverError
from .grid import (
    BoundaryTag,
    FaceVectorField,
    ScalarField,
    SpeciesField,
    StructuredGrid,
    divergence,
    face_gradient,
    sample,
)
from .mixture import (
    ConstantKappa,
    LinearCombination,
    MixtureModel,
    NumberDensityForm,
    PowerLaw,
    PowerLawKappa,
    SpeciesSet,
    TabulatedKappa,
    ideal_gas_mixture,
)
from .parabolic import (
    KirchhoffMap,
    ParabolicProblem,
    ParabolicState,
    step_implicit,
    velocity_from_w,
)
from .transport import (
    FractionState,
    InflowData,
    ReactionField,
    VelocitySampler,
    semi_lagrangian_step,
    trace_back,
    transport_with_reaction,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryTag",
    "CFLError",
    "ConfigError",
    "ConstantKappa",
    "CoupledProblem",
    "DiagnosticsLog",
    "FaceVectorField",
    "FractionState",
    "InflowData",
    "KirchhoffMap",
    "LinearCombination",
    "MixflowError",
    "MixtureModel",
    "MixtureState",
    "NewtonError",
    "NumberDensityForm",
    "ParabolicProblem",
    "ParabolicState",
    "PicardError",
    "PowerLaw",
    "PowerLawKappa",
    "ReactionField",
    "ScalarField",
    "SolverError",
    "SpeciesField",
    "SpeciesSet",
    "StructuredGrid",
    "TabulatedKappa",
    "VelocitySampler",
    "backend_name",
    "divergence",
    "face_gradient",
    "ideal_gas_mixture",
    "init_decomposition",
    "run",
    "sample",
    "semi_lagrangian_step",
    "step_decomposed",
    "step_direct",
    "step_implicit",
    "trace_back",
    "transport_with_reaction",
    "velocity_from_w",
]
