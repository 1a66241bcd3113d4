"""Two-level system dynamics under Lindblad dissipation with random rates.

The environment is represented by a weighted set of decay rates.  Averaging
over that set produces a non-local memory kernel, and the package offers
several independent routes to the averaged Bloch dynamics: closed-form
ensemble averages, a Volterra integro-differential solver, Laplace-domain
inversion and Monte Carlo renewal trajectories.
"""

from .rates import (
    ExpoFamilyParams,
    Moments,
    RateEnsemble,
    build_expo_ensemble,
    load_ensemble,
    moments,
    save_ensemble,
    survival_exact,
    waiting_density_exact,
)
from .laplace import (
    DomainError,
    ExpSum,
    FractionalKernel,
    InversionError,
    LaplaceFn,
    MemoryKernel,
    SurvivalTable,
    as_kernel,
    ensemble_kernel,
    fractional_kernel,
    gaver_stehfest,
    invert_laplace,
    survival,
    talbot,
)
from .kernels import (
    KernelSet,
    SystemParams,
    appendix_kernels,
    dispersive_kernels,
    effective_kernel_set,
    exact_kernel_set,
    hopping_kernel_set,
)
from .dynamics import (
    StepSizeError,
    TimeGrid,
    dispersive_bloch,
    ensemble_average_bloch,
    laplace_bloch,
    markovian_bloch,
    volterra_bloch,
    zeno_profile,
)
from .stochastic import (
    MixtureSampler,
    TableSampler,
    TrajectoryConfig,
    build_fractional_sampler,
    renewal_average,
    static_disorder_average,
)
from .mapping import (
    DecayTarget,
    SpectralDensity,
    dephasing_match,
    fit_rate_ensemble,
    qdoubleprime,
    qprime,
    spinboson_kernel_check,
)

__version__ = "0.1.0"
