"""Stochastic optimisation toolkit for TV-regularised Poisson tomography.

Four pluggable pieces: subset objective terms (:mod:`stochtomo.functions`),
samplers and gradient estimators (:mod:`stochtomo.stochastic`), a view
partitioner and linear operators (:mod:`stochtomo.operators`), and solvers
(:mod:`stochtomo.algorithms`).  :mod:`stochtomo.simulate` provides the
desk-scale phantom/acquisition, and :mod:`stochtomo.experiment` the
config-driven comparison harness behind the ``recon`` command line.
"""

from .algorithms import (
    OptimisationProblem,
    RunResult,
    StepSizeRule,
    default_gamma,
    ista_step,
    run_fista,
    run_gd,
    run_ista,
    run_spdhg,
    step_size,
)
from .core import (
    AcquisitionGeometry,
    Image,
    ImageGeometry,
    RngState,
    Sinogram,
    inner,
    load_array,
    norm2,
    project_nonneg,
    rng_next_uniform,
    save_array,
)
from .functions import KLFunction, SmoothSum, TVRegulariser, kl_conjugate_prox_values
from .operators import (
    GradientField,
    Partition,
    Projector,
    grad_adjoint,
    grad_forward,
    operator_norm_estimate,
    partition_views,
)
from .simulate import (
    AcquisitionSim,
    Ellipse,
    PhantomSpec,
    compute_reference,
    make_phantom,
    simulate_acquisition,
    thorax_phantom_spec,
)
from .stochastic import (
    FullGradient,
    LSVRGEstimator,
    SAGAEstimator,
    SAGEstimator,
    SGDEstimator,
    SVRGEstimator,
    Sampler,
)

__version__ = "0.1.0"
