"""Numerical laboratory for Strichartz estimates in Wiener amalgam spaces.

Short-time Fourier transforms, amalgam and Lorentz norms, Hamiltonian flows,
a wave-packet parametrix for Schroedinger operators with at most quadratic
potentials, and measured dispersive and Strichartz quotients.
"""

from .field import (
    ClosedForm,
    DecayViolation,
    GridMismatch,
    GridSpec,
    SampledField,
    fourier,
    gaussian,
    inner_product,
    inv_fourier,
    lp_norm,
    make_grid,
    sample,
)
from .hamflow import FlowPoint, check_lemh, flow, flow_det, scaled_det
from .norms import (
    WeightedSamples,
    amalgam_lorentz_norm,
    amalgam_norm,
    lorentz_norm,
    mixed_norm,
    time_mixed_norm,
)
from .potentials import Potential, builtin, compute_T1, compute_T2, constant_M, lemma_constants
from .propagate import (
    defect,
    duhamel_residual,
    free_prop,
    harmonic_prop,
    parametrix_U0,
    phase_multiplier,
    remainder_R,
    splitstep_prop,
    stark_prop,
    taylor_stft,
)
from .stft import (
    PhaseSpaceField,
    Window,
    adjoint_stft,
    cross_ambiguity_bound_check,
    evolved_window,
    stft,
    stft_at,
)
from .strichartz import (
    AdmissiblePair,
    ExperimentRecord,
    admissible_pairs,
    dispersive_fit,
    dual_quotient,
    lemma3_ratio,
    lemma4_ratio,
    retarded_quotient,
    strichartz_quotient,
)

__version__ = "0.1.0"
