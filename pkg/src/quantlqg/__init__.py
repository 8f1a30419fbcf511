"""LQG control over a bit-budget channel.

Synthesis of the certainty-equivalent controller and rate-matched Kalman
coder, an interior-point solver for the Gaussian rate floor, dithered
lattice quantization with a time-invariant prefix code, and a
reproducible closed-loop harness that checks the measured bitrate
against the floor and its additive ceiling.
"""

from ._rng import STREAM_DITHER, STREAM_INIT, STREAM_NOISE, counter_u01, derive_key, mix64, norm_ppf
from .codec import (
    Codeword,
    LatticeEnumeration,
    LatticePmf,
    build_pmf,
    decode,
    decode_stream,
    encode,
    enumerate_index,
    enumerate_point,
    expected_length,
    geometric_pmf,
)
from .errors import (
    BadParameter,
    DegenerateCoder,
    DegeneratePi,
    DesyncDetected,
    DimensionMismatch,
    EmptyHistogram,
    Infeasible,
    InsufficientWarmup,
    MalformedCodeword,
    NoConvergence,
    NonFinite,
    NotOrdered,
    NotStabilizable,
    ParseError,
    PrecisionExhausted,
    QuantLqgError,
    Singular,
    UnstableFilter,
    ValueOutOfRange,
)
from .harness import (
    ETA_BITS,
    ExperimentConfig,
    Report,
    ceiling_bits,
    config_from_dict,
    entropy_estimate,
    kl_estimate,
    load_config,
    run_experiment,
    sweep,
    synthesize_system,
    warmup_pmf,
)
from .loop import (
    KERNEL_BACKEND,
    LoopEndState,
    Trace,
    available_backends,
    burn_in_steps,
    decoder_step,
    encoder_step,
    run_lockstep,
    run_loop,
)
from .quantizer import DitherStream, LatticePoint, dither_at, quantize, reconstruct
from .rdf import RdfProblem, RdfSolution, check_solution, rate_curve, solve_rdf
from .synthesis import (
    CoderSynthesis,
    ControllerGains,
    PlantModel,
    gelfand_sequence,
    kalman_synthesis,
    sensitivity_factorization,
    solve_dare,
    spectral_radius,
    stabilizable_check,
)

__version__ = "0.1.0"
