"""Zak-OTFS link-level simulation with delay-Doppler pulse shaping."""
from .channel import VEH_A, ChannelPath, PhysicalChannel, VehAProfile, channel_from_spec, sample_veha
from .effective import (
    EffectiveChannel,
    NoiseModel,
    crystallization_check,
    effective_taps,
    heff_continuous,
    heff_gaussian_closed_form,
    heff_numeric,
    noise_covariance,
    noise_covariance_gaussian,
    noise_covariance_numeric,
)
from .filters import FilterFactor, MatchedFilter, PulseShapingFilter, filter_from_spec, gaussian_alpha_for_expansion
from .lattice import (
    DdTapSet,
    ModulationParams,
    QuasiPeriodicGrid,
    build_Hdd,
    compose_taps,
    devectorize,
    qp_extend,
    twisted_convolve,
    vectorize,
)
from .link import (
    MmseDetector,
    PowerConfig,
    SubframeLayout,
    ZakOtfsReceiver,
    assemble_subframe,
    default_layout,
    detect_mmse,
    estimate_heff,
    layout_for_delay_spread,
)
from .sim import (
    ExperimentConfig,
    SweepResult,
    effective_throughput,
    emit_csv,
    run_ber_sweep,
    run_hyperbola_study,
)

__version__ = "0.1.0"
