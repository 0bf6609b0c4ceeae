"""Deterministic behavioral simulator of a battery-less 4-terminal
bio-impedance measurement system: 8-step stepped-sine excitation over an
11-point 2 kHz - 2 MHz plan, square-wave I/Q demodulation with an analytic
DC oracle, 10-bit acquisition with oversampled averaging, software
calibration (offsets, derotation, per-frequency equalization), and the
inductive-link configuration/communication protocol with its energy
reservoir budget.
"""

from .waveforms import (
    FrequencyPlan,
    IqClock,
    Phase,
    SampleSeries,
    SteppedSine,
    frequency_plan,
    harmonic_coefficients,
    plan_frequencies,
    stepped_sine_levels,
    synthesize,
)
from .tissue import (
    ColeModel,
    ParallelRC,
    TableRangeError,
    TabulatedTwoPort,
    TimeVaryingModel,
    builtin_model,
    impedance_at,
    sense_voltage,
)
from .afe import (
    AfeConfig,
    ChainParams,
    analytic_dc_oracle,
    apply_compression,
    demodulate_time_domain,
    noise_process,
)
from .acquire import AdcSpec, SequenceResult, adc_sample, run_sequence
from .calib import (
    CalibrationError,
    CalibrationTable,
    ImpedanceReading,
    MeasurementSetup,
    RawIq,
    apply_calibration,
    auto_gain,
    build_equalization,
    derotate,
    extract_impedance,
    measure_impedance,
    measure_offsets,
)
from .link import (
    BrownOutError,
    ChannelParams,
    ConfigWord,
    Frame,
    ImplantDevice,
    PowerState,
    ReservedFrequencyError,
    decode_config,
    encode_config,
    power_budget,
    session,
)

__version__ = "0.1.0"
