"""spadlink: link-level simulator for SPAD-array optical wireless links.

Subpackages by stage:
  detector  - SPAD/SiPM saturation laws, dead-time Monte Carlo, front end
  tx        - OOK and DCO-OFDM waveform synthesis, clipping, electro-optics
  rx        - synchronization, matched filter, Volterra/RLS equalization,
              OFDM demodulation, BER accounting
  loading   - per-subcarrier SNR estimation and adaptive bit/energy loading
  link      - end-to-end single-operating-point simulations
  bench     - sweep harness, rate search, deterministic CSV reporting
"""

__version__ = "0.1.0"

from .detector import (  # noqa: F401
    FrontEndConfig,
    SpadArrayConfig,
    bias_current,
    front_end,
    mean_detected_rate,
    saturation_limit,
    simulate_counts,
)
from .loading import (  # noqa: F401
    LoadingPlan,
    SnrProfile,
    achievable_rate,
    estimate_snr,
    load_bits_energy,
)
from .rx import (  # noqa: F401
    BerReport,
    EqualizerConfig,
    VolterraWeights,
    decide_and_count,
    matched_filter_downsample,
    ofdm_demodulate,
    rls_train,
    synchronize,
    volterra_apply,
)
from .tx import (  # noqa: F401
    DriveConfig,
    OfdmConfig,
    OokConfig,
    clip_and_scale,
    electro_optic,
    generate_bits,
    ofdm_assemble,
    ook_modulate,
    qam_map,
)
from .waveforms import CountSignal, ElectricalWaveform, OpticalWaveform  # noqa: F401
