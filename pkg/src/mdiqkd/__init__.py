"""Time-bin MDI-QKD link simulator and decoy-state analysis toolkit."""

from .params import (
    ChannelParams,
    ConfigError,
    DetectorParams,
    DriftConfig,
    SourceParams,
    SystemParams,
    load_config,
    load_preset,
    paper_200km,
)
from .model import (
    GainTable,
    analytic_gain_table,
    binary_entropy,
    photon_pair_yield,
    transmittance_from_db,
)

__version__ = "0.1.0"
