"""Grid-of-beams channel detection with reciprocity-aware uplink sequence mappings."""

__version__ = "0.1.0"

from .beamworld import (  # noqa: E402
    BeamSet,
    ChannelKind,
    ReceivedSignal,
    dft_beamset,
    draw_channel,
    draw_channels,
    load_beamset,
    quantize_to_grid,
    save_beamset,
    synthesize_received,
)
from .seqmap import (  # noqa: E402
    SequenceMap,
    metric_mu_K,
    metric_mu_NR,
    metric_mu_U,
    orthogonal_mapping,
    sga,
)
from .sim import Scenario, SimResult, sweep  # noqa: E402

__all__ = [
    "BeamSet",
    "ChannelKind",
    "ReceivedSignal",
    "Scenario",
    "SequenceMap",
    "SimResult",
    "dft_beamset",
    "draw_channel",
    "draw_channels",
    "load_beamset",
    "metric_mu_K",
    "metric_mu_NR",
    "metric_mu_U",
    "orthogonal_mapping",
    "quantize_to_grid",
    "save_beamset",
    "sga",
    "sweep",
    "synthesize_received",
]
