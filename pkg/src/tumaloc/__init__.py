"""Type-based unsourced multiple access over distributed-MIMO fading channels.

Simulation and decoding toolkit: uplink synthesis, centralized and
distributed multisource-AMP type decoding, and an end-to-end multi-target
localization pipeline with sensing, quantization and transport metrics.
"""

from .config import SystemConfig, Topology, build_topology, desk_preset, paper_preset

__all__ = [
    "SystemConfig",
    "Topology",
    "build_topology",
    "desk_preset",
    "paper_preset",
]

__version__ = "0.1.0"
