from .config import NetworkConfig, full_config, tiny_config, toy_config
from .model import FrequencyAwareNet, NetworkOutputs

__all__ = [
    "NetworkConfig",
    "FrequencyAwareNet",
    "NetworkOutputs",
    "full_config",
    "toy_config",
    "tiny_config",
]
