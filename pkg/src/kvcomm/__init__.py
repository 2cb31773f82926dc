"""Training-free KV-cache sharing for multi-agent transformer inference."""

__version__ = "0.1.0"
