"""crashforge: deterministic pre-crash scenario generation, dash-cam
rendering, and steering-model training."""

__version__ = "0.1.0"
