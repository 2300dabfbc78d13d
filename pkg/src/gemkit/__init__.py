"""Toolkit around an ego-vision video world model: noise schedules and the
autoregressive sampler, control-signal preparation, dataset curation filters,
controllability metrics, and camera-trajectory post-processing.

Everything runs at desk scale against analytic denoisers and deterministic
synthetic providers; real models plug in over the NDJSON provider protocol.
"""

from gemkit.errors import GemError, ProviderError, ValidationError

__all__ = ["GemError", "ValidationError", "ProviderError"]

__version__ = "0.1.0"
