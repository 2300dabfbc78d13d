"""Provider-protocol endpoint backed by real model backends.

Speaks the same newline-delimited JSON protocol as the toolkit's synthetic
providers (features / flow / depth / aesthetic / detections / pose) so the
full pipeline can run against real videos. The bridge only depends on the
documented wire and tensor formats, never on the toolkit package itself.
"""

__version__ = "0.1.0"
