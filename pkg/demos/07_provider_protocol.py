"""The NDJSON provider protocol, live against a child process.

Feature/flow/depth/aesthetic/detection/pose models run out of process and
answer newline-delimited JSON requests; responses correlate by id so they
may arrive out of order. `gem provider-echo` serves the built-in synthetic
providers and doubles as the protocol self-test.
"""

import sys

import numpy as np

from gemkit.protocol import ProtocolClient, StdioTransport, decode_tensor, encode_tensor

transport = StdioTransport([sys.executable, "-m", "gemkit.cli", "provider-echo"])
client = ProtocolClient(transport, timeout=30.0)
try:
    image = encode_tensor(np.random.default_rng(0).uniform(0, 1, (64, 64)).astype(np.float32))

    # pipeline three requests, then collect them in a different order
    id_feat = client.submit("features", {"image": image}, {"dim": 12})
    id_depth = client.submit("depth", {"image": image})
    id_bogus = client.submit("segment", {})

    bogus = client.result(id_bogus)
    print(f"unknown method -> ok={bogus['ok']}, error={bogus['error']!r}")

    depth = decode_tensor(client.result(id_depth)["result"]["depth"])
    print(f"depth: shape {depth.shape}, min {depth.min():.2f} m (strictly positive)")

    feats = client.result(id_feat)["result"]
    grid = decode_tensor(feats["features"])
    print(f"features: shape {grid.shape} at patch stride {feats['patch_stride']}")
    print(f"  cell vectors are unit length: {np.allclose(np.linalg.norm(grid, axis=0), 1.0)}")

    # determinism: the same image hashes to the same tokens
    again = decode_tensor(client.request("features", {"image": image}, {"dim": 12})["features"])
    print(f"  identical request, identical bytes: {again.tobytes() == grid.tobytes()}")
finally:
    client.close()
