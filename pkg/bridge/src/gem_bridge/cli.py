"""`gem-bridge --config bridge.json --listen stdio|tcp:PORT`"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from gem_bridge.backends import BackendError, build_backends
from gem_bridge.server import BridgeServer


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gem-bridge", description=__doc__)
    parser.add_argument("--config", default=None, help="bridge config JSON")
    parser.add_argument("--listen", default="stdio", help="stdio or tcp:PORT")
    args = parser.parse_args(argv)

    config = json.loads(Path(args.config).read_text()) if args.config else {}
    try:
        backends = build_backends(config)
    except BackendError as exc:
        print(f"refusing to start: {exc}", file=sys.stderr)
        return 1
    server = BridgeServer(backends)
    print(
        "serving " + ", ".join(f"{m}={b.identifier}" for m, b in backends.items()),
        file=sys.stderr,
    )
    if args.listen == "stdio":
        server.serve_stdio()
    elif args.listen.startswith("tcp:"):
        server.serve_tcp(int(args.listen.split(":")[1]))
    else:
        print(f"unknown listen spec {args.listen!r}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
