"""``opal-serve``: run a provider, gateway or consent authority over HTTP."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import load_consent_authority, load_gateway, load_provider
from .consent import ConsentService
from .transport import serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="opal-serve", description=__doc__)
    parser.add_argument("kind", choices=["provider", "gateway", "consent"])
    parser.add_argument("config")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8080)
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)

    if args.kind == "provider":
        service = load_provider(args.config)
    elif args.kind == "gateway":
        service = load_gateway(args.config)
    else:
        service = ConsentService(load_consent_authority(args.config))
    logging.getLogger("opal").info("%s listening on %s:%d", args.kind, args.host, args.port)
    try:
        serve(service, args.host, args.port, background=False)
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
