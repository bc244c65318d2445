"""Service entry point; flags override MODE/PORT/MODEL_ID environment vars."""

from __future__ import annotations

import argparse
import os
import sys

from .config import ServiceConfig, ServiceError
from .server import serve


def build_config(argv=None) -> ServiceConfig:
    parser = argparse.ArgumentParser(prog="svc-enhancer", description="Wire-protocol enhancer service")
    parser.add_argument("--mode", default=os.environ.get("MODE", "echo"), help="echo | restore | diffusion")
    parser.add_argument("--port", type=int, default=int(os.environ.get("PORT", "8080")))
    parser.add_argument("--model-id", default=os.environ.get("MODEL_ID"), dest="model_id")
    parser.add_argument("--max-concurrent", type=int, default=4, dest="max_concurrent")
    parser.add_argument("--host", default="127.0.0.1")
    args = parser.parse_args(argv)
    return ServiceConfig(
        mode=args.mode, port=args.port, model_id=args.model_id, max_concurrent=args.max_concurrent, host=args.host
    )


def main(argv=None) -> int:
    try:
        serve(build_config(argv))
    except ServiceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
