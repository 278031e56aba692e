"""LQDN v1 server over stdio or TCP.

Frame layout (little-endian):
  request:  "LQDN1" | u32 height | u32 width | u32 channels |
            u32 schedule_index | f64 alpha | float32[h*w*c]
  success:  "LQOK1" | float32[h*w*c]
  error:    "LQER1" | u32 byte_length | utf-8 message

One ordered response per request.  Identity mode echoes the payload bytes
untouched; gmm mode decodes to float64, applies the mixture posterior
mean, and re-encodes as float32.  On stdio, stream corruption (bad magic,
truncated frame) is answered with an error frame and a nonzero exit; a
TCP connection survives bad-magic frames and handles requests serially,
with one thread per connection.
"""

from __future__ import annotations

import argparse
import logging
import socket
import struct
import sys
import threading
from dataclasses import dataclass, field

import numpy as np

from .gmm import MixtureDenoiser

MAGIC_REQUEST = b"LQDN1"
MAGIC_OK = b"LQOK1"
MAGIC_ERROR = b"LQER1"
HEADER = struct.Struct("<IIIId")
MAX_VALUES = 1 << 26

log = logging.getLogger("lqdn_bridge")


@dataclass
class ServerConfig:
    transport: str = "stdio"  # "stdio" | "tcp"
    port: int = 0
    mode: str = "identity"  # "identity" | "gmm"
    prior: dict = field(default_factory=dict)
    log_level: str = "warning"

    def __post_init__(self):
        if self.transport not in ("stdio", "tcp"):
            raise ValueError(f"transport must be stdio or tcp, got {self.transport}")
        if self.mode not in ("identity", "gmm"):
            raise ValueError(f"mode must be identity or gmm, got {self.mode}")
        if self.transport == "tcp" and not 0 <= self.port <= 65535:
            raise ValueError(f"invalid port {self.port}")


class FrameError(Exception):
    pass


def _read_exact(stream, n: int) -> bytes:
    chunks = bytearray()
    while len(chunks) < n:
        chunk = stream.read(n - len(chunks))
        if not chunk:
            raise FrameError("short frame")
        chunks.extend(chunk)
    return bytes(chunks)


def _error_frame(message: str) -> bytes:
    data = message.encode("utf-8")
    return MAGIC_ERROR + struct.pack("<I", len(data)) + data


def _answer(payload: bytes, h: int, w: int, c: int, alpha: float,
            denoiser) -> bytes:
    if denoiser is None:  # identity mode: echo the payload bit-exactly
        return MAGIC_OK + payload
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    estimate = denoiser.posterior_mean(values, alpha)
    return MAGIC_OK + estimate.astype("<f4").tobytes()


def _serve_stream(instream, outstream, denoiser, strict: bool) -> int:
    """Answer frames until EOF.  Returns a process exit code.

    strict (stdio) treats any corruption as fatal after answering with an
    error frame; non-strict (tcp) keeps the connection alive on bad magic.
    """
    while True:
        magic = instream.read(5)
        if not magic:
            return 0
        if len(magic) < 5:
            outstream.write(_error_frame("short frame"))
            outstream.flush()
            return 1
        if magic != MAGIC_REQUEST:
            outstream.write(_error_frame(f"bad magic {magic!r}"))
            outstream.flush()
            if strict:
                return 1
            continue
        try:
            header = _read_exact(instream, HEADER.size)
            h, w, c, t, alpha = HEADER.unpack(header)
            n = h * w * c
            if not 0 < n <= MAX_VALUES:
                raise FrameError(f"bad dimensions {h}x{w}x{c}")
            payload = _read_exact(instream, 4 * n)
        except FrameError as exc:
            outstream.write(_error_frame(str(exc)))
            outstream.flush()
            return 1
        try:
            if denoiser is not None and not 0.0 < alpha <= 1.0:
                raise ValueError(f"bad alpha {alpha}")
            response = _answer(payload, h, w, c, alpha, denoiser)
        except Exception as exc:  # report, keep serving
            log.warning("request failed: %s", exc)
            response = _error_frame(str(exc))
        outstream.write(response)
        outstream.flush()
        log.debug("answered %dx%dx%d frame at t=%d", h, w, c, t)


def _make_denoiser(config: ServerConfig):
    if config.mode == "identity":
        return None
    return MixtureDenoiser(**config.prior) if config.prior else MixtureDenoiser()


def _serve_tcp(config: ServerConfig) -> int:
    denoiser = _make_denoiser(config)
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind(("127.0.0.1", config.port))
    except OSError as exc:
        print(f"lqdn-bridge: cannot bind port {config.port}: {exc}",
              file=sys.stderr)
        return 1
    sock.listen(8)
    bound = sock.getsockname()[1]
    print(f"lqdn-bridge: listening on 127.0.0.1:{bound}", flush=True)

    def handle(conn):
        with conn:
            stream = conn.makefile("rwb")
            try:
                _serve_stream(stream, stream, denoiser, strict=False)
            except (OSError, ValueError):
                pass

    try:
        while True:
            conn, peer = sock.accept()
            log.info("connection from %s", peer)
            threading.Thread(target=handle, args=(conn,), daemon=True).start()
    except KeyboardInterrupt:
        return 0
    finally:
        sock.close()


def serve(config: ServerConfig) -> int:
    logging.basicConfig(level=config.log_level.upper(), stream=sys.stderr,
                        format="lqdn-bridge %(levelname)s: %(message)s")
    if config.transport == "stdio":
        denoiser = _make_denoiser(config)
        return _serve_stream(sys.stdin.buffer, sys.stdout.buffer, denoiser,
                             strict=True)
    return _serve_tcp(config)


def _parse_floats(text: str):
    return [float(v) for v in text.split(",") if v.strip()]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lqdn-bridge",
        description="Reference LQDN v1 denoiser server (identity / gmm modes)")
    parser.add_argument("--transport", choices=("stdio", "tcp"), default="stdio")
    parser.add_argument("--port", type=int, default=0)
    parser.add_argument("--mode", choices=("identity", "gmm"), default="identity")
    parser.add_argument("--weights", default=None,
                        help="comma-separated mixture weights")
    parser.add_argument("--means", default=None)
    parser.add_argument("--variances", default=None)
    parser.add_argument("--log-level", default="warning")
    args = parser.parse_args(argv)
    prior = {}
    if args.weights or args.means or args.variances:
        if not (args.weights and args.means and args.variances):
            parser.error("--weights, --means, --variances must be given together")
        prior = {"weights": _parse_floats(args.weights),
                 "means": _parse_floats(args.means),
                 "variances": _parse_floats(args.variances)}
    config = ServerConfig(transport=args.transport, port=args.port,
                          mode=args.mode, prior=prior, log_level=args.log_level)
    return serve(config)


if __name__ == "__main__":
    sys.exit(main())
