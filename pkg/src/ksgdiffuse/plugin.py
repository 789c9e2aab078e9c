"""Denoiser plugin protocol, version 1.

Byte-stream protocol spoken over a child process's stdio or a TCP socket.
All integers are little-endian::

    client -> server   b"DNP1" u32 H u32 W u32 T
    server -> client   b"DNP1" u8 accept            (1 accept, 0 reject)
    client -> server   u8 0x01 u32 t  H*W x (f32 re, f32 im)
    server -> client   u8 0x81        H*W x (f32 re, f32 im)
    client -> server   u8 0x02                      (shutdown, server closes)

``t`` is the original (not re-spaced) timestep label. Any other opcode is a
protocol error. The client side is :class:`RemoteDenoiser`; :func:`serve`
implements the server loop for Python plugins.
"""

from __future__ import annotations

import argparse
import os
import queue
import select
import socket
import struct
import subprocess
import sys
import threading
import time

import numpy as np

from .errors import (
    InvalidArgumentError,
    PluginError,
    PluginHandshakeRejected,
    PluginPayloadError,
    PluginProtocolError,
    PluginShapeError,
    PluginTimeoutError,
    PluginTransportError,
)

MAGIC = b"DNP1"
OP_PREDICT = 0x01
OP_SHUTDOWN = 0x02
OP_RESULT = 0x81

_HANDSHAKE = struct.Struct("<4sIII")
_REPLY = struct.Struct("<4sB")
_REQUEST = struct.Struct("<BI")


def encode_pairs(img: np.ndarray) -> bytes:
    pairs = np.empty(img.shape + (2,), dtype="<f4")
    pairs[..., 0] = img.real
    pairs[..., 1] = img.imag
    return pairs.tobytes()


def decode_pairs(buf: bytes, h: int, w: int) -> np.ndarray:
    pairs = np.frombuffer(buf, dtype="<f4").reshape(h, w, 2)
    return pairs[..., 0].astype(np.float64) + 1j * pairs[..., 1].astype(np.float64)


# ------------------------------------------------------------------ transports


class _Channel:
    """Deadline-aware byte stream over a readable and a writable descriptor."""

    def _read_some(self, n: int) -> bytes | None:
        # None means "nothing yet", b"" means end of stream.
        raise NotImplementedError

    def _write_some(self, data: memoryview) -> int:
        raise NotImplementedError

    def _rfd(self) -> int:
        raise NotImplementedError

    def _wfd(self) -> int:
        raise NotImplementedError

    def close(self, force: bool = False) -> None:
        raise NotImplementedError

    def send(self, data: bytes, deadline: float) -> None:
        view = memoryview(data)
        while view:
            _wait(self._wfd(), deadline, write=True)
            try:
                sent = self._write_some(view)
            except BlockingIOError:
                continue
            except (BrokenPipeError, ConnectionError, OSError) as e:
                raise PluginTransportError(f"plugin stream closed while sending: {e}") from e
            view = view[sent:]

    def recv_exact(self, n: int, deadline: float, what: str) -> bytes:
        chunks = []
        got = 0
        while got < n:
            _wait(self._rfd(), deadline, write=False)
            try:
                chunk = self._read_some(n - got)
            except (ConnectionError, OSError) as e:
                raise PluginTransportError(f"plugin stream failed while reading {what}: {e}") from e
            if chunk is None:
                continue
            if not chunk:
                where = "mid-frame" if got else "before"
                raise PluginTransportError(
                    f"plugin closed the stream {where} {what} ({got} of {n} bytes received)"
                )
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)


def _wait(fd: int, deadline: float, write: bool) -> None:
    remaining = deadline - time.monotonic()
    if remaining <= 0:
        raise PluginTimeoutError("plugin did not respond before the timeout")
    r, w, _ = select.select([] if write else [fd], [fd] if write else [], [], remaining)
    if not (r or w):
        raise PluginTimeoutError("plugin did not respond before the timeout")


class _PipeChannel(_Channel):
    def __init__(self, proc: subprocess.Popen):
        self.proc = proc
        os.set_blocking(proc.stdin.fileno(), False)
        os.set_blocking(proc.stdout.fileno(), False)

    def _rfd(self):
        return self.proc.stdout.fileno()

    def _wfd(self):
        return self.proc.stdin.fileno()

    def _read_some(self, n):
        try:
            return os.read(self._rfd(), n)
        except BlockingIOError:
            return None

    def _write_some(self, data):
        return os.write(self._wfd(), data)

    def close(self, force=False):
        if force:
            self.proc.kill()
        for f in (self.proc.stdin, self.proc.stdout):
            try:
                f.close()
            except OSError:
                pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()


class _SocketChannel(_Channel):
    def __init__(self, sock: socket.socket):
        self.sock = sock
        sock.setblocking(False)

    def _rfd(self):
        return self.sock.fileno()

    _wfd = _rfd

    def _read_some(self, n):
        try:
            return self.sock.recv(n)
        except BlockingIOError:
            return None

    def _write_some(self, data):
        try:
            return self.sock.send(data)
        except BlockingIOError:
            return 0

    def close(self, force=False):
        try:
            self.sock.close()
        except OSError:
            pass


# ---------------------------------------------------------------------- client


class RemoteDenoiser:
    """Client side of the plugin protocol.

    One request is in flight at a time; concurrent callers are serialized
    on an internal lock. After any transport or protocol failure the
    connection is unusable and every later call raises
    :class:`PluginTransportError`.
    """

    def __init__(self, channel: _Channel, shape: tuple[int, int], num_steps: int, timeout: float = 30.0):
        self._channel = channel
        self.shape = (int(shape[0]), int(shape[1]))
        self.num_steps = int(num_steps)
        self.timeout = float(timeout)
        self._lock = threading.Lock()
        self._broken: str | None = None
        self._closed = False
        try:
            self._handshake()
        except BaseException:
            self._channel.close(force=True)
            raise

    @classmethod
    def spawn(cls, command, shape, num_steps, timeout: float = 30.0) -> "RemoteDenoiser":
        """Start ``command`` and talk to it over its stdin/stdout."""
        try:
            proc = subprocess.Popen(command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0)
        except OSError as e:
            raise PluginTransportError(f"cannot start plugin {command!r}: {e}") from e
        return cls(_PipeChannel(proc), shape, num_steps, timeout)

    @classmethod
    def connect(cls, host: str, port: int, shape, num_steps, timeout: float = 30.0) -> "RemoteDenoiser":
        try:
            sock = socket.create_connection((host, int(port)), timeout=timeout)
        except OSError as e:
            raise PluginTransportError(f"cannot connect to plugin at {host}:{port}: {e}") from e
        return cls(_SocketChannel(sock), shape, num_steps, timeout)

    def _deadline(self):
        return time.monotonic() + self.timeout

    def _handshake(self):
        h, w = self.shape
        deadline = self._deadline()
        self._channel.send(_HANDSHAKE.pack(MAGIC, h, w, self.num_steps), deadline)
        magic, accept = _REPLY.unpack(self._channel.recv_exact(_REPLY.size, deadline, "handshake reply"))
        if magic != MAGIC:
            raise PluginProtocolError(f"bad handshake magic {magic!r}")
        if accept == 0:
            raise PluginHandshakeRejected(f"plugin rejected geometry {h}x{w} with T={self.num_steps}")
        if accept != 1:
            raise PluginProtocolError(f"bad handshake accept byte {accept}")

    def predict_noise(self, y_t, t, schedule=None):
        y_t = np.asarray(y_t)
        if y_t.shape != self.shape:
            raise PluginShapeError(f"image shape {y_t.shape} does not match negotiated geometry {self.shape}")
        if not 0 <= int(t) <= 0xFFFFFFFF:
            raise InvalidArgumentError(f"timestep {t} does not fit the protocol")
        with self._lock:
            if self._closed:
                raise PluginTransportError("plugin connection already closed")
            if self._broken:
                raise PluginTransportError(f"plugin connection unusable after earlier error: {self._broken}")
            try:
                return self._request(y_t, int(t))
            except (PluginTransportError, PluginTimeoutError, PluginProtocolError) as e:
                self._broken = str(e)
                raise

    def _request(self, y_t, t):
        h, w = self.shape
        deadline = self._deadline()
        self._channel.send(_REQUEST.pack(OP_PREDICT, t) + encode_pairs(y_t), deadline)
        op = self._channel.recv_exact(1, deadline, "response opcode")[0]
        if op != OP_RESULT:
            raise PluginProtocolError(f"unexpected response opcode 0x{op:02x}")
        payload = self._channel.recv_exact(8 * h * w, deadline, "response payload")
        out = decode_pairs(payload, h, w)
        if not np.isfinite(out).all():
            raise PluginPayloadError("plugin returned non-finite noise prediction")
        return out

    def close(self):
        with self._lock:
            if self._closed:
                return
            self._closed = True
            if not self._broken:
                try:
                    self._channel.send(bytes([OP_SHUTDOWN]), time.monotonic() + min(self.timeout, 5.0))
                except PluginError:
                    pass
            self._channel.close(force=bool(self._broken))

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class DenoiserPool:
    """Hands each call an idle connection, so concurrent chains never share
    one in-flight request."""

    def __init__(self, members):
        self._members = list(members)
        if not self._members:
            raise InvalidArgumentError("connection pool needs at least one member")
        self._idle = queue.SimpleQueue()
        for m in self._members:
            self._idle.put(m)

    @classmethod
    def open(cls, factory, size: int) -> "DenoiserPool":
        members = []
        try:
            for _ in range(max(1, int(size))):
                members.append(factory())
        except BaseException:
            for m in members:
                m.close()
            raise
        return cls(members)

    def predict_noise(self, y_t, t, schedule=None):
        member = self._idle.get()
        try:
            return member.predict_noise(y_t, t, schedule)
        finally:
            self._idle.put(member)

    def close(self):
        for m in self._members:
            m.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ---------------------------------------------------------------------- server


def _read_exact(f, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = f.read(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


def serve(predict, reader, writer, accept=None) -> None:
    """Run the server side of the protocol until shutdown or end of stream.

    Args:
        predict: ``predict(y_t, t) -> noise`` on ``(H, W)`` complex arrays.
        reader, writer: binary file objects.
        accept: optional ``accept(H, W, T) -> bool`` geometry check.
    """
    head = _read_exact(reader, _HANDSHAKE.size)
    if head is None:
        return
    magic, h, w, T = _HANDSHAKE.unpack(head)
    ok = magic == MAGIC and (accept is None or accept(h, w, T))
    writer.write(_REPLY.pack(MAGIC, 1 if ok else 0))
    writer.flush()
    if not ok:
        return
    while True:
        op = _read_exact(reader, 1)
        if op is None or op[0] == OP_SHUTDOWN:
            return
        if op[0] != OP_PREDICT:
            raise PluginProtocolError(f"unexpected request opcode 0x{op[0]:02x}")
        t_raw = _read_exact(reader, 4)
        payload = _read_exact(reader, 8 * h * w)
        if t_raw is None or payload is None:
            return
        (t,) = struct.unpack("<I", t_raw)
        out = np.asarray(predict(decode_pairs(payload, h, w), t), dtype=np.complex128)
        writer.write(bytes([OP_RESULT]) + encode_pairs(out.reshape(h, w)))
        writer.flush()


def serve_tcp(predict, host: str = "127.0.0.1", port: int = 0, accept=None, ready=None, max_connections=None):
    """Serve TCP connections, each on its own thread.

    ``ready(port)`` is called once the socket listens (useful with ``port=0``).
    With ``max_connections`` set, returns after that many connections ended.
    """

    def handle(conn):
        with conn, conn.makefile("rb") as r, conn.makefile("wb") as w:
            try:
                serve(predict, r, w, accept)
            except (PluginProtocolError, OSError):
                pass

    with socket.create_server((host, port)) as srv:
        if ready is not None:
            ready(srv.getsockname()[1])
        threads = []
        while max_connections is None or len(threads) < max_connections:
            conn, _ = srv.accept()
            th = threading.Thread(target=handle, args=(conn,), daemon=True)
            th.start()
            threads.append(th)
        for th in threads:
            th.join()


_BUILTIN = {
    "echo": lambda y, t: y,
    "zero": lambda y, t: np.zeros_like(y),
}


def main(argv=None):
    """Built-in demo plugins: ``python -m ksgdiffuse.plugin {echo,zero} [--tcp PORT]``."""
    p = argparse.ArgumentParser(prog="python -m ksgdiffuse.plugin")
    p.add_argument("mode", choices=sorted(_BUILTIN))
    p.add_argument("--tcp", type=int, default=None, metavar="PORT")
    args = p.parse_args(argv)
    if args.tcp is not None:
        serve_tcp(_BUILTIN[args.mode], port=args.tcp)
    else:
        serve(_BUILTIN[args.mode], sys.stdin.buffer, sys.stdout.buffer)


if __name__ == "__main__":
    main()
