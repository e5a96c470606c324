#!/usr/bin/env python

"""
Classical and quantum transports between the two nodes.

Classical transports move already-framed bytes (each frame carries its own
length prefix). Quantum links carry Alice's symbols to Bob, who applies the
link physics on receipt: symbol-level channel or the waveform DSP chain.
"""

import asyncio
import io
import logging
import struct
from abc import ABC, abstractmethod

import numpy as np

from cvqkd_rt.basemodels import QuadratureBlock
from cvqkd_rt.core import SeedLike, as_generator
from cvqkd_rt.errors import TransportError
from cvqkd_rt.framing import FRAME_HEADER, LENGTH_PREFIX, MAX_FRAME_BYTES
from cvqkd_rt.link import LinkPhysics, RawDetection

logger = logging.getLogger(__name__)

_QUANTUM_HEADER = struct.Struct(">QI")


# ---------------------------------------------------------------------------
# Classical channel
# ---------------------------------------------------------------------------


class ClassicalTransport(ABC):
    """Ordered, possibly unreliable, byte-frame pipe to the peer."""

    @abstractmethod
    async def send(self, data: bytes) -> None: ...

    @abstractmethod
    async def recv(self) -> bytes: ...

    async def close(self) -> None:
        return None


class LoopbackTransport(ClassicalTransport):
    """In-process endpoint backed by two asyncio queues."""

    def __init__(self, inbox: asyncio.Queue, outbox: asyncio.Queue):
        self._inbox = inbox
        self._outbox = outbox
        self.sent_frames = 0

    @classmethod
    def pair(cls) -> tuple["LoopbackTransport", "LoopbackTransport"]:
        a_to_b: asyncio.Queue = asyncio.Queue()
        b_to_a: asyncio.Queue = asyncio.Queue()
        return cls(b_to_a, a_to_b), cls(a_to_b, b_to_a)

    async def send(self, data: bytes) -> None:
        self.sent_frames += 1
        await self._outbox.put(bytes(data))

    async def recv(self) -> bytes:
        return await self._inbox.get()


async def _read_prefixed(reader: asyncio.StreamReader) -> bytes:
    try:
        prefix = await reader.readexactly(LENGTH_PREFIX.size)
        (length,) = LENGTH_PREFIX.unpack(prefix)
        if length > MAX_FRAME_BYTES:
            raise TransportError(f"peer announced a {length}-byte frame")
        return prefix + await reader.readexactly(length)
    except asyncio.IncompleteReadError as e:
        raise TransportError("connection closed by peer") from e


class TcpTransport(ClassicalTransport):
    """Classical channel over one TCP connection."""

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        self._reader = reader
        self._writer = writer

    @classmethod
    async def connect(
        cls, host: str, port: int, attempts: int = 50, delay_s: float = 0.2
    ) -> "TcpTransport":
        last: OSError | None = None
        for _ in range(attempts):
            try:
                reader, writer = await asyncio.open_connection(host, port)
                logger.info("Connected to %s:%d", host, port)
                return cls(reader, writer)
            except OSError as e:
                last = e
                await asyncio.sleep(delay_s)
        raise TransportError(f"could not connect to {host}:{port}: {last}")

    @classmethod
    async def serve(cls, host: str, port: int) -> "TcpTransport":
        """Listen and return the first accepted connection."""
        loop = asyncio.get_running_loop()
        accepted: asyncio.Future = loop.create_future()

        async def on_connect(reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
            if not accepted.done():
                accepted.set_result((reader, writer))
            else:
                writer.close()

        try:
            server = await asyncio.start_server(on_connect, host, port)
        except OSError as e:
            raise TransportError(f"could not listen on {host}:{port}: {e}") from e
        logger.info("Listening on %s:%d", host, port)
        # stop listening; the accepted connection stays open
        try:
            reader, writer = await accepted
        finally:
            server.close()
        return cls(reader, writer)

    async def send(self, data: bytes) -> None:
        try:
            self._writer.write(data)
            await self._writer.drain()
        except (ConnectionError, OSError) as e:
            raise TransportError(f"send failed: {e}") from e

    async def recv(self) -> bytes:
        return await _read_prefixed(self._reader)

    async def close(self) -> None:
        self._writer.close()
        try:
            await self._writer.wait_closed()
        except (ConnectionError, OSError):
            pass


class FuzzTransport(ClassicalTransport):
    """Wraps a transport and reorders, duplicates or corrupts outgoing frames."""

    def __init__(
        self,
        inner: ClassicalTransport,
        seed: SeedLike = 0,
        reorder: float = 0.0,
        duplicate: float = 0.0,
        corrupt: float = 0.0,
    ):
        self.inner = inner
        self._rng = as_generator(seed)
        self.reorder = reorder
        self.duplicate = duplicate
        self.corrupt = corrupt
        self._held: bytes | None = None
        self.counts = {"reordered": 0, "duplicated": 0, "corrupted": 0}

    def _maybe_corrupt(self, data: bytes) -> bytes:
        if self.corrupt and self._rng.random() < self.corrupt:
            self.counts["corrupted"] += 1
            buf = bytearray(data)
            # payload and tag only; the header still parses
            pos = int(self._rng.integers(LENGTH_PREFIX.size + FRAME_HEADER.size, len(buf)))
            buf[pos] ^= 1 << int(self._rng.integers(8))
            return bytes(buf)
        return data

    async def _flush(self) -> None:
        if self._held is not None:
            held, self._held = self._held, None
            await self.inner.send(held)

    async def send(self, data: bytes) -> None:
        data = self._maybe_corrupt(data)
        if self._held is None and self.reorder and self._rng.random() < self.reorder:
            self.counts["reordered"] += 1
            self._held = data
            return
        await self.inner.send(data)
        if self.duplicate and self._rng.random() < self.duplicate:
            self.counts["duplicated"] += 1
            await self.inner.send(data)
        await self._flush()

    async def recv(self) -> bytes:
        # a sender that starts waiting releases anything it held back
        await self._flush()
        return await self.inner.recv()

    async def close(self) -> None:
        await self._flush()
        await self.inner.close()


# ---------------------------------------------------------------------------
# Quantum channel
# ---------------------------------------------------------------------------


class QuantumLink(ABC):
    """Alice sends a symbol block per shot; Bob receives raw detections."""

    @abstractmethod
    async def send(self, shot_id: int, block: QuadratureBlock) -> None: ...

    @abstractmethod
    async def receive(self, shot_id: int) -> RawDetection: ...

    async def close(self) -> None:
        return None


class LoopbackQuantumLink(QuantumLink):
    def __init__(self, physics: LinkPhysics):
        self.physics = physics
        self._queue: asyncio.Queue = asyncio.Queue()

    async def send(self, shot_id: int, block: QuadratureBlock) -> None:
        await self._queue.put((shot_id, block))

    async def receive(self, shot_id: int) -> RawDetection:
        while True:
            sent_id, block = await self._queue.get()
            if sent_id == shot_id:
                return await asyncio.to_thread(self.physics, block, shot_id)
            if sent_id > shot_id:
                raise TransportError(f"symbols of shot {sent_id} arrived while in {shot_id}")
            logger.debug("Dropping stale symbols of shot %d", sent_id)


def _encode_block(shot_id: int, block: QuadratureBlock) -> bytes:
    buffer = io.BytesIO()
    np.savez(
        buffer,
        i=block.i_samples,
        q=block.q_samples,
        rate=np.array(block.symbol_rate_hz),
    )
    blob = buffer.getvalue()
    return _QUANTUM_HEADER.pack(shot_id, len(blob)) + blob


class TcpQuantumLink(QuantumLink):
    """Symbols over a second TCP connection; Bob applies the physics locally."""

    def __init__(
        self,
        reader: asyncio.StreamReader | None,
        writer: asyncio.StreamWriter | None,
        physics: LinkPhysics | None = None,
    ):
        self._reader = reader
        self._writer = writer
        self.physics = physics

    @classmethod
    async def connect(cls, host: str, port: int) -> "TcpQuantumLink":
        tcp = await TcpTransport.connect(host, port)
        return cls(tcp._reader, tcp._writer)

    @classmethod
    async def serve(cls, host: str, port: int, physics: LinkPhysics) -> "TcpQuantumLink":
        tcp = await TcpTransport.serve(host, port)
        return cls(tcp._reader, tcp._writer, physics)

    async def send(self, shot_id: int, block: QuadratureBlock) -> None:
        if self._writer is None:
            raise TransportError("this end of the quantum link cannot send")
        self._writer.write(_encode_block(shot_id, block))
        await self._writer.drain()

    async def receive(self, shot_id: int) -> RawDetection:
        if self._reader is None or self.physics is None:
            raise TransportError("this end of the quantum link cannot receive")
        while True:
            try:
                header = await self._reader.readexactly(_QUANTUM_HEADER.size)
                sent_id, length = _QUANTUM_HEADER.unpack(header)
                blob = await self._reader.readexactly(length)
            except asyncio.IncompleteReadError as e:
                raise TransportError("quantum link closed by peer") from e
            if sent_id < shot_id:
                continue
            if sent_id > shot_id:
                raise TransportError(f"symbols of shot {sent_id} arrived while in {shot_id}")
            with np.load(io.BytesIO(blob), allow_pickle=False) as arrays:
                block = QuadratureBlock(
                    i_samples=arrays["i"],
                    q_samples=arrays["q"],
                    symbol_rate_hz=float(arrays["rate"]),
                )
            return await asyncio.to_thread(self.physics, block, shot_id)

    async def close(self) -> None:
        if self._writer is not None:
            self._writer.close()
