import asyncio
import socket
import sys
from pathlib import Path

import numpy as np
import pytest

# Ensure src/ is importable in tests without editable install
PROJECT_ROOT = Path(__file__).parent.parent
SRC_PATH = PROJECT_ROOT / "src"
if str(SRC_PATH) not in sys.path:
    sys.path.insert(0, str(SRC_PATH))


from cvqkd_rt import framing  # noqa: E402
from cvqkd_rt.basemodels import QuadratureBlock, Ready  # noqa: E402
from cvqkd_rt.errors import TransportError  # noqa: E402
from cvqkd_rt.link import RawDetection  # noqa: E402
from cvqkd_rt.transport import (  # noqa: E402
    FuzzTransport,
    LoopbackQuantumLink,
    LoopbackTransport,
    TcpQuantumLink,
    TcpTransport,
)


def _free_port() -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _frame(shot_id: int) -> bytes:
    epoch = framing.bootstrap_epoch(b"\x01" * 32, 0)
    return framing.seal(Ready(detail=str(shot_id)), shot_id, 0, "alice", epoch)


def _echo_physics(block: QuadratureBlock, shot_id: int) -> RawDetection:
    return RawDetection(block.i_samples * 2.0, block.q_samples * 2.0)


@pytest.mark.asyncio
async def test_loopback_pair_is_bidirectional() -> None:
    a, b = LoopbackTransport.pair()
    await a.send(b"ping")
    await b.send(b"pong")
    assert await b.recv() == b"ping"
    assert await a.recv() == b"pong"
    assert a.sent_frames == 1


@pytest.mark.asyncio
async def test_tcp_transport_carries_frames() -> None:
    port = _free_port()
    server_task = asyncio.create_task(TcpTransport.serve("127.0.0.1", port))
    client = await TcpTransport.connect("127.0.0.1", port, attempts=50, delay_s=0.05)
    server = await server_task
    try:
        frames = [_frame(i) for i in range(3)]
        for f in frames:
            await client.send(f)
        received = [await server.recv() for _ in frames]
        assert received == frames
        assert framing.decode_frame(received[2]).shot_id == 2
    finally:
        await client.close()
        await server.close()


@pytest.mark.asyncio
async def test_tcp_closed_peer_is_transport_error() -> None:
    port = _free_port()
    server_task = asyncio.create_task(TcpTransport.serve("127.0.0.1", port))
    client = await TcpTransport.connect("127.0.0.1", port, attempts=50, delay_s=0.05)
    server = await server_task
    await client.close()
    with pytest.raises(TransportError):
        await server.recv()
    await server.close()


@pytest.mark.asyncio
async def test_tcp_connect_gives_up() -> None:
    with pytest.raises(TransportError, match="could not connect"):
        await TcpTransport.connect("127.0.0.1", _free_port(), attempts=2, delay_s=0.01)


@pytest.mark.asyncio
async def test_fuzz_reorders_adjacent_frames() -> None:
    a, b = LoopbackTransport.pair()
    fuzz = FuzzTransport(a, seed=0, reorder=1.0)
    await fuzz.send(b"first")
    await fuzz.send(b"second")
    assert await b.recv() == b"second"
    assert await b.recv() == b"first"
    assert fuzz.counts["reordered"] == 1


@pytest.mark.asyncio
async def test_fuzz_flushes_held_frame_on_recv() -> None:
    a, b = LoopbackTransport.pair()
    fuzz = FuzzTransport(a, seed=0, reorder=1.0)
    await fuzz.send(b"only")
    await b.send(b"reply")
    assert await fuzz.recv() == b"reply"
    assert await b.recv() == b"only"


@pytest.mark.asyncio
async def test_fuzz_duplicates() -> None:
    a, b = LoopbackTransport.pair()
    fuzz = FuzzTransport(a, seed=0, duplicate=1.0)
    await fuzz.send(b"x")
    assert await b.recv() == b"x"
    assert await b.recv() == b"x"
    assert fuzz.counts["duplicated"] == 1


@pytest.mark.asyncio
async def test_fuzz_corruption_keeps_header_parseable() -> None:
    a, b = LoopbackTransport.pair()
    fuzz = FuzzTransport(a, seed=3, corrupt=1.0)
    original = _frame(9)
    await fuzz.send(original)
    damaged = await b.recv()
    assert damaged != original
    assert len(damaged) == len(original)
    frame = framing.decode_frame(damaged)
    assert frame.shot_id == 9
    assert fuzz.counts["corrupted"] == 1


@pytest.mark.asyncio
async def test_loopback_quantum_link_applies_physics() -> None:
    link = LoopbackQuantumLink(_echo_physics)
    block = QuadratureBlock(i_samples=np.arange(4.0), q_samples=-np.arange(4.0))
    await link.send(0, block)
    await link.send(1, block)
    # shot 0 was never collected and is dropped
    det = await link.receive(1)
    np.testing.assert_array_equal(det.y_i, 2.0 * np.arange(4.0))
    await link.send(5, block)
    with pytest.raises(TransportError):
        await link.receive(3)


@pytest.mark.asyncio
async def test_tcp_quantum_link() -> None:
    port = _free_port()
    bob_task = asyncio.create_task(TcpQuantumLink.serve("127.0.0.1", port, _echo_physics))
    alice = await TcpQuantumLink.connect("127.0.0.1", port)
    bob = await bob_task
    try:
        block = QuadratureBlock(i_samples=np.ones(8), q_samples=np.zeros(8), symbol_rate_hz=1e6)
        await alice.send(0, block)
        await alice.send(1, block)
        det = await bob.receive(1)
        np.testing.assert_array_equal(det.y_i, np.full(8, 2.0))
        with pytest.raises(TransportError):
            await alice.receive(0)
    finally:
        await alice.close()
        await bob.close()
