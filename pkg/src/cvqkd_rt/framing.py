#!/usr/bin/env python

"""
Wire format and authentication of the classical channel.

Frame layout (big-endian)::

    u32 length | u8 version | u8 phase | u64 shot_id | payload | 16-byte tag

``length`` counts everything after itself. The payload is a u16 sequence
number, a u32 JSON length, the JSON body of the message and an optional npz
blob carrying its numpy arrays. The tag is Poly1305 over header and payload
with a one-time key taken from the shot's epoch key.
"""

import io
import json
import logging
import struct

import numpy as np
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.poly1305 import Poly1305

from cvqkd_rt.basemodels import (
    MESSAGE_TYPES,
    FrameMessage,
    PhaseTag,
    ProtocolMessage,
    Role,
)
from cvqkd_rt.config import defaults
from cvqkd_rt.errors import AuthenticationError, TransportError

logger = logging.getLogger(__name__)

LENGTH_PREFIX = struct.Struct(">I")
FRAME_HEADER = struct.Struct(">BBQ")
PAYLOAD_HEADER = struct.Struct(">HI")
MAX_FRAME_BYTES = 1 << 30
SLOTS_PER_ROLE = defaults.EPOCH_SLOTS // 2
_ROLE_SLOT_BASE: dict[str, int] = {"bob": 0, "alice": SLOTS_PER_ROLE}


# ---------------------------------------------------------------------------
# Epoch keys
# ---------------------------------------------------------------------------


class EpochKey:
    """512 bytes of shared secret split into sixteen one-time Poly1305 keys.

    Bob signs with slots 0-7 and Alice with 8-15; within a shot a sender's
    n-th message uses slot ``base + n``.
    """

    def __init__(self, material: bytes, epoch: int, source: str):
        if len(material) != defaults.EPOCH_KEY_BYTES:
            raise AuthenticationError(
                f"epoch key must be {defaults.EPOCH_KEY_BYTES} bytes, got {len(material)}"
            )
        self.material = bytes(material)
        self.epoch = epoch
        self.source = source

    def slot_key(self, sender: Role, seq: int) -> bytes:
        if not 0 <= seq < SLOTS_PER_ROLE:
            raise AuthenticationError(
                f"{sender} exhausted its {SLOTS_PER_ROLE} one-time keys in epoch {self.epoch}"
            )
        slot = _ROLE_SLOT_BASE[sender] + seq
        start = slot * defaults.MAC_KEY_BYTES
        return self.material[start : start + defaults.MAC_KEY_BYTES]

    def __repr__(self) -> str:
        return f"EpochKey(epoch={self.epoch}, source={self.source!r})"


def bootstrap_epoch(psk: bytes, epoch: int) -> EpochKey:
    """Derive an epoch key from the pre-shared key with SHAKE-256 and a counter."""
    digest = hashes.Hash(hashes.SHAKE256(digest_size=defaults.EPOCH_KEY_BYTES))
    digest.update(b"cvqkd-rt/bootstrap/v1")
    digest.update(struct.pack(">Q", epoch))
    digest.update(psk)
    return EpochKey(digest.finalize(), epoch=epoch, source="psk")


# ---------------------------------------------------------------------------
# Payload codec
# ---------------------------------------------------------------------------


def encode_payload(seq: int, message: ProtocolMessage) -> bytes:
    body = message.model_dump(mode="json", exclude=set(message.ARRAY_FIELDS))
    blob = b""
    if message.ARRAY_FIELDS:
        buffer = io.BytesIO()
        np.savez(buffer, **{name: getattr(message, name) for name in message.ARRAY_FIELDS})
        blob = buffer.getvalue()
    text = json.dumps(body, separators=(",", ":"), sort_keys=True).encode()
    return PAYLOAD_HEADER.pack(seq, len(text)) + text + blob


def payload_seq(payload: bytes) -> int:
    if len(payload) < PAYLOAD_HEADER.size:
        raise TransportError("payload shorter than its header")
    return PAYLOAD_HEADER.unpack_from(payload)[0]


def decode_payload(payload: bytes) -> tuple[int, ProtocolMessage]:
    seq, json_len = PAYLOAD_HEADER.unpack_from(payload)
    start = PAYLOAD_HEADER.size
    body = json.loads(payload[start : start + json_len])
    kind = body.get("kind")
    cls = MESSAGE_TYPES.get(kind)
    if cls is None:
        raise TransportError(f"unknown message kind {kind!r}")
    blob = payload[start + json_len :]
    if cls.ARRAY_FIELDS:
        with np.load(io.BytesIO(blob), allow_pickle=False) as arrays:
            body.update({name: arrays[name] for name in cls.ARRAY_FIELDS})
    return seq, cls.model_validate(body)


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------


def _mac_input(frame: FrameMessage) -> bytes:
    return FRAME_HEADER.pack(frame.version, int(frame.phase), frame.shot_id) + frame.payload


def authenticate(frame: FrameMessage, key: bytes) -> FrameMessage:
    """Return the frame with its Poly1305 tag filled in."""
    tag = Poly1305.generate_tag(key, _mac_input(frame))
    return frame.model_copy(update={"mac": tag})


def verify(frame: FrameMessage, key: bytes) -> FrameMessage:
    try:
        Poly1305.verify_tag(key, _mac_input(frame), frame.mac)
    except InvalidSignature as e:
        raise AuthenticationError(
            f"MAC verification failed for shot {frame.shot_id} phase {frame.phase.name}"
        ) from e
    return frame


def encode_frame(frame: FrameMessage) -> bytes:
    body = (
        FRAME_HEADER.pack(frame.version, int(frame.phase), frame.shot_id)
        + frame.payload
        + frame.mac
    )
    return LENGTH_PREFIX.pack(len(body)) + body


def decode_frame(data: bytes) -> FrameMessage:
    """Parse a length-prefixed frame. Structural damage is a TransportError."""
    if len(data) < LENGTH_PREFIX.size + FRAME_HEADER.size + defaults.MAC_TAG_BYTES:
        raise TransportError(f"frame of {len(data)} bytes is too short")
    (length,) = LENGTH_PREFIX.unpack_from(data)
    if length != len(data) - LENGTH_PREFIX.size:
        raise TransportError(f"length prefix {length} does not match {len(data) - 4} bytes")
    version, phase, shot_id = FRAME_HEADER.unpack_from(data, LENGTH_PREFIX.size)
    if version != defaults.WIRE_VERSION:
        raise TransportError(f"unsupported wire version {version}")
    try:
        phase_tag = PhaseTag(phase)
    except ValueError as e:
        raise TransportError(f"unknown phase tag {phase}") from e
    start = LENGTH_PREFIX.size + FRAME_HEADER.size
    return FrameMessage(
        version=version,
        phase=phase_tag,
        shot_id=shot_id,
        payload=data[start : -defaults.MAC_TAG_BYTES],
        mac=data[-defaults.MAC_TAG_BYTES :],
    )


def seal(message: ProtocolMessage, shot_id: int, seq: int, sender: Role, epoch: EpochKey) -> bytes:
    """Message to authenticated wire bytes."""
    frame = FrameMessage(
        phase=message.PHASE, shot_id=shot_id, payload=encode_payload(seq, message)
    )
    return encode_frame(authenticate(frame, epoch.slot_key(sender, seq)))


def open_frame(frame: FrameMessage, sender: Role, epoch: EpochKey) -> tuple[int, ProtocolMessage]:
    """Verify a received frame and decode its message.

    The sequence number is read before verification to select the key; a
    forged number only selects a key under which the tag fails.
    """
    seq = payload_seq(frame.payload)
    verify(frame, epoch.slot_key(sender, seq))
    seq, message = decode_payload(frame.payload)
    if message.PHASE != frame.phase:
        raise AuthenticationError(
            f"{message.kind} carries phase {frame.phase.name}, expected {message.PHASE.name}"
        )
    return seq, message
