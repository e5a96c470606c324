#!/usr/bin/env python

"""
Real-time protocol engine: Alice and Bob nodes, the authenticated session
between them and the shot loop.

Bob drives every exchange (reverse reconciliation). A shot walks through
calibration, quantum exchange, parameter estimation, reconciliation,
confirmation and privacy amplification; any phase may end it with a failure
status, after which both nodes start the next shot from calibration. A MAC
failure is a security event and halts the node instead.
"""

import asyncio
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from cvqkd_rt.basemodels import (
    Abort,
    AmplificationAck,
    AmplificationResult,
    AmplificationSeed,
    CalibrationTraces,
    ChannelEstimate,
    ConfirmationDigest,
    ConfirmationResult,
    Disclosure,
    DisclosureRequest,
    EstimationResult,
    KeyMaterial,
    LdpcCode,
    ProtocolConfig,
    ProtocolMessage,
    QuadratureBlock,
    RateLedger,
    Ready,
    ReceiverModel,
    ReconciliationData,
    ReconciliationResult,
    Role,
    SecurityReport,
    ShotRecord,
    ShotState,
    ShotStatus,
    StartShot,
    SymbolsSent,
    SyncStatus,
)
from cvqkd_rt.core import gaussian_symbols, rng_stream
from cvqkd_rt.errors import (
    AuthenticationError,
    ConfirmationError,
    CvqkdError,
    ParameterEstimationError,
    PoolExhaustedError,
    ProtocolOrderError,
    SyncError,
    TransportError,
)
from cvqkd_rt.framing import EpochKey, decode_frame, open_frame, seal
from cvqkd_rt.graph_factory import run_shot_graph
from cvqkd_rt.keybuffer import KeyBuffer
from cvqkd_rt.ldpc import load_code
from cvqkd_rt.link import (
    LinkPhysics,
    calibrate_snu,
    normalize_detection,
    simulate_calibration_traces,
    symbol_physics,
)
from cvqkd_rt.postprocessing import (
    confirm,
    crc32_bits,
    new_hash_seed,
    pack_frames,
    pack_syndromes,
    privacy_amplify,
    reconcile_alice_async,
    reconcile_bob,
    reconciled_key,
    remaining_reals,
    unpack_syndromes,
)
from cvqkd_rt.rates import FerTracker, key_length_policy
from cvqkd_rt.security import (
    channel_from_estimate,
    estimate_channel,
    mutual_information,
    optimize_vmod,
    security_report,
)
from cvqkd_rt.shared_utilities import append_jsonl
from cvqkd_rt.transport import (
    ClassicalTransport,
    FuzzTransport,
    LoopbackQuantumLink,
    LoopbackTransport,
    QuantumLink,
    TcpQuantumLink,
    TcpTransport,
)

logger = logging.getLogger(__name__)

TIMING_KEYS: dict[str, str] = {
    "calibrate": "calibration",
    "exchange": "exchange_overhead",
    "estimate": "estimation",
    "reconcile": "reconciliation",
    "confirm": "confirmation",
    "amplify": "amplification",
}
RECONCILE_TIMEOUT_FACTOR = 10.0
_PEER: dict[str, Role] = {"alice": "bob", "bob": "alice"}


class PeerAbortError(CvqkdError):
    """The peer ended the current shot with an Abort frame."""

    def __init__(self, status: ShotStatus, reason: str):
        super().__init__(f"peer aborted the shot ({status}): {reason}")
        self.status = status
        self.reason = reason


def status_for_exception(exc: BaseException) -> ShotStatus | None:
    """Shot status for an exception raised inside a phase; None means halt."""
    if isinstance(exc, AuthenticationError | PoolExhaustedError):
        return None
    if isinstance(exc, PeerAbortError):
        return exc.status
    if isinstance(exc, ParameterEstimationError):
        return "fail_param_est"
    if isinstance(exc, ConfirmationError):
        return "fail_confirm"
    return "fail_sync"


# ---------------------------------------------------------------------------
# Authenticated session
# ---------------------------------------------------------------------------


class SecureSession:
    """Per-shot authenticated message stream over a classical transport.

    Frames of earlier shots are dropped, frames of later shots are held until
    that shot begins, and within a shot messages are delivered in sender
    sequence order with duplicates discarded.
    """

    def __init__(self, role: Role, transport: ClassicalTransport, timeout_s: float):
        self.role = role
        self.peer = _PEER[role]
        self.transport = transport
        self.timeout_s = timeout_s
        self.shot_id = -1
        self.epoch: EpochKey | None = None
        self._send_seq = 0
        self._recv_seq = 0
        self._pending: dict[int, ProtocolMessage] = {}
        self._future: list = []
        self.dropped = 0

    def begin_shot(self, shot_id: int, epoch: EpochKey) -> None:
        if shot_id <= self.shot_id:
            raise ProtocolOrderError(f"shot id {shot_id} does not advance past {self.shot_id}")
        self.shot_id = shot_id
        self.epoch = epoch
        self._send_seq = 0
        self._recv_seq = 0
        self._pending = {}
        held, self._future = self._future, []
        for frame in held:
            self._accept(frame)

    def _accept(self, frame) -> None:
        if frame.shot_id < self.shot_id:
            self.dropped += 1
            logger.debug("Dropping stale frame of shot %d", frame.shot_id)
            return
        if frame.shot_id > self.shot_id:
            self._future.append(frame)
            return
        seq, message = open_frame(frame, self.peer, self.epoch)
        if seq < self._recv_seq or seq in self._pending:
            self.dropped += 1
            logger.debug("Dropping duplicate %s (seq %d)", message.kind, seq)
            return
        self._pending[seq] = message

    async def send(self, message: ProtocolMessage) -> None:
        data = seal(message, self.shot_id, self._send_seq, self.role, self.epoch)
        self._send_seq += 1
        await self.transport.send(data)

    async def recv(self, *kinds: type[ProtocolMessage], timeout_s: float | None = None):
        """Next in-order message of the shot, which must be one of ``kinds``."""
        deadline = time.monotonic() + (timeout_s or self.timeout_s)
        while self._recv_seq not in self._pending:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TransportError(f"{self.role} timed out waiting for {kinds[0].__name__}")
            try:
                data = await asyncio.wait_for(self.transport.recv(), remaining)
            except TimeoutError as e:
                raise TransportError(
                    f"{self.role} timed out waiting for {kinds[0].__name__}"
                ) from e
            try:
                frame = decode_frame(data)
            except TransportError as e:
                raise AuthenticationError(f"frame failed integrity checks: {e}") from e
            self._accept(frame)
        message = self._pending.pop(self._recv_seq)
        self._recv_seq += 1
        if isinstance(message, Abort):
            raise PeerAbortError(message.status, message.reason)
        if not isinstance(message, kinds):
            expected = ", ".join(k.__name__ for k in kinds)
            raise ProtocolOrderError(f"received {message.kind} while expecting {expected}")
        return message


# ---------------------------------------------------------------------------
# Nodes
# ---------------------------------------------------------------------------


@dataclass
class ShotWorkspace:
    """Bulk per-shot data of one node; discarded when the shot ends."""

    shot_id: int
    v_mod: float
    started: float = field(default_factory=time.perf_counter)
    wall_clock_start: float = field(default_factory=time.time)
    durations: dict[str, float] = field(default_factory=dict)
    exchanged: bool = False
    n_symbols: int = 0
    traces: CalibrationTraces | None = None
    block: QuadratureBlock | None = None
    pairs: np.ndarray | None = None
    disclosed: np.ndarray | None = None
    receiver: ReceiverModel | None = None
    estimate: ChannelEstimate | None = None
    report: SecurityReport | None = None
    beta: float | None = None
    noise_var: float | None = None
    frames_total: int = 0
    frames_failed: int = 0
    fer: float | None = None
    key: KeyMaterial | None = None
    final: KeyMaterial | None = None
    skf: float | None = None
    next_v_mod: float | None = None
    pilot_snr_db: float | None = None
    bob_bits: np.ndarray | None = None


def disclosure_indices(seed: int, n_symbols: int, count: int) -> np.ndarray:
    """Sorted symbol indices whose values Alice reveals; both nodes derive them from ``seed``."""
    rng = np.random.Generator(np.random.Philox(seed))
    return np.sort(rng.choice(n_symbols, size=count, replace=False))


def disclosure_count(config: ProtocolConfig, n_symbols: int) -> int:
    return max(1, int(round(config.disclosure_fraction * n_symbols)))


class ProtocolNode:
    """State shared by both roles: session, key buffer, timing and the ledger."""

    role: Role

    def __init__(
        self,
        config: ProtocolConfig,
        transport: ClassicalTransport,
        quantum_link: QuantumLink,
        code: LdpcCode,
        key_buffer: KeyBuffer | None = None,
        ledger_path: str | Path | None = None,
    ):
        self.config = config
        self.session = SecureSession(self.role, transport, config.timing.message_timeout_s)
        self.quantum_link = quantum_link
        self.code = code
        self.key_buffer = key_buffer or KeyBuffer(
            config.psk,
            pool_target_epochs=config.auth.pool_target_epochs,
            bootstrap_policy=config.auth.bootstrap_policy,
        )
        self.ledger = RateLedger()
        self.ledger_path = Path(ledger_path) if ledger_path else None
        self.fer_tracker = FerTracker(
            config.reconciliation.fer_prior, config.reconciliation.fer_ewma_weight
        )
        self.next_v_mod = config.v_mod_snu
        self.ws: ShotWorkspace | None = None
        self.final_keys: list[KeyMaterial] = []

    # -- shot lifecycle ----------------------------------------------------

    def _stream(self, name: str) -> np.random.Generator:
        return rng_stream(self.config.seeds.master_seed, self.ws.shot_id, name)

    async def run_shot(self, shot_id: int) -> ShotRecord:
        self.ws = ShotWorkspace(shot_id=shot_id, v_mod=self.next_v_mod)
        try:
            result = await run_shot_graph(self, shot_id, self.next_v_mod)
        finally:
            self.ws = None
        return ShotRecord.model_validate(result["final_output"])

    async def run_phase(self, name: str, state: ShotState) -> dict[str, Any]:
        """Run one phase with timing and exception-to-status mapping."""
        start = time.perf_counter()
        try:
            outcome = await getattr(self, f"_{name}")()
        except CvqkdError as e:
            status = status_for_exception(e)
            if status is None:
                logger.error("%s halting in %s: %s", self.role, name, e)
                raise
            self.ws.durations[name] = time.perf_counter() - start
            if not isinstance(e, PeerAbortError):
                await self._send_abort(status, str(e))
            logger.info("Shot %d %s: %s in %s (%s)", state.shot_id, self.role, status, name, e)
            return {"status": status, "detail": str(e), "errors": [f"{name}: {e}"]}
        self.ws.durations[name] = time.perf_counter() - start
        if outcome is not None:
            status, detail = outcome
            logger.info("Shot %d %s: %s in %s (%s)", state.shot_id, self.role, status, name, detail)
            return {"status": status, "detail": detail, "messages": [f"{name}: {detail}"]}
        return {"messages": [f"{name}: ok"], "v_mod": self.ws.v_mod}

    async def _send_abort(self, status: ShotStatus, reason: str) -> None:
        try:
            await self.session.send(Abort(status=status, reason=reason[:200]))
        except (CvqkdError, OSError) as e:
            logger.debug("Could not deliver abort: %s", e)

    def _timing(self) -> tuple[float, float, dict[str, float]]:
        ws = self.ws
        t_sym = ws.n_symbols / self.config.symbol_rate_hz if ws.exchanged else 0.0
        if self.config.timing.mode == "synthetic":
            table = self.config.timing.phase_durations_s
            durations = {phase: table[TIMING_KEYS[phase]] for phase in ws.durations}
            t_total = math.fsum(durations.values()) + t_sym
        else:
            durations = dict(ws.durations)
            t_total = max(time.perf_counter() - ws.started, t_sym)
        return t_sym, t_total, durations

    async def finalize(self, state: ShotState) -> dict[str, Any]:
        ws = self.ws
        status: ShotStatus = state.status or "success"
        key_bits = 0
        if status == "success" and ws.final is not None and len(ws.final) > 0:
            key_bits = len(ws.final)
            self.key_buffer.deposit(ws.final)
            self.final_keys.append(ws.final)
        elif status == "success":
            status = "fail_param_est"
        t_sym, t_total, durations = self._timing()
        estimate = ws.estimate
        report = ws.report
        record = ShotRecord(
            shot_id=ws.shot_id,
            role=self.role,
            status=status,
            v_mod=ws.v_mod,
            next_v_mod=ws.next_v_mod,
            t_ch_hat=estimate.t_ch_hat if estimate else None,
            xi_ch_hat=estimate.xi_ch_hat if estimate else None,
            t_rec=ws.receiver.transmittance if ws.receiver else None,
            v_el=ws.receiver.electronic_noise if ws.receiver else None,
            snr=report.snr if report else None,
            i_ab=report.i_ab if report else None,
            eve_info=report.eve_info if report else None,
            skf=ws.skf,
            beta=ws.beta,
            fer=ws.fer,
            frames_total=ws.frames_total,
            frames_failed=ws.frames_failed,
            key_bits=key_bits,
            t_sym=t_sym,
            t_total=t_total,
            phase_durations=durations,
            wall_clock_start=ws.wall_clock_start if self.config.timing.mode == "live" else None,
            pilot_snr_db=ws.pilot_snr_db,
            detail=state.detail,
        )
        self.ledger.append(record)
        if self.ledger_path is not None:
            append_jsonl(record, self.ledger_path)
        if ws.next_v_mod is not None and self.config.adapt_v_mod:
            self.next_v_mod = ws.next_v_mod
        return {
            "status": status,
            "final_output": record.model_dump(),
            "messages": [f"shot {ws.shot_id} finished: {status}, {key_bits} key bits"],
        }

    def _begin(self) -> None:
        epoch = self.key_buffer.next_epoch(self.ws.shot_id)
        self.session.begin_shot(self.ws.shot_id, epoch)

    def _confirmed_key(self, match: bool) -> KeyMaterial | None:
        key = self.ws.key
        if not match:
            return None
        return KeyMaterial(bits=key.bits, shot_id=key.shot_id, stage="confirmed")

    def _record_decoding(self, bits: np.ndarray, success: np.ndarray):
        ws = self.ws
        ws.frames_total = int(success.size)
        ws.frames_failed = int(success.size - success.sum())
        ws.fer = ws.frames_failed / ws.frames_total
        self.fer_tracker.update(ws.fer)
        if not success.any():
            return "fail_error_corr", f"all {ws.frames_total} frames failed to decode"
        ws.key = reconciled_key(bits, success, ws.shot_id)
        return None


class BobNode(ProtocolNode):
    """Receiver and protocol driver."""

    role: Role = "bob"

    def __init__(self, *args, receiver: ReceiverModel | None = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.receiver = receiver or self.config.link.receiver

    async def _calibrate(self):
        ws = self.ws
        self._begin()
        ws.n_symbols = self.config.shot_symbols
        await self.session.send(StartShot(v_mod=ws.v_mod, n_symbols=ws.n_symbols))
        ws.traces = simulate_calibration_traces(
            self.receiver,
            self.config.link.adc_shot_noise_variance,
            self.config.link.calibration_samples,
            self._stream("calibration"),
        )
        calibrate_snu(ws.traces)
        ready = await self.session.recv(Ready)
        if not ready.ok:
            return "fail_sync", f"alice not ready: {ready.detail}"
        return None

    async def _exchange(self):
        ws = self.ws
        await self.session.recv(SymbolsSent)
        try:
            raw = await asyncio.wait_for(
                self.quantum_link.receive(ws.shot_id), self.config.timing.message_timeout_s
            )
        except SyncError as e:
            await self.session.send(SyncStatus(ok=False, detail=str(e)))
            return "fail_sync", str(e)
        except TimeoutError as e:
            raise TransportError("no symbols arrived on the quantum link") from e
        if raw.diagnostics is not None:
            ws.pilot_snr_db = raw.diagnostics.pilot_snr_db
        detection = normalize_detection(raw.y_i, raw.y_q, ws.traces, raw.diagnostics)
        ws.pairs = detection.as_pairs()
        ws.receiver = ReceiverModel(
            transmittance=self.receiver.transmittance,
            electronic_noise=max(detection.v_el_hat or 0.0, 0.0),
        )
        ws.exchanged = True
        await self.session.send(SyncStatus(ok=True))
        return None

    async def _estimate(self):
        ws = self.ws
        cfg = self.config
        count = disclosure_count(cfg, ws.n_symbols)
        seed = int(self._stream("disclosure").integers(0, 2**63 - 1))
        await self.session.send(DisclosureRequest(seed=seed, count=count))
        ws.disclosed = disclosure_indices(seed, ws.n_symbols, count)
        disclosure = await self.session.recv(Disclosure)
        x = np.asarray(disclosure.x, dtype=np.float64)
        if x.shape != (count, 2):
            raise ProtocolOrderError(f"disclosure of shape {x.shape}, expected ({count}, 2)")

        try:
            ws.estimate = estimate_channel(
                x, ws.pairs[ws.disclosed], ws.v_mod, ws.receiver, cfg.min_disclosed_pairs
            )
            channel = channel_from_estimate(ws.estimate)
        except ParameterEstimationError as e:
            await self.session.send(EstimationResult(proceed=False, detail=str(e)))
            return "fail_param_est", str(e)

        code_rate = self.code.rate
        min_snr = self.code.design_snr * (1.0 + cfg.reconciliation.snr_margin)
        if cfg.adapt_v_mod:
            ws.next_v_mod = optimize_vmod(
                channel,
                ws.receiver,
                beta=1.0,
                fer=self.fer_tracker.value,
                nu=cfg.disclosure_fraction,
                bounds=cfg.v_mod_bounds_snu,
                attack=cfg.attack_model,
                code_rate=code_rate,
                min_snr=min_snr,
                receiver=cfg.receiver_accounting,
            )

        i_ab = mutual_information(channel, ws.receiver, ws.v_mod)
        if i_ab <= 2.0 * code_rate:
            reason = f"I_AB {i_ab:.4f} below the code rate {2.0 * code_rate:.4f}"
            await self.session.send(Abort(status="fail_error_corr", reason=reason))
            return "fail_error_corr", reason
        ws.beta = 2.0 * code_rate / i_ab
        ws.report = security_report(
            channel,
            ws.receiver,
            ws.v_mod,
            ws.beta,
            self.fer_tracker.value,
            cfg.disclosure_fraction,
            cfg.attack_model,
            cfg.receiver_accounting,
        )
        ws.noise_var = 1.0 / max(ws.report.snr, 1e-12)
        if ws.report.skf <= 0.0:
            await self.session.send(
                EstimationResult(proceed=False, skf=ws.report.skf, snr=ws.report.snr)
            )
            return "fail_param_est", f"SKF {ws.report.skf:.3g} <= 0"
        ws.skf = ws.report.skf
        await self.session.send(
            EstimationResult(proceed=True, skf=ws.report.skf, snr=ws.report.snr)
        )
        return None

    async def _reconcile(self):
        ws = self.ws
        reals = remaining_reals(ws.pairs, ws.disclosed)
        frames = pack_frames(reals, self.code.n)
        bob = reconcile_bob(
            frames, self.code, self._stream("codeword"), self.config.reconciliation.mdr_dimension
        )
        ws.bob_bits = bob.bits
        await self.session.send(
            ReconciliationData(
                code_id=self.code.code_id,
                noise_var=ws.noise_var,
                alpha=bob.alpha,
                syndromes=pack_syndromes(bob.syndromes),
            )
        )
        result = await self.session.recv(
            ReconciliationResult,
            timeout_s=self.config.timing.message_timeout_s * RECONCILE_TIMEOUT_FACTOR,
        )
        success = np.asarray(result.success, dtype=bool)
        if success.shape != (frames.shape[0],):
            raise ProtocolOrderError("reconciliation result does not cover every frame")
        return self._record_decoding(bob.bits, success)

    async def _confirm(self):
        digest = await self.session.recv(ConfirmationDigest)
        confirmed = confirm(self.ws.key, digest.crc)
        await self.session.send(ConfirmationResult(match=confirmed is not None))
        if confirmed is None:
            return "fail_confirm", "CRC mismatch"
        self.ws.key = confirmed
        return None

    async def _amplify(self):
        ws = self.ws
        cfg = self.config
        channel = channel_from_estimate(ws.estimate)
        ws.report = security_report(
            channel,
            ws.receiver,
            ws.v_mod,
            ws.beta,
            ws.fer,
            cfg.disclosure_fraction,
            cfg.attack_model,
            cfg.receiver_accounting,
        )
        ws.skf = ws.report.skf
        try:
            out_len = key_length_policy(ws.report, ws.n_symbols, len(ws.key))
        except ValueError as e:
            await self.session.send(Abort(status="fail_param_est", reason=str(e)))
            return "fail_param_est", str(e)
        seed = new_hash_seed(self._stream("hash_seed"))
        await self.session.send(AmplificationSeed(seed_hex=seed.hex(), out_len=out_len))
        ws.final = privacy_amplify(ws.key, seed, out_len)
        ack = await self.session.recv(AmplificationAck)
        match = ack.crc == crc32_bits(ws.final.bits)
        await self.session.send(AmplificationResult(match=match))
        if not match:
            ws.final = None
            return "fail_confirm", "final keys differ after amplification"
        if out_len == 0:
            return "fail_param_est", "no extractable key bits"
        return None


class AliceNode(ProtocolNode):
    """Transmitter; answers Bob's requests."""

    role: Role = "alice"

    async def _calibrate(self):
        ws = self.ws
        self._begin()
        start = await self.session.recv(StartShot)
        ws.v_mod = start.v_mod
        ws.n_symbols = start.n_symbols
        ws.block = gaussian_symbols(
            self._stream("alice_symbols"), ws.n_symbols, ws.v_mod, self.config.symbol_rate_hz
        )
        await self.session.send(Ready(ok=True))
        return None

    async def _exchange(self):
        ws = self.ws
        await self.quantum_link.send(ws.shot_id, ws.block)
        ws.pairs = ws.block.as_pairs()
        ws.block = None
        await self.session.send(SymbolsSent(n_symbols=ws.n_symbols))
        status = await self.session.recv(SyncStatus)
        if not status.ok:
            return "fail_sync", status.detail or "bob lost synchronization"
        ws.exchanged = True
        return None

    async def _estimate(self):
        ws = self.ws
        request = await self.session.recv(DisclosureRequest)
        if request.count > ws.n_symbols:
            raise ProtocolOrderError("disclosure request exceeds the shot size")
        ws.disclosed = disclosure_indices(request.seed, ws.n_symbols, request.count)
        await self.session.send(Disclosure(x=ws.pairs[ws.disclosed]))
        result = await self.session.recv(EstimationResult)
        if not result.proceed:
            return "fail_param_est", result.detail or f"SKF {result.skf}"
        ws.skf = result.skf
        return None

    async def _reconcile(self):
        ws = self.ws
        data = await self.session.recv(ReconciliationData)
        if data.code_id != self.code.code_id:
            raise ProtocolOrderError(f"peer uses code {data.code_id}, local {self.code.code_id}")
        frames = pack_frames(remaining_reals(ws.pairs, ws.disclosed), self.code.n)
        syndromes = unpack_syndromes(data.syndromes, self.code.m)
        rcfg = self.config.reconciliation
        result = await reconcile_alice_async(
            frames,
            data.alpha,
            syndromes,
            self.code,
            data.noise_var,
            max_iter=rcfg.max_iter,
            batch_frames=rcfg.batch_frames,
        )
        await self.session.send(
            ReconciliationResult(
                success=result.success, iterations=int(np.round(result.iterations.mean()))
            )
        )
        return self._record_decoding(result.bits, result.success)

    async def _confirm(self):
        await self.session.send(ConfirmationDigest(crc=crc32_bits(self.ws.key.bits)))
        result = await self.session.recv(ConfirmationResult)
        if not result.match:
            return "fail_confirm", "CRC mismatch"
        self.ws.key = self._confirmed_key(True)
        return None

    async def _amplify(self):
        ws = self.ws
        seed = await self.session.recv(AmplificationSeed)
        if seed.out_len > len(ws.key):
            raise ProtocolOrderError("requested key length exceeds the reconciled key")
        ws.final = privacy_amplify(ws.key, bytes.fromhex(seed.seed_hex), seed.out_len)
        await self.session.send(AmplificationAck(crc=crc32_bits(ws.final.bits)))
        verdict = await self.session.recv(AmplificationResult)
        if not verdict.match:
            ws.final = None
            return "fail_confirm", "final keys differ after amplification"
        if seed.out_len == 0:
            return "fail_param_est", "no extractable key bits"
        return None


# ---------------------------------------------------------------------------
# Running nodes
# ---------------------------------------------------------------------------


def build_physics(config: ProtocolConfig) -> LinkPhysics:
    """Link physics applied at Bob: symbol-level channel or the waveform chain."""
    link = config.link
    if config.waveform:
        from cvqkd_rt.dsp import waveform_physics

        return waveform_physics(
            link.channel,
            link.receiver,
            config.dsp,
            config.seeds.master_seed,
            link.adc_shot_noise_variance,
        )
    return symbol_physics(
        link.channel, link.receiver, config.seeds.master_seed, link.adc_shot_noise_variance
    )


def warm_start_v_mod(config: ProtocolConfig, code: LdpcCode) -> float | None:
    """V_mod for the first shot from the nominal link, as the optimizer would pick it."""
    link = config.link
    return optimize_vmod(
        link.channel,
        link.receiver,
        beta=1.0,
        fer=config.reconciliation.fer_prior,
        nu=config.disclosure_fraction,
        bounds=config.v_mod_bounds_snu,
        attack=config.attack_model,
        code_rate=code.rate,
        min_snr=code.design_snr * (1.0 + config.reconciliation.snr_margin),
        receiver=config.receiver_accounting,
    )


async def _role_loop(node: ProtocolNode, shot_ids: range) -> list[ShotRecord]:
    return [await node.run_shot(shot_id) for shot_id in shot_ids]


async def _loopback_role(node: ProtocolNode, shot_ids: range) -> list[ShotRecord]:
    try:
        return await _role_loop(node, shot_ids)
    finally:
        # releases a frame a FuzzTransport may still hold back
        await node.session.transport.close()


@dataclass
class PairResult:
    """An in-process Alice and Bob sharing loopback transports."""

    alice: AliceNode
    bob: BobNode

    @property
    def alice_records(self) -> list[ShotRecord]:
        return self.alice.ledger.records

    @property
    def bob_records(self) -> list[ShotRecord]:
        return self.bob.ledger.records

    async def run(self, shot_ids: range) -> None:
        """Run both roles over ``shot_ids``; a halting protocol error is re-raised unwrapped."""
        try:
            async with asyncio.TaskGroup() as group:
                group.create_task(_loopback_role(self.alice, shot_ids))
                group.create_task(_loopback_role(self.bob, shot_ids))
        except ExceptionGroup as eg:
            halted = [e for e in eg.exceptions if isinstance(e, CvqkdError)]
            if halted and len(halted) == len(eg.exceptions):
                raise halted[0] from eg
            raise


def open_pair(
    config: ProtocolConfig,
    code: LdpcCode | None = None,
    ledger_path: str | Path | None = None,
    fuzz: dict[str, float] | None = None,
    physics: LinkPhysics | None = None,
    warm_start: bool = False,
) -> PairResult:
    """Wire an Alice and a Bob over loopback without running any shot.

    ``fuzz`` wraps both classical endpoints in a FuzzTransport with the given
    reorder/duplicate/corrupt probabilities. With ``warm_start`` Bob's first
    V_mod comes from the optimizer on the nominal link.
    """
    code = code or load_code(config.reconciliation)
    alice_end, bob_end = LoopbackTransport.pair()
    a_transport: ClassicalTransport = alice_end
    b_transport: ClassicalTransport = bob_end
    if fuzz:
        seed = config.seeds.master_seed
        a_transport = FuzzTransport(alice_end, seed=seed * 2 + 1, **fuzz)
        b_transport = FuzzTransport(bob_end, seed=seed * 2 + 2, **fuzz)
    quantum = LoopbackQuantumLink(physics or build_physics(config))
    alice = AliceNode(config, a_transport, quantum, code)
    bob = BobNode(config, b_transport, quantum, code, ledger_path=ledger_path)
    if warm_start and config.adapt_v_mod:
        v_mod = warm_start_v_mod(config, code)
        if v_mod is not None:
            logger.info("Warm-start V_mod %.3f SNU", v_mod)
            bob.next_v_mod = v_mod
    return PairResult(alice=alice, bob=bob)


async def run_pair(
    config: ProtocolConfig,
    shots: int,
    code: LdpcCode | None = None,
    first_shot_id: int = 0,
    ledger_path: str | Path | None = None,
    fuzz: dict[str, float] | None = None,
    physics: LinkPhysics | None = None,
    warm_start: bool = False,
) -> PairResult:
    """Run ``shots`` shots between an in-process Alice and Bob over loopback.

    Bob's ledger goes to ``ledger_path``.
    """
    pair = open_pair(config, code, ledger_path, fuzz, physics, warm_start)
    await pair.run(range(first_shot_id, first_shot_id + shots))
    return pair


async def run_node(
    role: Role,
    config: ProtocolConfig,
    shots: int,
    ledger_path: str | Path | None = None,
) -> ProtocolNode:
    """Run one role over TCP against a peer process. Bob listens, Alice connects."""
    code = load_code(config.reconciliation)
    tcfg = config.transport
    if role == "bob":
        transport = await TcpTransport.serve(tcfg.host, tcfg.port)
        quantum = await TcpQuantumLink.serve(tcfg.host, tcfg.quantum_port, build_physics(config))
        node: ProtocolNode = BobNode(config, transport, quantum, code, ledger_path=ledger_path)
    else:
        transport = await TcpTransport.connect(tcfg.host, tcfg.port)
        quantum = await TcpQuantumLink.connect(tcfg.host, tcfg.quantum_port)
        node = AliceNode(config, transport, quantum, code, ledger_path=ledger_path)
    try:
        await _role_loop(node, range(shots))
    finally:
        await transport.close()
        await quantum.close()
    return node
