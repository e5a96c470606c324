#!/usr/bin/env python

"""
Low-rate LDPC codes for reverse reconciliation: construction, storage and a
batched sum-product syndrome decoder.

The shipped family is a multi-edge code with an LDGM extension. Its columns
split into a core of 2R·n variables and (1 - 2R)·n degree-one variables.
H = [[H1, 0], [H2, I]]: each LDGM row joins ``ldgm_degree`` core variables and
one private degree-one variable, while the core rows (degree 4/5) protect the
core. The operating SNR is derived from a Gaussian-approximation EXIT analysis
of the actual degree counts.
"""

import logging
import math
import os
from collections.abc import Sequence
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from cvqkd_rt.basemodels import CodePerformance, LdpcCode, ReconciliationConfig
from cvqkd_rt.config import defaults
from cvqkd_rt.errors import DomainError
from cvqkd_rt.mdr import mdr_forward_batch, mdr_llr_batch
from cvqkd_rt.shared_utilities import generate_cache_key, get_cache_directory

logger = logging.getLogger(__name__)

FILE_MAGIC = "# cvqkd-rt ldpc v1"
CONSTRUCTION_VERSION = 1
MAX_SEED_ATTEMPTS = 16
_MIN_MAG = 1e-9
_MAX_MAG = 40.0


# ---------------------------------------------------------------------------
# Degree plan
# ---------------------------------------------------------------------------


class DegreePlan(NamedTuple):
    n: int
    m: int
    k: int
    n_core: int
    n_ldgm: int
    m_core: int
    ldgm_degree: int
    core_degrees: np.ndarray
    ldgm_degrees: np.ndarray
    check_degrees: np.ndarray


def degree_plan(
    n: int,
    rate: float,
    ldgm_degree: int = defaults.CODE_LDGM_DEGREE,
    degree2_fraction: float = defaults.CODE_CORE_DEGREE2_FRACTION,
) -> DegreePlan:
    """Exact integer degree counts for a code of length ``n`` and rate ``rate``."""
    if not 0.0 < rate < 0.5:
        raise DomainError(f"code rate must lie in (0, 0.5), got {rate}")
    k = int(math.floor(n * rate))
    m = n - k
    n_core = int(round(2.0 * rate * n))
    n_ldgm = n - n_core
    m_core = m - n_ldgm
    if k < 1 or m_core < 1 or n_core < 2 * ldgm_degree:
        raise DomainError(f"length {n} is too short for rate {rate}")

    n_deg2 = int(round(degree2_fraction * n_core))
    core_degrees = np.full(n_core, 3, dtype=np.int64)
    core_degrees[:n_deg2] = 2
    core_edges = int(core_degrees.sum())
    d_lo = core_edges // m_core
    if d_lo < 2:
        raise DomainError("core checks would have degree below 2")
    n_hi = core_edges - d_lo * m_core
    check_degrees = np.full(m_core, d_lo, dtype=np.int64)
    check_degrees[:n_hi] = d_lo + 1

    ldgm_edges = ldgm_degree * n_ldgm
    base = ldgm_edges // n_core
    ldgm_degrees = np.full(n_core, base, dtype=np.int64)
    ldgm_degrees[: ldgm_edges - base * n_core] += 1
    return DegreePlan(
        n=n,
        m=m,
        k=k,
        n_core=n_core,
        n_ldgm=n_ldgm,
        m_core=m_core,
        ldgm_degree=ldgm_degree,
        core_degrees=core_degrees,
        ldgm_degrees=ldgm_degrees,
        check_degrees=check_degrees,
    )


# ---------------------------------------------------------------------------
# Gaussian-approximation threshold
# ---------------------------------------------------------------------------


def _j(sigma: float) -> float:
    """Mutual information of a consistent Gaussian LLR with std ``sigma``."""
    if sigma <= 0.0:
        return 0.0
    if sigma > 40.0:
        return 1.0
    return (1.0 - 2.0 ** (-0.3073 * sigma ** (2.0 * 0.8935))) ** 1.1064


def _j_inv(info: float) -> float:
    if info <= 0.0:
        return 0.0
    info = min(info, 0.9999999)
    return (-(1.0 / 0.3073) * math.log2(1.0 - info ** (1.0 / 1.1064))) ** (1.0 / (2.0 * 0.8935))


def _ga_converges(
    snr: float,
    var_classes: Sequence[tuple[int, int, int]],
    check_classes: Sequence[tuple[int, int]],
    ldgm_degree: int,
    max_iter: int,
) -> bool:
    sigma_ch = 2.0 * math.sqrt(snr)
    info_ch = _j(sigma_ch)
    core_v = ldgm_v = info_ch
    core_w = sum(count * a for a, _, count in var_classes)
    ldgm_w = sum(count * b for _, b, count in var_classes)
    check_w = sum(count * d for d, count in check_classes)
    for _ in range(max_iter):
        # LDGM check to core variable: other core edges plus the degree-one variable
        ldgm_c = 1.0 - _j(
            math.sqrt((ldgm_degree - 1) * _j_inv(1.0 - ldgm_v) ** 2 + _j_inv(1.0 - info_ch) ** 2)
        )
        inv_core = _j_inv(1.0 - core_v) ** 2
        core_c = (
            sum(
                count * d * (1.0 - _j(math.sqrt((d - 1) * inv_core)))
                for d, count in check_classes
            )
            / check_w
        )
        j_core = _j_inv(core_c) ** 2
        j_ldgm = _j_inv(ldgm_c) ** 2
        num_core = num_ldgm = 0.0
        for a, b, count in var_classes:
            base = sigma_ch**2 + a * j_core + b * j_ldgm
            if a:
                num_core += count * a * _j(math.sqrt(base - j_core))
            if b:
                num_ldgm += count * b * _j(math.sqrt(base - j_ldgm))
        core_v = num_core / core_w
        ldgm_v = num_ldgm / ldgm_w
        if core_v > 0.99999 and ldgm_v > 0.99999:
            return True
    return False


def ga_threshold(plan: DegreePlan, max_iter: int = 1500, steps: int = 22) -> float:
    """Lowest per-dimension SNR at which the GA-EXIT recursion converges."""
    pairs: dict[tuple[int, int], int] = {}
    for a, b in zip(plan.core_degrees.tolist(), plan.ldgm_degrees.tolist(), strict=True):
        pairs[(a, b)] = pairs.get((a, b), 0) + 1
    var_classes = [(a, b, c) for (a, b), c in sorted(pairs.items())]
    degs, counts = np.unique(plan.check_degrees, return_counts=True)
    check_classes = list(zip(degs.tolist(), counts.tolist(), strict=True))

    lo, hi = 0.005, 1.0
    for _ in range(steps):
        mid = math.sqrt(lo * hi)
        if _ga_converges(mid, var_classes, check_classes, plan.ldgm_degree, max_iter):
            hi = mid
        else:
            lo = mid
    return hi


def default_design_snr(plan: DegreePlan, margin_db: float) -> float:
    return ga_threshold(plan) * 10.0 ** (margin_db / 10.0)


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def _repair_core(checks: np.ndarray, var_sockets: np.ndarray, n_core: int, rng, rounds: int = 200):
    for _ in range(rounds):
        keys = checks * n_core + var_sockets
        order = np.argsort(keys, kind="stable")
        repeated = np.zeros(keys.size, dtype=bool)
        repeated[1:] = keys[order][1:] == keys[order][:-1]
        bad = order[repeated]
        if bad.size == 0:
            return var_sockets
        for i in bad.tolist():
            j = int(rng.integers(var_sockets.size))
            var_sockets[i], var_sockets[j] = var_sockets[j], var_sockets[i]
    raise DomainError("could not remove repeated edges from the core graph")


def _bad_ldgm_rows(rows: np.ndarray, n_core: int) -> np.ndarray:
    g = rows.shape[1]
    bad = np.zeros(rows.shape[0], dtype=bool)
    keys = []
    for i in range(g):
        for j in range(i + 1, g):
            lo = np.minimum(rows[:, i], rows[:, j])
            hi = np.maximum(rows[:, i], rows[:, j])
            bad |= lo == hi
            keys.append(lo * n_core + hi)
    flat = np.concatenate(keys)
    owner = np.tile(np.arange(rows.shape[0]), len(keys))
    order = np.argsort(flat, kind="stable")
    repeated = np.zeros(flat.size, dtype=bool)
    repeated[1:] = flat[order][1:] == flat[order][:-1]
    bad[owner[order[repeated]]] = True
    return np.flatnonzero(bad)


def _repair_ldgm(rows: np.ndarray, n_core: int, rng, rounds: int = 500) -> np.ndarray:
    n_rows, g = rows.shape
    for _ in range(rounds):
        bad = _bad_ldgm_rows(rows, n_core)
        if bad.size == 0:
            return rows
        for r in bad.tolist():
            other = int(rng.integers(n_rows))
            a, b = int(rng.integers(g)), int(rng.integers(g))
            rows[r, a], rows[other, b] = rows[other, b], rows[r, a]
    raise DomainError("could not remove short cycles from the LDGM rows")


def _construct_matrix(plan: DegreePlan, seed: int) -> sp.csr_matrix:
    rng = np.random.Generator(np.random.Philox(seed))
    core_checks = np.repeat(np.arange(plan.m_core, dtype=np.int64), plan.check_degrees)
    core_vars = rng.permutation(np.repeat(np.arange(plan.n_core, dtype=np.int64), plan.core_degrees))
    core_vars = _repair_core(core_checks, core_vars, plan.n_core, rng)

    ldgm = rng.permutation(np.repeat(np.arange(plan.n_core, dtype=np.int64), plan.ldgm_degrees))
    ldgm = _repair_ldgm(ldgm.reshape(plan.n_ldgm, plan.ldgm_degree), plan.n_core, rng)

    ldgm_rows = plan.m_core + np.arange(plan.n_ldgm, dtype=np.int64)
    rows = np.concatenate((core_checks, np.repeat(ldgm_rows, plan.ldgm_degree), ldgm_rows))
    cols = np.concatenate(
        (core_vars, ldgm.ravel(), plan.n_core + np.arange(plan.n_ldgm, dtype=np.int64))
    )
    h = sp.csr_matrix(
        (np.ones(rows.size, dtype=np.uint8), (rows, cols)), shape=(plan.m, plan.n)
    )
    h.sort_indices()
    return h


def gf2_rank(h: sp.csr_matrix) -> int:
    """Row rank over GF(2).

    Rows owning a weight-one column are peeled first; the rest are eliminated
    as Python-integer bitsets.
    """
    h = sp.csr_matrix(h)
    h.sort_indices()
    m = h.shape[0]
    row_cols = [h.indices[h.indptr[r] : h.indptr[r + 1]] for r in range(m)]
    csc = h.tocsc()
    col_rows = [csc.indices[csc.indptr[c] : csc.indptr[c + 1]] for c in range(h.shape[1])]
    weight = np.diff(csc.indptr).astype(np.int64)
    alive = np.ones(m, dtype=bool)
    rank = 0
    queue = list(np.flatnonzero(weight == 1))
    while queue:
        c = queue.pop()
        if weight[c] != 1:
            continue
        owners = [r for r in col_rows[c].tolist() if alive[r]]
        if not owners:
            continue
        r = owners[0]
        alive[r] = False
        rank += 1
        for cc in row_cols[r].tolist():
            weight[cc] -= 1
            if weight[cc] == 1:
                queue.append(cc)

    pivots: dict[int, int] = {}
    for r in np.flatnonzero(alive).tolist():
        value = 0
        for c in row_cols[r].tolist():
            value ^= 1 << c
        while value:
            top = value.bit_length() - 1
            pivot = pivots.get(top)
            if pivot is None:
                pivots[top] = value
                rank += 1
                break
            value ^= pivot
    return rank


def code_id_for(n: int, rate: float, seed: int) -> str:
    return f"met-ldgm-n{n}-r{rate:g}-s{seed}"


def construct_code(
    n: int = defaults.CODE_LENGTH,
    rate: float = defaults.CODE_RATE,
    seed: int = defaults.CODE_SEED,
    design_snr: float | None = None,
    design_margin_db: float = defaults.CODE_DESIGN_MARGIN_DB,
    ldgm_degree: int = defaults.CODE_LDGM_DEGREE,
    degree2_fraction: float = defaults.CODE_CORE_DEGREE2_FRACTION,
) -> LdpcCode:
    """Build a full-rank code; the seed is bumped until the core has full rank."""
    plan = degree_plan(n, rate, ldgm_degree, degree2_fraction)
    if design_snr is None:
        design_snr = default_design_snr(plan, design_margin_db)
    for attempt in range(MAX_SEED_ATTEMPTS):
        used_seed = seed + attempt
        h = _construct_matrix(plan, used_seed)
        rank = gf2_rank(h)
        if rank == plan.m:
            logger.info(
                "Constructed LDPC code n=%d m=%d seed=%d design SNR %.4f",
                plan.n,
                plan.m,
                used_seed,
                design_snr,
            )
            return LdpcCode(
                code_id=code_id_for(n, rate, used_seed),
                n=plan.n,
                m=plan.m,
                k=plan.k,
                seed=used_seed,
                design_snr=design_snr,
                parity_check=h,
            )
        logger.debug("Seed %d gives rank %d < %d, retrying", used_seed, rank, plan.m)
    raise DomainError(f"no full-rank code found in {MAX_SEED_ATTEMPTS} seeds from {seed}")


# ---------------------------------------------------------------------------
# Files and cache
# ---------------------------------------------------------------------------


def write_code(code: LdpcCode, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h = code.parity_check
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as f:
        f.write(FILE_MAGIC + "\n")
        f.write(f"# code_id={code.code_id}\n")
        f.write(
            f"# n={code.n} m={code.m} k={code.k} seed={code.seed} "
            f"rate={code.rate:.12g} design_snr={code.design_snr!r}\n"
        )
        for r in range(code.m):
            f.write(" ".join(map(str, h.indices[h.indptr[r] : h.indptr[r + 1]].tolist())) + "\n")
    os.replace(tmp, path)
    return path


def read_code(path: str | Path, verify_rank: bool = True) -> LdpcCode:
    """Load a code file; full row rank is verified unless disabled."""
    path = Path(path)
    header: dict[str, str] = {}
    rows: list[list[int]] = []
    with path.open(encoding="utf-8") as f:
        first = f.readline().rstrip("\n")
        if first != FILE_MAGIC:
            raise DomainError(f"{path} is not a cvqkd-rt code file")
        for line in f:
            line = line.strip()
            if line.startswith("#"):
                for token in line[1:].split():
                    key, _, value = token.partition("=")
                    header[key] = value
                continue
            rows.append([int(v) for v in line.split()] if line else [])
    try:
        n, m, k, seed = (int(header[key]) for key in ("n", "m", "k", "seed"))
        design_snr = float(header["design_snr"])
    except (KeyError, ValueError) as e:
        raise DomainError(f"{path} has an incomplete header") from e
    if len(rows) != m:
        raise DomainError(f"{path} declares {m} checks but holds {len(rows)}")
    indptr = np.cumsum([0] + [len(r) for r in rows])
    indices = np.fromiter((c for r in rows for c in r), dtype=np.int64, count=int(indptr[-1]))
    if indices.size and (indices.min() < 0 or indices.max() >= n):
        raise DomainError(f"{path} references a column outside 0..{n - 1}")
    h = sp.csr_matrix((np.ones(indices.size, dtype=np.uint8), indices, indptr), shape=(m, n))
    h.sort_indices()
    if verify_rank:
        rank = gf2_rank(h)
        if rank != m:
            raise DomainError(f"{path} is rank deficient ({rank} < {m})")
    return LdpcCode(
        code_id=header.get("code_id", code_id_for(n, 1.0 - m / n, seed)),
        n=n,
        m=m,
        k=k,
        seed=seed,
        design_snr=design_snr,
        parity_check=h,
    )


def load_code(config: ReconciliationConfig) -> LdpcCode:
    """The code named by the configuration: explicit file, cache hit, or fresh build."""
    if config.code_file:
        return read_code(config.code_file)
    key = generate_cache_key(
        "met-ldgm",
        CONSTRUCTION_VERSION,
        config.code_length,
        config.code_rate,
        config.code_seed,
        config.design_snr,
        config.design_margin_db,
    )
    cache_dir = get_cache_directory(config.cache_dir) / "codes"
    path = cache_dir / f"{key}.ldpc"
    if path.exists():
        logger.debug("Loading cached LDPC code %s", path)
        return read_code(path, verify_rank=False)
    code = construct_code(
        n=config.code_length,
        rate=config.code_rate,
        seed=config.code_seed,
        design_snr=config.design_snr,
        design_margin_db=config.design_margin_db,
    )
    write_code(code, path)
    return code


# ---------------------------------------------------------------------------
# Decoder
# ---------------------------------------------------------------------------


class BatchDecodeResult(NamedTuple):
    bits: np.ndarray
    success: np.ndarray
    iterations: np.ndarray


def _phi(x: np.ndarray) -> np.ndarray:
    """phi(x) = -log(tanh(x / 2)), its own inverse on x > 0."""
    return -np.log(np.tanh(np.clip(x, _MIN_MAG, _MAX_MAG) / 2.0))


class SyndromeDecoder:
    """Flooding sum-product decoder over one code, vectorized across frames."""

    def __init__(self, code: LdpcCode):
        h = sp.csr_matrix(code.parity_check)
        h.sort_indices()
        self.code = code
        self.n = code.n
        self.m = code.m
        self._h = h.astype(np.int64)
        self.edge_var = h.indices.astype(np.int64)
        self.row_starts = h.indptr[:-1].astype(np.int64)
        self.edge_check = np.repeat(np.arange(self.m, dtype=np.int64), np.diff(h.indptr))
        self.var_order = np.argsort(self.edge_var, kind="stable")
        var_degree = np.bincount(self.edge_var, minlength=self.n)
        if np.any(var_degree == 0):
            raise DomainError("every variable must take part in at least one check")
        self.var_starts = np.concatenate(([0], np.cumsum(var_degree)[:-1])).astype(np.int64)

    def syndrome(self, bits: np.ndarray) -> np.ndarray:
        """H u mod 2 for a frame (n,) or a batch (B, n)."""
        bits = np.asarray(bits)
        if bits.ndim == 1:
            return (self._h @ bits.astype(np.int64) % 2).astype(np.uint8)
        return (self._h @ bits.T.astype(np.int64) % 2).T.astype(np.uint8)

    def _satisfied(self, hard: np.ndarray, syndromes: np.ndarray) -> np.ndarray:
        return np.all(self.syndrome(hard) == syndromes, axis=1)

    def _decode_chunk(
        self, llrs: np.ndarray, syndromes: np.ndarray, max_iter: int
    ) -> BatchDecodeResult:
        batch = llrs.shape[0]
        bits = (llrs < 0).astype(np.uint8)
        iterations = np.zeros(batch, dtype=np.int64)
        informative = np.any(llrs != 0.0, axis=1)
        success = self._satisfied(bits, syndromes) & informative
        active = np.flatnonzero(~success & informative)
        if active.size == 0:
            return BatchDecodeResult(bits, success, iterations)

        channel = llrs[active]
        target = syndromes[active].astype(np.int64)
        q = channel[:, self.edge_var]
        for it in range(1, max_iter + 1):
            neg = q < 0
            mags = _phi(np.abs(q))
            totals = np.add.reduceat(mags, self.row_starts, axis=1)
            r = _phi(totals[:, self.edge_check] - mags)
            parity = (np.add.reduceat(neg.astype(np.int64), self.row_starts, axis=1) + target) & 1
            flip = parity[:, self.edge_check].astype(bool) ^ neg
            r = np.where(flip, -r, r)

            posterior = channel + np.add.reduceat(r[:, self.var_order], self.var_starts, axis=1)
            hard = (posterior < 0).astype(np.uint8)
            done = np.all(self.syndrome(hard) == target, axis=1)

            finished = active[done]
            bits[finished] = hard[done]
            success[finished] = True
            iterations[finished] = it
            keep = ~done
            if not np.any(keep):
                active = active[:0]
                break
            bits[active[keep]] = hard[keep]
            iterations[active[keep]] = it
            active = active[keep]
            channel = channel[keep]
            target = target[keep]
            q = posterior[keep][:, self.edge_var] - r[keep]
        return BatchDecodeResult(bits, success, iterations)

    def decode(
        self,
        llrs: np.ndarray,
        syndromes: np.ndarray,
        max_iter: int = defaults.LDPC_MAX_ITER,
        batch_frames: int = defaults.LDPC_BATCH_FRAMES,
    ) -> BatchDecodeResult:
        """Decode frames (B, n) against their syndromes (B, m)."""
        llrs = np.atleast_2d(np.asarray(llrs, dtype=np.float64))
        syndromes = np.atleast_2d(np.asarray(syndromes, dtype=np.uint8))
        if llrs.shape[1] != self.n:
            raise DomainError(f"LLR length {llrs.shape[1]} != code length {self.n}")
        if syndromes.shape != (llrs.shape[0], self.m):
            raise DomainError("syndromes must have shape (frames, m)")
        parts = [
            self._decode_chunk(llrs[s : s + batch_frames], syndromes[s : s + batch_frames], max_iter)
            for s in range(0, llrs.shape[0], batch_frames)
        ]
        if not parts:
            empty = np.zeros((0, self.n), dtype=np.uint8)
            return BatchDecodeResult(empty, np.zeros(0, dtype=bool), np.zeros(0, dtype=np.int64))
        return BatchDecodeResult(
            np.concatenate([p.bits for p in parts]),
            np.concatenate([p.success for p in parts]),
            np.concatenate([p.iterations for p in parts]),
        )


_DECODERS: dict[str, SyndromeDecoder] = {}


def get_decoder(code: LdpcCode) -> SyndromeDecoder:
    decoder = _DECODERS.get(code.code_id)
    if decoder is None or decoder.code is not code:
        decoder = SyndromeDecoder(code)
        _DECODERS[code.code_id] = decoder
    return decoder


def ldpc_decode(
    llrs: np.ndarray,
    syndrome: np.ndarray,
    code: LdpcCode,
    max_iter: int = defaults.LDPC_MAX_ITER,
) -> np.ndarray | None:
    """Decode one frame; None signals a frame error."""
    llrs = np.asarray(llrs, dtype=np.float64)
    if llrs.shape != (code.n,):
        raise DomainError(f"LLR length must equal the code length {code.n}")
    result = get_decoder(code).decode(llrs[None, :], np.asarray(syndrome)[None, :], max_iter)
    return result.bits[0] if bool(result.success[0]) else None


def measure_code_performance(
    code: LdpcCode,
    snr_grid: Sequence[float],
    frames: int = 200,
    seed: int = 0,
    dimension: int = defaults.MDR_DIMENSION,
    max_iter: int = defaults.LDPC_MAX_ITER,
) -> list[CodePerformance]:
    """Monte Carlo FER through the full MDR + syndrome-decoding chain."""
    if code.n % dimension:
        raise DomainError(f"code length {code.n} is not a multiple of {dimension}")
    decoder = get_decoder(code)
    rng = np.random.Generator(np.random.Philox(seed))
    results = []
    for snr_value in snr_grid:
        if snr_value <= 0:
            raise DomainError("SNR values must be positive")
        x = rng.standard_normal((frames, code.n)) * math.sqrt(snr_value)
        y = x + rng.standard_normal((frames, code.n))
        u = rng.integers(0, 2, size=(frames, code.n), dtype=np.uint8)
        alpha, _ = mdr_forward_batch(
            y.reshape(frames, -1, dimension), u.reshape(frames, -1, dimension)
        )
        llrs = mdr_llr_batch(alpha, x.reshape(frames, -1, dimension), 1.0 / snr_value)
        outcome = decoder.decode(llrs.reshape(frames, code.n), decoder.syndrome(u), max_iter)
        correct = outcome.success & np.all(outcome.bits == u, axis=1)
        errors = int(frames - correct.sum())
        results.append(
            CodePerformance(
                snr=float(snr_value),
                frames=frames,
                frame_errors=errors,
                fer=errors / frames,
                beta=2.0 * code.rate / math.log2(1.0 + snr_value),
                mean_iterations=float(outcome.iterations.mean()),
            )
        )
        logger.debug("SNR %.4f: FER %.4f over %d frames", snr_value, errors / frames, frames)
    return results


__all__ = [
    "BatchDecodeResult",
    "SyndromeDecoder",
    "construct_code",
    "degree_plan",
    "ga_threshold",
    "gf2_rank",
    "get_decoder",
    "ldpc_decode",
    "load_code",
    "measure_code_performance",
    "read_code",
    "write_code",
]
