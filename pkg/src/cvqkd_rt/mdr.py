#!/usr/bin/env python

"""
Multidimensional reconciliation over the normed division algebras.

Blocks of d in {2, 4, 8} reals are treated as complex numbers, quaternions or
octonions (Cayley-Dickson construction). Left multiplication by a unit element
is orthogonal, so Bob can publish alpha = c * conj(y / |y|) which maps his
normalized block exactly onto the spherical codeword c = (1 - 2u) / sqrt(d).
Alice applies the same map to her block and sees a binary-input AWGN channel.
"""

import math

import numpy as np

from cvqkd_rt.basemodels import MdrMapping
from cvqkd_rt.errors import DomainError

SUPPORTED_DIMENSIONS = (2, 4, 8)
_MIN_NOISE_VAR = 1e-12


def conjugate(a: np.ndarray) -> np.ndarray:
    out = -np.asarray(a, dtype=np.float64)
    out[..., 0] *= -1.0
    return out


def cd_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cayley-Dickson product along the last axis: (p,q)(r,s) = (pr - s*q, sp + qr*)."""
    d = a.shape[-1]
    if d == 1:
        return a * b
    h = d // 2
    p, q = a[..., :h], a[..., h:]
    r, s = b[..., :h], b[..., h:]
    return np.concatenate(
        (
            cd_multiply(p, r) - cd_multiply(conjugate(s), q),
            cd_multiply(s, p) + cd_multiply(q, conjugate(r)),
        ),
        axis=-1,
    )


def _check_dimension(d: int) -> None:
    if d not in SUPPORTED_DIMENSIONS:
        raise DomainError(f"MDR dimension must be one of {SUPPORTED_DIMENSIONS}, got {d}")


def codeword_points(bits: np.ndarray) -> np.ndarray:
    """Map bits (..., d) to spherical codeword points (1 - 2u) / sqrt(d)."""
    bits = np.asarray(bits)
    return (1.0 - 2.0 * bits.astype(np.float64)) / math.sqrt(bits.shape[-1])


def mdr_forward(y_block: np.ndarray, codeword_point: np.ndarray) -> MdrMapping:
    """Mapping M with M(y / |y|) = codeword_point."""
    y = np.asarray(y_block, dtype=np.float64)
    c = np.asarray(codeword_point, dtype=np.float64)
    d = y.shape[-1]
    _check_dimension(d)
    if y.shape != (d,) or c.shape != (d,):
        raise DomainError("y_block and codeword_point must be vectors of equal dimension")
    norm = float(np.linalg.norm(y))
    if norm == 0.0:
        raise DomainError("cannot map a zero-norm block")
    alpha = cd_multiply(c, conjugate(y / norm))
    alpha /= np.linalg.norm(alpha)
    return MdrMapping(dimension=d, alpha=alpha, norm=norm)


def apply_mapping(mapping: MdrMapping, v: np.ndarray) -> np.ndarray:
    """M(v) = alpha * v; norm preserving."""
    return cd_multiply(mapping.alpha, np.asarray(v, dtype=np.float64))


def bit_llrs(z: np.ndarray, noise_var: float) -> np.ndarray:
    """LLRs of the induced channel; z is the mapped block scaled by sqrt(d).

    With correlation rho = 1 / sqrt(1 + noise_var) each coordinate behaves like
    z = rho (1 - 2u) + N(0, 1 - rho^2); positive LLR favours u = 0.
    """
    noise_var = max(float(noise_var), _MIN_NOISE_VAR)
    if math.isinf(noise_var):
        return np.zeros_like(np.asarray(z, dtype=np.float64))
    rho = 1.0 / math.sqrt(1.0 + noise_var)
    scale = 2.0 * rho / (1.0 - rho * rho)
    return scale * np.asarray(z, dtype=np.float64)


def mdr_apply(mapping: MdrMapping, x_block: np.ndarray, noise_var: float) -> np.ndarray:
    """Rotate Alice's block with Bob's mapping and return per-bit LLRs."""
    x = np.asarray(x_block, dtype=np.float64)
    if x.shape != (mapping.dimension,):
        raise DomainError(f"x_block must have shape ({mapping.dimension},)")
    norm = float(np.linalg.norm(x))
    if norm == 0.0:
        return np.zeros(mapping.dimension)
    z = math.sqrt(mapping.dimension) * apply_mapping(mapping, x / norm)
    return bit_llrs(z, noise_var)


def mdr_forward_batch(y_blocks: np.ndarray, bits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized mdr_forward over (..., d) arrays; returns (alpha, norms)."""
    y = np.asarray(y_blocks, dtype=np.float64)
    _check_dimension(y.shape[-1])
    norms = np.linalg.norm(y, axis=-1)
    if np.any(norms == 0.0):
        raise DomainError("cannot map a zero-norm block")
    alpha = cd_multiply(codeword_points(bits), conjugate(y / norms[..., None]))
    alpha /= np.linalg.norm(alpha, axis=-1, keepdims=True)
    return alpha, norms


def mdr_llr_batch(alpha: np.ndarray, x_blocks: np.ndarray, noise_var: float) -> np.ndarray:
    """Vectorized mdr_apply over (..., d) arrays."""
    x = np.asarray(x_blocks, dtype=np.float64)
    d = x.shape[-1]
    _check_dimension(d)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(norms > 0.0, x / norms, 0.0)
    z = math.sqrt(d) * cd_multiply(np.asarray(alpha, dtype=np.float64), unit)
    return bit_llrs(z, noise_var)
