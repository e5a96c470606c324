#!/usr/bin/env python

"""
Exception hierarchy for cvqkd-rt.

Pure numerical code raises these; the protocol engine maps them onto shot
statuses (see ``engine.status_for_exception``) and the CLI maps them onto exit
codes.
"""


class CvqkdError(Exception):
    """Base class for every error raised by cvqkd-rt."""


class ConfigError(CvqkdError):
    """Invalid or unreadable configuration."""


class DomainError(CvqkdError, ValueError):
    """An argument lies outside the domain of a formula."""


class NonPhysicalCovarianceError(DomainError):
    """A covariance matrix violates the uncertainty principle."""


class CalibrationError(CvqkdError):
    """Shot-noise calibration produced an inconsistent result."""


class SyncError(CvqkdError):
    """Receiver could not lock onto the pilot tones."""


class ParameterEstimationError(CvqkdError):
    """Disclosed data is insufficient or yields no positive key."""


class ConfirmationError(CvqkdError):
    """Reconciled keys disagree after error correction."""


class AuthenticationError(CvqkdError):
    """A classical frame failed MAC verification. Halts the protocol."""


class ProtocolOrderError(CvqkdError):
    """An authenticated frame arrived in the wrong phase or sequence."""


class TransportError(CvqkdError):
    """Classical or quantum transport failed or timed out."""


class PoolExhaustedError(CvqkdError):
    """No authentication key material is left and bootstrap is disabled."""


class CampaignAbortedError(CvqkdError):
    """A campaign stopped before all points were completed."""
