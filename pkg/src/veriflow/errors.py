"""Shared exception base for the verification pipeline.

Every pipeline-specific exception derives from VeriflowError so callers
(and the CLI exit-code mapping) can distinguish pipeline failures from
programming errors.
"""

from __future__ import annotations


class VeriflowError(RuntimeError):
    """Base class for all pipeline errors."""
