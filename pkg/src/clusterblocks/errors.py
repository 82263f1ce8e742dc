"""Shared error base.

Every operational error in the package subclasses ClusterError and carries a
stable machine-readable `code`; the gateway's presentation tier maps codes to
HTTP statuses in exactly one place.
"""

from __future__ import annotations


class ClusterError(Exception):
    """Base for all domain/operational errors. `code` is a stable machine string."""

    code = "internal"

    def __init__(self, message: str = ""):
        super().__init__(message or self.__class__.__name__)

    @property
    def message(self) -> str:
        return str(self)
