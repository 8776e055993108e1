"""Process-level runtime knobs."""

from __future__ import annotations

import os

from .errors import ConfigError

THREADS_ENV_VAR = "STNHCL_THREADS"


def worker_count(limit: int | None = None) -> int:
    """Number of workers parallel sections may use.

    Defaults to the machine's CPU count, capped by the ``STNHCL_THREADS``
    environment variable when set.  ``limit`` applies an additional cap
    (e.g. the number of independent work items).  Always at least 1.
    """
    count = os.cpu_count() or 1
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is not None and raw.strip():
        try:
            cap = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from None
        if cap < 1:
            raise ConfigError(f"{THREADS_ENV_VAR} must be >= 1, got {cap}")
        count = min(count, cap)
    if limit is not None:
        count = min(count, max(1, limit))
    return max(1, count)
