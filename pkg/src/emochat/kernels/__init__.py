"""GRU sequence kernel with a compiled core and a pure-numpy fallback.

The backend is chosen once at import time from the ``EMOCHAT_KERNEL``
environment variable:

    auto      use the compiled extension when importable, else numpy (default)
    python    force the numpy fallback
    compiled  require the extension; raise if the build is missing

Both backends expose ``gru_forward`` / ``gru_backward`` with identical
signatures and agree to numerical tolerance (see tests/test_kernels.py;
benchmarks/bench_kernels.py compares throughput).
"""
from __future__ import annotations

import os

from ..errors import ConfigurationError
from . import gru_py

_REQUESTED = os.environ.get("EMOCHAT_KERNEL", "auto").lower()

try:
    from . import _gru_cy
except ImportError:  # pragma: no cover - depends on build environment
    _gru_cy = None

if _REQUESTED == "python":
    _impl, BACKEND = gru_py, "python"
elif _REQUESTED == "compiled":
    if _gru_cy is None:
        raise ConfigurationError(
            "EMOCHAT_KERNEL=compiled but the extension is not built; "
            "reinstall the package or set EMOCHAT_KERNEL=python")
    _impl, BACKEND = _gru_cy, "compiled"
elif _REQUESTED == "auto":
    if _gru_cy is not None:
        _impl, BACKEND = _gru_cy, "compiled"
    else:
        _impl, BACKEND = gru_py, "python"
else:
    raise ConfigurationError(
        f"EMOCHAT_KERNEL must be auto|python|compiled, got {_REQUESTED!r}")

gru_forward = _impl.gru_forward
gru_backward = _impl.gru_backward


def available_backends() -> tuple[str, ...]:
    return ("python", "compiled") if _gru_cy is not None else ("python",)


def get_backend(name: str):
    """Fetch a specific backend module (used by tests and benchmarks)."""
    if name == "python":
        return gru_py
    if name == "compiled":
        if _gru_cy is None:
            raise ConfigurationError("compiled kernel is not available")
        return _gru_cy
    raise ConfigurationError(f"unknown kernel backend: {name!r}")
