"""Hot-loop kernels with a compiled fast path and a numpy fallback.

The compiled extension (``emgtype.kernels._native``) is preferred when it
imported cleanly; set ``EMGTYPE_KERNELS=python`` to force the numpy
reference, or ``EMGTYPE_KERNELS=native`` to fail loudly if the extension
is missing. Both backends implement the same three entry points.
"""

from __future__ import annotations

import os

from . import _pyref

_requested = os.environ.get("EMGTYPE_KERNELS", "").strip().lower()

_impl = _pyref
_backend_name = "python"
if _requested != "python":
    try:
        from . import _native  # type: ignore[attr-defined]

        _impl = _native
        _backend_name = "native"
    except ImportError:
        if _requested == "native":
            raise

lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward
ctc_forward_backward = _impl.ctc_forward_backward
stage_forward = _impl.stage_forward
stage_backward = _impl.stage_backward


def backend() -> str:
    """Name of the active backend: "native" or "python"."""
    return _backend_name


def get_backend(name: str):
    """Fetch a specific backend module (for parity tests and benchmarks)."""
    if name == "python":
        return _pyref
    if name == "native":
        from . import _native  # type: ignore[attr-defined]

        return _native
    raise ValueError(f"unknown backend {name!r}")


def available_backends() -> tuple[str, ...]:
    names = ["python"]
    try:
        from . import _native  # noqa: F401

        names.append("native")
    except ImportError:
        pass
    return tuple(names)
