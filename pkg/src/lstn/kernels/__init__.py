"""Kernel backend selection.

The compiled extension is preferred when importable; otherwise the numpy
fallback is used.  Set ``LSTN_KERNELS=python`` or ``LSTN_KERNELS=compiled``
to force a backend (the latter raises if the extension is missing).
"""

import os

from . import pure

_choice = os.environ.get("LSTN_KERNELS", "auto").strip().lower()
if _choice not in ("auto", "python", "compiled"):
    raise ValueError(f"LSTN_KERNELS must be 'python' or 'compiled', got {_choice!r}")

if _choice == "python":
    _impl = pure
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        if _choice == "compiled":
            raise
        _impl = pure

BACKEND = _impl.BACKEND
lstm_seq_forward = _impl.lstm_seq_forward
lstm_seq_backward = _impl.lstm_seq_backward

__all__ = ["BACKEND", "lstm_seq_forward", "lstm_seq_backward", "pure"]
