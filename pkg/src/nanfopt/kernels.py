"""Backend selection for the hot kernels.

The compiled Cython module is used when it imports; otherwise the numpy
fallback is used. Set ``NANF_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

fallback = _fallback
compiled = None

try:
    from . import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

if compiled is not None and os.environ.get("NANF_PURE_PYTHON", "") not in ("1", "true", "yes"):
    backend = compiled
else:
    backend = fallback


def available() -> dict:
    out = {"numpy": fallback}
    if compiled is not None:
        out["cython"] = compiled
    return out


def use(name: str) -> None:
    """Switch the active backend (``"cython"`` or ``"numpy"``)."""
    global backend
    try:
        backend = available()[name]
    except KeyError:
        raise ValueError(f"backend {name!r} is not available") from None
