"""Kernel backend selection.

The compiled extension is used when it has been built; otherwise the numpy
implementation is loaded.  Set ``FUSIONGEN_KERNELS=python`` (or
``compiled``) to force a backend.
"""
import importlib
import os

from . import _pykernels

_choice = os.environ.get("FUSIONGEN_KERNELS", "auto").lower()


def _load_compiled():
    try:
        return importlib.import_module("fusiongen._ckernels")
    except ImportError:
        return None


_compiled = _load_compiled()

if _choice == "python":
    backend = _pykernels
elif _choice == "compiled":
    if _compiled is None:
        raise ImportError("FUSIONGEN_KERNELS=compiled but fusiongen._ckernels is not built")
    backend = _compiled
elif _choice == "auto":
    backend = _compiled if _compiled is not None else _pykernels
else:
    raise ValueError(f"unknown FUSIONGEN_KERNELS value {_choice!r}")

BACKEND = backend.NAME
corr_down = backend.corr_down
scatter_up = backend.scatter_up
kernel_grad = backend.kernel_grad
cosine_argmax = backend.cosine_argmax


def available():
    """Map of backend name to kernel module for every importable backend."""
    out = {"python": _pykernels}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
