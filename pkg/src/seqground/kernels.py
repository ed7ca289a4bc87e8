"""Kernel dispatch: the compiled extension when importable, else pure Python.

Set ``SEQGROUND_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("SEQGROUND_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

interval_iou = _impl.interval_iou
interval_giou = _impl.interval_giou
linear_assignment = _impl.linear_assignment
kendall_tau_b = _impl.kendall_tau_b
mean_pairwise_intersection = _impl.mean_pairwise_intersection

__all__ = [
    "BACKEND",
    "interval_iou",
    "interval_giou",
    "linear_assignment",
    "kendall_tau_b",
    "mean_pairwise_intersection",
]
