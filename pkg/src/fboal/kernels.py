"""Selects the batched derivative kernel at import time.

The compiled extension is used when it was built; otherwise (or when the
environment variable ``FBOAL_KERNEL=python`` is set) the numpy fallback is
used. Both expose ``forward(weights, biases, inputs, seeds, orders)`` and
``backward(weights, cache, g_out, grad)``.
"""

from __future__ import annotations

import logging
import os

from . import _kernel_py

logger = logging.getLogger(__name__)

python_kernel = _kernel_py
compiled_kernel = None

try:
    from . import _kernel as compiled_kernel  # type: ignore[no-redef]
except ImportError:  # pragma: no cover - depends on the build
    logger.info("compiled kernel unavailable, using numpy fallback")

if compiled_kernel is not None and os.environ.get("FBOAL_KERNEL", "").lower() != "python":
    active = compiled_kernel
else:
    active = python_kernel

IMPLEMENTATION = active.IMPLEMENTATION
channel_layout = _kernel_py.channel_layout


def _kernel_for(weights):
    # the compiled kernel needs a hidden layer and a scalar output
    if len(weights) < 2 or weights[-1].shape[0] != 1:
        return python_kernel
    return active


def forward(weights, biases, inputs, seeds, orders, keep_cache=True, workspace=None):
    """Output channels ``(C, N)`` and a cache for :func:`backward`.

    With a ``workspace`` dict the compiled kernel reuses its buffers between
    calls; returned arrays are then only valid until the next call.
    """
    return _kernel_for(weights).forward(weights, biases, inputs, seeds, orders, keep_cache, workspace)


def backward(weights, cache, g_out, grad, workspace=None):
    return _kernel_for(weights).backward(weights, cache, g_out, grad, workspace)
