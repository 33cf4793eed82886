"""Dwell kernel backend selection.

Prefers the compiled Cython sweep when built; falls back to the pure-Python
implementation otherwise. Set FEEDLAB_PURE_PYTHON=1 to force the fallback
(used by the benchmark and by tests that compare backends).
"""

from __future__ import annotations

import os

from . import dwell_py

if os.environ.get("FEEDLAB_PURE_PYTHON") == "1":
    _impl = dwell_py
else:
    try:
        from . import _dwell_cy as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = dwell_py

dwell_sweep = _impl.dwell_sweep
BACKEND = _impl.BACKEND


def available_backends() -> dict[str, object]:
    """Map backend name -> dwell_sweep callable, for tests and benchmarks."""
    backends: dict[str, object] = {"python": dwell_py.dwell_sweep}
    try:
        from . import _dwell_cy

        backends["cython"] = _dwell_cy.dwell_sweep
    except ImportError:
        pass
    return backends
