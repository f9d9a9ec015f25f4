"""Scan backend selection: compiled extension if built, NumPy fallback otherwise.

Set SSMRL_FORCE_PY=1 to force the pure-Python fallback (used by the
benchmark and for debugging).
"""

import os

if os.environ.get("SSMRL_FORCE_PY"):
    from ssmrl import _scan_py as _impl

    BACKEND = "python"
else:
    try:
        from ssmrl import _scan as _impl

        BACKEND = "compiled"
    except ImportError:
        from ssmrl import _scan_py as _impl

        BACKEND = "python"

F32_EPS = 2.0**-24
F64_EPS = 2.0**-53

dd_recurrence = _impl.dd_recurrence
real_error_scan = _impl.real_error_scan
diag_ssm_scan = _impl.diag_ssm_scan
