"""Select the matching kernels at import time.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``OSDR_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the numpy fallback is used. ``BACKEND`` names the active one.
"""

import os

from . import _fallback

fallback = _fallback

if os.environ.get("OSDR_PURE_PYTHON", "") not in ("", "0"):
    compiled = None
else:
    try:
        from . import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

_impl = compiled if compiled is not None else _fallback
BACKEND = "compiled" if compiled is not None else "python"

greedy_match = _impl.greedy_match
hungarian = _impl.hungarian
