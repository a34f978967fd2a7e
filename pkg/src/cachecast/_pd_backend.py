"""Select the iteration kernel: compiled extension or numpy fallback.

Set CACHECAST_PURE_PYTHON=1 to force the fallback even when the compiled
kernel is installed.
"""

import os

if os.environ.get("CACHECAST_PURE_PYTHON"):
    from ._pd_fallback import advance  # noqa: F401

    BACKEND = "python"
else:
    try:
        from ._pdcore import advance  # noqa: F401

        BACKEND = "compiled"
    except ImportError:
        from ._pd_fallback import advance  # noqa: F401

        BACKEND = "python"
