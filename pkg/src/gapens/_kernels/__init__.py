"""Hot-loop kernels with a compiled core and a numpy fallback.

The compiled extension is preferred when importable; set
``GAPENS_PURE_PYTHON=1`` to force the fallback (useful for benchmarking
and for environments without a compiler). ``BACKEND`` records which
implementation is active.
"""

import os

if os.environ.get("GAPENS_PURE_PYTHON"):
    from . import _pykernels as _impl

    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import _pykernels as _impl

        BACKEND = "python"

tie_averaged_ap = _impl.tie_averaged_ap
subset_vote_sums = _impl.subset_vote_sums

__all__ = ["BACKEND", "tie_averaged_ap", "subset_vote_sums"]
