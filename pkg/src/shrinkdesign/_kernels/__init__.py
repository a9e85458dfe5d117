"""Backend selection for the hot numeric kernels.

Two interchangeable implementations exist:

* ``_ckernels`` — Cython extension, used by default when importable.
* ``pykernels`` — pure numpy fallback, always available.

Both expose the same module-level API (``quad_moments``,
``lambda_max_rank_one``, ``risk_from_counts``, ``candidate_risks``) and
implement the identical algorithm, so results agree to rounding.  Set
``SHRINKDESIGN_BACKEND=python`` to force the fallback (used by the
benchmark to compare the two).
"""

import os

from shrinkdesign._kernels import pykernels

_forced = os.environ.get("SHRINKDESIGN_BACKEND", "").strip().lower()

if _forced in ("python", "pure", "py"):
    _impl = pykernels
elif _forced in ("c", "compiled", "cython"):
    from shrinkdesign._kernels import _ckernels as _impl  # hard failure if forced
else:
    try:
        from shrinkdesign._kernels import _ckernels as _impl
    except ImportError:
        _impl = pykernels

backend_name = _impl.BACKEND

lambda_max_rank_one = _impl.lambda_max_rank_one
quad_moments = _impl.quad_moments
risk_from_counts = _impl.risk_from_counts
candidate_risks = _impl.candidate_risks

# integer codes shared by both backends
KIND_DIFF_IN_MEANS = pykernels.KIND_DIFF_IN_MEANS
KIND_BOCK = pykernels.KIND_BOCK
KIND_SURE_MIN = pykernels.KIND_SURE_MIN
KIND_DIMMERY = pykernels.KIND_DIMMERY
COMP_RECIP = pykernels.COMP_RECIP
COMP_DIAG = pykernels.COMP_DIAG
COMP_FULL = pykernels.COMP_FULL


def get_backend(name):
    """Return a specific backend module ("c" or "python"); for benchmarks."""
    if name == "python":
        return pykernels
    if name == "c":
        from shrinkdesign._kernels import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
