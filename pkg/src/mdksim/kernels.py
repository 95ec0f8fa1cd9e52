"""Hot-kernel backend selection.

The compiled core (``_ckernels``) is used when it was built; otherwise, or
when ``MDKSIM_BACKEND=python`` is set, the numpy fallback is used. Both
expose ``matvec_i8``, ``sum_ltr`` and ``attend_head`` with identical
signatures.
"""

import os

from . import _pykernels as python

compiled = None
try:
    from . import _ckernels as compiled
except ImportError:  # extension not built
    compiled = None

if compiled is not None and os.environ.get("MDKSIM_BACKEND", "").lower() != "python":
    backend = compiled
    BACKEND = "compiled"
else:
    backend = python
    BACKEND = "python"

matvec_i8 = backend.matvec_i8
sum_ltr = backend.sum_ltr
attend_head = backend.attend_head


def available_backends() -> dict:
    out = {"python": python}
    if compiled is not None:
        out["compiled"] = compiled
    return out
