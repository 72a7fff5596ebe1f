"""Backend selection: compiled Cython core with a pure-Python fallback.

The environment variable MEDIANFLOW_BACKEND forces a choice:

    auto      compiled if importable, else python (default)
    compiled  require medianflow._core, raise if missing
    python    always use the numpy reference implementation

Both backends expose the same function surface and the same semantics;
the sampled-median and multiphase walks are bit-identical between them.
"""

import os

from . import _ref

_choice = os.environ.get("MEDIANFLOW_BACKEND", "auto").strip().lower()

if _choice not in ("auto", "compiled", "python"):
    raise RuntimeError(
        f"MEDIANFLOW_BACKEND must be auto, compiled or python, got {_choice!r}"
    )

impl = _ref
backend_name = "python"

if _choice in ("auto", "compiled"):
    try:
        from . import _core  # type: ignore[attr-defined]

        impl = _core
        backend_name = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise RuntimeError(
                "MEDIANFLOW_BACKEND=compiled but medianflow._core is not built; "
                "run pip install -e . --no-build-isolation"
            )

reference = _ref
