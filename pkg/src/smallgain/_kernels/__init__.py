"""Hot loops with a compiled backend and a numpy fallback.

The compiled module is used when it imports; set ``SMALLGAIN_PURE_PYTHON=1``
to force the fallback.
"""

import os

from smallgain._kernels import _pykernels

_compiled = None
if os.environ.get("SMALLGAIN_PURE_PYTHON", "") != "1":
    try:
        from smallgain._kernels import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_active = _compiled if _compiled is not None else _pykernels


def available_backends() -> list[str]:
    return (["cython"] if _compiled is not None else []) + ["python"]


def get_backend(name: str | None = None):
    """Module implementing the kernels; ``None`` picks the default."""
    if name is None:
        return _active
    if name == "python":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def rk4_parametric(*args, backend=None):
    return get_backend(backend).rk4_parametric(*args)


def envelope_linear(*args, backend=None):
    return get_backend(backend).envelope_linear(*args)


def running_abs_max(X, backend=None):
    return get_backend(backend).running_abs_max(X)


OK, ESCAPED, LOOP_DIVERGED = _pykernels.OK, _pykernels.ESCAPED, _pykernels.LOOP_DIVERGED
