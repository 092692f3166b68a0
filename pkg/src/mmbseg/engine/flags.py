"""Engine-wide runtime switches.

The engine always computes in a fixed sequential order, so results are
bit-reproducible run to run; there is no nondeterministic fast path to
opt out of. The one real switch is the debug finiteness guard, which
asserts that no op produces NaN/Inf from finite inputs. It is off by
default because the check touches every output element.
"""

import numpy as np

from ..errors import MmbsegError

_debug_checks = False


class NonFiniteError(MmbsegError):
    """An op produced NaN/Inf while the debug guard was enabled."""


def set_debug_checks(enabled: bool) -> None:
    global _debug_checks
    _debug_checks = bool(enabled)


def debug_checks_enabled() -> bool:
    return _debug_checks


def guard_finite(name: str, arr: np.ndarray) -> None:
    """Raise if `arr` holds NaN/Inf. No-op unless debug checks are on."""
    if _debug_checks and arr.dtype.kind == "f" and not np.isfinite(arr).all():
        raise NonFiniteError(f"op '{name}' produced non-finite values")


# --- kink watch -------------------------------------------------------------
# Gradient checking needs to know whether any ReLU6 input sits (numerically)
# on a kink: finite differences are wrong there no matter the step size or
# precision. relu6 reports its minimum kink distance while a watch is active.

_kink_watching = False
_kink_min = np.inf


def begin_kink_watch() -> None:
    global _kink_watching, _kink_min
    _kink_watching = True
    _kink_min = np.inf


def end_kink_watch() -> float:
    global _kink_watching
    _kink_watching = False
    return _kink_min


def report_kink_distance(dist: float) -> None:
    global _kink_min
    if _kink_watching and dist < _kink_min:
        _kink_min = float(dist)


def kink_watch_active() -> bool:
    return _kink_watching
