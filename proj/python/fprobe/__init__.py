"""Python bindings for the fprobe C++ core."""

from ._core import *  # noqa: F401,F403
from ._core import __version__  # noqa: F401
