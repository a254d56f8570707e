from ._fprect import *  # noqa: F401,F403
from ._fprect import __version__  # noqa: F401
