"""Long-tailed species classification toolkit."""

from ._taxon import *  # noqa: F401,F403
from ._taxon import __doc__  # noqa: F401
