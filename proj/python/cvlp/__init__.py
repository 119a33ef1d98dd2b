"""Continual vision-language contrastive pretraining on synthetic streams."""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401
