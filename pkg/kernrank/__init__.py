# ruff: noqa: F401, F403

from .domains import *
from .exceptions import *
from .fredholm import *
from .helpers import *
from .kernels import *
from .rank import *
from .series import *
from .types import *
