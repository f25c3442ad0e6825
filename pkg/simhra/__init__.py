from .__version__ import __version__

from simhra.utils import *
from simhra.scenario import *
from simhra.dialogue import *
from simhra.backends import *
from simhra.moderator import *
from simhra.engine import *
from simhra.metrics import *
from simhra.report import *
from simhra.stats import *
