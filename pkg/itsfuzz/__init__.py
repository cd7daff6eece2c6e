import importlib.metadata

from itsfuzz import lmi
from itsfuzz import lyapcheck
from itsfuzz import read
from itsfuzz import sdesim
from itsfuzz import stability
from itsfuzz import synthesis
from itsfuzz import tsmodel
from itsfuzz.stability import analyze
from itsfuzz.stability import sweep
from itsfuzz.synthesis import synthesize
from itsfuzz.synthesis import verify_closed_loop

__version__ = importlib.metadata.version("itsfuzz")
