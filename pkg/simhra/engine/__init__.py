from simhra.engine.simulation import *
from simhra.engine.callbacks import *
