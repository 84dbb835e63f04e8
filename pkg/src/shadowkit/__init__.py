"""Humanoid motion shadowing toolkit.

Retargets recorded human motion onto a 33-DoF humanoid, trains a low-level
pose-tracking controller in a reduced-order simulator, and trains a chunked
visuomotor imitation policy on top of it.
"""

__version__ = "0.1.0"
