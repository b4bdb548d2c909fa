"""Reduced-order modelling of advection-dominated flows with heavy-ball neural ODEs.

Full-order solvers (``fom``) produce snapshots, ``rom`` reduces them with POD
or DMD, and ``pipeline`` learns the POD coefficient dynamics with NODE,
HBNODE or GHBNODE latent models (``dynamics``, ``neural``, ``odeint``).
"""
from .dynamics import OdeModel
from .pipeline import LatentODE, TrainConfig
from .rom import DMD, POD

__all__ = ["POD", "DMD", "OdeModel", "LatentODE", "TrainConfig"]
__version__ = "0.1.0"
