from .constitutive import ConstitutiveSet, FrictionFunction, PressureLaw
from .hydro.state import HydroState, SchemeConfig, Trajectory
from .torus import ScalarField, TorusGrid, VectorField
