"""Figure rendering for experiment outputs produced by the fbmflow CLI.

The renderer reads CSV files and the run manifest that sits next to them;
it never imports the simulator.  The two packages talk only through files
on disk, so either side can be rebuilt without touching the other.
"""

from .csvio import ProvenanceError, SchemaError
from .figures import KINDS, FigureSpec, render

__all__ = ["FigureSpec", "KINDS", "ProvenanceError", "SchemaError", "render"]
__version__ = "0.1.0"
