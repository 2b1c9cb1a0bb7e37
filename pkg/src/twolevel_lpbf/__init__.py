"""Two-level finite element thermal model of laser powder bed fusion builds.

A coarse global mesh grows layer by layer over the build plate while a fine
local mesh follows the top of the build; the two are coupled through Dirichlet
data on the local interface and a conductivity-jump flux on the global side.
"""

__version__ = "0.1.0"
