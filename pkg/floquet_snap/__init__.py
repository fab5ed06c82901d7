"""
Floquet-engineered SNAP gates for a driven cavity-transmon system.
"""
__version__ = "1.0.0"
