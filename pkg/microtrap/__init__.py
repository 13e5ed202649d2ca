"""
microtrap: field, dynamics and experiment simulator for a segmented
two-layer microchip Paul trap holding a single ⁴⁰Ca⁺ ion.
"""

__version__ = "0.3.0"
