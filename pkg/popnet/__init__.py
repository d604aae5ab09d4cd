# This file marks the 'popnet' directory as a Python package.
"""
Synthetic population and contact-network generator.
"""

__version__ = "0.1.0"
