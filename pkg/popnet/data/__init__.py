# This file marks the 'data' directory as a Python subpackage.
