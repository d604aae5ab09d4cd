# This file marks the 'config' directory as a Python subpackage.
