import os
import sys

# Make the reference implementations importable from any test module.
sys.path.insert(0, os.path.dirname(__file__))
