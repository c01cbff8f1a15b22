"""samforge: a desk-scale grid data handling system.

A file-metadata catalog daemon, caching/routing station daemons with
checksum-verified pluggable transfers, simulated tape stores with access
control, a legacy-catalog migration tool, and a project server that
delivers dataset files exactly once to parallel consumers.
"""

__version__ = "0.1.0"
