"""Figure rendering for serialized experiment outputs.

Every renderer works from the files a run leaves on disk (raw float64
binaries with JSON sidecars plus manifests); nothing here imports or invokes
the analysis package.
"""

__version__ = "0.1.0"
