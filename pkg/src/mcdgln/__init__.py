"""Dynamic graph learning on functional connectomes with masked connections.

Subpackages are imported lazily; ``mcdgln.kernels.BACKEND`` reports whether
the compiled extension is in use.
"""

__version__ = "0.1.0"
