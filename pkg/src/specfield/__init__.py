"""Spectral density inference and field reconstruction for linear autonomous
stochastic processes on regular periodic grids."""

__version__ = "0.1.0"

_SUBMODULES = (
    "conventions", "grid", "fieldio", "operators", "priors", "model",
    "inference", "synth", "cli",
)


def __getattr__(name):
    # lazy so the CLI can cap BLAS threads before numpy loads
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
