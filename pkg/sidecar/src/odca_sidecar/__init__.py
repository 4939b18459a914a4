"""Forecaster sidecar: a child process speaking the odca-forecast/1 protocol.

The host pipeline spawns this package as a subprocess and exchanges
newline-delimited JSON over stdin/stdout: one handshake line from the child,
then exactly one response line per request line.  The default model is a
statistical forecaster that reproduces the host's builtin bootstrap
numerically, so moving forecasting out of process changes no results.
"""

__version__ = "0.1.0"

PROTOCOL = "odca-forecast/1"

__all__ = ["PROTOCOL", "__version__"]
