"""Act-or-repeat actor-critic with a compare-through multi-step critic, baselines and tools."""
from importlib import metadata

try:
    __version__ = metadata.version("artifact")
except metadata.PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"
