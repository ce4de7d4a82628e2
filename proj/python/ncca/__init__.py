"""Python bindings for the nonlinear CCA identifiability toolkit."""

import json

from ._ncca import *  # noqa: F401,F403
from ._ncca import NccaError, run_experiment_json


def run_experiment(config, out_dir=""):
    """Run an experiment config (a dict, same schema as the CLI files)."""
    return run_experiment_json(json.dumps(config), str(out_dir))


__all__ = [name for name in dir() if not name.startswith("_")]
