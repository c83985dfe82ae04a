"""Python access to the dmad simulator, matcher, trainer and metrics."""

import csv
import io
import json

from . import _core

hungarian = _core.hungarian
velocity_from_trajectory = _core.velocity_from_trajectory
gini = _core.gini
MapError = _core.MapError


def _dump(obj):
    return "" if obj is None else json.dumps(obj)


def episode(seed, world=None):
    """Generate one episode; `world` is a dict of world-config overrides."""
    return json.loads(_core.episode_json(seed, _dump(world)))


def write_dataset(out, first, last, world=None):
    _core.write_dataset(_dump(world), first, last, str(out))


def train(config, data_dir, out):
    """Train both stages. `config` is a train-config dict."""
    _core.train(json.dumps(config), str(data_dir), str(out))


def evaluate_run(run_dir, data_dir, stage=2):
    """Score a trained run; returns the metric row as a dict of strings."""
    text = _core.evaluate_run(str(run_dir), str(data_dir), stage)
    return next(csv.DictReader(io.StringIO(text)))
