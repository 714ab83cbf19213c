"""Video onset detection: synthetic data, training, decoding, scoring.

The heavy lifting lives in the compiled extension; this package adds small
keyword-argument conveniences on top of the flat key=value run configuration.
"""

from onsetnet._core import (
    ConfigError,
    DataError,
    Dataset,
    IoError,
    NumericError,
    conv3d,
    decode_onsets,
    default_config,
    evaluate,
    gradcheck,
    informed_random_baseline,
    load_dataset,
    make_splits,
    match_onsets,
    onset_probability_curve,
    softmax,
)
from onsetnet._core import generate_synthetic as _generate_synthetic
from onsetnet._core import train as _train

__all__ = [
    "ConfigError",
    "DataError",
    "Dataset",
    "IoError",
    "NumericError",
    "conv3d",
    "decode_onsets",
    "default_config",
    "evaluate",
    "generate_synthetic",
    "gradcheck",
    "informed_random_baseline",
    "load_dataset",
    "make_splits",
    "match_onsets",
    "onset_probability_curve",
    "softmax",
    "train",
]


def _coerce(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_coerce(v) for v in value)
    return str(value)


def _as_flat_config(config):
    return {key: _coerce(value) for key, value in (config or {}).items()}


def generate_synthetic(out_dir, seed=0, **synth_keys):
    """Render a synthetic dataset. Keyword args are synth.* keys without the
    prefix, e.g. subjects=9, duration_sec=30. Returns the manifest path."""
    config = {f"synth.{key}": _coerce(value) for key, value in synth_keys.items()}
    return _generate_synthetic(str(out_dir), seed, config)


def train(manifest_path, split_id, out_dir, config=None):
    """Fit one leave-one-subject-out split. config maps flat run keys
    (model.*, data.*, train.*, eval.*) to values."""
    return _train(str(manifest_path), split_id, str(out_dir), _as_flat_config(config))
