"""Model checkpoints: YAML header + flat parameter array, one file.

Layout: a YAML document (model spec plus caller extras), a single ``---``
separator line, then one parameter value per line at 17 significant digits
(the same float format as the canonical episode CSVs).
"""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np
import yaml

from ..errors import SchemaViolation
from .models import DenseNet, Model, SeqNet, TCNNet

_SEPARATOR = "---"

MODEL_KINDS = {
    "dense": DenseNet.from_spec,
    "tcn": TCNNet.from_spec,
    "seqnet": SeqNet.from_spec,
}


def save_model(path: Union[str, Path], model: Model, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"model": model.spec(), "n_params": model.n_params}
    if extra:
        header["extra"] = extra
    params = model.get_params()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(yaml.safe_dump(header, sort_keys=False, default_flow_style=False))
        fh.write(_SEPARATOR + "\n")
        for v in params:
            fh.write("{:.17g}\n".format(v))
    return path


def load_model(path: Union[str, Path]) -> tuple[Model, dict]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if f"\n{_SEPARATOR}\n" not in text:
        raise SchemaViolation(f"{path}: missing header/parameter separator")
    head_text, param_text = text.split(f"\n{_SEPARATOR}\n", 1)
    header = yaml.safe_load(head_text)
    if not isinstance(header, dict) or "model" not in header:
        raise SchemaViolation(f"{path}: malformed checkpoint header")
    spec = header["model"]
    kind = spec.get("kind")
    if kind not in MODEL_KINDS:
        raise SchemaViolation(f"{path}: unknown model kind {kind!r}")
    model = MODEL_KINDS[kind](spec)
    values = [float(line) for line in param_text.split() if line]
    if len(values) != header.get("n_params", len(values)):
        raise SchemaViolation(
            f"{path}: header says {header.get('n_params')} params, file has {len(values)}"
        )
    model.set_params(np.asarray(values, dtype=np.float64))
    return model, header.get("extra", {})
