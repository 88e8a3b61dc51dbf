"""Parameter checkpoints: one ``.hst`` file per parameter plus an index.

The index file lists, one line per parameter in network order:

    <name>\t<logical shape>\t<role>\t<filename>

Arrays are stored flattened as (1, 1, 1, size) .hst tensors; the logical
shape in the index restores them. Round trips are bit exact for float32
networks (the working precision).
"""

import os

import numpy as np

from .errors import StateError
from .hst import read_hst, write_hst

INDEX_NAME = "index.txt"


def _role(name):
    suffix = name.rsplit(".", 1)[-1]
    return {
        "weight": "conv_weight",
        "bias": "conv_bias",
        "gain": "redistribution_gain",
        "shift": "redistribution_shift",
        "alpha": "ste_sharpness",
        "beta": "rprelu_slope",
        "gamma": "rprelu_pivot",
        "zeta": "rprelu_offset",
    }.get(suffix, "other")


def save_checkpoint(net, directory):
    os.makedirs(directory, exist_ok=True)
    lines = []
    for i, p in enumerate(net.params()):
        fname = f"{i:04d}.hst"
        flat = np.ascontiguousarray(p.value, dtype=np.float32).reshape(1, 1, 1, -1)
        write_hst(os.path.join(directory, fname), flat)
        shape = ",".join(str(s) for s in p.value.shape) or "scalar"
        lines.append(f"{p.name}\t{shape}\t{_role(p.name)}\t{fname}")
    with open(os.path.join(directory, INDEX_NAME), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(net, directory):
    """Fill an already-built network's parameters from a checkpoint."""
    index_path = os.path.join(directory, INDEX_NAME)
    if not os.path.exists(index_path):
        raise IOError(f"{index_path}: checkpoint index not found")
    entries = {}
    with open(index_path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            name, shape, _role_, fname = line.split("\t")
            entries[name] = (shape, fname)
    for p in net.params():
        if p.name not in entries:
            raise StateError(f"checkpoint is missing parameter {p.name}")
        shape_str, fname = entries.pop(p.name)
        data = read_hst(os.path.join(directory, fname)).reshape(-1)
        shape = () if shape_str == "scalar" else tuple(int(s) for s in shape_str.split(","))
        if int(np.prod(shape, dtype=np.int64)) != data.size:
            raise StateError(
                f"{p.name}: checkpoint holds {data.size} values, parameter needs shape {shape}"
            )
        if shape != p.value.shape:
            raise StateError(
                f"{p.name}: checkpoint shape {shape} != built shape {p.value.shape}"
            )
        p.value[...] = data.reshape(shape).astype(p.value.dtype)
    if entries:
        raise StateError(f"checkpoint has extra parameters: {sorted(entries)}")
