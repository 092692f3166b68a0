"""Checkpoint archives: a ZIP of .ten tensors plus a JSON manifest.

Layout (documented, bit-exact):

    manifest.json             format_version, config, seed, step/extra,
                              tensor name -> {dtype, shape} table
    tensors/<name>.ten        network parameters (names follow the
                              "<branch>/<block>/<stage>/<tensor>" scheme)
    stats/<name>/<field>.ten  batch-norm running statistics
    state/<name>.ten          optimizer / loop state for exact resume

Entries are STORED (floats don't compress) with a fixed timestamp, so
saving the same network twice yields identical bytes. The ZIP CRC32 is
the corruption/truncation check.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .engine.tensor import ten_bytes, ten_from_bytes
from .errors import (
    CheckpointError,
    CheckpointVersionError,
    MissingTensorError,
    TensorShapeError,
)
from .network import NetConfig, Network

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _write_entry(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_checkpoint(net: Network, path, extra: dict | None = None,
                    state_arrays: dict[str, np.ndarray] | None = None) -> None:
    """Write the network (and optional loop state) to `path`."""
    tensors: dict[str, np.ndarray] = {}
    for name, p in net.named_params():
        tensors[f"tensors/{name}"] = np.asarray(p.value, dtype=np.float32)
    for name, st in net.named_stats():
        for field, arr in st.state_arrays().items():
            tensors[f"stats/{name}/{field}"] = np.asarray(arr, dtype=np.float32)
    for name, arr in (state_arrays or {}).items():
        tensors[f"state/{name}"] = np.asarray(arr, dtype=np.float32)

    manifest = {
        "format_version": FORMAT_VERSION,
        "config": net.config.to_dict(),
        "seed": net.seed,
        "extra": extra or {},
        "tensors": {
            name: {"dtype": str(arr.dtype), "shape": list(arr.shape)}
            for name, arr in tensors.items()
        },
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _write_entry(zf, "manifest.json",
                     json.dumps(manifest, sort_keys=True, indent=1).encode())
        for name in sorted(tensors):
            _write_entry(zf, f"{name}.ten", ten_bytes(tensors[name]))
    Path(path).write_bytes(buf.getvalue())


def _read_archive(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            arrays = {}
            for name in zf.namelist():
                if name.endswith(".ten"):
                    arrays[name[: -len(".ten")]] = ten_from_bytes(zf.read(name))
    except CheckpointError:
        raise
    except KeyError as e:
        raise CheckpointError(f"checkpoint is missing {e}") from e
    except (zipfile.BadZipFile, OSError, ValueError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from e

    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format {version!r}, this build reads {FORMAT_VERSION}"
        )
    declared = set(manifest.get("tensors", {}))
    present = set(arrays)
    if declared - present:
        raise MissingTensorError(f"manifest promises missing tensors: {sorted(declared - present)[:4]}")
    return manifest, arrays


def load_checkpoint(path) -> tuple[Network, dict, dict[str, np.ndarray]]:
    """Rebuild a Network from `path`.

    Returns (net, extra, state_arrays); forward outputs of the loaded
    network are bit-identical to the saved one.
    """
    manifest, arrays = _read_archive(path)
    config = NetConfig.from_dict(manifest["config"])
    net = Network(config, int(manifest.get("seed", 0)))

    for name, p in net.named_params():
        key = f"tensors/{name}"
        if key not in arrays:
            raise MissingTensorError(f"checkpoint lacks tensor {name!r}")
        arr = arrays[key]
        if tuple(arr.shape) != tuple(p.value.shape):
            raise TensorShapeError(
                f"tensor {name!r}: stored shape {tuple(arr.shape)}, "
                f"config demands {tuple(p.value.shape)}"
            )
        p.value = arr.astype(np.float32)
    for name, st in net.named_stats():
        fields = {}
        for field in ("running_mean", "running_var", "count"):
            key = f"stats/{name}/{field}"
            if key not in arrays:
                raise MissingTensorError(f"checkpoint lacks running stats {name!r}/{field}")
            fields[field] = arrays[key]
        if fields["running_mean"].shape != st.mean.shape:
            raise TensorShapeError(
                f"stats {name!r}: stored shape {fields['running_mean'].shape}, "
                f"config demands {st.mean.shape}"
            )
        st.load_state_arrays(fields)

    state = {
        name[len("state/"):]: arr
        for name, arr in arrays.items()
        if name.startswith("state/")
    }
    return net, manifest.get("extra", {}), state
