"""On-disk formats: JSON sidecar header + raw little-endian payload.

A volume stored at ``base`` occupies ``base.json`` and ``base.raw``. The
payload is row-major with the coil axis slowest; complex samples are stored
as interleaved (real, imag) float32 pairs. Checkpoints follow the same
pattern with a manifest listing every parameter's shape and byte offset.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import (CorruptFileError, FormatError, MissingFileError, MissingModelError,
                     ModelShapeError, VersionError)
from .sampling import SamplingMask
from .unrolled.model import CascadeModel, parameter_shapes
from .volume import ComplexVolume, ImageVolume

FORMAT_VERSION = 1
VOLUME_FORMAT = "iomri-volume"
CHECKPOINT_FORMAT = "iomri-checkpoint"
_ELEMENTS = {"complex64": np.dtype("<c8"), "float32": np.dtype("<f4")}


def _paths(path):
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".raw")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _write_pair(header_path, payload_path, header, payload: bytes):
    # payload first so a reader never sees a header without its data
    for p in (header_path, payload_path):
        p.parent.mkdir(parents=True, exist_ok=True)
    payload_path.write_bytes(payload)
    header_path.write_text(json.dumps(_jsonable(header), indent=2, sort_keys=True) + "\n")


def _read_header(header_path, expected_format, missing=MissingFileError):
    if not header_path.exists():
        raise missing(f"{header_path} not found")
    try:
        header = json.loads(header_path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{header_path}: not a valid header ({exc})") from None
    if not isinstance(header, dict) or header.get("format") != expected_format:
        raise FormatError(f"{header_path}: not an {expected_format} header")
    if header.get("version") != FORMAT_VERSION:
        raise VersionError(f"{header_path}: unsupported format version {header.get('version')!r}")
    return header


def _read_payload(payload_path, expected_bytes, missing=MissingFileError):
    if not payload_path.exists():
        raise missing(f"{payload_path} not found")
    raw = payload_path.read_bytes()
    if len(raw) != expected_bytes:
        raise CorruptFileError(
            f"{payload_path}: payload is {len(raw)} bytes, header declares {expected_bytes}")
    return raw


# ---------------------------------------------------------------------------
# volumes

def payload_nbytes(shape, element) -> int:
    return int(np.prod(shape)) * _ELEMENTS[element].itemsize


def write_volume(v, path) -> Path:
    """Write a :class:`ComplexVolume` (as complex64) or :class:`ImageVolume` (as float32)."""
    header_path, payload_path = _paths(path)
    if isinstance(v, ComplexVolume):
        element, data = "complex64", v.data
        header = {"kind": "complex", "shape": list(v.data.shape), "fov_mm": list(v.fov_mm),
                  "space": v.space, "num_averages": v.num_averages, "provenance": v.provenance}
    elif isinstance(v, ImageVolume):
        element, data = "float32", v.data
        header = {"kind": "image", "shape": [1, *v.data.shape], "fov_mm": list(v.fov_mm),
                  "space": "image", "num_averages": 1, "provenance": {}}
    else:
        raise FormatError(f"cannot write object of type {type(v).__name__}")
    payload = np.ascontiguousarray(data, dtype=_ELEMENTS[element]).tobytes()
    header.update(format=VOLUME_FORMAT, version=FORMAT_VERSION, element=element,
                  byte_order="little", layout="row-major, coil slowest",
                  spacing_mm=list(v.spacing_mm), payload_file=payload_path.name,
                  payload_bytes=len(payload))
    _write_pair(header_path, payload_path, header, payload)
    return header_path


def read_volume(path):
    header_path, payload_path = _paths(path)
    h = _read_header(header_path, VOLUME_FORMAT)
    try:
        shape = tuple(int(s) for s in h["shape"])
        element = h["element"]
        dtype = _ELEMENTS[element]
        kind = h["kind"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{header_path}: malformed header ({exc!r})") from None
    if len(shape) != 4:
        raise FormatError(f"{header_path}: shape must have four entries")
    expected = payload_nbytes(shape, element)
    if h.get("payload_bytes", expected) != expected:
        raise CorruptFileError(f"{header_path}: payload_bytes disagrees with shape and element")
    payload_path = header_path.with_name(h.get("payload_file", payload_path.name))
    data = np.frombuffer(_read_payload(payload_path, expected), dtype=dtype).reshape(shape)
    data = data.astype(dtype.newbyteorder("="))
    if kind == "image":
        return ImageVolume(data[0], tuple(h["spacing_mm"]))
    if kind == "complex":
        return ComplexVolume(data, tuple(h["spacing_mm"]), tuple(h["fov_mm"]), h["space"],
                             h["num_averages"], dict(h.get("provenance", {})))
    raise FormatError(f"{header_path}: unknown volume kind {kind!r}")


def write_mask(mask: SamplingMask, path) -> Path:
    """Masks are stored as a float32 image of 0/1 values plus their metadata."""
    header_path, payload_path = _paths(path)
    payload = np.ascontiguousarray(mask.keep, dtype="<f4").tobytes()
    header = {"format": VOLUME_FORMAT, "version": FORMAT_VERSION, "kind": "mask",
              "element": "float32", "byte_order": "little", "shape": [1, 1, *mask.keep.shape],
              "payload_file": payload_path.name, "payload_bytes": len(payload),
              "calib_yx": list(mask.calib_yx), "target_R": mask.target_R, "seed": mask.seed,
              "style": mask.style, "params": mask.params, "measured_R": mask.measured_R}
    _write_pair(header_path, payload_path, header, payload)
    return header_path


def read_mask(path) -> SamplingMask:
    header_path, payload_path = _paths(path)
    h = _read_header(header_path, VOLUME_FORMAT)
    if h.get("kind") != "mask":
        raise FormatError(f"{header_path}: not a mask file")
    shape = tuple(int(s) for s in h["shape"])
    raw = _read_payload(header_path.with_name(h.get("payload_file", payload_path.name)),
                        payload_nbytes(shape, "float32"))
    keep = np.frombuffer(raw, dtype="<f4").reshape(shape[-2:]) != 0
    return SamplingMask(keep, tuple(h["calib_yx"]), h["target_R"], h.get("seed"),
                        h.get("style"), dict(h.get("params", {})))


# ---------------------------------------------------------------------------
# checkpoints

def save_model(model: CascadeModel, cfg=None, path="model", best_epoch=None, extra=None) -> Path:
    """Manifest + float64 little-endian parameter payload, in architecture order."""
    header_path, payload_path = _paths(path)
    entries, chunks, offset = [], [], 0
    for name, value in model.params.items():
        b = np.ascontiguousarray(value, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(value)), "offset": offset, "nbytes": len(b)})
        chunks.append(b)
        offset += len(b)
    if cfg is not None and hasattr(cfg, "to_dict"):
        cfg = cfg.to_dict()
    manifest = {"format": CHECKPOINT_FORMAT, "version": FORMAT_VERSION, "element": "float64",
                "byte_order": "little", "cascades": model.cascades, "channels": model.channels,
                "parameters": entries, "payload_file": payload_path.name, "payload_bytes": offset,
                "training_config": cfg, "best_epoch": best_epoch, "extra": extra or {}}
    _write_pair(header_path, payload_path, manifest, b"".join(chunks))
    return header_path


def read_manifest(path) -> dict:
    return _read_header(_paths(path)[0], CHECKPOINT_FORMAT, missing=MissingModelError)


def load_model(path) -> CascadeModel:
    header_path, payload_path = _paths(path)
    m = _read_header(header_path, CHECKPOINT_FORMAT, missing=MissingModelError)
    try:
        cascades, channels = int(m["cascades"]), int(m["channels"])
        entries = m["parameters"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{header_path}: malformed manifest ({exc!r})") from None
    expected = parameter_shapes(cascades, channels)
    names = [e["name"] for e in entries]
    if sorted(names) != sorted(expected) or len(set(names)) != len(names):
        raise ModelShapeError(f"{header_path}: parameter list does not match a T={cascades}, C={channels} model")
    spans = []
    for e in entries:
        shape = tuple(int(s) for s in e["shape"])
        if shape != tuple(expected[e["name"]]):
            raise ModelShapeError(f"{e['name']}: manifest shape {shape}, architecture needs {expected[e['name']]}")
        if int(e["nbytes"]) != int(np.prod(shape)) * 8:
            raise CorruptFileError(f"{e['name']}: byte count disagrees with shape")
        spans.append((int(e["offset"]), int(e["offset"]) + int(e["nbytes"])))
    spans.sort()
    if any(a[1] > b[0] for a, b in zip(spans, spans[1:])) or (spans and spans[0][0] < 0):
        raise CorruptFileError(f"{header_path}: parameter byte ranges overlap")
    total = int(m.get("payload_bytes", spans[-1][1] if spans else 0))
    if spans and spans[-1][1] > total:
        raise CorruptFileError(f"{header_path}: parameters extend past the declared payload")
    raw = _read_payload(header_path.with_name(m.get("payload_file", payload_path.name)), total,
                        missing=MissingModelError)
    params = {}
    for e in entries:
        a = np.frombuffer(raw, dtype="<f8", count=int(np.prod(e["shape"])), offset=int(e["offset"]))
        params[e["name"]] = a.reshape(tuple(e["shape"])).astype(np.float64)
    return CascadeModel(cascades, channels, params)


def checkpoint_exists(path) -> bool:
    return all(os.path.exists(p) for p in _paths(path))
