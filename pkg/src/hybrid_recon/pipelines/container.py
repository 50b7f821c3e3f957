"""HRC1 array files, checkpoint directories and grayscale bitmaps.

An HRC1 file is a UTF-8 header line ``HRC1 <dtype> <ndims> <dim0> ...``
followed by little-endian row-major data; ``c64`` stores interleaved float32
(real, imag) pairs.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

MAGIC = "HRC1"
DTYPES = {"c64": np.dtype("<c8"), "f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def _code_for(arr: np.ndarray) -> str:
    if np.iscomplexobj(arr):
        return "c64"
    if arr.dtype == np.float32:
        return "f32"
    return "f64"


def write_array(path, arr, dtype: str | None = None) -> Path:
    """Write ``arr`` as an HRC1 file; complex arrays become ``c64``."""
    arr = np.asarray(arr)
    code = dtype or _code_for(arr)
    if code not in DTYPES:
        raise ValueError(f"unsupported container dtype {code!r}")
    if code != "c64" and np.iscomplexobj(arr):
        raise TypeError(f"cannot store complex data as {code}")
    header = f"{MAGIC} {code} {arr.ndim}" + "".join(f" {d}" for d in arr.shape) + "\n"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes())
    return path


def read_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    end = blob.find(b"\n")
    if end < 0:
        raise ValueError(f"{path}: missing HRC1 header")
    parts = blob[:end].decode("utf-8").split()
    if len(parts) < 3 or parts[0] != MAGIC or parts[1] not in DTYPES:
        raise ValueError(f"{path}: not an HRC1 file")
    ndim = int(parts[2])
    shape = tuple(int(v) for v in parts[3:3 + ndim])
    if len(shape) != ndim:
        raise ValueError(f"{path}: header declares {ndim} dims, lists {len(shape)}")
    dt = DTYPES[parts[1]]
    expected = int(np.prod(shape))
    if len(blob) - end - 1 != expected * dt.itemsize:
        raise ValueError(f"{path}: payload has {len(blob) - end - 1} bytes, header expects {expected * dt.itemsize}")
    data = np.frombuffer(blob, dtype=dt, offset=end + 1)
    return data.reshape(shape).astype(dt.newbyteorder("="))


def save_checkpoint(directory, params: dict, optimizer=None, meta: dict | None = None) -> Path:
    """Store named parameters (and ADAM moments) as HRC1 files plus a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {v}" for k, v in sorted((meta or {}).items())]
    for name, p in params.items():
        value = p.data if hasattr(p, "data") else p
        write_array(directory / f"param.{name}.hrc", np.asarray(value, dtype=np.float64))
        lines.append(f"param = {name}")
    if optimizer is not None:
        state = optimizer.state_dict()
        lines.append(f"adam_step = {state['step']}")
        lines.append(f"adam_lr = {state['lr']!r}")
        for name in params:
            write_array(directory / f"adam_m.{name}.hrc", state["m"][name])
            write_array(directory / f"adam_v.{name}.hrc", state["v"][name])
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return directory


def load_checkpoint(directory):
    """Return ``(params, adam_state_or_None, meta)`` from :func:`save_checkpoint` output."""
    directory = Path(directory)
    manifest = directory / "manifest.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"no checkpoint manifest in {directory}")
    names, meta, adam = [], {}, {}
    for line in manifest.read_text(encoding="utf-8").splitlines():
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "param":
            names.append(value)
        elif key.startswith("adam_"):
            adam[key[5:]] = value
        else:
            meta[key] = value
    params = {n: read_array(directory / f"param.{n}.hrc") for n in names}
    state = None
    if adam:
        state = {"step": int(adam["step"]), "lr": float(adam["lr"]),
                 "m": {n: read_array(directory / f"adam_m.{n}.hrc") for n in names},
                 "v": {n: read_array(directory / f"adam_v.{n}.hrc") for n in names}}
    return params, state, meta


def load_into(params: dict, stored: dict) -> None:
    """Copy stored arrays into live parameter tensors, checking names and shapes."""
    if set(params) != set(stored):
        missing = sorted(set(params) ^ set(stored))
        raise ValueError(f"checkpoint does not match the model: parameters {missing} differ")
    for name, p in params.items():
        if p.data.shape != stored[name].shape:
            raise ValueError(f"checkpoint shape mismatch for {name}: {stored[name].shape} vs {p.data.shape}")
        p.data = np.array(stored[name], dtype=np.float64)


def save_bitmap(path, image, vmin: float | None = None, vmax: float | None = None, bits: int = 8) -> Path:
    """Grayscale PNG of ``|image|`` windowed to ``[vmin, vmax]`` (8- or 16-bit)."""
    from PIL import Image

    img = np.abs(np.asarray(image, dtype=np.complex128 if np.iscomplexobj(image) else np.float64))
    lo = float(img.min()) if vmin is None else vmin
    hi = float(img.max()) if vmax is None else vmax
    scaled = np.clip((img - lo) / (hi - lo if hi > lo else 1.0), 0.0, 1.0)
    if bits == 8:
        pil = Image.fromarray(np.round(scaled * 255).astype(np.uint8))
    elif bits == 16:
        pil = Image.fromarray(np.round(scaled * 65535).astype(np.uint16))
    else:
        raise ValueError("bits must be 8 or 16")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pil.save(path)
    return path
