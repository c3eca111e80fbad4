"""Sample directories: one ``.bpr`` file per roll plus a ``manifest.json``.

The manifest records the resolution (including track names, which the
binary file header does not carry), a provenance label and the seed, so a
directory can be evaluated without any other context. Directories without a
manifest are still readable; their tracks get generic names.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import FormatError
from .pianoroll import Pianoroll, Resolution, load_any, save, save_real

MANIFEST = "manifest.json"
SUFFIX = ".bpr"


def sample_name(i: int) -> str:
    return f"sample_{i:05d}{SUFFIX}"


def write_samples(values, res: Resolution, directory, label: str, seed: int | None = None,
                  extra: dict | None = None) -> list[Path]:
    """Write ``[n, bar, time, pitch, track]`` values (binary or real) and a manifest.

    Binary arrays are stored as BPR1, anything else as the real-valued BPRF
    variant.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    values = np.asarray(values)
    binary = bool(np.all((values == 0) | (values == 1)))
    paths = []
    for i, v in enumerate(values):
        path = directory / sample_name(i)
        if binary:
            save(Pianoroll(res, v.astype(np.uint8)), path)
        else:
            save_real(v, res, path)
        paths.append(path)
    manifest = {
        "label": label,
        "seed": seed,
        "binary": binary,
        "n_samples": len(paths),
        "resolution": asdict(res),
        "files": [p.name for p in paths],
    }
    manifest.update(extra or {})
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return paths


def read_manifest(directory) -> dict | None:
    path = Path(directory) / MANIFEST
    if not path.exists():
        return None
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def _resolution(manifest: dict | None) -> Resolution | None:
    if manifest is None or "resolution" not in manifest:
        return None
    fields = dict(manifest["resolution"])
    fields["tracks"] = tuple(fields["tracks"])
    return Resolution(**fields)


def read_samples(path) -> tuple[np.ndarray, Resolution, np.ndarray, dict]:
    """Load a sample directory or a single file.

    Returns ``(values, resolution, binary_flags, manifest)`` where
    ``binary_flags[i]`` tells whether file ``i`` was stored as BPR1.
    """
    path = Path(path)
    manifest = read_manifest(path) if path.is_dir() else None
    if path.is_dir():
        names = manifest["files"] if manifest and "files" in manifest else sorted(
            p.name for p in path.iterdir() if p.suffix == SUFFIX)
        files = [path / n for n in names]
    elif path.exists():
        files = [path]
    else:
        raise FileNotFoundError(f"no such sample file or directory: {path}")
    if not files:
        return np.zeros((0,)), None, np.zeros((0,), bool), manifest or {}
    res = _resolution(manifest)
    tracks = res.tracks if res is not None else None
    lowest = res.lowest_pitch_name if res is not None else "C1"
    values, flags, seen = [], [], None
    for f in files:
        v, r, is_binary = load_any(f, tracks, lowest)
        if seen is not None and r != seen:
            raise FormatError(f"{f} has resolution {r.shape}, earlier files have {seen.shape}")
        seen = r
        values.append(v.astype(np.float64))
        flags.append(is_binary)
    return np.stack(values), seen, np.array(flags), manifest or {}


__all__ = ["MANIFEST", "read_manifest", "read_samples", "sample_name", "write_samples"]
