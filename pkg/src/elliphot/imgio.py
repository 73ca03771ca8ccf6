"""File formats: PGM count images, CSV real images, key-value metadata.

Photon-count images travel as 16-bit PGM, plain (P2) or binary (P5),
with acquisition metadata (``C``, ``b``, ``seed``, anything else) stored
in ``# key=value`` comment lines between the magic number and the
dimensions.  Real-valued images use CSV with the same comment-line
metadata convention.  Binary P5 samples are big-endian, two bytes when
the maxval needs them, per the netpbm convention.
"""

from __future__ import annotations

import csv
import io
import math

import numpy as np

from .forward import PhotonImage, PixelGrid, RealImage


class ImageFormatError(ValueError):
    """Malformed or unsupported image file."""


_PGM_MAX = 65535


def _format_metadata(metadata: dict | None) -> list[str]:
    lines = []
    for key, value in (metadata or {}).items():
        key = str(key)
        sval = str(value)
        if "=" in key or "\n" in key or "\n" in sval:
            raise ValueError(f"metadata entry not representable: {key!r}={sval!r}")
        lines.append(f"# {key}={sval}")
    return lines


def _parse_metadata(comment_lines: list[str]) -> dict[str, str]:
    meta = {}
    for line in comment_lines:
        body = line.lstrip("#").strip()
        if "=" in body:
            key, _, value = body.partition("=")
            meta[key.strip()] = value.strip()
    return meta


def write_pgm(path, array: np.ndarray, metadata: dict | None = None,
              binary: bool = True, maxval: int | None = None) -> None:
    """Write a non-negative integer array as PGM (P5 binary or P2 plain)."""
    array = np.asarray(array)
    if array.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {array.shape}")
    if not np.issubdtype(array.dtype, np.integer):
        raise ValueError(f"PGM requires integer samples, got dtype {array.dtype}")
    if np.any(array < 0):
        raise ValueError("PGM samples must be non-negative")
    top = int(array.max()) if array.size else 0
    if maxval is None:
        maxval = max(top, 1)
    if top > maxval:
        raise ValueError(f"sample {top} exceeds maxval {maxval}")
    if maxval > _PGM_MAX:
        raise ImageFormatError(f"maxval {maxval} exceeds the 16-bit PGM limit {_PGM_MAX}")

    rows, cols = array.shape
    header = [("P5" if binary else "P2")]
    header += _format_metadata(metadata)
    header += [f"{cols} {rows}", f"{maxval}"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            dtype = ">u2" if maxval > 255 else ">u1"
            fh.write(array.astype(dtype).tobytes())
        else:
            buf = io.StringIO()
            for row in array:
                buf.write(" ".join(str(int(v)) for v in row))
                buf.write("\n")
            fh.write(buf.getvalue().encode("ascii"))


def read_pgm(path) -> tuple[np.ndarray, dict[str, str], int]:
    """Read a P2/P5 PGM; returns (array, metadata, maxval)."""
    with open(path, "rb") as fh:
        data = fh.read()

    comments: list[str] = []

    def tokens():
        # Header tokens are whitespace-separated; comments run to newline.
        pos = 0
        while pos < len(data):
            ch = data[pos:pos + 1]
            if ch.isspace():
                pos += 1
                continue
            if ch == b"#":
                end = data.find(b"\n", pos)
                end = len(data) if end == -1 else end
                comments.append(data[pos:end].decode("ascii", "replace"))
                pos = end + 1
                continue
            end = pos
            while end < len(data) and not data[end:end + 1].isspace():
                end += 1
            yield data[pos:end], end
            pos = end

    stream = tokens()

    def next_token():
        try:
            return next(stream)
        except StopIteration:
            raise ImageFormatError(f"truncated PGM header in {path}") from None

    magic, _ = next_token()
    if magic not in (b"P2", b"P5"):
        raise ImageFormatError(f"unsupported magic {magic!r} in {path}")
    try:
        cols = int(next_token()[0])
        rows = int(next_token()[0])
        maxval, after = next_token()
        maxval = int(maxval)
    except ValueError as exc:
        raise ImageFormatError(f"bad PGM header in {path}: {exc}") from None
    if cols < 1 or rows < 1 or not (0 < maxval <= _PGM_MAX):
        raise ImageFormatError(f"bad PGM dimensions/maxval in {path}")

    if magic == b"P5":
        start = after + 1  # single whitespace byte after maxval
        dtype = ">u2" if maxval > 255 else ">u1"
        need = rows * cols * (2 if maxval > 255 else 1)
        raw = data[start:start + need]
        if len(raw) != need:
            raise ImageFormatError(f"truncated P5 payload in {path}")
        array = np.frombuffer(raw, dtype=dtype).reshape(rows, cols).astype(np.int64)
    else:
        vals = []
        try:
            for _ in range(rows * cols):
                vals.append(int(next_token()[0]))
        except ImageFormatError:
            raise ImageFormatError(f"truncated P2 payload in {path}") from None
        array = np.array(vals, dtype=np.int64).reshape(rows, cols)
    if array.max(initial=0) > maxval:
        raise ImageFormatError(f"sample exceeds declared maxval in {path}")
    return array, _parse_metadata(comments), maxval


def write_photon_image(path, image: PhotonImage, metadata: dict | None = None,
                       binary: bool = True) -> None:
    """Write a photon image with its acquisition scale in the header."""
    meta = {"C": image.C, "b": image.b,
            "rows": image.grid.rows, "cols": image.grid.cols}
    meta.update(metadata or {})
    write_pgm(path, image.counts, metadata=meta, binary=binary,
              maxval=max(int(image.counts.max()), image.C, 1))


def read_photon_image(path, C: int | None = None, b: int | None = None
                      ) -> tuple[PhotonImage, dict[str, str]]:
    """Read a photon image; C/b fall back to header metadata when not given."""
    array, meta, _ = read_pgm(path)
    if C is None:
        if "C" not in meta:
            raise ImageFormatError(f"{path} lacks a '# C=' header and no C was given")
        C = int(meta["C"])
    if b is None:
        if "b" not in meta:
            raise ImageFormatError(f"{path} lacks a '# b=' header and no b was given")
        b = int(meta["b"])
    grid = PixelGrid(array.shape[0], array.shape[1])
    return PhotonImage(grid, array, C, b), meta


def write_real_csv(path, image: RealImage, metadata: dict | None = None) -> None:
    """Write a real-valued image as CSV with # key=value header lines."""
    meta = {"rows": image.grid.rows, "cols": image.grid.cols}
    meta.update(metadata or {})
    with open(path, "w", newline="") as fh:
        for line in _format_metadata(meta):
            fh.write(line + "\n")
        writer = csv.writer(fh)
        for row in image.values:
            writer.writerow([repr(float(v)) for v in row])


def read_real_csv(path) -> tuple[RealImage, dict[str, str]]:
    comments: list[str] = []
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                comments.append(line.rstrip("\n"))
                continue
            if not line.strip():
                continue
            try:
                rows.append([float(tok) for tok in line.strip().split(",")])
            except ValueError as exc:
                raise ImageFormatError(f"bad CSV row in {path}: {exc}") from None
    if not rows:
        raise ImageFormatError(f"no data rows in {path}")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ImageFormatError(f"ragged CSV rows in {path}")
    values = np.array(rows, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ImageFormatError(f"non-finite values in {path}")
    grid = PixelGrid(values.shape[0], values.shape[1])
    return RealImage(grid, values), _parse_metadata(comments)


def write_key_values(path, record: dict) -> None:
    """Flat key=value text file, one entry per line, keys verbatim."""
    with open(path, "w") as fh:
        for key, value in record.items():
            key = str(key)
            sval = str(value)
            if "=" in key or "\n" in key or "\n" in sval:
                raise ValueError(f"entry not representable: {key!r}={sval!r}")
            fh.write(f"{key}={sval}\n")


def read_key_values(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ImageFormatError(f"bad key=value line in {path}: {line!r}")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out
