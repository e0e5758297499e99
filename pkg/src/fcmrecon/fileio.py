"""File formats: ASCII PLY clouds, binary PPM color images, PFM depth maps.

PLY vertices carry float x/y/z and float red/green/blue in [0, 1]. Floats are
written with 17 significant digits so values round-trip exactly.
"""

from __future__ import annotations

import numpy as np

from .cloud import ColoredPointCloud

__all__ = [
    "FileFormatError",
    "read_ply",
    "write_ply",
    "read_ppm",
    "write_ppm",
    "read_pfm",
    "write_pfm",
]


class FileFormatError(ValueError):
    pass


_PLY_PROPS = ("x", "y", "z", "red", "green", "blue")


def write_ply(path, cloud: ColoredPointCloud) -> None:
    if cloud.channels != 3:
        raise ValueError(f"PLY export needs 3 feature channels, got {cloud.channels}")
    lines = ["ply", "format ascii 1.0", f"element vertex {cloud.n}"]
    lines += [f"property float {name}" for name in _PLY_PROPS]
    lines.append("end_header")
    for p, c in zip(cloud.positions, cloud.features):
        lines.append(" ".join(f"{v:.17g}" for v in (*p, *c)))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_ply(path) -> ColoredPointCloud:
    with open(path, "r", encoding="ascii") as fh:
        raw = fh.read().splitlines()

    def fail(lineno, msg):
        raise FileFormatError(f"{path}:{lineno}: {msg}")

    if not raw or raw[0].strip() != "ply":
        fail(1, "missing 'ply' magic")
    n_vertex = None
    props = []
    body_start = None
    for lineno, line in enumerate(raw[1:], start=2):
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            if tok[1:] != ["ascii", "1.0"]:
                fail(lineno, f"unsupported format {' '.join(tok[1:])!r}")
        elif tok[0] == "element":
            if len(tok) != 3 or tok[1] != "vertex":
                fail(lineno, f"unsupported element {' '.join(tok[1:])!r}")
            try:
                n_vertex = int(tok[2])
            except ValueError:
                fail(lineno, f"bad vertex count {tok[2]!r}")
        elif tok[0] == "property":
            if len(tok) != 3 or tok[1] != "float":
                fail(lineno, f"unsupported property {' '.join(tok[1:])!r}")
            props.append(tok[2])
        elif tok[0] == "end_header":
            body_start = lineno
            break
        else:
            fail(lineno, f"unexpected header line {line!r}")
    if body_start is None:
        fail(len(raw), "missing end_header")
    if n_vertex is None:
        fail(body_start, "missing vertex element")
    if tuple(props) != _PLY_PROPS:
        fail(body_start, f"expected properties {list(_PLY_PROPS)}, got {props}")
    body = [line for line in raw[body_start:] if line.strip()]
    if len(body) != n_vertex:
        fail(len(raw), f"expected {n_vertex} vertex rows, found {len(body)}")
    data = np.empty((n_vertex, 6))
    for row, line in enumerate(body):
        tok = line.split()
        if len(tok) != 6:
            fail(body_start + 1 + row, f"expected 6 values, got {len(tok)}")
        try:
            data[row] = [float(v) for v in tok]
        except ValueError:
            fail(body_start + 1 + row, f"non-numeric vertex row {line!r}")
    if not np.isfinite(data).all():
        raise FileFormatError(f"{path}: non-finite vertex data")
    if data[:, 3:].min() < 0.0 or data[:, 3:].max() > 1.0:
        raise FileFormatError(f"{path}: colors must lie in [0, 1]")
    return ColoredPointCloud(positions=data[:, :3], features=data[:, 3:])


def write_ppm(path, pixels: np.ndarray) -> None:
    """8-bit binary PPM; float input in [0, 1] is clipped and rounded."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"color image must be (H, W, 3), got {pixels.shape}")
    h, w = pixels.shape[:2]
    data = np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    if fields[0] != b"P6":
        raise FileFormatError(f"{path}: not a binary PPM (magic {fields[0]!r})")
    w, h, maxval = (int(v) for v in fields[1:])
    if maxval != 255:
        raise FileFormatError(f"{path}: only maxval 255 supported, got {maxval}")
    pos += 1
    body = blob[pos : pos + w * h * 3]
    if len(body) != w * h * 3:
        raise FileFormatError(f"{path}: truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


def write_pfm(path, depth: np.ndarray) -> None:
    """Grayscale PFM, little-endian float32, rows stored bottom-to-top."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ValueError(f"depth map must be (H, W), got {depth.shape}")
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.flipud(depth).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"Pf":
            raise FileFormatError(f"{path}: not a grayscale PFM (magic {magic!r})")
        try:
            w, h = (int(v) for v in fh.readline().split())
            scale = float(fh.readline())
        except ValueError as exc:
            raise FileFormatError(f"{path}: bad PFM header") from exc
        if scale >= 0:
            raise FileFormatError(f"{path}: big-endian PFM not supported")
        body = fh.read(w * h * 4)
    if len(body) != w * h * 4:
        raise FileFormatError(f"{path}: truncated pixel data")
    rows = np.frombuffer(body, dtype="<f4").reshape(h, w)
    return np.flipud(rows).astype(np.float64)
