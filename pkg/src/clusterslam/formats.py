"""On-disk formats: segmentation images, probability files, point tracks, PLY clouds and datasets.

Dataset directory layout (shared by recorded data and exported synthetic runs)::

    dataset.yaml               intrinsics, class names, keyframe stride, label confidence
    initial_trajectory.txt     TUM lines, one per frame, from an external front-end
    initial_points.csv         track_id,x,y,z
    tracks.csv                 frame,track_id,u,v[,descriptor]   (descriptor: 64 hex chars)
    groundtruth.txt            optional TUM ground truth
    seg/NNNNNN_label.png       16-bit class ids
    seg/NNNNNN_instance.png    16-bit raw instance ids
    seg/NNNNNN_prob.bin        optional dense probabilities
"""

from __future__ import annotations

import csv
import hashlib
import struct
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from .geometry import CameraIntrinsics, Pose


def write_png16(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("expected a single-channel image")
    if img.size and (img.min() < 0 or img.max() > 65535):
        raise ValueError("values do not fit in 16 bits")
    Image.fromarray(img.astype(np.uint16)).save(path)


def read_png16(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("I;16", "I;16L", "I;16B", "I", "L"):
            raise ValueError(f"{path}: expected a single-channel 16-bit image, got mode {im.mode}")
        return np.array(im).astype(np.int64)


def write_probability_file(path, probs: np.ndarray) -> None:
    """Header ``W H C`` as little-endian uint32, then float32 values, row-major, class fastest."""
    probs = np.asarray(probs)
    H, W, C = probs.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", W, H, C))
        fh.write(np.ascontiguousarray(probs, dtype="<f4").tobytes())


def read_probability_file(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise ValueError(f"{path}: truncated header")
    W, H, C = struct.unpack("<III", data[:12])
    body = np.frombuffer(data, dtype="<f4", offset=12)
    if body.size != W * H * C:
        raise ValueError(f"{path}: expected {W * H * C} floats, found {body.size}")
    return body.reshape(H, W, C).astype(float)


def descriptor_to_hex(d: np.ndarray) -> str:
    return bytes(np.asarray(d, dtype=np.uint8)).hex()


def descriptor_from_hex(s: str) -> np.ndarray:
    return np.frombuffer(bytes.fromhex(s), dtype=np.uint8).copy()


def write_ply(path, points: np.ndarray, colors: np.ndarray, labels: np.ndarray) -> None:
    """Binary little-endian PLY with float xyz, uchar rgb and an int cluster label per vertex."""
    points = np.asarray(points, dtype="<f4").reshape(-1, 3)
    colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
    labels = np.asarray(labels, dtype="<i4").reshape(-1)
    n = len(points)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "property int cluster\nend_header\n"
    )
    rec = np.empty(n, dtype=[("xyz", "<f4", 3), ("rgb", "u1", 3), ("cluster", "<i4")])
    rec["xyz"], rec["rgb"], rec["cluster"] = points, colors, labels
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(rec.tobytes())


_PLY_TYPES = {"float": "<f4", "double": "<f8", "uchar": "u1", "char": "i1", "int": "<i4", "uint": "<u4", "short": "<i2", "ushort": "<u2"}


def read_ply(path) -> dict[str, np.ndarray]:
    """Read the vertex element of a binary little-endian PLY into named columns."""
    data = Path(path).read_bytes()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    lines = data[:end].decode("ascii").splitlines()
    if lines[0] != "ply" or lines[1] != "format binary_little_endian 1.0":
        raise ValueError("not a binary little-endian PLY file")
    n, fields = 0, []
    for ln in lines[2:]:
        parts = ln.split()
        if parts[0] == "element" and parts[1] == "vertex":
            n = int(parts[2])
        elif parts[0] == "property":
            fields.append((parts[2], _PLY_TYPES[parts[1]]))
    rec = np.frombuffer(data, dtype=np.dtype(fields), count=n, offset=end)
    return {name: rec[name].copy() for name, _ in fields}


def cluster_color(cluster_id: int | None) -> tuple[int, int, int]:
    if cluster_id is None:
        return (128, 128, 128)
    h = hashlib.sha256(str(cluster_id).encode()).digest()
    return (h[0], h[1], h[2])


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# point tracks -----------------------------------------------------------------


def write_tracks(path, rows) -> None:
    """``rows``: iterable of (frame, track_id, u, v, descriptor or None)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "track_id", "u", "v", "descriptor"])
        for frame, tid, u, v, desc in rows:
            w.writerow([frame, tid, repr(float(u)), repr(float(v)), "" if desc is None else descriptor_to_hex(desc)])


def read_tracks(path) -> dict[int, tuple[np.ndarray, np.ndarray, list]]:
    """Per frame: (track ids, pixels (n, 2), descriptors or None per row)."""
    per: dict[int, list] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header[:4]] != ["frame", "track_id", "u", "v"]:
            raise ValueError(f"{path}: expected header frame,track_id,u,v[,descriptor]")
        for row in reader:
            if not row:
                continue
            desc = descriptor_from_hex(row[4]) if len(row) > 4 and row[4] else None
            per.setdefault(int(row[0]), []).append((int(row[1]), float(row[2]), float(row[3]), desc))
    out = {}
    for f, rows in per.items():
        out[f] = (
            np.array([r[0] for r in rows], dtype=np.int64),
            np.array([[r[1], r[2]] for r in rows], dtype=float),
            [r[3] for r in rows],
        )
    return out


def write_points_csv(path, ids, X) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["track_id", "x", "y", "z"])
        for i, x in zip(ids, np.asarray(X, dtype=float)):
            w.writerow([int(i), *(repr(float(v)) for v in x)])


def read_points_csv(path) -> dict[int, np.ndarray]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[int(row["track_id"])] = np.array([float(row["x"]), float(row["y"]), float(row["z"])])
    return out


def intrinsics_to_dict(K: CameraIntrinsics) -> dict:
    return {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy, "width": K.width, "height": K.height}


def write_dataset_meta(path, K: CameraIntrinsics, class_names: list[str], keyframe_every: int, alpha: float) -> None:
    meta = {
        "intrinsics": intrinsics_to_dict(K),
        "classes": list(class_names),
        "keyframe_every": int(keyframe_every),
        "label_confidence": float(alpha),
    }
    Path(path).write_text(yaml.safe_dump(meta, sort_keys=False))


def read_dataset_meta(path) -> dict:
    with open(path) as fh:
        meta = yaml.safe_load(fh)
    meta["intrinsics"] = CameraIntrinsics(**meta["intrinsics"])
    return meta


def seg_paths(root, frame: int) -> tuple[Path, Path, Path]:
    seg = Path(root) / "seg"
    return seg / f"{frame:06d}_label.png", seg / f"{frame:06d}_instance.png", seg / f"{frame:06d}_prob.bin"


def pose_lines(timestamps, poses_cw: list[Pose]) -> list[str]:
    from .evaluation import format_tum_line

    return [format_tum_line(ts, p.inverse()) for ts, p in zip(timestamps, poses_cw)]
