"""File formats: splat PLY scenes, camera JSON, meshes, float maps and counters.

Byte layouts are documented in the README.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from typing import Dict, Iterable, List

import numpy as np

from .geometry import Camera, GaussianScene
from .mesher import Mesh

SH_C0 = 0.28209479177387814

PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}

SPLAT_PROPERTIES = ("x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
                    "opacity", "f_dc_0", "f_dc_1", "f_dc_2")


class SceneFileError(ValueError):
    pass


class PlyHeaderError(SceneFileError):
    pass


class PlyTruncatedError(SceneFileError):
    pass


class PlyMissingPropertyError(SceneFileError):
    pass


class PlyUnsupportedFormatError(SceneFileError):
    pass


class PlyEmptyError(SceneFileError):
    pass


class CameraSchemaError(ValueError):
    pass


# ---------------------------------------------------------------------------
# splat scenes


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class SceneFile:
    """Raw (pre-activation) splat parameters as stored on disk."""

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray  # (w, x, y, z), unnormalized
    opacity_logits: np.ndarray
    f_dc: np.ndarray
    path: str = ""

    @property
    def count(self) -> int:
        return len(self.positions)

    def to_scene(self) -> GaussianScene:
        """Activate: exponential scales, logistic opacity, normalized quaternion, DC color."""
        q = self.rotations / np.linalg.norm(self.rotations, axis=1, keepdims=True)
        scene = GaussianScene(self.positions, np.exp(self.log_scales), q, _sigmoid(self.opacity_logits),
                              np.clip(0.5 + SH_C0 * self.f_dc, 0.0, 1.0))
        for name in ("positions", "scales", "rotations", "opacities", "colors"):
            if not np.all(np.isfinite(getattr(scene, name))):
                raise SceneFileError(f"non-finite {name} after activation")
        return scene

    @classmethod
    def from_scene(cls, scene: GaussianScene) -> "SceneFile":
        op = np.clip(scene.opacities, 1e-12, 1 - 1e-12)
        return cls(scene.positions.copy(), np.log(scene.scales), scene.rotations.copy(),
                   np.log(op / (1.0 - op)), (scene.colors - 0.5) / SH_C0)


def _read_header(f):
    first = f.readline()
    if first.strip() != b"ply":
        raise PlyHeaderError("missing 'ply' magic")
    fmt = None
    elements = []  # [name, count, [(prop, type)]]
    while True:
        line = f.readline()
        if not line:
            raise PlyHeaderError("header is not terminated by end_header")
        parts = line.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        key = parts[0]
        if key == "end_header":
            break
        if key == "format":
            if len(parts) < 3:
                raise PlyHeaderError("malformed format line")
            fmt = parts[1]
        elif key == "element":
            if len(parts) != 3 or not parts[2].lstrip("-").isdigit():
                raise PlyHeaderError(f"malformed element line: {line!r}")
            elements.append([parts[1], int(parts[2]), []])
        elif key == "property":
            if not elements:
                raise PlyHeaderError("property before any element")
            if parts[1] == "list":
                if len(parts) != 5 or parts[2] not in PLY_TYPES or parts[3] not in PLY_TYPES:
                    raise PlyHeaderError(f"malformed list property: {line!r}")
                elements[-1][2].append((parts[4], ("list", parts[2], parts[3])))
            else:
                if len(parts) != 3 or parts[1] not in PLY_TYPES:
                    raise PlyHeaderError(f"malformed property line: {line!r}")
                elements[-1][2].append((parts[2], parts[1]))
        else:
            raise PlyHeaderError(f"unexpected header keyword {key!r}")
    if fmt is None:
        raise PlyHeaderError("missing format line")
    return fmt, elements


def _check_format(fmt):
    if fmt == "binary_big_endian":
        raise PlyUnsupportedFormatError("big-endian PLY is not supported")
    if fmt != "binary_little_endian":
        raise PlyUnsupportedFormatError(f"unsupported PLY format {fmt!r}; expected binary_little_endian")


def parse_scene(path) -> SceneFile:
    """Read a binary little-endian splat PLY; properties other than the known set are skipped."""
    with open(path, "rb") as f:
        fmt, elements = _read_header(f)
        _check_format(fmt)
        if not elements or elements[0][0] != "vertex":
            raise PlyHeaderError("first element must be 'vertex'")
        _, count, props = elements[0]
        if count <= 0:
            raise PlyEmptyError("vertex element count is zero")
        if any(isinstance(t, tuple) for _, t in props):
            raise PlyHeaderError("list properties are not allowed on splat vertices")
        names = [n for n, _ in props]
        missing = [p for p in SPLAT_PROPERTIES if p not in names]
        if missing:
            raise PlyMissingPropertyError(f"missing required properties: {', '.join(missing)}")
        dtype = np.dtype([(n, "<" + PLY_TYPES[t]) for n, t in props])
        payload = f.read(dtype.itemsize * count)
    if len(payload) < dtype.itemsize * count:
        raise PlyTruncatedError(f"expected {dtype.itemsize * count} payload bytes, found {len(payload)}")
    rec = np.frombuffer(payload, dtype=dtype, count=count)

    def cols(*keys):
        return np.stack([rec[k].astype(np.float64) for k in keys], axis=1)

    return SceneFile(cols("x", "y", "z"), cols("scale_0", "scale_1", "scale_2"),
                     cols("rot_0", "rot_1", "rot_2", "rot_3"), rec["opacity"].astype(np.float64),
                     cols("f_dc_0", "f_dc_1", "f_dc_2"), str(path))


def write_scene(scene_file: SceneFile, path, extra: Dict[str, np.ndarray] = None) -> None:
    """Write a splat PLY with float32 properties; ``extra`` appends more named columns."""
    cols = {
        "x": scene_file.positions[:, 0], "y": scene_file.positions[:, 1], "z": scene_file.positions[:, 2],
        "scale_0": scene_file.log_scales[:, 0], "scale_1": scene_file.log_scales[:, 1],
        "scale_2": scene_file.log_scales[:, 2],
        "rot_0": scene_file.rotations[:, 0], "rot_1": scene_file.rotations[:, 1],
        "rot_2": scene_file.rotations[:, 2], "rot_3": scene_file.rotations[:, 3],
        "opacity": scene_file.opacity_logits,
        "f_dc_0": scene_file.f_dc[:, 0], "f_dc_1": scene_file.f_dc[:, 1], "f_dc_2": scene_file.f_dc[:, 2],
    }
    cols.update(extra or {})
    dtype = np.dtype([(k, "<f4") for k in cols])
    rec = np.empty(scene_file.count, dtype=dtype)
    for k, v in cols.items():
        rec[k] = v
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {scene_file.count}"]
    header += [f"property float {k}" for k in cols]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rec.tobytes())


def load_scene(path) -> GaussianScene:
    return parse_scene(path).to_scene()


# ---------------------------------------------------------------------------
# cameras

CAMERA_FIELDS = ("rotation", "translation", "fx", "fy", "cx", "cy", "width", "height")


def camera_from_dict(d: dict, index: int = 0) -> Camera:
    if not isinstance(d, dict):
        raise CameraSchemaError(f"camera {index}: expected an object")
    missing = [k for k in CAMERA_FIELDS if k not in d]
    if missing:
        raise CameraSchemaError(f"camera {index}: missing field(s) {', '.join(missing)}")
    R = np.asarray(d["rotation"], dtype=np.float64)
    if R.shape != (3, 3):
        raise CameraSchemaError(f"camera {index}: rotation must be 3x3")
    if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or np.linalg.det(R) <= 0:
        raise CameraSchemaError(f"camera {index}: rotation is not orthonormal")
    try:
        return Camera(R, d["translation"], d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"],
                      d.get("near", 0.2), d.get("far", 100.0), d.get("name", f"cam{index}"))
    except (TypeError, ValueError) as exc:
        raise CameraSchemaError(f"camera {index}: {exc}") from exc


def camera_to_dict(cam: Camera) -> dict:
    return {
        "name": cam.name,
        "rotation": cam.rotation.tolist(),
        "translation": cam.translation.tolist(),
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
        "near": cam.near, "far": cam.far,
    }


def load_cameras(path) -> List[Camera]:
    with open(path) as f:
        data = json.load(f)
    if not isinstance(data, list) or not data:
        raise CameraSchemaError("camera file must hold a non-empty JSON array")
    return [camera_from_dict(d, i) for i, d in enumerate(data)]


def save_cameras(cameras: Iterable[Camera], path) -> None:
    with open(path, "w") as f:
        json.dump([camera_to_dict(c) for c in cameras], f, indent=2)
        f.write("\n")


# ---------------------------------------------------------------------------
# meshes


def _mesh_format(path, fmt):
    fmt = fmt or os.path.splitext(str(path))[1].lstrip(".").lower()
    if fmt not in ("obj", "ply"):
        raise ValueError(f"unknown mesh format {fmt!r}")
    return fmt


def write_mesh(mesh: Mesh, path, fmt: str = None) -> None:
    """Write OBJ (ASCII, shortest round-trip floats) or binary little-endian PLY (doubles)."""
    fmt = _mesh_format(path, fmt)
    V = np.asarray(mesh.vertices, dtype=np.float64).reshape(-1, 3)
    F = np.asarray(mesh.triangles, dtype=np.int64).reshape(-1, 3)
    if fmt == "obj":
        lines = ["# sofmesh"]
        lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in V.tolist()]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in F.tolist()]
        with open(path, "w", newline="\n") as f:
            f.write("\n".join(lines) + "\n")
        return
    header = "\n".join([
        "ply", "format binary_little_endian 1.0", f"element vertex {len(V)}",
        "property double x", "property double y", "property double z",
        f"element face {len(F)}", "property list uchar int vertex_indices", "end_header",
    ]) + "\n"
    face = np.empty(len(F), dtype=[("n", "u1"), ("idx", "<i4", 3)])
    face["n"] = 3
    face["idx"] = F
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(V.astype("<f8").tobytes())
        f.write(face.tobytes())


def read_mesh(path, fmt: str = None) -> Mesh:
    fmt = _mesh_format(path, fmt)
    if fmt == "obj":
        verts, faces = [], []
        with open(path) as f:
            for line in f:
                parts = line.split()
                if not parts:
                    continue
                if parts[0] == "v":
                    verts.append([float(v) for v in parts[1:4]])
                elif parts[0] == "f":
                    faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
        return Mesh(np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))
    with open(path, "rb") as f:
        fmt_name, elements = _read_header(f)
        _check_format(fmt_name)
        body = f.read()
    counts = {name: n for name, n, _ in elements}
    nv, nf = counts.get("vertex", 0), counts.get("face", 0)
    vsize = 24 * nv
    if len(body) < vsize + 13 * nf:
        raise PlyTruncatedError("mesh payload is truncated")
    V = np.frombuffer(body[:vsize], dtype="<f8").reshape(-1, 3).copy()
    face = np.frombuffer(body[vsize:vsize + 13 * nf], dtype=[("n", "u1"), ("idx", "<i4", 3)])
    if nf and np.any(face["n"] != 3):
        raise SceneFileError("only triangle faces are supported")
    return Mesh(V, face["idx"].astype(np.int64).reshape(-1, 3))


# ---------------------------------------------------------------------------
# float maps and counters


def write_pfm(path, image) -> None:
    """Portable float map: ``Pf`` (1 channel) or ``PF`` (3 channels), little-endian, rows bottom to top."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        tag = "Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = "PF"
    else:
        raise ValueError("float maps need shape (H, W) or (H, W, 3)")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{tag}\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(img[::-1]).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        tag = f.readline().strip()
        dims = f.readline().split()
        scale = float(f.readline())
        data = f.read()
    if tag not in (b"Pf", b"PF") or len(dims) != 2:
        raise ValueError("not a PFM file")
    w, h = int(dims[0]), int(dims[1])
    ch = 1 if tag == b"Pf" else 3
    dt = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(data, dtype=dt, count=w * h * ch).astype(np.float32)
    arr = arr.reshape(h, w, ch) if ch == 3 else arr.reshape(h, w)
    return arr[::-1].copy()


def write_counters_csv(path, counters: dict) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["counter", "value"])
        for k in sorted(counters):
            w.writerow([k, counters[k]])


def write_rows_csv(path_or_file, rows: List[dict]) -> None:
    if not rows:
        return
    own = isinstance(path_or_file, (str, os.PathLike))
    f = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if own:
            f.close()
