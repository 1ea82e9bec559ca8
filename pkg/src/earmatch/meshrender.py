"""Software renderer: STL head meshes to framed 224x224 shaded ear images.

Conventions, all configurable through CameraSpec:

* World frame: +x is the subject's nose direction, +y is up, +z points out
  of the subject's right ear.
* The camera looks along its own +z axis; screen x grows right, screen y
  grows down.  ``side="right"`` places the camera on the +z world side
  looking back, ``side="left"`` on the -z side.  Left renders are mirrored
  about the vertical axis so both sides share one orientation.
* Projection is perspective with a vertical field of view (default 30
  degrees) scaled by ``zoom``: ``f = zoom * (H/2) / tan(fov/2)``.
* When ``distance`` is None the camera auto-frames: the mesh (or the
  ``focus_box`` region) is centred on the optical axis at the distance that
  makes its larger x/y extent span ``frame_fill`` of the frame height.
  When ``distance`` is given, no centring is applied; the mesh is pushed
  straight down the axis by that amount.
* ``light_direction`` is the propagation direction of the directional light
  in camera coordinates; the default (0, 0, 1) shines from the camera onto
  the ear.  Flat Lambertian shading: max(0, normal . to_light).
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from earmatch.errors import CorruptStlError, EmptyMeshError, StlError, StlFormatError
from earmatch.fileio import atomic_write_bytes, atomic_write_text

RASTER_SIZE = 224
DEFAULT_FOV_DEG = 30.0
DEFAULT_FRAME_FILL = 0.8

_NEAR_PLANE = 1e-6

SIDE_ROTATIONS = {
    "right": np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]),
    "left": np.array([[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]]),
}

_BINARY_HEADER = 80
_BINARY_RECORD = struct.Struct("<12fH")


class TriangleMesh:
    """Indexed triangle soup with optional per-triangle normals."""

    def __init__(self, vertices, triangles, normals=None):
        self.vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size:
            if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
                raise ValueError("triangle index out of range")
            a, b, c = self.triangles.T
            if np.any((a == b) | (b == c) | (a == c)):
                raise ValueError("triangle with repeated vertex indices")
        if normals is not None:
            normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
            if len(normals) != len(self.triangles):
                raise ValueError("one normal per triangle required")
        self.normals = normals

    def __len__(self) -> int:
        return len(self.triangles)

    def corners(self) -> np.ndarray:
        """Per-triangle corner coordinates, shape (T, 3, 3)."""
        return self.vertices[self.triangles]

    def surface_area(self) -> float:
        if not len(self):
            return 0.0
        corners = self.corners()
        cross = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
        return float(0.5 * np.linalg.norm(cross, axis=1).sum())


@dataclass(frozen=True)
class CameraSpec:
    rotation: np.ndarray = None
    zoom: float = 1.0
    light_direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    fov_deg: float = DEFAULT_FOV_DEG
    distance: float | None = None
    frame_fill: float = DEFAULT_FRAME_FILL
    focus_box: tuple | None = None  # ((x0,y0,z0), (x1,y1,z1)) in world coords

    def __post_init__(self):
        rotation = np.eye(3) if self.rotation is None else np.asarray(self.rotation, float)
        if rotation.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rotation.shape}")
        object.__setattr__(self, "rotation", rotation)
        light = np.asarray(self.light_direction, dtype=np.float64).reshape(3)
        norm = float(np.linalg.norm(light))
        if not math.isfinite(norm) or norm == 0.0:
            raise ValueError("light_direction must be a non-zero vector")
        object.__setattr__(self, "light_direction", tuple(light / norm))
        if self.zoom <= 0.0 or self.fov_deg <= 0.0 or self.fov_deg >= 180.0:
            raise ValueError("zoom must be positive and fov in (0, 180)")
        if not 0.0 < self.frame_fill <= 1.0:
            raise ValueError("frame_fill must be in (0, 1]")

    @property
    def focal_length_px(self) -> float:
        return self.zoom * (RASTER_SIZE / 2.0) / math.tan(math.radians(self.fov_deg) / 2.0)


def framing_distance(extent: float, cam: CameraSpec) -> float:
    """Distance placing a world extent at frame_fill of the frame height."""
    return cam.focal_length_px * extent / (cam.frame_fill * RASTER_SIZE)


def _camera_vertices(mesh: TriangleMesh, cam: CameraSpec, side: str) -> np.ndarray:
    if side not in SIDE_ROTATIONS:
        raise ValueError(f"side must be one of {tuple(SIDE_ROTATIONS)}, got {side!r}")
    rotation = SIDE_ROTATIONS[side] @ cam.rotation
    coords = mesh.vertices @ rotation.T
    if cam.distance is not None:
        return coords + np.array([0.0, 0.0, float(cam.distance)])
    if cam.focus_box is not None:
        lo = np.asarray(cam.focus_box[0], dtype=np.float64)
        hi = np.asarray(cam.focus_box[1], dtype=np.float64)
        inside = np.all((mesh.vertices >= lo) & (mesh.vertices <= hi), axis=1)
        focus = coords[inside] if inside.any() else coords
    else:
        focus = coords
    lo, hi = focus.min(axis=0), focus.max(axis=0)
    centre = (lo + hi) / 2.0
    extent = float(max(hi[0] - lo[0], hi[1] - lo[1]))
    if extent <= 0.0:
        raise EmptyMeshError("mesh has no lateral extent to frame")
    distance = framing_distance(extent, cam)
    return coords - centre + np.array([0.0, 0.0, distance])


def render_ear(mesh: TriangleMesh, cam: CameraSpec | None = None, side: str = "right") -> np.ndarray:
    """Shaded float raster in [0, 1], shape (224, 224); background is 0."""
    cam = cam or CameraSpec()
    if not len(mesh):
        raise EmptyMeshError("cannot render a mesh with no triangles")
    coords = _camera_vertices(mesh, cam, side)
    corners = coords[mesh.triangles]
    f = cam.focal_length_px
    half = RASTER_SIZE / 2.0
    to_light = -np.asarray(cam.light_direction, dtype=np.float64)

    raster = np.zeros((RASTER_SIZE, RASTER_SIZE))
    zbuf = np.zeros((RASTER_SIZE, RASTER_SIZE))  # stores 1/z; larger is closer
    for tri in corners:
        z = tri[:, 2]
        if np.any(z <= _NEAR_PLANE):
            continue
        normal = np.cross(tri[1] - tri[0], tri[2] - tri[0])
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue  # degenerate area
        shade = max(0.0, float(normal @ to_light) / norm)
        u = half + f * tri[:, 0] / z
        v = half + f * tri[:, 1] / z
        j0 = max(0, math.ceil(u.min() - 0.5))
        j1 = min(RASTER_SIZE - 1, math.floor(u.max() - 0.5))
        i0 = max(0, math.ceil(v.min() - 0.5))
        i1 = min(RASTER_SIZE - 1, math.floor(v.max() - 0.5))
        if j0 > j1 or i0 > i1:
            continue
        area2 = (u[1] - u[0]) * (v[2] - v[0]) - (v[1] - v[0]) * (u[2] - u[0])
        if area2 == 0.0:
            continue
        pu = np.arange(j0, j1 + 1) + 0.5
        pv = (np.arange(i0, i1 + 1) + 0.5)[:, None]
        w0 = (u[2] - u[1]) * (pv - v[1]) - (v[2] - v[1]) * (pu - u[1])
        w1 = (u[0] - u[2]) * (pv - v[2]) - (v[0] - v[2]) * (pu - u[2])
        w2 = (u[1] - u[0]) * (pv - v[0]) - (v[1] - v[0]) * (pu - u[0])
        inside = (
            ((w0 >= 0) & (w1 >= 0) & (w2 >= 0))
            if area2 > 0
            else ((w0 <= 0) & (w1 <= 0) & (w2 <= 0))
        )
        if not inside.any():
            continue
        b0, b1, b2 = w0 / area2, w1 / area2, w2 / area2
        invz = b0 / z[0] + b1 / z[1] + b2 / z[2]
        window = np.s_[i0 : i1 + 1, j0 : j1 + 1]
        closer = inside & (invz > zbuf[window])
        zbuf[window][closer] = invz[closer]
        raster[window][closer] = shade
    if side == "left":
        raster = mirror_raster(raster)
    return raster


def mirror_raster(raster: np.ndarray) -> np.ndarray:
    """Mirror about the vertical axis; applying it twice is the identity."""
    return np.ascontiguousarray(raster[:, ::-1])


def raster_to_rgb(raster: np.ndarray) -> np.ndarray:
    """Replicate a grayscale raster to the 3-channel float form the CNN eats."""
    return np.repeat(raster[:, :, None], 3, axis=2).astype(np.float32)


def save_raster(path: str | Path, raster: np.ndarray) -> None:
    from PIL import Image

    data = np.clip(np.round(raster * 255.0), 0, 255).astype(np.uint8)
    buffer = io.BytesIO()
    Image.fromarray(data, mode="L").save(buffer, format="PNG")
    atomic_write_bytes(path, buffer.getvalue())


# --- STL parsing --------------------------------------------------------------


def parse_stl(path: str | Path) -> TriangleMesh:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 15:
        raise StlFormatError(f"{path}: too short to be an STL file")
    if data.lstrip()[:5].lower() == b"solid":
        try:
            return _parse_ascii(data, path)
        except StlError:
            if _binary_size_consistent(data):
                return _parse_binary(data, path)
            raise
    return _parse_binary(data, path)


def _binary_size_consistent(data: bytes) -> bool:
    if len(data) < _BINARY_HEADER + 4:
        return False
    (count,) = struct.unpack_from("<I", data, _BINARY_HEADER)
    return len(data) == _BINARY_HEADER + 4 + count * _BINARY_RECORD.size


def _parse_binary(data: bytes, path: Path) -> TriangleMesh:
    if len(data) < _BINARY_HEADER + 4:
        raise StlFormatError(f"{path}: binary STL header incomplete")
    (count,) = struct.unpack_from("<I", data, _BINARY_HEADER)
    expected = _BINARY_HEADER + 4 + count * _BINARY_RECORD.size
    if len(data) != expected:
        body = len(data) - _BINARY_HEADER - 4
        if body < 0 or body % _BINARY_RECORD.size != 0:
            raise StlFormatError(f"{path}: neither ASCII nor binary STL layout")
        raise CorruptStlError(
            f"{path}: declares {count} triangles but holds {body // _BINARY_RECORD.size}"
            f" ({len(data)} bytes, expected {expected})"
        )
    record = np.dtype(
        [("normal", "<f4", (3,)), ("v", "<f4", (3, 3)), ("attr", "<u2")]
    )
    body = np.frombuffer(data, dtype=record, count=count, offset=_BINARY_HEADER + 4)
    vertices = body["v"].reshape(-1, 3).astype(np.float64)
    triangles = np.arange(3 * count, dtype=np.int64).reshape(-1, 3)
    normals = body["normal"].astype(np.float64)
    return TriangleMesh(vertices, triangles, normals)


def _parse_ascii(data: bytes, path: Path) -> TriangleMesh:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise StlFormatError(f"{path}: not valid ASCII STL: {exc}") from exc
    vertices: list[tuple[float, float, float]] = []
    triangles: list[tuple[int, int, int]] = []
    normals: list[tuple[float, float, float]] = []
    facet: list[tuple[float, float, float]] | None = None
    facet_normal = (0.0, 0.0, 0.0)
    for line_no, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split()
        if not tokens:
            continue
        keyword = tokens[0].lower()
        if keyword in ("solid", "endsolid", "outer", "endloop"):
            continue
        if keyword == "facet":
            if facet is not None:
                raise CorruptStlError(f"{path}:{line_no}: facet opened inside a facet")
            facet = []
            facet_normal = (0.0, 0.0, 0.0)
            if len(tokens) >= 5 and tokens[1].lower() == "normal":
                try:
                    facet_normal = (float(tokens[2]), float(tokens[3]), float(tokens[4]))
                except ValueError as exc:
                    raise StlFormatError(f"{path}:{line_no}: bad normal: {exc}") from exc
        elif keyword == "vertex":
            if facet is None:
                raise CorruptStlError(f"{path}:{line_no}: vertex outside a facet")
            if len(tokens) != 4:
                raise StlFormatError(f"{path}:{line_no}: vertex needs 3 coordinates")
            try:
                facet.append((float(tokens[1]), float(tokens[2]), float(tokens[3])))
            except ValueError as exc:
                raise StlFormatError(f"{path}:{line_no}: bad coordinate: {exc}") from exc
        elif keyword == "endfacet":
            if facet is None or len(facet) != 3:
                found = 0 if facet is None else len(facet)
                raise CorruptStlError(
                    f"{path}:{line_no}: facet closed with {found} vertices"
                )
            base = len(vertices)
            vertices.extend(facet)
            triangles.append((base, base + 1, base + 2))
            normals.append(facet_normal)
            facet = None
        else:
            raise StlFormatError(f"{path}:{line_no}: unexpected token {keyword!r}")
    if facet is not None:
        raise CorruptStlError(f"{path}: unterminated facet at end of file")
    return TriangleMesh(
        np.array(vertices, dtype=np.float64).reshape(-1, 3),
        np.array(triangles, dtype=np.int64).reshape(-1, 3),
        np.array(normals, dtype=np.float64).reshape(-1, 3),
    )


# --- batch rendering -----------------------------------------------------------


@dataclass
class BatchRenderReport:
    count: int
    errors: list[tuple[str, str]]
    manifest_path: Path | None = None


def batch_render(
    mesh_dir: str | Path,
    out_dir: str | Path,
    cam: CameraSpec | None = None,
    pattern: str = "*.stl",
) -> BatchRenderReport:
    """Render every mesh twice (right, mirrored left); failures don't abort."""
    mesh_dir, out_dir = Path(mesh_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cam = cam or CameraSpec()
    rows: list[tuple[str, str, str]] = []
    errors: list[tuple[str, str]] = []
    count = 0
    for mesh_path in sorted(mesh_dir.glob(pattern)):
        subject = mesh_path.stem
        try:
            mesh = parse_stl(mesh_path)
            for side, tag in (("right", "R"), ("left", "L")):
                raster = render_ear(mesh, cam, side)
                name = f"{subject}_{tag}.png"
                save_raster(out_dir / name, raster)
                rows.append((subject, side, name))
                count += 1
        except (StlError, EmptyMeshError, ValueError, OSError) as exc:
            errors.append((str(mesh_path), str(exc)))
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["subject_id", "side", "image_path"])
    writer.writerows(rows)
    manifest = out_dir / "manifest.csv"
    atomic_write_text(manifest, buffer.getvalue())
    return BatchRenderReport(count=count, errors=errors, manifest_path=manifest)
