"""
File formats: OBJ/PLY meshes, PNG/PFM images, camera rig and skeleton JSON
"""

import json
import logging
from pathlib import Path

import numpy as np
import trimesh
from PIL import Image
from trimesh.visual import TextureVisuals

from carve.core_io.io_core import (
    Camera,
    CameraRig,
    ImageKind,
    ImagePlane,
    ImageValidator,
    Skeleton,
    TriMesh,
    ViewTag,
)
from carve.errors import FormatError, ValidationError

logger = logging.getLogger(__name__)


# ============================================================================
# MESHES
# ============================================================================

def labels_sidecar_path(path):
    """Default part-label sidecar next to a mesh file: <stem>.labels.json"""
    path = Path(path)
    return path.with_name(path.stem + ".labels.json")


def load_mesh(path, labels_path=None):
    """
    Load an OBJ or PLY mesh, plus an optional part-label sidecar

    Args:
        path: mesh file (.obj or .ply)
        labels_path: sidecar JSON; defaults to <stem>.labels.json when it exists

    Returns:
        validated TriMesh with vertex order preserved from the file
    """
    path = Path(path)
    if not path.exists():
        raise FormatError("file does not exist", path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        vertices, faces, uvs, labels = _read_obj(path)
    elif suffix == ".ply":
        vertices, faces, uvs, labels = _read_ply(path)
    else:
        raise FormatError(f"unsupported mesh format '{suffix}'", path)

    sidecar = Path(labels_path) if labels_path is not None else labels_sidecar_path(path)
    if sidecar.exists():
        labels = load_labels(sidecar)
    elif labels_path is not None:
        raise FormatError("label sidecar does not exist", sidecar)

    mesh = TriMesh(vertices, faces, part_labels=labels, uvs=uvs)
    mesh.check()
    logger.debug("loaded %s: %d vertices, %d faces", path, mesh.n_vertices, mesh.n_faces)
    return mesh


def save_mesh(mesh, path):
    """Write a mesh as OBJ or binary PLY; labels go to the sidecar JSON"""
    mesh.check()
    path = Path(path)
    suffix = path.suffix.lower()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if suffix == ".obj":
            _write_obj(mesh, path)
        elif suffix == ".ply":
            _write_ply(mesh, path)
        else:
            raise FormatError(f"unsupported mesh format '{suffix}'", path)
        if mesh.part_labels is not None:
            save_labels(mesh.part_labels, labels_sidecar_path(path))
    except OSError as exc:
        raise FormatError(f"cannot write mesh: {exc}", path) from exc


def load_labels(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        labels = np.asarray(data["labels"], dtype=np.int64)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"invalid label sidecar: {exc}", path) from exc
    return labels


def save_labels(labels, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"labels": [int(x) for x in labels]}, f)


def _obj_index(token, count, path, line_no):
    try:
        idx = int(token)
    except ValueError:
        raise FormatError(f"invalid index '{token}'", path, line_no) from None
    if idx == 0:
        raise FormatError("index 0 is invalid (OBJ indices are 1-based)", path, line_no)
    if idx < 0:
        idx = count + idx
    else:
        idx -= 1
    if idx < 0 or idx >= count:
        raise FormatError(f"index {token} out of range", path, line_no)
    return idx


def _read_obj(path):
    positions = []
    texcoords = []
    faces = []
    corner_uv = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            parts = raw.split("#", 1)[0].split()
            if not parts:
                continue
            tag = parts[0]
            try:
                if tag == "v":
                    positions.append([float(x) for x in parts[1:4]])
                    if len(positions[-1]) != 3:
                        raise ValueError("vertex needs 3 coordinates")
                elif tag == "vt":
                    texcoords.append([float(x) for x in parts[1:3]])
                    if len(texcoords[-1]) != 2:
                        raise ValueError("texture coordinate needs 2 values")
            except ValueError as exc:
                raise FormatError(str(exc), path, line_no) from None
            if tag != "f":
                continue
            corners = []
            uv_corners = []
            for token in parts[1:]:
                fields = token.split("/")
                corners.append(_obj_index(fields[0], len(positions), path, line_no))
                if len(fields) > 1 and fields[1]:
                    uv_corners.append(_obj_index(fields[1], len(texcoords), path, line_no))
                else:
                    uv_corners.append(None)
            if len(corners) < 3:
                raise FormatError("face needs at least 3 vertices", path, line_no)
            # fan triangulation for polygons
            for k in range(1, len(corners) - 1):
                faces.append([corners[0], corners[k], corners[k + 1]])
                corner_uv.append(
                    ([corners[0], corners[k], corners[k + 1]],
                     [uv_corners[0], uv_corners[k], uv_corners[k + 1]], line_no)
                )

    vertices = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)

    uvs = None
    if any(t is not None for _, ts, _ in corner_uv for t in ts):
        uvs = np.zeros((len(vertices), 2), dtype=np.float64)
        assigned = np.full(len(vertices), -1, dtype=np.int64)
        for vs, ts, line_no in corner_uv:
            for v, t in zip(vs, ts):
                if t is None:
                    continue
                if assigned[v] >= 0 and assigned[v] != t and texcoords[assigned[v]] != texcoords[t]:
                    raise FormatError(
                        f"vertex {v + 1} has conflicting texture coordinates; "
                        "per-corner UVs are not supported",
                        path,
                        line_no,
                    )
                assigned[v] = t
                uvs[v] = texcoords[t]
    return vertices, faces, uvs, None


def _write_obj(mesh, path):
    lines = ["# carve mesh"]
    lines.extend("v %.17g %.17g %.17g" % tuple(v) for v in mesh.vertices)
    if mesh.uvs is not None:
        lines.extend("vt %.17g %.17g" % tuple(t) for t in mesh.uvs)
        lines.extend(
            "f %d/%d %d/%d %d/%d" % (a, a, b, b, c, c) for a, b, c in (mesh.faces + 1)
        )
    else:
        lines.extend("f %d %d %d" % tuple(f) for f in (mesh.faces + 1))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


_PLY_UV_NAMES = (("u", "v"), ("s", "t"), ("texture_u", "texture_v"))


def _vertex_property(raw, name):
    try:
        return np.asarray(raw[name])
    except (KeyError, ValueError, IndexError, TypeError):
        return None


def _read_ply(path):
    try:
        tm = trimesh.load(path, file_type="ply", process=False, force="mesh")
    except Exception as exc:
        raise FormatError(f"cannot read ply: {exc}", path) from exc
    if not isinstance(tm, trimesh.Trimesh):
        raise FormatError("ply file holds no triangle mesh", path)

    vertices = np.asarray(tm.vertices, dtype=np.float64).reshape(-1, 3)
    faces = np.asarray(tm.faces, dtype=np.int64).reshape(-1, 3)
    raw = tm.metadata.get("_ply_raw", {}).get("vertex", {}).get("data", {})

    uvs = getattr(tm.visual, "uv", None)
    if uvs is None:
        for u_name, v_name in _PLY_UV_NAMES:
            u, v = _vertex_property(raw, u_name), _vertex_property(raw, v_name)
            if u is not None and v is not None:
                uvs = np.stack([u, v], axis=1)
                break
    if uvs is not None:
        uvs = np.asarray(uvs, dtype=np.float64).reshape(-1, 2)
    labels = _vertex_property(raw, "label")
    if labels is not None:
        labels = labels.astype(np.int64).ravel()
    return vertices, faces, uvs, labels


def _write_ply(mesh, path):
    visual = TextureVisuals(uv=np.array(mesh.uvs)) if mesh.uvs is not None else None
    tm = trimesh.Trimesh(np.array(mesh.vertices), np.array(mesh.faces), visual=visual,
                         process=False, validate=False)
    tm.export(str(path), file_type="ply", encoding="binary")


# ============================================================================
# IMAGES
# ============================================================================

def load_image(path, kind=None):
    """
    Load a PNG (8-bit, mapped to [0, 1]) or PFM (32-bit float) image

    Args:
        path: image file
        kind: ImageKind (or its value); inferred from channel count when None

    Returns:
        ImagePlane; silhouettes are thresholded to {0, 1}
    """
    path = Path(path)
    if not path.exists():
        raise FormatError("file does not exist", path)
    suffix = path.suffix.lower()
    if suffix == ".pfm":
        data = _read_pfm(path)
    elif suffix == ".png":
        data = _read_png(path)
    else:
        raise FormatError(f"unsupported image format '{suffix}'", path)

    if kind is None:
        kind = ImageKind.SILHOUETTE if data.shape[2] == 1 else ImageKind.COLOR
    kind = ImageKind(kind)
    if kind != ImageKind.SILHOUETTE and data.shape[2] == 4:
        data = data[:, :, :3]
    if kind == ImageKind.SILHOUETTE:
        data = (data > 0.5).astype(np.float32)

    plane = ImagePlane(data, kind)
    is_valid, message = ImageValidator.validate(plane)
    if not is_valid:
        raise ValidationError(f"{path}: {message}")
    return plane


def save_image(plane, path):
    """Write an ImagePlane as PNG (quantized to 1/255) or PFM (float32)"""
    path = Path(path)
    suffix = path.suffix.lower()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if suffix == ".pfm":
            _write_pfm(plane.data, path)
        elif suffix == ".png":
            _write_png(plane.data, path)
        else:
            raise FormatError(f"unsupported image format '{suffix}'", path)
    except OSError as exc:
        raise FormatError(f"cannot write image: {exc}", path) from exc


def _read_png(path):
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode in ("I", "I;16", "I;16B", "I;16L", "F"):
                raise FormatError(f"unsupported bit depth (mode {mode}); PNG must be 8-bit", path)
            if mode == "1":
                img = img.convert("L")
            elif mode in ("P", "LA", "CMYK", "YCbCr"):
                img = img.convert("RGBA" if "A" in mode or "transparency" in img.info else "RGB")
            arr = np.asarray(img, dtype=np.uint8)
    except OSError as exc:
        raise FormatError(f"cannot read png: {exc}", path) from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float32) / np.float32(255.0)


def _write_png(data, path):
    arr = np.clip(np.rint(np.asarray(data, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    if arr.shape[2] == 1:
        img = Image.fromarray(arr[:, :, 0], mode="L")
    elif arr.shape[2] == 3:
        img = Image.fromarray(arr, mode="RGB")
    elif arr.shape[2] == 4:
        img = Image.fromarray(arr, mode="RGBA")
    else:
        raise FormatError(f"cannot store {arr.shape[2]} channels in PNG", path)
    img.save(path, format="PNG")


def _read_pfm(path):
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic == b"PF":
            channels = 3
        elif magic == b"Pf":
            channels = 1
        else:
            raise FormatError("bad PFM magic", path, 1)
        try:
            width, height = (int(x) for x in f.readline().split())
            scale = float(f.readline().strip())
        except ValueError:
            raise FormatError("bad PFM header", path, 2) from None
        endian = "<" if scale < 0 else ">"
        data = np.frombuffer(f.read(), dtype=endian + "f4")
    expected = width * height * channels
    if data.size != expected:
        raise FormatError(f"PFM has {data.size} samples, header declares {expected}", path)
    # PFM scanlines run bottom-to-top
    data = data.reshape(height, width, channels)[::-1]
    return np.ascontiguousarray(data.astype(np.float32))


def _write_pfm(data, path):
    arr = np.asarray(data, dtype=np.float32)
    if arr.shape[2] not in (1, 3):
        raise FormatError(f"PFM stores 1 or 3 channels, got {arr.shape[2]}", path)
    magic = b"PF\n" if arr.shape[2] == 3 else b"Pf\n"
    with open(path, "wb") as f:
        f.write(magic)
        f.write(f"{arr.shape[1]} {arr.shape[0]}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(arr[::-1]).astype("<f4").tobytes())


# ============================================================================
# CAMERA RIGS AND SKELETONS
# ============================================================================

_CAMERA_KEYS = ("position", "look_at", "up", "fov_y", "width", "height")


def camera_from_record(record, index=0, path=None):
    if not isinstance(record, dict):
        raise FormatError(f"camera {index} is not an object", path)
    missing = [k for k in _CAMERA_KEYS if k not in record]
    if missing:
        raise FormatError(f"camera {index} lacks {', '.join(missing)}", path)
    try:
        for key in ("position", "look_at", "up"):
            if len(record[key]) != 3:
                raise ValueError(f"{key} needs 3 components")
        tag = record.get("view_tag", ViewTag.OTHER.value)
        if tag not in {t.value for t in ViewTag}:
            raise ValueError(f"unknown view_tag '{tag}'")
        return Camera(
            position=record["position"],
            look_at=record["look_at"],
            up=record["up"],
            fov_y=float(record["fov_y"]),
            width=int(record["width"]),
            height=int(record["height"]),
            view_tag=tag,
        )
    except (TypeError, ValueError) as exc:
        raise FormatError(f"camera {index}: {exc}", path) from None


def load_camera_rig(path):
    """Load and validate a camera rig JSON array"""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            records = json.load(f)
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read camera rig: {exc}", path) from exc
    if not isinstance(records, list):
        raise FormatError("camera rig must be a JSON array", path)
    if not records:
        raise ValidationError(f"{path}: empty rig")
    rig = CameraRig([camera_from_record(r, i, path) for i, r in enumerate(records)])
    return rig.check()


def save_camera_rig(rig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump([cam.to_dict() for cam in rig], f, indent=2)


def load_skeleton(path):
    """Load {"joints": [{"name", "p"}], "bones": [[i, j], ...]}"""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        names = [j["name"] for j in data["joints"]]
        joints = [j["p"] for j in data["joints"]]
        bones = data.get("bones", [])
        skeleton = Skeleton(names, joints, np.asarray(bones, dtype=np.int64).reshape(-1, 2))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"invalid skeleton: {exc}", path) from exc
    return skeleton.check()


def save_skeleton(skeleton, path):
    data = {
        "joints": [{"name": n, "p": p.tolist()} for n, p in zip(skeleton.names, skeleton.joints)],
        "bones": skeleton.bones.tolist(),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)

