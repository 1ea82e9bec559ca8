"""Ear image corpora: loading, ear-focused reframing, and geometric augmentation.

Images and landmarks are transformed by the same affine maps so the
annotation stays glued to the pixels. Pixels are treated as points at
integer coordinates: pixel (row j, col i) sits at continuous (x=i, y=j),
so a 224-wide frame spans x in [0, 223] and its center is x = 111.5.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import EmptyCorpusError, ReframeError, SizeMismatchError
from .fileio import atomic_write_bytes
from .landmarks import Landmark, LandmarkSet, read_lm55, write_lm55

IMAGE_SIZE = 224
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")

AUGMENT_KINDS = ("flip", "rot_left", "rot_right", "flip_rot_left", "flip_rot_right")

AUGMENT_SUFFIXES = {
    "flip": "_f",
    "rot_left": "_rl",
    "rot_right": "_rr",
    "flip_rot_left": "_frl",
    "flip_rot_right": "_frr",
}

DEFAULT_ROTATION_DEG = 15.0
DEFAULT_REFRAME_MARGIN = 0.10


@dataclass
class Sample:
    """A 224x224x3 image in [0, 1] with its landmark set and a corpus id."""

    image: np.ndarray
    landmarks: LandmarkSet
    source_id: str

    def __post_init__(self):
        if self.image.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
            raise SizeMismatchError(
                f"sample {self.source_id!r}: image shape {self.image.shape}, "
                f"expected (224, 224, 3)"
            )


@dataclass
class LoadReport:
    """Per-file problems encountered while assembling a corpus."""

    errors: list = field(default_factory=list)  # (path, message) pairs

    def add(self, path, message):
        self.errors.append((str(path), str(message)))

    def __len__(self):
        return len(self.errors)


@dataclass
class Corpus:
    train: list
    test: list
    report: LoadReport = field(default_factory=LoadReport)

    @property
    def sizes(self):
        return (len(self.train), len(self.test))


# --- image files ---

def load_image(path) -> np.ndarray:
    """Read PNG/JPEG into a float32 HxWx3 array scaled to [0, 1]."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        return np.asarray(rgb, dtype=np.float32) / 255.0


def save_image(path, image: np.ndarray) -> None:
    """Write a float [0,1] (or uint8) raster as PNG/JPEG, atomically."""
    if image.dtype != np.uint8:
        image = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


# --- affine machinery shared by images and landmarks ---

def _warp_image(image: np.ndarray, matrix: np.ndarray, out_size: int) -> np.ndarray:
    """Resample an image under the forward map p' = A p + t (x, y convention).

    ``matrix`` is the 3x3 homogeneous forward transform. Bilinear
    interpolation, out-of-frame filled with black.
    """
    inv = np.linalg.inv(matrix)
    # scipy's affine_transform maps output index (row, col) -> input index,
    # so feed it the inverse transform re-expressed in (y, x) order.
    m_yx = np.array([[inv[1, 1], inv[1, 0]], [inv[0, 1], inv[0, 0]]])
    offset_yx = np.array([inv[1, 2], inv[0, 2]])
    out = np.empty((out_size, out_size, image.shape[2]), dtype=np.float32)
    for c in range(image.shape[2]):
        out[:, :, c] = ndimage.affine_transform(
            image[:, :, c].astype(np.float64),
            m_yx,
            offset=offset_yx,
            output_shape=(out_size, out_size),
            order=1,
            mode="constant",
            cval=0.0,
            prefilter=False,
        )
    return out


def _map_points(landmarks: LandmarkSet, matrix: np.ndarray, out_size: int) -> LandmarkSet:
    pts = [
        Landmark(
            p.label,
            matrix[0, 0] * p.x + matrix[0, 1] * p.y + matrix[0, 2],
            matrix[1, 0] * p.x + matrix[1, 1] * p.y + matrix[1, 2],
        )
        for p in landmarks
    ]
    return LandmarkSet(pts, (out_size, out_size))


def _rotation_about_center(angle_deg: float, size: int) -> np.ndarray:
    """Forward rotation matrix about the frame center ((size-1)/2, (size-1)/2).

    Positive angles rotate image content clockwise on screen (y axis points
    down); ``rot_left`` passes a negative angle.
    """
    c = (size - 1) / 2.0
    th = np.deg2rad(angle_deg)
    cos, sin = np.cos(th), np.sin(th)
    rot = np.array([[cos, -sin, 0.0], [sin, cos, 0.0], [0.0, 0.0, 1.0]])
    shift_in = np.array([[1, 0, -c], [0, 1, -c], [0, 0, 1.0]])
    shift_out = np.array([[1, 0, c], [0, 1, c], [0, 0, 1.0]])
    return shift_out @ rot @ shift_in


def reframe_to_ear(image: np.ndarray, landmarks: LandmarkSet,
                   margin: float = DEFAULT_REFRAME_MARGIN) -> Sample:
    """Crop to the landmark bounding box (plus margin) and resize to 224x224.

    Horizontal and vertical scale factors are independent, so a non-square
    ear region ends up distorted; the landmarks are mapped through the same
    affine transform: x' = (x - x_min) * 224 / box_w.
    """
    coords = landmarks.to_array()
    x_min, y_min = coords.min(axis=0)
    x_max, y_max = coords.max(axis=0)
    if x_max <= x_min or y_max <= y_min:
        raise ReframeError(
            f"landmark bounding box has zero area: "
            f"({x_min}, {y_min})-({x_max}, {y_max})"
        )
    mx = margin * (x_max - x_min)
    my = margin * (y_max - y_min)
    x0, y0 = x_min - mx, y_min - my
    box_w = (x_max - x_min) + 2 * mx
    box_h = (y_max - y_min) + 2 * my
    sx = IMAGE_SIZE / box_w
    sy = IMAGE_SIZE / box_h
    matrix = np.array([[sx, 0.0, -x0 * sx], [0.0, sy, -y0 * sy], [0.0, 0.0, 1.0]])
    if image.ndim == 2:
        image = np.repeat(image[:, :, None], 3, axis=2)
    warped = _warp_image(image, matrix, IMAGE_SIZE)
    return Sample(warped, _map_points(landmarks, matrix, IMAGE_SIZE), "reframed")


def _flip_sample(image: np.ndarray, landmarks: LandmarkSet):
    """Mirror about the vertical axis: x -> width - 1 - x, exact on pixels."""
    width = image.shape[1]
    flipped = np.ascontiguousarray(image[:, ::-1, :])
    pts = [Landmark(p.label, (width - 1) - p.x, p.y) for p in landmarks]
    return flipped, LandmarkSet(pts, landmarks.image_size)


def augment(sample: Sample, kind: str, angle_deg: float = DEFAULT_ROTATION_DEG) -> Sample:
    """Apply one of the five geometric augmentations to image and landmarks.

    Combined kinds flip first, then rotate. The image is resampled
    bilinearly with black fill; output stays 224x224.
    """
    if kind not in AUGMENT_KINDS:
        raise ValueError(f"unknown augmentation {kind!r}, expected one of {AUGMENT_KINDS}")
    image, landmarks = sample.image, sample.landmarks
    if kind.startswith("flip"):
        image, landmarks = _flip_sample(image, landmarks)
    if kind.endswith("rot_left") or kind.endswith("rot_right"):
        sign = -1.0 if kind.endswith("rot_left") else 1.0
        matrix = _rotation_about_center(sign * angle_deg, IMAGE_SIZE)
        image = _warp_image(image, matrix, IMAGE_SIZE)
        landmarks = _map_points(landmarks, matrix, IMAGE_SIZE)
    return Sample(image, landmarks, sample.source_id + AUGMENT_SUFFIXES[kind])


def expand_corpus(corpus: Corpus, angle_deg: float = DEFAULT_ROTATION_DEG) -> Corpus:
    """Expand each split to 6x its size: every sample plus its 5 variants."""
    def expand(samples):
        out = []
        for s in samples:
            out.append(s)
            out.extend(augment(s, kind, angle_deg) for kind in AUGMENT_KINDS)
        return out

    return Corpus(expand(corpus.train), expand(corpus.test), corpus.report)


# --- corpus directories ---

def _split_dirs(root: Path):
    """Yield (split_name, directory) pairs; bare directories count as train."""
    root = Path(root)
    named = [(s, root / s) for s in ("train", "test") if (root / s).is_dir()]
    if named:
        return named
    return [("train", root)]


def _find_pairs(image_dir: Path, landmark_dir: Path, report: LoadReport):
    images = {}
    for ext in IMAGE_EXTENSIONS:
        for p in sorted(Path(image_dir).glob(f"*{ext}")):
            images[p.stem] = p
    pairs = []
    seen_landmarks = set()
    for txt in sorted(Path(landmark_dir).glob("*.txt")):
        seen_landmarks.add(txt.stem)
        if txt.stem in images:
            pairs.append((images[txt.stem], txt))
        else:
            report.add(txt, "no matching image; skipped")
    for stem, img in images.items():
        if stem not in seen_landmarks:
            report.add(img, "no matching landmark file; skipped")
    return pairs


def load_corpus(image_dir, landmark_dir) -> Corpus:
    """Assemble a corpus from paired image/landmark directories.

    Both directories may contain ``train``/``test`` subdirectories; a flat
    directory is treated as train-only. Files pair by basename. Unreadable
    or malformed files are skipped and recorded in the corpus report;
    zero usable pairs raise EmptyCorpusError.
    """
    report = LoadReport()
    splits = {"train": [], "test": []}
    image_splits = dict(_split_dirs(Path(image_dir)))
    landmark_splits = dict(_split_dirs(Path(landmark_dir)))
    seen_ids = set()
    for split in ("train", "test"):
        if split not in image_splits or split not in landmark_splits:
            continue
        for img_path, lm_path in _find_pairs(image_splits[split], landmark_splits[split], report):
            if img_path.stem in seen_ids:
                report.add(img_path, "duplicate source_id across splits; skipped")
                continue
            try:
                image = load_image(img_path)
                if image.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
                    report.add(img_path, f"image is {image.shape[1]}x{image.shape[0]}, expected 224x224; skipped")
                    continue
                landmarks = read_lm55(lm_path)
                landmarks.require_full()
            except Exception as exc:
                report.add(lm_path, f"{type(exc).__name__}: {exc}")
                continue
            seen_ids.add(img_path.stem)
            splits[split].append(Sample(image, landmarks, img_path.stem))
    corpus = Corpus(splits["train"], splits["test"], report)
    if not corpus.train and not corpus.test:
        raise EmptyCorpusError(
            f"no usable image/landmark pairs under {image_dir} + {landmark_dir} "
            f"({len(report)} problems reported)"
        )
    return corpus


def save_sample(sample: Sample, image_dir: Path, landmark_dir: Path) -> None:
    Path(image_dir).mkdir(parents=True, exist_ok=True)
    Path(landmark_dir).mkdir(parents=True, exist_ok=True)
    save_image(Path(image_dir) / f"{sample.source_id}.png", sample.image)
    write_lm55(sample.landmarks, Path(landmark_dir) / f"{sample.source_id}.txt")


def augment_directory(image_dir, landmark_dir, out_dir,
                      angle_deg: float = DEFAULT_ROTATION_DEG,
                      limit: int | None = None):
    """Stream-augment a corpus on disk: each pair yields itself plus 5 variants.

    The output mirrors the input layout (``images``/``landmarks`` roots with
    train/test subdirectories) using the standard suffix tags. Samples are
    processed one at a time, so corpora of paper scale (500 + 105 pairs)
    never need to fit in memory. Returns {split: count} of written images.
    """
    out_dir = Path(out_dir)
    report = LoadReport()
    counts = {"train": 0, "test": 0}
    image_splits = dict(_split_dirs(Path(image_dir)))
    landmark_splits = dict(_split_dirs(Path(landmark_dir)))
    for split in ("train", "test"):
        if split not in image_splits or split not in landmark_splits:
            continue
        pairs = _find_pairs(image_splits[split], landmark_splits[split], report)
        if limit is not None:
            pairs = pairs[:limit]
        img_out = out_dir / "images" / split
        lm_out = out_dir / "landmarks" / split
        for img_path, lm_path in pairs:
            try:
                image = load_image(img_path)
                landmarks = read_lm55(lm_path)
                landmarks.require_full()
                sample = Sample(image, landmarks, img_path.stem)
            except Exception as exc:
                report.add(img_path, f"{type(exc).__name__}: {exc}")
                continue
            save_sample(sample, img_out, lm_out)
            counts[split] += 1
            for kind in AUGMENT_KINDS:
                save_sample(augment(sample, kind, angle_deg), img_out, lm_out)
                counts[split] += 1
    return counts, report
