"""Synthetic traffic scenes, motion labels, paired echoes and the on-disk corpus.

A scene is a small textured frame seen from a base station (BS) at the
lower-right pixel.  Each "car" sprite moves by an integer displacement over
one frame interval, which gives closed-form distance, angle and speed labels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .radar import RadarConfig, TargetState, read_echo, synth_echo, write_echo
from .rng import make_rng

THETA_MARGIN = 0.05
MANIFEST_NAME = "manifest.csv"
MANIFEST_HEADER = ["sample_id", "image", "crop", "echo", "d_norm", "theta_norm", "v_norm"]


class GenerationError(RuntimeError):
    pass


class DatasetError(OSError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    width: int = 32
    height: int = 32
    n_targets: int = 1
    background_seed: int = 0
    frame_dt: float = 1.0
    v_max: float = 20.0
    min_size: int = 4
    max_size: int = 9

    def __post_init__(self):
        if not 1 <= self.n_targets <= 4:
            raise ValueError(f"n_targets must be in [1, 4], got {self.n_targets}")
        if not self.frame_dt > 0:
            raise ValueError(f"frame_dt must be positive, got {self.frame_dt}")
        if self.width < 2 * self.max_size or self.height < 2 * self.max_size:
            raise ValueError("frame too small for the sprite size range")
        if not 1 <= self.min_size <= self.max_size:
            raise ValueError("bad sprite size range")
        if not self.v_max > 0:
            raise ValueError("v_max must be positive")

    @property
    def bs(self) -> tuple[float, float]:
        return (self.width - 1.0, self.height - 1.0)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)


Box = tuple[int, int, int, int]  # x0, y0, x1, y1 inclusive


@dataclass
class Target:
    box: Box
    box_next: Box
    mask: np.ndarray  # H x W bool, sprite pixels at time t
    color: tuple[int, int, int]


@dataclass
class Sample:
    sample_id: int
    image: np.ndarray
    crop: np.ndarray
    d_norm: float
    theta_norm: float
    v_norm: float
    raw: tuple[float, float, float]
    echo: object = None
    condition: object = None


@dataclass
class DatasetManifest:
    root: Path
    rows: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)


# ----------------------------------------------------------------- labels


def box_center(box: Box) -> tuple[float, float]:
    x0, y0, x1, y1 = box
    return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)


def compute_labels(box_t: Box, box_t1: Box, bs, dt: float) -> tuple[float, float, float]:
    """Distance and angle of the box center from the BS, plus center speed."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    xc, yc = box_center(box_t)
    xn, yn = box_center(box_t1)
    xb, yb = bs
    d = math.sqrt((xb - xc) ** 2 + (yb - yc) ** 2)
    theta = math.atan2(yb - yc, xc - xb)
    v = math.hypot(xn - xc, yn - yc) / dt
    return d, theta, v


def normalize_labels(d, theta, v, spec: SceneSpec) -> tuple[float, float, float]:
    return d / spec.diagonal, (theta + math.pi) / (2 * math.pi), v / spec.v_max


def denormalize_labels(d_n, theta_n, v_n, spec: SceneSpec):
    return d_n * spec.diagonal, theta_n * 2 * math.pi - math.pi, v_n * spec.v_max


def radar_state(d_px: float, theta: float, v_px: float) -> TargetState:
    """Pixel labels to radar units at 1 m per pixel."""
    th = min(max(theta, THETA_MARGIN), math.pi - THETA_MARGIN)
    return TargetState(d=d_px, theta=th, v=v_px)


# ----------------------------------------------------------------- rendering


def background(spec: SceneSpec) -> np.ndarray:
    """Fixed road-like texture: a gradient, lane stripes and grain."""
    rng = make_rng(spec.background_seed, "background")
    H, W = spec.height, spec.width
    yy, xx = np.mgrid[0:H, 0:W]
    base = 45 + 25 * (yy / H) + 10 * (xx / W)
    stripes = 12.0 * (((xx + yy) // 6) % 2)
    grain = rng.normal(0.0, 4.0, (H, W))
    gray = base + stripes + grain
    tint = rng.uniform(0.85, 1.15, 3)
    img = gray[..., None] * tint[None, None, :]
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _sprite_mask(spec: SceneSpec, box: Box, ellipse: bool) -> np.ndarray:
    x0, y0, x1, y1 = box
    mask = np.zeros((spec.height, spec.width), bool)
    if not ellipse:
        mask[y0 : y1 + 1, x0 : x1 + 1] = True
        return mask
    cx, cy = box_center(box)
    rx, ry = (x1 - x0 + 1) / 2.0, (y1 - y0 + 1) / 2.0
    yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    mask[y0 : y1 + 1, x0 : x1 + 1] = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    return mask


def _overlaps(a: Box, b: Box, margin: int = 1) -> bool:
    return not (
        a[2] + margin < b[0] or b[2] + margin < a[0] or a[3] + margin < b[1] or b[3] + margin < a[1]
    )


def _draw_box(rng, spec: SceneSpec) -> Box:
    w = int(rng.integers(spec.min_size, spec.max_size + 1))
    h = int(rng.integers(spec.min_size, spec.max_size + 1))
    # keep the whole sprite above the BS row so theta stays inside (0, pi)
    x0 = int(rng.integers(0, spec.width - w + 1))
    y0 = int(rng.integers(0, spec.height - 1 - h + 1))
    return (x0, y0, x0 + w - 1, y0 + h - 1)


def _draw_displacement(rng, spec: SceneSpec) -> tuple[int, int]:
    limit = spec.v_max * spec.frame_dt
    for _ in range(100):
        speed = rng.uniform(1.0, 0.95 * limit)
        heading = rng.uniform(0.0, 2 * math.pi)
        dx = int(round(speed * math.cos(heading)))
        dy = int(round(speed * math.sin(heading)))
        if 0 < math.hypot(dx, dy) < limit:
            return dx, dy
    raise GenerationError("could not draw an admissible displacement")


def render_scene(spec: SceneSpec, seed: int, max_tries: int = 200):
    """Return (image uint8 HxWx3, list[Target]) for a seeded scene."""
    rng = make_rng(spec.background_seed, "scene", seed)
    img = background(spec).astype(np.int32)
    img += rng.integers(-3, 4, img.shape)
    targets: list[Target] = []
    tries = 0
    while len(targets) < spec.n_targets:
        tries += 1
        if tries > max_tries:
            raise GenerationError(
                f"could not place {spec.n_targets} non-overlapping targets in {max_tries} tries"
            )
        box = _draw_box(rng, spec)
        if any(_overlaps(box, t.box) for t in targets):
            continue
        dx, dy = _draw_displacement(rng, spec)
        box_next = (box[0] + dx, box[1] + dy, box[2] + dx, box[3] + dy)
        ellipse = bool(rng.integers(2))
        color = tuple(int(c) for c in rng.integers(70, 256, 3))
        mask = _sprite_mask(spec, box, ellipse)
        targets.append(Target(box, box_next, mask, color))

    for t in targets:
        img[t.mask] = t.color
        x0, y0, x1, y1 = t.box
        if y1 - y0 >= 4:
            # darker windshield band for a bit of internal structure
            band = np.zeros_like(t.mask)
            band[y0 + (y1 - y0) // 3, x0 : x1 + 1] = True
            img[band & t.mask] = (np.array(t.color) * 0.45).astype(np.int32)
    return np.clip(img, 0, 255).astype(np.uint8), targets


def crop_target(image: np.ndarray, target: Target) -> np.ndarray:
    """Target pixels inside its box on a black frame."""
    crop = np.zeros_like(image)
    crop[target.mask] = image[target.mask]
    return crop


def make_samples(spec: SceneSpec, seed: int, first_id: int = 0) -> list[Sample]:
    image, targets = render_scene(spec, seed)
    out = []
    for i, t in enumerate(targets):
        d, theta, v = compute_labels(t.box, t.box_next, spec.bs, spec.frame_dt)
        norm = normalize_labels(d, theta, v, spec)
        if not all(0.0 < x < 1.0 for x in norm):
            raise GenerationError(f"scene {seed} target {i}: normalized labels {norm} outside (0,1)")
        out.append(Sample(first_id + i, image, crop_target(image, t), *norm, raw=(d, theta, v)))
    return out


# ----------------------------------------------------------------- PPM files


def write_ppm(path: str | Path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    H, W, C = img.shape
    if C != 3:
        raise ValueError("PPM needs 3 channels")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{W} {H}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P6" or int(fields[3]) != 255:
        raise DatasetError(f"{path}: not an 8-bit P6 image")
    W, H = int(fields[1]), int(fields[2])
    data = np.frombuffer(raw, np.uint8, count=W * H * 3, offset=pos + 1)
    return data.reshape(H, W, 3).copy()


# ----------------------------------------------------------------- corpus


def build_dataset(
    spec: SceneSpec,
    n_samples: int,
    radar_cfg: RadarConfig,
    out_dir: str | Path,
    seed: int,
    noise_std: float = 0.0,
) -> DatasetManifest:
    """Render scenes until n_samples targets exist; write files and manifest."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    root = Path(out_dir)
    for sub in ("images", "crops", "echoes"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rows = []
    scene = 0
    while len(rows) < n_samples:
        scene_seed = int(make_rng(seed, "scene-index", scene).integers(2**31))
        samples = make_samples(spec, scene_seed, first_id=len(rows))
        image_rel = f"images/{scene:05d}.ppm"
        write_ppm(root / image_rel, samples[0].image)
        for s in samples[: n_samples - len(rows)]:
            crop_rel = f"crops/{s.sample_id:05d}.ppm"
            echo_rel = f"echoes/{s.sample_id:05d}.echo"
            write_ppm(root / crop_rel, s.crop)
            rng = make_rng(seed, "echo-noise", s.sample_id) if noise_std > 0 else None
            frame = synth_echo(radar_state(*s.raw), radar_cfg, noise_std, rng)
            write_echo(root / echo_rel, frame)
            rows.append(
                {
                    "sample_id": s.sample_id,
                    "image": image_rel,
                    "crop": crop_rel,
                    "echo": echo_rel,
                    "d_norm": s.d_norm,
                    "theta_norm": s.theta_norm,
                    "v_norm": s.v_norm,
                }
            )
        scene += 1
    manifest = DatasetManifest(root, rows)
    write_manifest(manifest)
    return manifest


def write_manifest(manifest: DatasetManifest) -> None:
    with open(manifest.root / MANIFEST_NAME, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in manifest.rows:
            w.writerow([r["sample_id"], r["image"], r["crop"], r["echo"]] + [
                repr(float(r[k])) for k in ("d_norm", "theta_norm", "v_norm")
            ])


def read_manifest(root: str | Path) -> DatasetManifest:
    root = Path(root)
    path = root / MANIFEST_NAME
    if not path.exists():
        raise DatasetError(f"no manifest at {path}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_HEADER:
            raise DatasetError(f"{path}: unexpected header {reader.fieldnames}")
        for r in reader:
            r["sample_id"] = int(r["sample_id"])
            for k in ("d_norm", "theta_norm", "v_norm"):
                r[k] = float(r[k])
            rows.append(r)
    ids = [r["sample_id"] for r in rows]
    if len(set(ids)) != len(ids):
        raise DatasetError(f"{path}: duplicate sample ids")
    return DatasetManifest(root, rows)


@dataclass
class SampleArrays:
    """Whole corpus in memory; images and crops scaled to [0,1]."""

    ids: np.ndarray
    images: np.ndarray  # N x H x W x 3
    crops: np.ndarray
    echo_real: np.ndarray  # N x K x L
    echo_imag: np.ndarray
    labels: np.ndarray  # N x 3 columns d, theta, v (normalized)

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, idx) -> "SampleArrays":
        return SampleArrays(
            self.ids[idx], self.images[idx], self.crops[idx],
            self.echo_real[idx], self.echo_imag[idx], self.labels[idx],
        )


def load_arrays(manifest: DatasetManifest) -> SampleArrays:
    images, crops, er, ei, labels = [], [], [], [], []
    cache: dict[str, np.ndarray] = {}
    for r in manifest.rows:
        if r["image"] not in cache:
            cache[r["image"]] = read_ppm(manifest.root / r["image"])
        images.append(cache[r["image"]])
        crops.append(read_ppm(manifest.root / r["crop"]))
        echo_path = manifest.root / r["echo"]
        if not echo_path.exists():
            raise DatasetError(f"missing echo file {echo_path}")
        frame = read_echo(echo_path)
        er.append(frame.real)
        ei.append(frame.imag)
        labels.append((r["d_norm"], r["theta_norm"], r["v_norm"]))
    return SampleArrays(
        np.array([r["sample_id"] for r in manifest.rows]),
        np.stack(images).astype(np.float64) / 255.0,
        np.stack(crops).astype(np.float64) / 255.0,
        np.stack(er),
        np.stack(ei),
        np.array(labels, dtype=np.float64),
    )


def iterate_batches(
    data: DatasetManifest | SampleArrays, batch_size: int, shuffle_seed: int | None = None
) -> Iterator[SampleArrays]:
    """One pass over the data in a seeded order; the short tail batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    arrays = load_arrays(data) if isinstance(data, DatasetManifest) else data
    n = len(arrays)
    order = np.arange(n) if shuffle_seed is None else make_rng(shuffle_seed, "shuffle").permutation(n)
    for start in range(0, n, batch_size):
        yield arrays.subset(order[start : start + batch_size])
