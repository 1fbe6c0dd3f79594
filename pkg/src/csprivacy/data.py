"""Synthetic action / fall clips, temporal windowing, resizing and manifests.

Clips show one or two bright shapes over a noisy background. Each class has
its own motion signature; class 0 ("fall") is an accelerating descent that
ends lying still, the only motion with a large net downward displacement.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import FormatError, Rng
from .packing import VideoClip, load_clip, load_tensor, save_clip

MOTIONS = (
    "fall",
    "walk",
    "diagonal_drift",
    "static",
    "horizontal_oscillation",
    "vertical_oscillation",
    "expanding_blob",
    "shrinking_blob",
    "crossing",
    "rotating_bar",
)
FALL_LABELS = ("non_fall", "fall")
SPLITS = ("train", "val", "test")
NOISE_SIGMA = 8.0


# ----------------------------------------------------------------- rendering

def _disc(yy, xx, cy, cx, r):
    d = np.hypot(yy - cy, xx - cx)
    return np.clip(r - d + 0.5, 0.0, 1.0)


def _rect(yy, xx, cy, cx, hh, hw, angle=0.0):
    dy, dx = yy - cy, xx - cx
    if angle:
        c, s = math.cos(angle), math.sin(angle)
        dx, dy = c * dx + s * dy, -s * dx + c * dy
    return (np.clip(hw - np.abs(dx) + 0.5, 0.0, 1.0)
            * np.clip(hh - np.abs(dy) + 0.5, 0.0, 1.0))


def _motion_masks(motion: str, T: int, H: int, W: int, rng: Rng) -> np.ndarray:
    """Foreground coverage in [0, 1], shape T x H x W."""
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64) + 0.5
    S = min(H, W) / 64.0
    U = lambda lo, hi: lo + (hi - lo) * rng.uniform()  # noqa: E731
    sign = lambda: 1.0 if rng.uniform() < 0.5 else -1.0  # noqa: E731
    u = np.linspace(0.0, 1.0, T)
    frames = np.zeros((T, H, W))

    if motion == "fall":
        hw, hh = U(3.5, 5.0) * S, U(9.0, 12.0) * S
        cx = U(0.25, 0.75) * W
        cy0 = U(0.15, 0.25) * H
        drop = U(0.45, 0.55) * H
        f_end = U(0.55, 0.75)
        for t, ut in enumerate(u):
            s = min(ut / f_end, 1.0)
            lying = min(max((s - 0.6) / 0.4, 0.0), 1.0)
            h = hh + (hw - hh) * lying
            w = hw + (hh - hw) * lying
            cy = min(cy0 + drop * s * s, H - h - 1)
            frames[t] = _rect(yy, xx, cy, cx, h, w)
    elif motion == "walk":
        hw, hh = U(3.5, 5.0) * S, U(9.0, 12.0) * S
        d = sign() * U(0.35, 0.5) * W
        cx0 = W / 2 - d / 2 + U(-0.05, 0.05) * W
        cy = U(0.35, 0.65) * H
        for t, ut in enumerate(u):
            frames[t] = _rect(yy, xx, cy, cx0 + d * ut, hh, hw)
    elif motion == "diagonal_drift":
        r = U(6.0, 9.0) * S
        dx, dy = sign() * U(0.15, 0.25) * W, sign() * U(0.15, 0.25) * H
        cx0, cy0 = W / 2 - dx / 2, H / 2 - dy / 2
        for t, ut in enumerate(u):
            frames[t] = _disc(yy, xx, cy0 + dy * ut, cx0 + dx * ut, r)
    elif motion == "static":
        cy, cx = U(0.3, 0.7) * H, U(0.3, 0.7) * W
        if rng.uniform() < 0.5:
            mask = _disc(yy, xx, cy, cx, U(6.0, 10.0) * S)
        else:
            mask = _rect(yy, xx, cy, cx, U(5.0, 10.0) * S, U(5.0, 10.0) * S)
        frames[:] = mask
    elif motion in ("horizontal_oscillation", "vertical_oscillation"):
        r = U(6.0, 8.0) * S
        amp = U(0.15, 0.22) * min(H, W)
        phase = U(0.0, 2.0 * math.pi)
        cy, cx = U(0.4, 0.6) * H, U(0.4, 0.6) * W
        for t, ut in enumerate(u):
            off = amp * math.sin(2.0 * math.pi * ut + phase)
            if motion == "horizontal_oscillation":
                frames[t] = _disc(yy, xx, cy, cx + off, r)
            else:
                frames[t] = _disc(yy, xx, cy + off, cx, r)
    elif motion in ("expanding_blob", "shrinking_blob"):
        r_small, r_big = U(3.0, 5.0) * S, U(14.0, 18.0) * S
        cy, cx = U(0.4, 0.6) * H, U(0.4, 0.6) * W
        for t, ut in enumerate(u):
            a = ut if motion == "expanding_blob" else 1.0 - ut
            frames[t] = _disc(yy, xx, cy, cx, r_small + (r_big - r_small) * a)
    elif motion == "crossing":
        r = U(5.0, 7.0) * S
        cy1 = U(0.35, 0.5) * H
        cy2 = cy1 + U(0.1, 0.2) * H
        d = sign() * U(0.55, 0.7) * W
        for t, ut in enumerate(u):
            x1 = W / 2 - d / 2 + d * ut
            x2 = W / 2 + d / 2 - d * ut
            frames[t] = np.maximum(_disc(yy, xx, cy1, x1, r), _disc(yy, xx, cy2, x2, r))
    elif motion == "rotating_bar":
        half_len = U(0.2, 0.28) * min(H, W)
        half_th = U(2.0, 3.0) * S
        a0, da = U(0.0, math.pi), sign() * U(0.45, 0.55) * math.pi
        cy, cx = U(0.45, 0.55) * H, U(0.45, 0.55) * W
        for t, ut in enumerate(u):
            frames[t] = _rect(yy, xx, cy, cx, half_th, half_len, a0 + da * ut)
    else:
        raise ValueError(f"unknown motion {motion!r}")
    return frames


def render_clip(motion: str, T: int, H: int, W: int, rng: Rng,
                noise_sigma: float = NOISE_SIGMA) -> VideoClip:
    """Render one clip with randomised placement, brightness and sensor noise.

    ``noise_sigma=0`` gives clean, piecewise-smooth (highly compressible) clips.
    """
    if H < 32 or W < 32 or T < 2:
        raise ValueError(f"geometry {T}x{H}x{W} too small to render (need H, W >= 32)")
    mask = _motion_masks(motion, T, H, W, rng)
    bg = 20.0 + 70.0 * rng.uniform()
    fg = 150.0 + 90.0 * rng.uniform()
    tint = 0.8 + 0.2 * rng.uniform(3)
    img = bg + (fg * tint - bg)[None, None, None, :] * mask[..., None]
    if noise_sigma > 0:
        img = img + noise_sigma * rng.gaussian(T * H * W * 3).reshape(T, H, W, 3)
    return VideoClip(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def vertical_displacement(clip: VideoClip) -> float:
    """Net downward motion (pixels) of the foreground centroid, last vs first frame.

    Foreground is every pixel more than 40 grey levels above the clip median.
    """
    gray = clip.frames.astype(np.float64).mean(axis=-1)
    fg = gray > np.median(gray) + 40.0
    ys = np.arange(gray.shape[1], dtype=np.float64)[:, None]

    def cy(t):
        m = fg[t]
        return float((m * ys).sum() / m.sum()) if m.any() else gray.shape[1] / 2

    return cy(len(gray) - 1) - cy(0)


def centroid_fall_detector(clip: VideoClip, threshold: float = 0.3) -> int:
    """Trivial baseline: fall iff the centroid drops more than ``threshold * H``."""
    return int(vertical_displacement(clip) > threshold * clip.shape[1])


# ----------------------------------------------------------------- manifests

@dataclass
class ClipRecord:
    path: str
    label: int
    split: str
    motion: str | None = None


@dataclass
class DatasetManifest:
    classes: list
    records: list
    geometry: dict
    seed: int = 0
    root: Path = field(default=Path("."), repr=False)
    kind: str = "clips"
    sensing: dict | None = None

    def split(self, name: str) -> list:
        return [r for r in self.records if r.split == name]

    def resolve(self, rec: ClipRecord) -> Path:
        return self.root / rec.path

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "classes": list(self.classes), "geometry": dict(self.geometry),
             "seed": self.seed,
             "records": [{k: v for k, v in vars(r).items() if v is not None} for r in self.records]}
        if self.sensing is not None:
            d["sensing"] = self.sensing
        return d


def save_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(manifest.to_dict(), indent=1) + "\n")
    return path


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
        records = [ClipRecord(r["path"], int(r["label"]), r["split"], r.get("motion"))
                   for r in d["records"]]
        man = DatasetManifest(list(d["classes"]), records, dict(d["geometry"]), int(d.get("seed", 0)),
                              path.parent, d.get("kind", "clips"), d.get("sensing"))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: invalid manifest ({exc})") from exc
    for r in man.records:
        if r.split not in SPLITS:
            raise FormatError(f"{path}: record {r.path} has unknown split {r.split!r}")
        if not 0 <= r.label < len(man.classes):
            raise FormatError(f"{path}: record {r.path} label {r.label} out of range")
    return man


def split_for_index(j: int, per_class: int) -> str:
    if j < round(0.7 * per_class):
        return "train"
    if j < round(0.85 * per_class):
        return "val"
    return "test"


def _jobs(classes: int, per_class: int):
    if classes == 10:
        return [(label, j, MOTIONS[label]) for label in range(10) for j in range(per_class)]
    if classes == 2:
        jobs = [(1, j, "fall") for j in range(per_class)]
        return jobs + [(0, j, MOTIONS[1 + j % 9]) for j in range(per_class)]
    raise ValueError("classes must be 2 or 10")


def synth_action_dataset(out_dir, classes: int = 10, clips_per_class: int = 100, T: int = 8,
                         H: int = 64, W: int = 64, seed: int = 0) -> DatasetManifest:
    """Render a synthetic dataset to ``out_dir`` and write ``manifest.json``.

    ``classes=10`` gives one class per motion; ``classes=2`` gives fall
    (label 1) against the other nine motions cycled evenly (label 0).
    """
    jobs = _jobs(classes, clips_per_class)
    if H < 32 or W < 32 or T < 8:
        raise ValueError(f"geometry T={T}, H={H}, W={W} too small (need T >= 8, H, W >= 32)")
    if clips_per_class < 1:
        raise ValueError("clips_per_class must be positive")
    out_dir = Path(out_dir)
    (out_dir / "clips").mkdir(parents=True, exist_ok=True)
    master = Rng(seed)
    records = []
    names = list(MOTIONS) if classes == 10 else list(FALL_LABELS)
    for n, (label, j, motion) in enumerate(jobs):
        clip = render_clip(motion, T, H, W, master.spawn())
        rel = f"clips/clip_{n:05d}.vid"
        save_clip(clip, out_dir / rel)
        records.append(ClipRecord(rel, label, split_for_index(j, clips_per_class), motion))
    man = DatasetManifest(names, records, {"T": T, "H": H, "W": W}, seed, out_dir)
    save_manifest(man, out_dir / "manifest.json")
    return man


def synth_arrays(classes: int = 10, clips_per_class: int = 100, T: int = 8, H: int = 64,
                 W: int = 64, seed: int = 0):
    """In-memory twin of :func:`synth_action_dataset` (same clips, no files).

    Returns ``{split: (frames uint8 N x T x H x W x 3, labels)}``.
    """
    jobs = _jobs(classes, clips_per_class)
    master = Rng(seed)
    out = {s: ([], []) for s in SPLITS}
    for label, j, motion in jobs:
        clip = render_clip(motion, T, H, W, master.spawn())
        xs, ys = out[split_for_index(j, clips_per_class)]
        xs.append(clip.frames)
        ys.append(label)
    return {s: (np.stack(xs), np.array(ys, dtype=np.int64)) for s, (xs, ys) in out.items() if xs}


# ------------------------------------------------------------ clip utilities

def window_clip(video: VideoClip, T: int, stride: int) -> list:
    """Windows of T frames starting at 0, stride, 2*stride, ... while they fit."""
    n = video.shape[0]
    if T < 1 or stride < 1:
        raise ValueError("T and stride must be positive")
    if n < T:
        raise ValueError(f"video has {n} frames, shorter than window {T}")
    return [VideoClip(video.frames[s:s + T].copy(), video.fps) for s in range(0, n - T + 1, stride)]


def _bilinear_axis(n_in: int, n_out: int):
    """Source indices and weights for half-pixel-centred bilinear sampling."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_clip(video: VideoClip, H: int, W: int) -> VideoClip:
    """Bilinear per-frame resize (half-pixel centres, edge clamped)."""
    if H < 1 or W < 1:
        raise ValueError("target size must be positive")
    T, h, w, _ = video.shape
    if (h, w) == (H, W):
        return VideoClip(video.frames.copy(), video.fps)
    f = video.frames.astype(np.float64)
    y0, y1, fy = _bilinear_axis(h, H)
    x0, x1, fx = _bilinear_axis(w, W)
    rows = f[:, y0] * (1 - fy)[None, :, None, None] + f[:, y1] * fy[None, :, None, None]
    out = rows[:, :, x0] * (1 - fx)[None, None, :, None] + rows[:, :, x1] * fx[None, None, :, None]
    return VideoClip(np.clip(np.rint(out), 0, 255).astype(np.uint8), video.fps)


# ------------------------------------------------------------------ batching

def load_record(manifest: DatasetManifest, rec: ClipRecord) -> np.ndarray:
    """Decode one record: uint8 frames for clip manifests, floats for tensors."""
    path = manifest.resolve(rec)
    if not path.exists():
        raise FormatError(f"{path}: missing file")
    g = manifest.geometry
    if manifest.kind == "tensors":
        data = load_tensor(path).data
        want = (g["T"], g["Hb"], g["Wb"], g["C"])
    else:
        data = load_clip(path).frames
        want = (g["T"], g["H"], g["W"], 3)
    if data.shape != tuple(want):
        raise FormatError(f"{path}: geometry {data.shape} does not match manifest {tuple(want)}")
    return data


def iterate_batches(manifest: DatasetManifest, split: str, batch: int, seed: int, epoch: int = 0):
    """Yield ``(data, labels)`` batches in a seeded order; the last batch may be short."""
    recs = manifest.split(split)
    if batch < 1:
        raise ValueError("batch must be positive")
    rng = Rng(seed)
    for _ in range(epoch):
        rng.spawn()
    order = rng.spawn().permutation(len(recs))
    for i in range(0, len(order), batch):
        chosen = [recs[j] for j in order[i:i + batch]]
        data = np.stack([load_record(manifest, r) for r in chosen])
        yield data, np.array([r.label for r in chosen], dtype=np.int64)


def load_split(manifest: DatasetManifest, split: str):
    """Whole split in manifest order as ``(data, labels)``."""
    recs = manifest.split(split)
    if not recs:
        raise ValueError(f"split {split!r} is empty")
    data = np.stack([load_record(manifest, r) for r in recs])
    return data, np.array([r.label for r in recs], dtype=np.int64)
