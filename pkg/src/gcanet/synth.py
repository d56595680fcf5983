"""Deterministic synthetic forgery generator with ground-truth masks,
training augmentations, and the robustness distortion harness.

Procedural textures stand in for real camera images; an optional image
directory can supply real sources instead. All generation is a pure
function of the seeds, so a dataset rebuild is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imaging, jpegsim

FORGERY_KINDS = ("splice", "copymove", "inpaint", "authentic")


# -- samples ---------------------------------------------------------------

@dataclass
class Sample:
    image: np.ndarray  # (3,H,W) float32 in [0,1]
    mask: np.ndarray  # (1,H,W) float32 in {0,1}
    label: int  # 1 = forged
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        forged = bool(self.mask.sum() > 0)
        if forged != bool(self.label):
            raise ValueError("label must be 1 exactly when the mask is non-empty")


# -- regions ---------------------------------------------------------------

@dataclass
class RectRegion:
    top: int
    left: int
    height: int
    width: int

    def rasterize(self, h: int, w: int) -> np.ndarray:
        if self.height <= 0 or self.width <= 0:
            raise ValueError("degenerate region (area 0)")
        if self.top < 0 or self.left < 0 or self.top + self.height > h or self.left + self.width > w:
            raise ValueError(f"region {self} exceeds {h}x{w} bounds")
        m = np.zeros((h, w), dtype=bool)
        m[self.top : self.top + self.height, self.left : self.left + self.width] = True
        return m


@dataclass
class PolygonRegion:
    """Convex polygon given as (y,x) vertices in order."""

    vertices: list

    def rasterize(self, h: int, w: int) -> np.ndarray:
        pts = np.asarray(self.vertices, dtype=np.float64)
        if len(pts) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        yy, xx = np.mgrid[0:h, 0:w]
        inside = np.ones((h, w), dtype=bool)
        for i in range(len(pts)):
            y0, x0 = pts[i]
            y1, x1 = pts[(i + 1) % len(pts)]
            # keep points on the interior side of each directed edge
            cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
            inside &= cross >= 0
        if not inside.any():
            raise ValueError("degenerate region (area 0)")
        return inside


def random_region(rng: np.random.Generator, h: int, w: int,
                  min_frac: float = 0.05, max_frac: float = 0.35):
    """Random rectangle or convex polygon covering roughly the given
    fraction of the image area."""
    if rng.random() < 0.5:
        frac = rng.uniform(min_frac, max_frac)
        rh = int(np.clip(np.sqrt(frac * h * w * rng.uniform(0.6, 1.6)), 4, h - 2))
        rw = int(np.clip(frac * h * w / rh, 4, w - 2))
        top = int(rng.integers(0, h - rh))
        left = int(rng.integers(0, w - rw))
        return RectRegion(top, left, rh, rw)
    # convex polygon: sorted random angles around a random center
    cy = rng.uniform(0.25 * h, 0.75 * h)
    cx = rng.uniform(0.25 * w, 0.75 * w)
    radius = rng.uniform(0.15, 0.3) * min(h, w)
    n = int(rng.integers(4, 8))
    # stratified angles keep every gap under 180 degrees, so the
    # half-plane intersection always contains the center
    angles = 2 * np.pi * (np.arange(n) + rng.uniform(0.1, 0.9, size=n)) / n
    verts = [
        (
            float(np.clip(cy + radius * np.sin(a) * rng.uniform(0.7, 1.0), 0, h - 1)),
            float(np.clip(cx + radius * np.cos(a) * rng.uniform(0.7, 1.0), 0, w - 1)),
        )
        for a in angles
    ]
    return PolygonRegion(verts)


# -- base image generation -------------------------------------------------

def _upscale_bilinear(coarse: np.ndarray, h: int, w: int) -> np.ndarray:
    gh, gw = coarse.shape[-2:]
    ys = np.linspace(0, gh - 1, h)
    xs = np.linspace(0, gw - 1, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    c = coarse
    top = c[..., y0, :][..., x0] * (1 - fx) + c[..., y0, :][..., x1] * fx
    bot = c[..., y1, :][..., x0] * (1 - fx) + c[..., y1, :][..., x1] * fx
    return top * (1 - fy) + bot * fy


def gen_base(seed: int, h: int = 64, w: int = 64,
             image_dir: str | None = None) -> np.ndarray:
    """Procedural (3,H,W) texture in [0,1], deterministic per seed.

    With ``image_dir`` set, samples a crop of a user-supplied PNG/PPM
    instead of generating a texture.
    """
    rng = np.random.default_rng(seed)
    if image_dir is not None:
        files = sorted(
            p for p in Path(image_dir).iterdir()
            if p.suffix.lower() in (".png", ".ppm")
        )
        if not files:
            raise FileNotFoundError(f"no PNG/PPM images in {image_dir}")
        img = imaging.load_image(files[rng.integers(len(files))])
        _, ih, iw = img.shape
        if ih < h or iw < w:
            return np.clip(_upscale_bilinear(img, h, w), 0, 1).astype(np.float32)
        top = int(rng.integers(0, ih - h + 1))
        left = int(rng.integers(0, iw - w + 1))
        return img[:, top : top + h, left : left + w]

    img = np.zeros((3, h, w))
    # multi-octave value noise
    amp = 1.0
    for grid in (4, 8, 16, 32):
        coarse = rng.random((3, grid, grid))
        img += amp * _upscale_bilinear(coarse, h, w)
        amp *= 0.55
    # smooth global gradient
    theta = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:h, 0:w]
    ramp = (np.cos(theta) * xx / w + np.sin(theta) * yy / h)
    img += 0.6 * rng.random(3)[:, None, None] * ramp[None]
    # a few solid shapes
    for _ in range(int(rng.integers(2, 5))):
        try:
            m = random_region(rng, h, w, 0.02, 0.12).rasterize(h, w)
        except ValueError:
            continue
        color = rng.random(3)
        alpha = rng.uniform(0.5, 1.0)
        img[:, m] = (1 - alpha) * img[:, m] + alpha * color[:, None]
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo + 1e-9)
    # snap to the 8-bit grid the on-disk formats use
    return (np.round(img * 255.0) / 255.0).astype(np.float32)


# -- forgery operations ----------------------------------------------------

def gen_splice(host_seed: int, donor_seed: int, region=None,
               host_q: int | None = 95, donor_q: int | None = 65,
               h: int = 64, w: int = 64, image_dir=None) -> Sample:
    """Paste a (optionally pre-compressed) donor patch into a host image."""
    rng = np.random.default_rng(host_seed)
    host = gen_base(host_seed, h, w, image_dir)
    donor = gen_base(donor_seed, h, w, image_dir)
    if donor_q is not None:
        donor = jpegsim.jpeg_roundtrip(donor, donor_q)
    if host_q is not None:
        host = jpegsim.jpeg_roundtrip(host, host_q)
    region = region or random_region(rng, h, w)
    m = region.rasterize(h, w)
    image = host.copy()
    image[:, m] = donor[:, m]
    return Sample(
        image=image,
        mask=m.astype(np.float32)[None],
        label=1,
        provenance={
            "op": "splice", "host_seed": host_seed, "donor_seed": donor_seed,
            "host_q": host_q, "donor_q": donor_q, "region": type(region).__name__,
        },
    )


def gen_copymove(seed: int, src_region: RectRegion | None = None,
                 dst_region: RectRegion | None = None,
                 h: int = 64, w: int = 64, image_dir=None) -> Sample:
    """Duplicate a rectangular block within one image; mask marks the
    destination only."""
    rng = np.random.default_rng(seed)
    image = gen_base(seed, h, w, image_dir).copy()
    if src_region is None or dst_region is None:
        for _ in range(50):
            rh = int(rng.integers(h // 6, h // 2))
            rw = int(rng.integers(w // 6, w // 2))
            sy, sx = int(rng.integers(0, h - rh)), int(rng.integers(0, w - rw))
            dy, dx = int(rng.integers(0, h - rh)), int(rng.integers(0, w - rw))
            if (sy, sx) != (dy, dx):
                src_region = RectRegion(sy, sx, rh, rw)
                dst_region = RectRegion(dy, dx, rh, rw)
                break
        else:
            raise ValueError("could not draw distinct copy-move regions")
    if (src_region.height, src_region.width) != (dst_region.height, dst_region.width):
        raise ValueError("copy-move regions must have identical shape")
    if (src_region.top, src_region.left) == (dst_region.top, dst_region.left):
        raise ValueError("copy-move source and destination coincide (no-op)")
    block = image[
        :, src_region.top : src_region.top + src_region.height,
        src_region.left : src_region.left + src_region.width,
    ].copy()
    image[
        :, dst_region.top : dst_region.top + dst_region.height,
        dst_region.left : dst_region.left + dst_region.width,
    ] = block
    mask = dst_region.rasterize(h, w).astype(np.float32)[None]
    return Sample(
        image=image, mask=mask, label=1,
        provenance={"op": "copymove", "seed": seed,
                    "src": vars(src_region), "dst": vars(dst_region)},
    )


def gen_inpaint(seed: int, region=None, h: int = 64, w: int = 64,
                image_dir=None, iterations: int = 40) -> Sample:
    """Erase a region by diffusing surrounding pixels inward."""
    rng = np.random.default_rng(seed)
    image = gen_base(seed, h, w, image_dir).copy()
    region = region or random_region(rng, h, w)
    m = region.rasterize(h, w)
    if m.all():
        raise ValueError("inpaint region covers the full image")
    filled = image.copy()
    filled[:, m] = image[:, ~m].mean(axis=1, keepdims=True)
    for _ in range(iterations):
        padded = np.pad(filled, ((0, 0), (1, 1), (1, 1)), mode="edge")
        blurred = sum(
            padded[:, dy : dy + h, dx : dx + w]
            for dy in range(3) for dx in range(3)
        ) / 9.0
        filled[:, m] = blurred[:, m]
    filled = (np.round(np.clip(filled, 0, 1) * 255.0) / 255.0).astype(np.float32)
    return Sample(
        image=filled, mask=m.astype(np.float32)[None], label=1,
        provenance={"op": "inpaint", "seed": seed, "region": type(region).__name__},
    )


def gen_authentic(seed: int, h: int = 64, w: int = 64, image_dir=None) -> Sample:
    image = gen_base(seed, h, w, image_dir)
    return Sample(
        image=image, mask=np.zeros((1, h, w), dtype=np.float32), label=0,
        provenance={"op": "authentic", "seed": seed},
    )


# -- augmentations and distortions ----------------------------------------

@dataclass
class AugmentConfig:
    p_flip: float = 0.5
    p_rotate: float = 0.5
    p_blur: float = 0.3
    blur_kernel: int = 3


def gaussian_blur(image: np.ndarray, kernel: int) -> np.ndarray:
    """Separable Gaussian blur with sigma derived from the kernel size."""
    if kernel < 3 or kernel % 2 == 0:
        raise ValueError(f"blur kernel must be odd and >= 3, got {kernel}")
    sigma = 0.3 * ((kernel - 1) / 2 - 1) + 0.8
    half = kernel // 2
    t = np.arange(-half, half + 1)
    k = np.exp(-(t**2) / (2 * sigma**2))
    k /= k.sum()
    padded = np.pad(image, ((0, 0), (half, half), (0, 0)), mode="reflect")
    out = sum(k[i] * padded[:, i : i + image.shape[1], :] for i in range(kernel))
    padded = np.pad(out, ((0, 0), (0, 0), (half, half)), mode="reflect")
    out = sum(k[i] * padded[:, :, i : i + image.shape[2]] for i in range(kernel))
    return out.astype(image.dtype, copy=False)


def augment(sample: Sample, seed: int, config: AugmentConfig | None = None) -> Sample:
    """Flips, 90-degree rotations (image and mask together), optional blur
    (image only). Rotations are kept at multiples of 90 degrees so the
    mask stays exact."""
    cfg = config or AugmentConfig()
    rng = np.random.default_rng(seed)
    image, mask = sample.image, sample.mask
    if rng.random() < cfg.p_flip:
        image = image[:, :, ::-1]
        mask = mask[:, :, ::-1]
    if rng.random() < cfg.p_rotate:
        turns = int(rng.integers(1, 4))
        image = np.rot90(image, turns, axes=(1, 2))
        mask = np.rot90(mask, turns, axes=(1, 2))
    if rng.random() < cfg.p_blur:
        image = gaussian_blur(np.ascontiguousarray(image), cfg.blur_kernel)
    return Sample(
        image=np.ascontiguousarray(image),
        mask=np.ascontiguousarray(mask),
        label=sample.label,
        provenance=sample.provenance,
    )


@dataclass
class DistortionSpec:
    kind: str  # gaussian_blur | jpeg | gaussian_noise
    parameter: float

    def __post_init__(self):
        if self.kind == "gaussian_blur":
            k = int(self.parameter)
            if k < 3 or k % 2 == 0:
                raise ValueError("blur kernel must be odd and >= 3")
        elif self.kind == "jpeg":
            if not 1 <= int(self.parameter) <= 100:
                raise ValueError("jpeg quality must be in [1, 100]")
        elif self.kind == "gaussian_noise":
            if self.parameter < 0:
                raise ValueError("noise sigma must be >= 0")
        else:
            raise ValueError(f"unknown distortion kind {self.kind!r}")


def distort(image: np.ndarray, spec: DistortionSpec, seed: int = 0) -> np.ndarray:
    if spec.kind == "gaussian_blur":
        return gaussian_blur(image, int(spec.parameter))
    if spec.kind == "jpeg":
        return jpegsim.jpeg_roundtrip(image, int(spec.parameter))
    sigma = spec.parameter
    if sigma == 0:
        return image
    noise = np.random.default_rng(seed).normal(0, sigma, size=image.shape)
    return np.clip(image + noise, 0, 1).astype(image.dtype, copy=False)


# -- dataset building ------------------------------------------------------

@dataclass
class DatasetSpec:
    train: int = 200
    val: int = 50
    test: int = 50
    height: int = 64
    width: int = 64
    seed: int = 0
    class_mix: dict = field(
        default_factory=lambda: {
            "splice": 0.35, "copymove": 0.15, "inpaint": 0.25, "authentic": 0.25,
        }
    )
    image_dir: str | None = None


def _split_kinds(n: int, mix: dict, rng: np.random.Generator) -> list[str]:
    """Exact per-split class counts (largest remainder), shuffled."""
    kinds = [k for k in FORGERY_KINDS if mix.get(k, 0) > 0]
    raw = {k: n * mix[k] for k in kinds}
    counts = {k: int(raw[k]) for k in kinds}
    short = n - sum(counts.values())
    for k in sorted(kinds, key=lambda k: raw[k] - counts[k], reverse=True)[:short]:
        counts[k] += 1
    ordered = [k for k in kinds for _ in range(counts[k])]
    return [ordered[i] for i in rng.permutation(len(ordered))]


def generate_sample(kind: str, sample_seed: int, h: int, w: int,
                    image_dir=None) -> Sample:
    donor_seed = sample_seed + 700_000_019
    if kind == "splice":
        rng = np.random.default_rng(sample_seed)
        donor_q = int(rng.integers(55, 80))
        return gen_splice(sample_seed, donor_seed, host_q=95, donor_q=donor_q,
                          h=h, w=w, image_dir=image_dir)
    if kind == "copymove":
        return gen_copymove(sample_seed, h=h, w=w, image_dir=image_dir)
    if kind == "inpaint":
        return gen_inpaint(sample_seed, h=h, w=w, image_dir=image_dir)
    if kind == "authentic":
        return gen_authentic(sample_seed, h=h, w=w, image_dir=image_dir)
    raise ValueError(f"unknown sample kind {kind!r}")


def dataset_build(spec: DatasetSpec, out_dir) -> dict[str, Path]:
    """Write train/val/test samples and JSONL manifests; returns manifest
    paths keyed by split. Rebuilding with the same spec is byte-identical."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifests = {}
    base = spec.seed * 1_000_000
    offset = 0
    for split, n in (("train", spec.train), ("val", spec.val), ("test", spec.test)):
        split_rng = np.random.default_rng(base + 999_000 + offset)
        kinds = _split_kinds(n, spec.class_mix, split_rng)
        records = []
        for idx, kind in enumerate(kinds):
            g = offset + idx
            sample = generate_sample(kind, base + g, spec.height, spec.width,
                                     spec.image_dir)
            img_path = out / split / f"img_{idx:05d}.png"
            mask_path = out / split / f"msk_{idx:05d}.pgm"
            imaging.save_image(img_path, sample.image)
            imaging.save_mask(mask_path, sample.mask)
            records.append({
                "path": str(img_path.relative_to(out)),
                "mask_path": str(mask_path.relative_to(out)),
                "label": sample.label,
                "provenance": sample.provenance,
            })
        manifest = out / f"{split}.jsonl"
        with open(manifest, "w") as f:
            for rec in records:
                f.write(json.dumps(rec) + "\n")
        manifests[split] = manifest
        offset += n
    return manifests


def load_manifest(manifest_path) -> list[dict]:
    manifest_path = Path(manifest_path)
    with open(manifest_path) as f:
        records = [json.loads(line) for line in f if line.strip()]
    root = manifest_path.parent
    for rec in records:
        rec["path"] = str(root / rec["path"])
        rec["mask_path"] = str(root / rec["mask_path"])
    return records


def load_split(manifest_path):
    """Load all samples of a split into arrays (images, masks, labels)."""
    records = load_manifest(manifest_path)
    images = np.stack([imaging.load_image(r["path"]) for r in records])
    masks = np.stack([imaging.load_mask(r["mask_path"]) for r in records])
    labels = np.array([r["label"] for r in records], dtype=np.float32)
    return images, masks, labels
