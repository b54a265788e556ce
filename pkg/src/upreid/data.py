"""Synthetic pedestrian-like images and on-disk image directories.

The generator draws each identity a persistent appearance (hair, skin, top,
trousers and shoe colours, top pattern, build) and renders one image per
draw with small vertical jitter, build jitter, lighting change and background
noise. Only the left half is rendered; the right half is its mirror, so with
``symmetry_noise=0`` every image is exactly left-right symmetric. Positive
``symmetry_noise`` blends an independent noise field into the right half.
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".ppm"}


@dataclass(frozen=True)
class SyntheticSpec:
    num_identities: int = 20
    images_per_identity: int = 10
    image_size: tuple[int, int] = (64, 32)
    symmetry_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_identities < 1 or self.images_per_identity < 1:
            raise ValueError("identity and per-identity counts must be >= 1")
        if not 0.0 <= self.symmetry_noise <= 1.0:
            raise ValueError(f"symmetry_noise must be in [0, 1], got {self.symmetry_noise}")
        h, w = self.image_size
        if h < 8 or w < 8:
            raise ValueError(f"image_size {self.image_size} is smaller than 8x8")


@dataclass
class ImageSample:
    pixels: np.ndarray
    identity: int | str | None
    source: str


@dataclass
class Dataset:
    samples: list[ImageSample]
    skipped: int = 0
    # filename -> "query" | "gallery" for held-out evaluation images
    split: dict[str, str] = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, idx):
        return self.samples[idx]

    def __iter__(self):
        return iter(self.samples)

    @property
    def identities(self) -> list:
        return [s.identity for s in self.samples]

    def subset(self, indices) -> "Dataset":
        return Dataset([self.samples[i] for i in indices])


# ---------------------------------------------------------------- synthetic

def _appearance(rng: np.random.Generator) -> dict:
    skin = np.array([0.95, 0.8, 0.65]) * rng.uniform(0.55, 1.0)
    return {
        "hair": rng.uniform(0.0, 0.6, 3),
        "skin": skin,
        "top": rng.uniform(0.0, 1.0, 3),
        "top2": rng.uniform(0.0, 1.0, 3),
        "stripes": int(rng.integers(0, 3)),  # 0: plain, else stripe period choice
        "bottom": rng.uniform(0.0, 1.0, 3),
        "shoes": rng.uniform(0.0, 0.4, 3),
        "background": rng.uniform(0.3, 0.7, 3),
        "torso_half": rng.uniform(0.22, 0.40),
        "waist": rng.uniform(0.50, 0.60),
        "leg_gap": rng.uniform(0.02, 0.06),
    }


def _render_left_half(app: dict, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    half = (w + 1) // 2
    rows = (np.arange(h) + 0.5) / h
    # distance of each left-half column centre from the vertical axis, in widths
    cols = (w / 2 - (np.arange(half) + 0.5)) / w
    shift = rng.integers(-2, 3) / h
    build = rng.uniform(0.9, 1.1)
    light = rng.uniform(0.85, 1.1)

    img = np.empty((h, half, 3))
    img[:] = app["background"]
    img += rng.normal(0.0, 0.04, img.shape)

    y = rows[:, None] - shift
    x = cols[None, :]
    torso_half = app["torso_half"] * build
    waist = app["waist"]

    hair = (y >= 0.03) & (y < 0.09) & (x < 0.13)
    head = (y >= 0.09) & (y < 0.20) & (x < 0.12)
    torso = (y >= 0.20) & (y < waist) & (x < torso_half)
    legs = (y >= waist) & (y < 0.92) & (x >= app["leg_gap"]) & (x < 0.6 * torso_half + 0.05)
    shoes = (y >= 0.92) & (y < 0.97) & (x >= app["leg_gap"]) & (x < 0.6 * torso_half + 0.07)

    img[hair] = app["hair"]
    img[head] = app["skin"]
    top = np.broadcast_to(app["top"], img.shape).copy()
    if app["stripes"]:
        period = 0.06 * app["stripes"]
        band = (np.floor((y - 0.20) / period) % 2 == 1)
        band = np.broadcast_to(band, (h, half))
        top[band] = app["top2"]
    img[torso] = top[torso]
    img[legs] = app["bottom"]
    img[shoes] = app["shoes"]
    return np.clip(img * light, 0.0, 1.0)


def render_identity_image(app: dict, size: tuple[int, int], symmetry_noise: float,
                          rng: np.random.Generator) -> np.ndarray:
    h, w = size
    left = _render_left_half(app, h, w, rng)
    right = left[:, ::-1] if w % 2 == 0 else left[:, -2::-1]
    img = np.concatenate([left, right], axis=1)
    if symmetry_noise > 0:
        noise = rng.uniform(0.0, 1.0, (h, w - left.shape[1], 3))
        img[:, left.shape[1]:] = (1 - symmetry_noise) * img[:, left.shape[1]:] + symmetry_noise * noise
    return img.astype(np.float32)


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """``num_identities * images_per_identity`` samples, grouped by identity."""
    root = np.random.SeedSequence(spec.seed)
    app_seq, img_seq = root.spawn(2)
    app_rngs = [np.random.default_rng(s) for s in app_seq.spawn(spec.num_identities)]
    img_rngs = [np.random.default_rng(s) for s in img_seq.spawn(spec.num_identities)]
    samples = []
    for ident in range(spec.num_identities):
        app = _appearance(app_rngs[ident])
        for j in range(spec.images_per_identity):
            pixels = render_identity_image(app, spec.image_size, spec.symmetry_noise, img_rngs[ident])
            samples.append(ImageSample(pixels, ident, f"synthetic:{spec.seed}:{ident}:{j}"))
    return Dataset(samples)


def split_holdout(dataset: Dataset, holdout: int) -> tuple[Dataset, Dataset]:
    """Per identity, the last ``holdout`` images go to the evaluation set."""
    by_id: dict = {}
    for idx, s in enumerate(dataset.samples):
        by_id.setdefault(s.identity, []).append(idx)
    train, held = [], []
    for idxs in by_id.values():
        cut = len(idxs) - holdout
        if cut < 1 or holdout < 1:
            raise ValueError(f"cannot hold out {holdout} of {len(idxs)} images per identity")
        train += idxs[:cut]
        held += idxs[cut:]
    return dataset.subset(sorted(train)), dataset.subset(sorted(held))


def query_gallery(dataset: Dataset) -> tuple[list[int], list[int]]:
    """First image of each identity is a query; the rest form the gallery."""
    seen, queries, gallery = set(), [], []
    for idx, s in enumerate(dataset.samples):
        if s.identity in seen:
            gallery.append(idx)
        else:
            seen.add(s.identity)
            queries.append(idx)
    return queries, gallery


# ---------------------------------------------------------------- disk I/O

def save_image(path, pixels: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def _read_csv_map(path: Path) -> dict[str, str]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows and rows[0][:2] in (["filename", "identity"], ["filename", "role"]):
        rows = rows[1:]
    return {r[0]: r[1] for r in rows if len(r) >= 2}


def _load_files(files, labels_for) -> tuple[list[ImageSample], int]:
    samples, skipped = [], 0
    for f in files:
        try:
            pixels = read_image(f)
        except (OSError, UnidentifiedImageError, ValueError) as exc:
            log.warning("skipping unreadable image %s: %s", f, exc)
            skipped += 1
            continue
        samples.append(ImageSample(pixels, labels_for(f), str(f)))
    return samples, skipped


def load_image_dir(path, layout: str = "flat") -> Dataset:
    """Load PNG/PPM images.

    ``flat``: every image directly in ``path``; unlabeled unless a
    ``labels.csv`` (``filename,identity``) sits next to them. A ``split.csv``
    (``filename,role``) is picked up as well.
    ``per-identity``: one subfolder per identity, labelled by folder name.
    """
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"data directory not found: {root}")
    if layout == "flat":
        files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        labels = _read_csv_map(root / "labels.csv") if (root / "labels.csv").exists() else {}
        split = _read_csv_map(root / "split.csv") if (root / "split.csv").exists() else {}

        def labels_for(f):
            ident = labels.get(f.name)
            return int(ident) if ident is not None and ident.lstrip("-").isdigit() else ident

        samples, skipped = _load_files(files, labels_for)
    elif layout in ("per-identity", "subfolders"):
        files = sorted(p for d in sorted(root.iterdir()) if d.is_dir()
                       for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        split = {}
        samples, skipped = _load_files(files, lambda f: f.parent.name)
    else:
        raise ValueError(f"unknown layout {layout!r}")
    if not samples:
        raise FileNotFoundError(f"no readable images in {root} ({skipped} skipped)")
    return Dataset(samples, skipped=skipped, split=split)


def write_dataset(dataset: Dataset, out_dir, fmt: str = "png", holdout: int = 0) -> Path:
    """Write images plus ``labels.csv``; with ``holdout`` also a ``split.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    counts: dict = {}
    for s in dataset.samples:
        j = counts.get(s.identity, 0)
        counts[s.identity] = j + 1
        name = f"id{s.identity:04d}_{j:03d}.{fmt}" if isinstance(s.identity, int) else f"{s.identity}_{j:03d}.{fmt}"
        save_image(out / name, s.pixels)
        names.append(name)
    with open(out / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["filename", "identity"])
        for name, s in zip(names, dataset.samples):
            w.writerow([name, s.identity])
    if holdout:
        _, held = split_holdout(Dataset(list(dataset.samples)), holdout)
        held_src = {s.source for s in held}
        rows, seen = [], set()
        for name, s in zip(names, dataset.samples):
            if s.source in held_src:
                rows.append([name, "gallery" if s.identity in seen else "query"])
                seen.add(s.identity)
        with open(out / "split.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["filename", "role"])
            w.writerows(rows)
    return out
