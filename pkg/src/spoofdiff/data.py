"""Corpus manifests, live-spoof pairing, and the procedural synthetic corpus.

Manifests are JSON lines, one record per line:

    {"path": str, "label": "live"|"spoof", "style_id": int,
     "domain_id": int, "identity_id": int}

Paths are stored relative to the manifest file.  The synthetic generator
renders parameterized face proxies (ellipse/gradient compositions) as live
images and adds one procedural texture overlay per spoofing style (stripe
field, halftone dot field, specular patch field); a per-image draw applies
a mild blur or noise degradation so quality varies across the corpus.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DataError
from .images import save_rgb

logger = logging.getLogger(__name__)

LIVE = "live"
SPOOF = "spoof"

_FIELDS = ("path", "label", "style_id", "domain_id", "identity_id")


@dataclass(frozen=True)
class SampleRecord:
    path: str
    label: str
    style_id: int
    domain_id: int
    identity_id: int

    @property
    def is_live(self) -> bool:
        return self.label == LIVE


@dataclass(frozen=True)
class LiveSpoofPair:
    """Same-identity, same-domain live/spoof records plus a same-style guide."""

    live: SampleRecord
    spoof: SampleRecord
    guide: SampleRecord

    def __post_init__(self) -> None:
        if self.live.identity_id != self.spoof.identity_id:
            raise ValueError("pair crosses identities")
        if self.live.domain_id != self.spoof.domain_id:
            raise ValueError("pair crosses domains")
        if self.guide.style_id != self.spoof.style_id:
            raise ValueError("guide style differs from spoof style")


def save_manifest(records: list[SampleRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "path": r.path,
                        "label": r.label,
                        "style_id": r.style_id,
                        "domain_id": r.domain_id,
                        "identity_id": r.identity_id,
                    }
                )
                + "\n"
            )


def load_manifest(path: str | Path, check_paths: bool = True) -> list[SampleRecord]:
    """Load and validate a JSON-lines manifest; errors carry line numbers."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    base = path.parent
    records: list[SampleRecord] = []
    seen: set[str] = set()
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            missing = [f for f in _FIELDS if f not in raw]
            if missing:
                raise DataError(f"{path}:{lineno}: missing field(s) {', '.join(missing)}")
            if raw["label"] not in (LIVE, SPOOF):
                raise DataError(f"{path}:{lineno}: unknown label {raw['label']!r}")
            try:
                record = SampleRecord(
                    path=str(base / raw["path"]),
                    label=raw["label"],
                    style_id=int(raw["style_id"]),
                    domain_id=int(raw["domain_id"]),
                    identity_id=int(raw["identity_id"]),
                )
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad field value ({exc})") from exc
            if record.path in seen:
                raise DataError(f"{path}:{lineno}: duplicate path {raw['path']!r}")
            seen.add(record.path)
            if check_paths and not Path(record.path).exists():
                raise DataError(f"{path}:{lineno}: file does not exist: {record.path}")
            records.append(record)
    return records


def build_pairs(records: list[SampleRecord], rng: np.random.Generator) -> list[LiveSpoofPair]:
    """One pair per spoof record that has a same-identity, same-domain live partner.

    The guide is drawn uniformly from all spoof records of the spoof's
    style (possibly the spoof itself).  Identities whose live images have
    no spoof counterpart are reported, not paired.
    """
    lives_by_key: dict[tuple[int, int], list[SampleRecord]] = {}
    for r in records:
        if r.is_live:
            lives_by_key.setdefault((r.identity_id, r.domain_id), []).append(r)
    spoofs = [r for r in records if not r.is_live]
    guides_by_style: dict[int, list[SampleRecord]] = {}
    for r in spoofs:
        guides_by_style.setdefault(r.style_id, []).append(r)

    pairs: list[LiveSpoofPair] = []
    paired_identities: set[int] = set()
    for spoof in spoofs:
        candidates = lives_by_key.get((spoof.identity_id, spoof.domain_id))
        if not candidates:
            continue
        live = candidates[int(rng.integers(len(candidates)))] if len(candidates) > 1 else candidates[0]
        pool = guides_by_style[spoof.style_id]
        guide = pool[int(rng.integers(len(pool)))]
        pairs.append(LiveSpoofPair(live=live, spoof=spoof, guide=guide))
        paired_identities.add(spoof.identity_id)

    unpaired = sorted({k[0] for k in lives_by_key} - paired_identities)
    if unpaired:
        logger.warning(
            "%d live identit%s without spoof counterparts: %s",
            len(unpaired),
            "y" if len(unpaired) == 1 else "ies",
            unpaired[:20],
        )
    if not pairs:
        raise DataError("no valid live-spoof pairs in manifest")
    return pairs


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    identities: int
    styles: int
    size: int = 64
    seed: int = 0
    domain_id: int = 0

    @property
    def live_style_id(self) -> int:
        """Live images get the one style id after all spoof styles."""
        return self.styles

    @property
    def num_styles(self) -> int:
        """Dense style-label count including the live style."""
        return self.styles + 1


def _ellipse_mask(
    yy: np.ndarray,
    xx: np.ndarray,
    cy: float,
    cx: float,
    ry: float,
    rx: float,
    rot: float = 0.0,
    softness: float = 0.04,
) -> np.ndarray:
    dy, dx = yy - cy, xx - cx
    if rot:
        c, s = np.cos(rot), np.sin(rot)
        dy, dx = c * dy - s * dx, s * dy + c * dx
    d = (dy / ry) ** 2 + (dx / rx) ** 2
    return 1.0 / (1.0 + np.exp(np.clip((d - 1.0) / softness, -40.0, 40.0)))


def _blend(img: np.ndarray, mask: np.ndarray, color: np.ndarray) -> np.ndarray:
    return img * (1.0 - mask[..., None]) + color[None, None, :] * mask[..., None]


def render_face(rng: np.random.Generator, size: int) -> np.ndarray:
    """Procedural face proxy in [0, 1], (size, size, 3)."""
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)

    top = rng.uniform(0.15, 0.85, size=3)
    bottom = rng.uniform(0.15, 0.85, size=3)
    img = top[None, None, :] * (1.0 - yy[..., None]) + bottom[None, None, :] * yy[..., None]

    skin = rng.uniform(0.45, 0.9, size=3)
    cy, cx = rng.uniform(0.46, 0.58), rng.uniform(0.44, 0.56)
    ry, rx = rng.uniform(0.30, 0.42), rng.uniform(0.22, 0.34)
    rot = rng.uniform(-0.25, 0.25)
    face = _ellipse_mask(yy, xx, cy, cx, ry, rx, rot)
    img = _blend(img, face, skin)

    hair = rng.uniform(0.05, 0.4, size=3)
    img = _blend(
        img,
        _ellipse_mask(yy, xx, cy - ry * 0.95, cx, ry * 0.45, rx * rng.uniform(0.9, 1.25), rot),
        hair,
    )

    eye = rng.uniform(0.0, 0.25, size=3)
    ex = rx * rng.uniform(0.35, 0.55)
    ey = cy - ry * rng.uniform(0.15, 0.3)
    er = rng.uniform(0.025, 0.045)
    for side in (-1.0, 1.0):
        img = _blend(img, _ellipse_mask(yy, xx, ey, cx + side * ex, er, er * rng.uniform(1.2, 1.8)), eye)

    mouth = rng.uniform(0.1, 0.5, size=3) * np.array([1.0, 0.5, 0.5])
    img = _blend(
        img,
        _ellipse_mask(yy, xx, cy + ry * rng.uniform(0.4, 0.55), cx, rng.uniform(0.02, 0.04), rx * rng.uniform(0.35, 0.55)),
        mouth,
    )

    nose = np.clip(skin * rng.uniform(0.75, 0.9), 0.0, 1.0)
    img = _blend(img, _ellipse_mask(yy, xx, cy + ry * 0.08, cx, ry * 0.22, rng.uniform(0.02, 0.04)), nose)

    light = 0.88 + 0.24 * (1.0 - yy) * rng.uniform(0.3, 1.0)
    return np.clip(img * light[..., None], 0.0, 1.0)


def _style_params(style_id: int) -> np.random.Generator:
    return np.random.default_rng((9176, style_id))


def apply_style_overlay(img: np.ndarray, style_id: int) -> np.ndarray:
    """Overlay one procedural attack texture; fully determined by style_id."""
    size = img.shape[0]
    yy, xx = np.mgrid[0:size, 0:size] / size
    rng = _style_params(style_id)
    recipe = style_id % 3
    tint = rng.uniform(0.4, 1.0, size=3)
    if recipe == 0:
        # replay-like moire stripe field
        freq = rng.uniform(7.0, 11.0)
        angle = rng.uniform(0.2, np.pi - 0.2)
        amp = rng.uniform(0.32, 0.42)
        phase = rng.uniform(0.0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy) + phase)
        out = img + amp * wave[..., None] * tint[None, None, :]
    elif recipe == 1:
        # print-like halftone dot field
        pitch = rng.uniform(5.0, 8.0)
        amp = rng.uniform(0.4, 0.52)
        ink = rng.uniform(0.0, 0.2, size=3)
        s = np.sin(2 * np.pi * xx * pitch) * np.sin(2 * np.pi * yy * pitch)
        dots = 1.0 / (1.0 + np.exp(-(s - 0.25) * 14.0))
        out = img * (1.0 - amp * dots[..., None]) + amp * dots[..., None] * ink[None, None, :]
    else:
        # mask-like specular patch field
        blobs = np.zeros((size, size))
        k = int(rng.integers(5, 9))
        centers = rng.uniform(0.08, 0.92, size=(k, 2))
        widths = rng.uniform(0.05, 0.1, size=k)
        gains = rng.uniform(0.7, 1.0, size=k)
        for (by, bx), wdt, gain in zip(centers, widths, gains):
            blobs += gain * np.exp(-(((yy - by) ** 2 + (xx - bx) ** 2) / (2 * wdt**2)))
        blobs = np.clip(blobs, 0.0, 1.0)
        amp = rng.uniform(0.38, 0.48)
        flat = 0.75 * img + 0.25 * img.mean(axis=(0, 1), keepdims=True)
        out = flat + amp * blobs[..., None] * (1.0 - flat) * (0.5 + 0.5 * tint[None, None, :])
    return np.clip(out, 0.0, 1.0)


def apply_degradation(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Leave the image alone, blur it, or add sensor-like noise (1/3 each)."""
    u = rng.random()
    if u < 1.0 / 3.0:
        return img
    if u < 2.0 / 3.0:
        sigma = rng.uniform(0.6, 1.2)
        return np.clip(
            np.stack([gaussian_filter(img[..., c], sigma) for c in range(3)], axis=-1),
            0.0,
            1.0,
        )
    noise_sigma = rng.uniform(0.02, 0.06)
    return np.clip(img + rng.normal(0.0, noise_sigma, size=img.shape), 0.0, 1.0)


def _to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def synth_corpus(config: SynthConfig, out_dir: str | Path) -> Path:
    """Render the corpus into out_dir/images and write out_dir/manifest.jsonl."""
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)

    rel_records: list[dict] = []
    for ident in range(config.identities):
        face = render_face(np.random.default_rng((config.seed, ident, 0)), config.size)

        live = apply_degradation(face, np.random.default_rng((config.seed, ident, 1)))
        name = f"id{ident:04d}_live.png"
        save_rgb(image_dir / name, _to_uint8(live))
        rel_records.append(
            {
                "path": f"images/{name}",
                "label": LIVE,
                "style_id": config.live_style_id,
                "domain_id": config.domain_id,
                "identity_id": ident,
            }
        )

        for style in range(config.styles):
            spoof = apply_style_overlay(face, style)
            spoof = apply_degradation(spoof, np.random.default_rng((config.seed, ident, 2, style)))
            name = f"id{ident:04d}_style{style}.png"
            save_rgb(image_dir / name, _to_uint8(spoof))
            rel_records.append(
                {
                    "path": f"images/{name}",
                    "label": SPOOF,
                    "style_id": style,
                    "domain_id": config.domain_id,
                    "identity_id": ident,
                }
            )

    manifest = out_dir / "manifest.jsonl"
    with manifest.open("w") as fh:
        for raw in rel_records:
            fh.write(json.dumps(raw) + "\n")
    logger.info(
        "synthetic corpus: %d identities x %d styles -> %d images at %s",
        config.identities,
        config.styles,
        len(rel_records),
        out_dir,
    )
    return manifest
