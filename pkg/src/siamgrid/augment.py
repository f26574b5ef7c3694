"""Seeded image augmentation kernels and per-branch view policies.

Images are single-channel float32 arrays of shape (H, W) with values in
[0, 1]; every kernel returns a new array in the same range. All sampling
goes through :class:`siamgrid.rng.SeededRng`, so a (image, spec, seed)
triple maps to a bit-identical output on any platform.

Interpolation is bilinear with half-pixel centers, computed in float64
and cast back to float32, which makes full-size crops and constant
images exact fixed points. Blur and the Sobel filter pad by mirroring
the edge pixel (half-sample reflection), under which a normalized
symmetric kernel preserves total image mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError, DimensionError
from .rng import SeededRng

DTYPE = np.float32

KINDS = ("identity", "crop_resize", "rotate", "cutout", "distort", "noise", "blur", "sobel")

# per-kind default parameters for the pairwise sweep pool
DEFAULT_PARAMS: dict[str, dict] = {
    "identity": {},
    "crop_resize": {"scale": (0.2, 1.0), "ratio": (3.0 / 4.0, 4.0 / 3.0), "out_size": None},
    "rotate": {"degrees": 30.0},
    "cutout": {"scale": (0.02, 0.33), "ratio": (0.3, 3.3)},
    "distort": {"strength": 0.5},
    "noise": {"sigma": (0.01, 0.03)},
    "blur": {"kernel_size": 23, "sigma": (0.1, 2.0)},
    "sobel": {},
}

# canonical display names (sweep tables, reports)
KIND_LABELS = {
    "identity": "Identity",
    "crop_resize": "Crop & Resize",
    "rotate": "Rotate",
    "cutout": "Cutout",
    "distort": "Distort",
    "noise": "Noise",
    "blur": "Blur",
    "sobel": "Sobel",
}

_KIND_ALIASES = {
    "crop&resize": "crop_resize",
    "crop & resize": "crop_resize",
    "crop and resize": "crop_resize",
    "cropresize": "crop_resize",
    "crop": "crop_resize",
    "jitter": "distort",  # brightness/contrast jitter
    "colorjitter": "distort",
    "gaussian noise": "noise",
    "gaussian blur": "blur",
    "rotation": "rotate",
    "erase": "cutout",
}


def canonical_kind(name: str) -> str:
    key = name.strip().lower().replace("-", " ")
    key = _KIND_ALIASES.get(key, key.replace(" ", "_"))
    if key not in KINDS:
        raise ContractError(f"unknown augmentation kind {name!r}")
    return key


@dataclass(frozen=True)
class AugmentationSpec:
    """Declarative description of one augmentation kernel and its ranges."""

    kind: str
    params: dict = field(default_factory=dict)

    @staticmethod
    def of(kind: str, **overrides) -> "AugmentationSpec":
        kind = canonical_kind(kind)
        params = dict(DEFAULT_PARAMS[kind])
        for key, value in overrides.items():
            if key not in params:
                raise ContractError(f"augmentation {kind!r} has no parameter {key!r}")
            params[key] = value
        spec = AugmentationSpec(kind, params)
        spec.validate()
        return spec

    def validate(self):
        p = self.params
        if self.kind == "crop_resize":
            lo, hi = p["scale"]
            if not (0.0 < lo <= hi <= 1.0):
                raise ContractError(f"crop scale range {p['scale']} outside (0, 1]")
            rlo, rhi = p["ratio"]
            if not (0.0 < rlo <= rhi):
                raise ContractError(f"crop ratio range {p['ratio']} invalid")
        elif self.kind == "rotate":
            if not (0.0 <= p["degrees"] <= 180.0):
                raise ContractError(f"rotation magnitude {p['degrees']} outside [0, 180]")
        elif self.kind == "cutout":
            lo, hi = p["scale"]
            if not (0.0 < lo <= hi < 1.0):
                raise ContractError(f"cutout scale range {p['scale']} invalid")
        elif self.kind == "distort":
            if not (0.0 <= p["strength"] <= 1.0):
                raise ContractError(f"distort strength {p['strength']} outside [0, 1]")
        elif self.kind == "noise":
            lo, hi = p["sigma"]
            if not (0.0 <= lo <= hi):
                raise ContractError(f"noise sigma range {p['sigma']} invalid")
        elif self.kind == "blur":
            if p["kernel_size"] % 2 != 1:
                raise ContractError(f"blur kernel size {p['kernel_size']} must be odd")

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        out.update({k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()})
        return out

    @staticmethod
    def from_dict(d: dict) -> "AugmentationSpec":
        d = dict(d)
        kind = d.pop("kind")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return AugmentationSpec.of(kind, **d)


SINGLE_BRANCH_COMPOSE = "single_branch_compose"
DUAL_SYMMETRIC = "dual_symmetric"


@dataclass(frozen=True)
class ViewPolicy:
    """Per-branch augmentation pipelines for the two Siamese views."""

    branch1: tuple[AugmentationSpec, ...]
    branch2: tuple[AugmentationSpec, ...]
    mode: str

    def __post_init__(self):
        if self.mode not in (SINGLE_BRANCH_COMPOSE, DUAL_SYMMETRIC):
            raise ContractError(f"unknown view-policy mode {self.mode!r}")
        if self.mode == SINGLE_BRANCH_COMPOSE:
            if len(self.branch1) != 1 or self.branch1[0].kind != "identity":
                raise ContractError(
                    "single_branch_compose requires branch1 to be exactly [identity]"
                )

    @staticmethod
    def single_branch(specs) -> "ViewPolicy":
        return ViewPolicy(
            branch1=(AugmentationSpec.of("identity"),),
            branch2=tuple(specs),
            mode=SINGLE_BRANCH_COMPOSE,
        )

    @staticmethod
    def dual_symmetric(specs) -> "ViewPolicy":
        specs = tuple(specs)
        return ViewPolicy(branch1=specs, branch2=specs, mode=DUAL_SYMMETRIC)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "branch1": [s.to_dict() for s in self.branch1],
            "branch2": [s.to_dict() for s in self.branch2],
        }

    @staticmethod
    def from_dict(d: dict) -> "ViewPolicy":
        return ViewPolicy(
            branch1=tuple(AugmentationSpec.from_dict(s) for s in d["branch1"]),
            branch2=tuple(AugmentationSpec.from_dict(s) for s in d["branch2"]),
            mode=d["mode"],
        )

    def describe(self) -> str:
        b2 = "+".join(KIND_LABELS[s.kind] for s in self.branch2)
        if self.mode == SINGLE_BRANCH_COMPOSE:
            return f"identity|{b2}"
        return f"{b2}|{b2}"


# --------------------------------------------------------------------------
# deterministic cores
# --------------------------------------------------------------------------

def _check_image(img: np.ndarray):
    if img.ndim != 2 or img.size == 0:
        raise DimensionError(f"expected non-empty 2-D image, got shape {img.shape}")


def bilinear_sample(img: np.ndarray, rows: np.ndarray, cols: np.ndarray, fill=None) -> np.ndarray:
    """Sample at fractional (row, col) grids; outside coordinates use ``fill``
    (None clamps to the edge instead)."""
    h, w = img.shape
    src = img.astype(np.float64)
    if fill is None:
        rows = np.clip(rows, 0.0, h - 1.0)
        cols = np.clip(cols, 0.0, w - 1.0)
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0
    r1 = r0 + 1
    c1 = c0 + 1

    if fill is None:
        r0c = np.clip(r0, 0, h - 1)
        r1c = np.clip(r1, 0, h - 1)
        c0c = np.clip(c0, 0, w - 1)
        c1c = np.clip(c1, 0, w - 1)
        out = (
            (1 - fr) * (1 - fc) * src[r0c, c0c]
            + (1 - fr) * fc * src[r0c, c1c]
            + fr * (1 - fc) * src[r1c, c0c]
            + fr * fc * src[r1c, c1c]
        )
    else:
        def gather(ri, ci):
            ok = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
            vals = src[np.clip(ri, 0, h - 1), np.clip(ci, 0, w - 1)]
            return np.where(ok, vals, float(fill))

        out = (
            (1 - fr) * (1 - fc) * gather(r0, c0)
            + (1 - fr) * fc * gather(r0, c1)
            + fr * (1 - fc) * gather(r1, c0)
            + fr * fc * gather(r1, c1)
        )
    return out.astype(DTYPE)


def crop_and_resize(img, top: int, left: int, ch: int, cw: int, out_h: int, out_w: int):
    """Bilinear resize of the [top:top+ch, left:left+cw] window to (out_h, out_w)."""
    rows = top + (np.arange(out_h, dtype=np.float64) + 0.5) * (ch / out_h) - 0.5
    cols = left + (np.arange(out_w, dtype=np.float64) + 0.5) * (cw / out_w) - 0.5
    rows = np.clip(rows, top, top + ch - 1.0)
    cols = np.clip(cols, left, left + cw - 1.0)
    return bilinear_sample(img, rows[:, None], cols[None, :])


def rotate_image(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the image center; positive angles turn counterclockwise
    in the displayed image. Out-of-bounds samples are filled with 0."""
    _check_image(img)
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(degrees)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64) - cy,
                         np.arange(w, dtype=np.float64) - cx, indexing="ij")
    src_x = xx * cos_t - yy * sin_t + cx
    src_y = xx * sin_t + yy * cos_t + cy
    return bilinear_sample(img, src_y, src_x, fill=0.0)


def gaussian_kernel1d(size: int, sigma: float) -> np.ndarray:
    center = (size - 1) / 2.0
    xs = np.arange(size, dtype=np.float64) - center
    k = np.exp(-0.5 * (xs / max(sigma, 1e-9)) ** 2)
    return k / k.sum()


def _correlate1d(img64: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    pad = len(kernel) // 2
    widths = [(0, 0), (0, 0)]
    widths[axis] = (pad, pad)
    padded = np.pad(img64, widths, mode="symmetric")
    windows = np.lib.stride_tricks.sliding_window_view(padded, len(kernel), axis=axis)
    return windows @ kernel


def blur_image(img: np.ndarray, kernel_size: int, sigma: float) -> np.ndarray:
    _check_image(img)
    h, w = img.shape
    if kernel_size > 2 * min(h, w):
        raise DimensionError(
            f"blur kernel {kernel_size} larger than twice the image {h}x{w}"
        )
    k = gaussian_kernel1d(kernel_size, sigma)
    out = _correlate1d(_correlate1d(img.astype(np.float64), k, axis=0), k, axis=1)
    return np.clip(out, 0.0, 1.0).astype(DTYPE)


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_MAX_RESPONSE = 4.0 * math.sqrt(2.0)


def sobel(img: np.ndarray) -> np.ndarray:
    """Gradient magnitude from the 3x3 Sobel pair, scaled into [0, 1]."""
    _check_image(img)
    h, w = img.shape
    if h < 3 or w < 3:
        raise DimensionError(f"sobel requires at least 3x3 input, got {h}x{w}")
    padded = np.pad(img.astype(np.float64), 1, mode="symmetric")
    gx = np.zeros((h, w), dtype=np.float64)
    gy = np.zeros((h, w), dtype=np.float64)
    for di in range(3):
        for dj in range(3):
            window = padded[di : di + h, dj : dj + w]
            gx += _SOBEL_X[di, dj] * window
            gy += _SOBEL_X[dj, di] * window
    mag = np.sqrt(gx * gx + gy * gy) / SOBEL_MAX_RESPONSE
    return np.clip(mag, 0.0, 1.0).astype(DTYPE)


# --------------------------------------------------------------------------
# seeded kernels
# --------------------------------------------------------------------------

def identity(img: np.ndarray, rng: SeededRng | None = None) -> np.ndarray:
    _check_image(img)
    return img


def random_resized_crop(img, scale, ratio, out_size, rng: SeededRng):
    _check_image(img)
    h, w = img.shape
    out = int(out_size) if out_size else max(h, w)
    lo, hi = scale
    rlo, rhi = ratio
    area = float(h * w)
    top = left = None
    for _ in range(10):
        frac = rng.uniform(lo, hi)
        aspect = math.exp(rng.uniform(math.log(rlo), math.log(rhi)))
        target = frac * area
        cw = int(round(math.sqrt(target * aspect)))
        ch = int(round(math.sqrt(target / aspect)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            break
    if top is None:
        # center-crop fallback at the largest square
        side = min(h, w)
        ch = cw = side
        top, left = (h - side) // 2, (w - side) // 2
    return crop_and_resize(img, top, left, ch, cw, out, out)


def random_rotate(img, degrees, rng: SeededRng):
    angle = float(rng.uniform(-degrees, degrees))
    if angle == 0.0:
        return identity(img)
    return rotate_image(img, angle)


def random_cutout(img, scale, ratio, rng: SeededRng):
    _check_image(img)
    h, w = img.shape
    lo, hi = scale
    area = float(h * w)
    for _ in range(10):
        frac = rng.uniform(lo, hi)
        aspect = math.exp(rng.uniform(math.log(ratio[0]), math.log(ratio[1])))
        target = frac * area
        rh = int(round(math.sqrt(target * aspect)))
        rw = int(round(math.sqrt(target / aspect)))
        if not (0 < rh <= h and 0 < rw <= w):
            continue
        if not (lo <= rh * rw / area <= hi):
            continue  # integer rounding pushed the realized area out of range
        top = int(rng.integers(0, h - rh + 1))
        left = int(rng.integers(0, w - rw + 1))
        out = img.copy()
        out[top : top + rh, left : left + rw] = 0.0
        return out
    return img  # no admissible rectangle found; skip


def random_distort(img, strength, rng: SeededRng):
    """Multiplicative brightness and mean-anchored contrast, random order."""
    _check_image(img)
    lo = max(0.0, 1.0 - strength)
    hi = 1.0 + strength
    b = float(rng.uniform(lo, hi))
    c = float(rng.uniform(lo, hi))
    brightness_first = bool(rng.integers(0, 2))
    out = img
    for which in ("b", "c") if brightness_first else ("c", "b"):
        if which == "b" and b != 1.0:
            out = np.clip(out * DTYPE(b), 0.0, 1.0)
        elif which == "c" and c != 1.0:
            mean = DTYPE(out.mean())
            out = np.clip((out - mean) * DTYPE(c) + mean, 0.0, 1.0)
    return out


def random_noise(img, sigma, rng: SeededRng):
    _check_image(img)
    s = float(rng.uniform(sigma[0], sigma[1]))
    noise = rng.normal(0.0, s, size=img.shape).astype(DTYPE) if s > 0 else 0.0
    return np.clip(img + noise, 0.0, 1.0).astype(DTYPE)


def random_blur(img, kernel_size, sigma, rng: SeededRng):
    s = float(rng.uniform(sigma[0], sigma[1]))
    return blur_image(img, kernel_size, s)


_KERNELS = {
    "identity": lambda img, p, rng: identity(img, rng),
    "crop_resize": lambda img, p, rng: random_resized_crop(
        img, p["scale"], p["ratio"], p["out_size"] or img.shape[0], rng
    ),
    "rotate": lambda img, p, rng: random_rotate(img, p["degrees"], rng),
    "cutout": lambda img, p, rng: random_cutout(img, p["scale"], p["ratio"], rng),
    "distort": lambda img, p, rng: random_distort(img, p["strength"], rng),
    "noise": lambda img, p, rng: random_noise(img, p["sigma"], rng),
    "blur": lambda img, p, rng: random_blur(img, p["kernel_size"], p["sigma"], rng),
    "sobel": lambda img, p, rng: sobel(img),
}


def apply_spec(img: np.ndarray, spec: AugmentationSpec, rng: SeededRng) -> np.ndarray:
    return _KERNELS[spec.kind](img, spec.params, rng)


def apply_pipeline(img: np.ndarray, specs, rng: SeededRng) -> np.ndarray:
    """Left-to-right composition; the rng is consumed in spec order, so
    inserting a spec changes only downstream draws."""
    specs = tuple(specs)
    if not specs:
        raise ContractError("apply_pipeline requires at least one spec (identity allowed)")
    for spec in specs:
        img = apply_spec(img, spec, rng)
    return img


def rand_augment(img: np.ndarray, n: int, pool, rng: SeededRng) -> np.ndarray:
    """Apply n distinct kinds from the pool, uniformly sampled, in drawn order."""
    pool = tuple(pool)
    if not 1 <= n <= len(pool):
        raise ContractError(f"rand_augment: n={n} outside [1, {len(pool)}]")
    order = rng.choice_without_replacement(len(pool), n)
    for i in order:
        img = apply_spec(img, pool[i], rng)
    return img


def make_views(img: np.ndarray, policy: ViewPolicy, rng: SeededRng):
    """Two augmented views of one image on independent branch substreams."""
    x1 = apply_pipeline(img, policy.branch1, rng.substream(1))
    x2 = apply_pipeline(img, policy.branch2, rng.substream(2))
    return x1, x2


# --------------------------------------------------------------------------
# presets
# --------------------------------------------------------------------------

def sweep_pool(kinds=KINDS) -> dict[str, AugmentationSpec]:
    """The pairwise-sweep pool with its published hyperparameters."""
    return {k: AugmentationSpec.of(k) for k in kinds}


def pair_policy(kind1: str, kind2: str, **crop_overrides) -> ViewPolicy:
    """Single-branch policy for an ordered pair: branch2 applies kind1 then kind2."""
    specs = []
    for kind in (canonical_kind(kind1), canonical_kind(kind2)):
        if kind == "crop_resize" and crop_overrides:
            specs.append(AugmentationSpec.of(kind, **crop_overrides))
        else:
            specs.append(AugmentationSpec.of(kind))
    return ViewPolicy.single_branch(specs)


def best_pair_policy_dual(scale=(0.3, 0.9)) -> ViewPolicy:
    """Symmetric dual-branch crop+distort policy with the weaker crop range
    favored when both branches are augmented."""
    return ViewPolicy.dual_symmetric(
        (
            AugmentationSpec.of("crop_resize", scale=scale),
            AugmentationSpec.of("distort"),
        )
    )


def randaugment_pool() -> tuple[AugmentationSpec, ...]:
    """All seven non-identity kinds with their default magnitudes."""
    return tuple(AugmentationSpec.of(k) for k in KINDS if k != "identity")
