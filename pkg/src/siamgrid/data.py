"""Dataset ingestion, preprocessing, synthetic generation, and splitting.

The manifest is a CSV with header
``id,path,photometric,window_center,window_width,rescale_slope,rescale_intercept,<label_1>,...``
where label cells are 0, 1, or NA. Columns prefixed ``meta_`` are carried
through as opaque metadata. Images referenced by a manifest are 8- or
16-bit grayscale PNGs holding raw intensities; the windowing metadata maps
them onto [0, 1].

Labels use an int8 encoding: 1 positive, 0 negative, -1 not annotated (NA).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .augment import crop_and_resize
from .autodiff import ContractError
from .rng import SeededRng

NA = -1

REQUIRED_COLUMNS = (
    "id",
    "path",
    "photometric",
    "window_center",
    "window_width",
    "rescale_slope",
    "rescale_intercept",
)

META_PREFIX = "meta_"


class ManifestError(ContractError):
    pass


@dataclass
class ManifestRecord:
    id: str
    path: str
    photometric: str  # MONOCHROME1 | MONOCHROME2
    window_center: float
    window_width: float
    rescale_slope: float
    rescale_intercept: float
    labels: np.ndarray  # int8, entries in {0, 1, NA}
    label_names: tuple[str, ...]
    meta: dict = field(default_factory=dict)


@dataclass
class LabeledImage:
    id: str
    image: np.ndarray  # (H, W) float32 in [0, 1]
    labels: np.ndarray  # int8, entries in {0, 1, NA}
    dataset_tag: str = ""


@dataclass
class DatasetSplit:
    role: str  # train | validation | evaluation
    ids: list[str]
    fraction_tag: float | None = None

    def __len__(self):
        return len(self.ids)


ROLES = ("train", "validation", "evaluation")


def _parse_label_cell(cell: str, row_idx: int, column: str) -> int:
    c = cell.strip().upper()
    if c == "1":
        return 1
    if c == "0":
        return 0
    if c in ("NA", "", "N/A"):
        return NA
    raise ManifestError(f"row {row_idx}: unparsable label cell {cell!r} in column {column!r}")


def load_manifest(path, check_paths: bool = True) -> list[ManifestRecord]:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError("manifest has no header row") from None
        for col in REQUIRED_COLUMNS:
            if col not in header:
                raise ManifestError(f"manifest missing required column {col!r}")
        col_idx = {name: i for i, name in enumerate(header)}
        meta_cols = [c for c in header if c.startswith(META_PREFIX)]
        label_cols = tuple(
            c for c in header if c not in REQUIRED_COLUMNS and not c.startswith(META_PREFIX)
        )
        records = []
        for row_idx, row in enumerate(reader):
            if not row:
                continue
            if len(row) != len(header):
                raise ManifestError(
                    f"row {row_idx}: {len(row)} cells, header has {len(header)}"
                )
            try:
                width = float(row[col_idx["window_width"]])
            except ValueError:
                raise ManifestError(f"row {row_idx}: bad window_width") from None
            if width <= 0:
                raise ManifestError(f"row {row_idx}: window_width must be > 0, got {width}")
            photometric = row[col_idx["photometric"]].strip().upper()
            if photometric not in ("MONOCHROME1", "MONOCHROME2"):
                raise ManifestError(f"row {row_idx}: bad photometric {photometric!r}")
            rec_path = row[col_idx["path"]]
            if check_paths:
                resolved = (path.parent / rec_path).resolve()
                if not resolved.exists():
                    raise ManifestError(f"row {row_idx}: image path does not exist: {resolved}")
            labels = np.array(
                [_parse_label_cell(row[col_idx[c]], row_idx, c) for c in label_cols],
                dtype=np.int8,
            )
            records.append(
                ManifestRecord(
                    id=row[col_idx["id"]],
                    path=rec_path,
                    photometric=photometric,
                    window_center=float(row[col_idx["window_center"]]),
                    window_width=width,
                    rescale_slope=float(row[col_idx["rescale_slope"]]),
                    rescale_intercept=float(row[col_idx["rescale_intercept"]]),
                    labels=labels,
                    label_names=label_cols,
                    meta={c: row[col_idx[c]] for c in meta_cols},
                )
            )
    return records


def save_manifest(records: list[ManifestRecord], path):
    path = Path(path)
    if not records:
        raise ManifestError("cannot save an empty manifest (no label columns known)")
    label_cols = records[0].label_names
    meta_cols = sorted({k for r in records for k in r.meta})
    header = list(REQUIRED_COLUMNS) + list(label_cols) + meta_cols
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in records:
            cells = [
                r.id,
                r.path,
                r.photometric,
                _fmt(r.window_center),
                _fmt(r.window_width),
                _fmt(r.rescale_slope),
                _fmt(r.rescale_intercept),
            ]
            cells += ["NA" if v == NA else str(int(v)) for v in r.labels]
            cells += [r.meta.get(c, "") for c in meta_cols]
            writer.writerow(cells)


def _fmt(x: float) -> str:
    return repr(float(x))


# --------------------------------------------------------------------------
# PNG round-trip and raw preprocessing
# --------------------------------------------------------------------------

def write_png(path, values: np.ndarray, bits: int = 16):
    """Store a [0,1] float image (or a raw integer array) as grayscale PNG."""
    if values.dtype.kind == "f":
        peak = (1 << bits) - 1
        values = np.round(np.clip(values, 0.0, 1.0) * peak).astype(
            np.uint16 if bits == 16 else np.uint8
        )
    if values.dtype == np.uint16:
        img = Image.fromarray(values)  # mode I;16, written as 16-bit grayscale
    else:
        img = Image.fromarray(values.astype(np.uint8), mode="L")
    img.save(path, format="PNG")


def read_png_raw(path) -> np.ndarray:
    """Read a grayscale PNG as its raw integer array."""
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr[..., 0]
    return arr.astype(np.int64)


def preprocess_raw(raw: np.ndarray, meta: ManifestRecord, out_size: int = 224) -> np.ndarray:
    """Raw intensities -> [0,1] image: slope/intercept, windowing, photometric
    inversion, bilinear resize."""
    if meta.window_width <= 0:
        raise ContractError(f"window_width must be positive, got {meta.window_width}")
    v = raw.astype(np.float64) * meta.rescale_slope + meta.rescale_intercept
    lo = meta.window_center - meta.window_width / 2.0
    v = np.clip((v - lo) / meta.window_width, 0.0, 1.0)
    if meta.photometric == "MONOCHROME1":
        v = 1.0 - v
    img = v.astype(np.float32)
    h, w = img.shape
    if (h, w) == (out_size, out_size):
        return img
    return crop_and_resize(img, 0, 0, h, w, out_size, out_size)


def load_labeled_images(
    manifest_path, out_size: int, dataset_tag: str = ""
) -> list[LabeledImage]:
    manifest_path = Path(manifest_path)
    records = load_manifest(manifest_path)
    out = []
    for rec in records:
        raw = read_png_raw(manifest_path.parent / rec.path)
        img = preprocess_raw(raw, rec, out_size=out_size)
        out.append(LabeledImage(id=rec.id, image=img, labels=rec.labels, dataset_tag=dataset_tag))
    return out


# --------------------------------------------------------------------------
# synthetic dataset
# --------------------------------------------------------------------------

MAX_PATTERNS = 8


@dataclass(frozen=True)
class SyntheticConfig:
    n_samples: int
    image_size: int = 64
    k: int = 4
    prevalences: tuple[float, ...] = (0.35, 0.3, 0.3, 0.25)
    seed: int = 0
    difficulty: float = 1.0
    noise_sigma: float = 0.03

    def __post_init__(self):
        if self.k > MAX_PATTERNS:
            raise ContractError(f"at most {MAX_PATTERNS} pattern generators, asked for {self.k}")
        if len(self.prevalences) != self.k:
            raise ContractError("prevalences length must equal k")
        if not all(0.0 < p < 1.0 for p in self.prevalences):
            raise ContractError("prevalences must lie in (0, 1)")
        if not (0.0 < self.difficulty <= 1.0):
            raise ContractError("difficulty must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "image_size": self.image_size,
            "k": self.k,
            "prevalences": list(self.prevalences),
            "seed": self.seed,
            "difficulty": self.difficulty,
            "noise_sigma": self.noise_sigma,
        }

    @staticmethod
    def from_dict(d: dict) -> "SyntheticConfig":
        d = dict(d)
        d["prevalences"] = tuple(d["prevalences"])
        return SyntheticConfig(**d)


def _grid(size):
    return np.mgrid[0:size, 0:size].astype(np.float64) / size


def _gauss_blob(size, cy, cx, sr, amp):
    yy, xx = _grid(size)
    return amp * np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sr * sr)))


def _synth_background(size, rng: SeededRng, noise_sigma: float) -> np.ndarray:
    yy, xx = _grid(size)
    img = 0.12 + 0.05 * yy
    for cx in (0.32, 0.68):
        dcx = cx + rng.uniform(-0.02, 0.02)
        dcy = 0.52 + rng.uniform(-0.02, 0.02)
        d = ((yy - dcy) / 0.30) ** 2 + ((xx - dcx) / 0.155) ** 2
        img = img + 0.32 / (1.0 + np.exp((d - 1.0) * 8.0))
    img = img + rng.normal(0.0, noise_sigma, size=(size, size))
    return img


def _pattern(size, k, rng: SeededRng, contrast: float) -> np.ndarray:
    """One additive visual pattern per label index; positions jitter mildly."""
    yy, xx = _grid(size)
    j = lambda: rng.uniform(-0.04, 0.04)  # noqa: E731
    amp = contrast * (0.85 + 0.3 * rng.uniform())
    if k == 0:  # focal blob, upper left lung field
        return _gauss_blob(size, 0.34 + j(), 0.32 + j(), 0.085, 0.38 * amp)
    if k == 1:  # ring, right lung field
        r = np.sqrt((yy - (0.60 + j())) ** 2 + (xx - (0.66 + j())) ** 2)
        return 0.34 * amp * np.exp(-(((r - 0.16) / 0.035) ** 2))
    if k == 2:  # oriented stripes, central window
        phase = (xx + yy) / 0.085
        window = np.exp(-(((yy - 0.47 - j()) ** 2 + (xx - 0.5 - j()) ** 2) / (2 * 0.18**2)))
        return 0.30 * amp * window * 0.5 * (1 + np.sin(2 * np.pi * phase))
    if k == 3:  # global haze: smooth low-frequency brightening field
        coarse = rng.uniform(0.0, 1.0, size=(4, 4))
        field = crop_and_resize(coarse.astype(np.float32), 0, 0, 4, 4, size, size)
        return 0.28 * amp * field.astype(np.float64)
    if k == 4:  # corner glow
        return _gauss_blob(size, 0.12 + j(), 0.85 + j(), 0.16, 0.30 * amp)
    if k == 5:  # dot cluster, lower left
        out = np.zeros((size, size))
        for _ in range(5):
            out += _gauss_blob(size, 0.72 + rng.uniform(-0.08, 0.08),
                               0.30 + rng.uniform(-0.08, 0.08), 0.025, 0.30 * amp)
        return out
    if k == 6:  # horizontal band, near the diaphragm line
        return 0.26 * amp * np.exp(-(((yy - (0.82 + j())) / 0.04) ** 2))
    if k == 7:  # cross ridges, upper right
        cy, cx = 0.28 + j(), 0.72 + j()
        arm = np.exp(-((yy - cy) / 0.025) ** 2) * np.exp(-((xx - cx) / 0.12) ** 2)
        arm2 = np.exp(-((xx - cx) / 0.025) ** 2) * np.exp(-((yy - cy) / 0.12) ** 2)
        return 0.30 * amp * np.maximum(arm, arm2)
    raise ContractError(f"no pattern generator for label index {k}")


def synth_generate(config: SyntheticConfig) -> list[LabeledImage]:
    """Deterministic lung-field-like images with one visual pattern per label."""
    root = SeededRng(config.seed)
    samples = []
    for i in range(config.n_samples):
        srng = root.substream(i)
        label_rng = srng.substream(0)
        draw = label_rng.uniform(0.0, 1.0, size=config.k)
        labels = (draw < np.asarray(config.prevalences)).astype(np.int8)
        img_rng = srng.substream(1)
        img = _synth_background(config.image_size, img_rng, config.noise_sigma)
        for k in range(config.k):
            pattern_rng = srng.substream(2, k)
            if labels[k]:
                img = img + _pattern(config.image_size, k, pattern_rng, config.difficulty)
        img = np.clip(img, 0.0, 1.0).astype(np.float32)
        samples.append(
            LabeledImage(id=f"synth-{config.seed}-{i:06d}", image=img, labels=labels,
                         dataset_tag="synthetic")
        )
    return samples


SYNTH_LABEL_NAMES = ("blob", "ring", "stripes", "haze", "glow", "dots", "band", "cross")


def synth_label_names(k: int) -> tuple[str, ...]:
    return SYNTH_LABEL_NAMES[:k]


# --------------------------------------------------------------------------
# splitting
# --------------------------------------------------------------------------

def role_split(items, n_train: int, n_val: int, n_eval: int, seed: int) -> dict[str, DatasetSplit]:
    """Disjoint train/validation/evaluation roles over a list of records."""
    ids = [it.id for it in items]
    if n_train + n_val + n_eval > len(ids):
        raise ContractError(
            f"role sizes {n_train}+{n_val}+{n_eval} exceed dataset size {len(ids)}"
        )
    perm = SeededRng(seed).substream(0).permutation(len(ids))
    ordered = [ids[i] for i in perm]
    return {
        "train": DatasetSplit("train", ordered[:n_train]),
        "validation": DatasetSplit("validation", ordered[n_train : n_train + n_val]),
        "evaluation": DatasetSplit(
            "evaluation", ordered[n_train + n_val : n_train + n_val + n_eval]
        ),
    }


DEFAULT_FRACTIONS = (1.0, 10.0, 12.5, 25.0, 50.0, 100.0)


def stratified_split(
    records, fractions=DEFAULT_FRACTIONS, seed: int = 0
) -> dict[float, DatasetSplit]:
    """Nested label-preserving fraction splits of one record list.

    Each smaller fraction is sampled from the next-larger one, so membership
    is exactly nested. Allocation is proportional per label combination with
    largest-remainder rounding, which keeps marginal prevalences close to
    the parent's.
    """
    records = list(records)
    if not records:
        raise ContractError("stratified_split needs a non-empty record list")
    fractions = sorted(set(float(f) for f in fractions), reverse=True)
    if any(not (0.0 < f <= 100.0) for f in fractions):
        raise ContractError(f"fractions must lie in (0, 100], got {fractions}")
    n_total = len(records)
    by_id = {r.id: r for r in records}

    parent_ids = [r.id for r in records]
    rng = SeededRng(seed)
    out: dict[float, DatasetSplit] = {}
    for level, frac in enumerate(fractions):
        target = int(round(n_total * frac / 100.0))
        if target < 1:
            raise ContractError(f"fraction {frac}% of {n_total} records yields < 1 sample")
        if frac == 100.0:
            chosen = list(parent_ids)
        else:
            chosen = _sample_stratified(parent_ids, by_id, target, rng.substream(level))
        out[frac] = DatasetSplit("train", chosen, fraction_tag=frac)
        parent_ids = chosen
    return out


def _sample_stratified(parent_ids, by_id, target: int, rng: SeededRng) -> list[str]:
    groups: dict[tuple, list[str]] = {}
    for pid in parent_ids:
        key = tuple(int(v) for v in by_id[pid].labels)
        groups.setdefault(key, []).append(pid)
    n_parent = len(parent_ids)
    keys = sorted(groups)
    quotas = {}
    remainders = []
    allocated = 0
    for key in keys:
        exact = len(groups[key]) * target / n_parent
        base = int(exact)
        quotas[key] = base
        allocated += base
        remainders.append((exact - base, key))
    remainders.sort(key=lambda t: (-t[0], t[1]))
    for _, key in remainders[: target - allocated]:
        quotas[key] += 1
    chosen = []
    for gi, key in enumerate(keys):
        members = groups[key]
        take = min(quotas[key], len(members))
        perm = rng.substream(gi).permutation(len(members))
        chosen.extend(members[i] for i in perm[:take])
    # rounding clipped by small groups can leave a shortfall; top up from the rest
    if len(chosen) < target:
        chosen_set = set(chosen)
        leftovers = [pid for pid in parent_ids if pid not in chosen_set]
        perm = rng.substream(len(keys)).permutation(len(leftovers))
        chosen.extend(leftovers[i] for i in perm[: target - len(chosen)])
    order = {pid: i for i, pid in enumerate(parent_ids)}
    chosen.sort(key=lambda pid: order[pid])
    return chosen


def balance_undersample(records, majority_label: int | str, target_prevalence: float, seed: int = 0):
    """Drop majority-only records until the majority label's prevalence is at
    or just below target; minority records are never dropped."""
    records = list(records)
    if not records:
        raise ContractError("balance_undersample needs a non-empty record list")
    if isinstance(majority_label, str):
        names = records[0].label_names if hasattr(records[0], "label_names") else None
        if not names or majority_label not in names:
            raise ContractError(f"majority label {majority_label!r} not present")
        maj = names.index(majority_label)
    else:
        maj = int(majority_label)
    n = len(records)
    positives = [i for i, r in enumerate(records) if r.labels[maj] == 1]
    m = len(positives)
    if m == 0:
        raise ContractError("majority label has no positive records")
    current = m / n
    if target_prevalence >= current:
        return records
    droppable = [
        i
        for i in positives
        if all(records[i].labels[j] != 1 for j in range(len(records[i].labels)) if j != maj)
    ]
    need = int(np.ceil((m - target_prevalence * n) / (1.0 - target_prevalence)))
    if need > len(droppable):
        raise ContractError(
            f"cannot reach prevalence {target_prevalence}: only {len(droppable)} "
            f"majority-only records, need to drop {need}"
        )
    perm = SeededRng(seed).substream(0).permutation(len(droppable))
    drop = {droppable[i] for i in perm[:need]}
    return [r for i, r in enumerate(records) if i not in drop]


def batch_iter(split: DatasetSplit, batch_size: int, shuffle_seed: int, epoch: int):
    """Deterministic per-epoch permutation; the final partial batch is emitted."""
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    n = len(split.ids)
    perm = SeededRng(shuffle_seed).substream(epoch).permutation(n)
    for start in range(0, n, batch_size):
        yield [split.ids[i] for i in perm[start : start + batch_size]]


def save_split(split: DatasetSplit, path):
    with open(path, "w") as fh:
        for sid in split.ids:
            fh.write(sid + "\n")


def load_split(path, role: str, fraction_tag: float | None = None) -> DatasetSplit:
    with open(path) as fh:
        ids = [line.strip() for line in fh if line.strip()]
    return DatasetSplit(role, ids, fraction_tag=fraction_tag)
