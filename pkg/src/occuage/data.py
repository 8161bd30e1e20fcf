"""Dataset catalog, pixel normalization, and the procedural texture corpus.

Real photographs are replaced at desk scale by a procedural stand-in: every
"person" is a smooth radial face blob with seeded identity jitter, and every
occupation stamps the aged variant with an additive oriented sinusoid plus a
base-tone shift. The sinusoid's (frequency, orientation) pair is unique per
occupation, so condition fidelity is machine-checkable from the image
spectrum alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .autodiff import Tensor
from .errors import DomainError, FormatError
from .losses import StepBatch

AGE_GROUPS = ("middle", "old")
ROLES = ("young", "occupational")
YOUNG_DIR = "young"


# ---------------------------------------------------------------------------
# Pixel normalization
# ---------------------------------------------------------------------------


def normalize_image(raw: np.ndarray) -> Tensor:
    """8-bit HWC RGB -> (1, 3, H, W) float32 in [-1, 1] via v/127.5 - 1."""
    arr = np.asarray(raw)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise FormatError(f"expected an HxWx3 RGB array, got shape {arr.shape}")
    chw = arr.astype(np.float32).transpose(2, 0, 1) / np.float32(127.5) - np.float32(1.0)
    return Tensor(chw[None])


def denormalize_image(t: Tensor | np.ndarray) -> np.ndarray:
    """(N=1, 3, H, W) or (3, H, W) in [-1, 1] -> 8-bit HWC RGB, clamped."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise FormatError(f"expected a single image, got batch of {arr.shape[0]}")
        arr = arr[0]
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise FormatError(f"expected (3, H, W) image data, got shape {arr.shape}")
    clipped = np.clip(arr, -1.0, 1.0)
    bytes_ = np.rint((clipped + np.float32(1.0)) * np.float32(127.5))
    return np.clip(bytes_, 0, 255).astype(np.uint8).transpose(1, 2, 0)


def load_png(path: Path | str) -> Tensor:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"image file not found: {path}")
    with Image.open(path) as img:
        rgb = np.asarray(img.convert("RGB"))
    return normalize_image(rgb)


def save_png(image: Tensor | np.ndarray, path: Path | str) -> None:
    arr = image if isinstance(image, np.ndarray) and image.dtype == np.uint8 else denormalize_image(image)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    path: str
    role: str
    occupation: str | None
    age_group: str


@dataclass
class Manifest:
    """Dataset catalog: occupation table (order defines indices) plus entries."""

    occupations: list[str]
    entries: list[ManifestEntry]

    @property
    def condition_count(self) -> int:
        return len(self.occupations)

    def occupation_index(self, name: str) -> int:
        return self.occupations.index(name) + 1


def load_manifest(path: Path | str) -> Manifest:
    """Parse the line-based manifest format.

    Two record kinds, one per line, ``#`` comments allowed::

        occupation <name>
        sample path=<rel> role=<young|occupational> [occupation=<name>] age=<middle|old>

    Occupation lines must precede any sample that references them; their
    order defines the 1-based condition indices.
    """
    path = Path(path)
    if not path.exists():
        raise FormatError(f"manifest file not found: {path}")
    occupations: list[str] = []
    entries: list[ManifestEntry] = []
    for lineno, rawline in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = rawline.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        kind = tokens[0]
        if kind == "occupation":
            if len(tokens) != 2:
                raise FormatError(f"{path} line {lineno}: expected 'occupation <name>'")
            if tokens[1] in occupations:
                raise FormatError(f"{path} line {lineno}: duplicate occupation '{tokens[1]}'")
            occupations.append(tokens[1])
            continue
        if kind != "sample":
            raise FormatError(f"{path} line {lineno}: unknown record kind '{kind}'")
        fields = {}
        for token in tokens[1:]:
            if "=" not in token:
                raise FormatError(f"{path} line {lineno}: malformed field '{token}'")
            key, value = token.split("=", 1)
            fields[key] = value
        missing = {"path", "role", "age"} - fields.keys()
        if missing:
            raise FormatError(f"{path} line {lineno}: missing fields {sorted(missing)}")
        role = fields["role"]
        if role not in ROLES:
            raise FormatError(f"{path} line {lineno}: unknown role '{role}'")
        age = fields["age"]
        if age not in AGE_GROUPS:
            raise FormatError(f"{path} line {lineno}: unknown age group '{age}'")
        occupation = fields.get("occupation")
        if role == "occupational":
            if occupation is None:
                raise FormatError(f"{path} line {lineno}: occupational sample needs occupation=")
            if occupation not in occupations:
                raise FormatError(
                    f"{path} line {lineno}: occupation '{occupation}' not declared in the table"
                )
        elif occupation is not None:
            raise FormatError(f"{path} line {lineno}: young samples carry no occupation")
        entries.append(ManifestEntry(fields["path"], role, occupation, age))
    return Manifest(occupations, entries)


def write_manifest(manifest: Manifest, path: Path | str) -> None:
    lines = [f"occupation {name}" for name in manifest.occupations]
    for e in manifest.entries:
        occ = f" occupation={e.occupation}" if e.occupation else ""
        lines.append(f"sample path={e.path} role={e.role}{occ} age={e.age_group}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def discover_manifest(root: Path | str) -> Manifest:
    """Build a manifest from a ``<root>/<occupation>/<age-group>/*.png`` tree.

    The directory named ``young`` holds the unconditioned input pool;
    the remaining occupation directories are indexed in sorted order.
    """
    root = Path(root)
    if not root.is_dir():
        raise FormatError(f"dataset root not found: {root}")
    dirs = sorted(d.name for d in root.iterdir() if d.is_dir())
    occupations = [d for d in dirs if d != YOUNG_DIR]
    entries: list[ManifestEntry] = []
    for name in dirs:
        role = "young" if name == YOUNG_DIR else "occupational"
        occupation = None if role == "young" else name
        for age in AGE_GROUPS:
            age_dir = root / name / age
            if not age_dir.is_dir():
                continue
            for png in sorted(age_dir.glob("*.png")):
                entries.append(
                    ManifestEntry(str(png.relative_to(root)), role, occupation, age)
                )
    return Manifest(occupations, entries)


# ---------------------------------------------------------------------------
# Synthetic samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthProfile:
    """Texture recipe of one synthetic occupation."""

    occupation: int
    frequency: float        # grating cycles per image width
    orientation: float      # wave direction, degrees
    amplitude: float = 0.45
    tone_shift: float = 0.0


# (frequency, orientation, tone) table; pairwise-distinct (freq, orient).
_PROFILE_TABLE = (
    (6.0, 0.0, -0.12),
    (12.0, 90.0, 0.12),
    (8.0 * math.sqrt(2.0), 45.0, 0.0),
    (18.0, 0.0, 0.06),
    (24.0, 90.0, -0.06),
)


def default_profiles(count: int, amplitude: float = 0.45) -> list[SynthProfile]:
    if not 1 <= count <= len(_PROFILE_TABLE):
        raise DomainError(f"synthetic profiles available for 1..{len(_PROFILE_TABLE)} occupations")
    return [
        SynthProfile(p + 1, freq, orient, amplitude, tone)
        for p, (freq, orient, tone) in enumerate(_PROFILE_TABLE[:count])
    ]


def wave_vector(profile: SynthProfile) -> tuple[float, float]:
    """Grating wave vector (cycles down, cycles right) per image size."""
    theta = math.radians(profile.orientation)
    return profile.frequency * math.sin(theta), profile.frequency * math.cos(theta)


# Per-image texture clutter: random-phase sinusoids spread over the band the
# signature gratings live in. Every face (young and aged) carries its own
# clutter field, so local band energy alone cannot identify an occupation;
# only the phase-coherent signature grating at an exact integer bin does.
CLUTTER_WAVES = 6
CLUTTER_BAND = (5.0, 26.0)


def _clutter_field(rng, size: int, level: float) -> np.ndarray:
    if level <= 0:
        return np.zeros((size, size), dtype=np.float32)
    coords = np.arange(size, dtype=np.float32) / size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    lo, hi = CLUTTER_BAND
    hi = min(hi, size / 2 - 2)
    weights = rng.uniform(0.5, 1.5, CLUTTER_WAVES)
    weights = level * weights / weights.sum()
    field = np.zeros((size, size), dtype=np.float32)
    for amp in weights:
        freq = rng.uniform(lo, hi)
        theta = rng.uniform(0.0, np.pi)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        kx, ky = freq * np.cos(theta), freq * np.sin(theta)
        field += np.float32(amp) * np.sin(
            2.0 * np.pi * (kx * xx + ky * yy) + phase
        ).astype(np.float32)
    return field


def _young_base(seed: int, size: int, clutter: float) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([0x0FACE, seed, size]))
    cx = 0.5 + 0.06 * float(rng.uniform(-1, 1))
    cy = 0.5 + 0.06 * float(rng.uniform(-1, 1))
    radius = 0.32 + 0.05 * float(rng.uniform(-1, 1))
    coords = (np.arange(size, dtype=np.float32) + 0.5) / size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    r = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
    blob = 0.30 * np.tanh((radius - r) * 9.0)
    tint = np.array([0.03, 0.0, -0.03], dtype=np.float32)[:, None, None]
    noise = 0.02 * rng.standard_normal((3, size, size))
    texture = _clutter_field(rng, size, clutter)
    return (blob[None] + tint + noise + texture[None]).astype(np.float32)


def synth_image(
    profile: SynthProfile, aged: bool, seed: int, size: int, clutter: float = 0.2
) -> np.ndarray:
    """(3, size, size) float32 image; aged adds the occupation grating."""
    if size < 16 or size & (size - 1):
        raise DomainError(f"synthetic size must be a power of two >= 16, got {size}")
    img = _young_base(seed, size, clutter)
    if aged:
        ky, kx = wave_vector(profile)
        coords = np.arange(size, dtype=np.float32) / size
        yy, xx = np.meshgrid(coords, coords, indexing="ij")
        grating = np.sin(2.0 * np.pi * (kx * xx + ky * yy)).astype(np.float32)
        img = img + profile.amplitude * grating[None] + np.float32(profile.tone_shift)
    return np.clip(img, -0.999, 0.999).astype(np.float32)


@dataclass
class Sample:
    image: Tensor
    role: str
    occupation: int | None
    age_group: str
    source_path: str = ""


def synth_sample(
    profile: SynthProfile,
    aged: bool,
    seed: int,
    size: int,
    age_group: str = "old",
    clutter: float = 0.2,
) -> Sample:
    img = synth_image(profile, aged, seed, size, clutter)
    return Sample(
        image=Tensor(img[None]),
        role="occupational" if aged else "young",
        occupation=profile.occupation if aged else None,
        age_group=age_group,
        source_path=f"synth:{profile.occupation if aged else 0}:{seed}",
    )


# ---------------------------------------------------------------------------
# Pools and batching
# ---------------------------------------------------------------------------


@dataclass
class DatasetPools:
    """In-memory young pool plus per-occupation real aged pools."""

    young: list[np.ndarray]
    real: dict[int, list[np.ndarray]]
    eval_young: list[np.ndarray] = field(default_factory=list)
    occupation_names: list[str] = field(default_factory=list)

    @property
    def occupations(self) -> list[int]:
        return sorted(self.real)

    def validate(self) -> "DatasetPools":
        if not self.young:
            raise DomainError("young sample pool is empty")
        for p, pool in self.real.items():
            if not pool:
                raise DomainError(f"real sample pool for occupation {p} is empty")
        return self


def synth_pools(
    profiles: list[SynthProfile],
    young_count: int,
    aged_per_occupation: int,
    eval_count: int,
    size: int,
    seed: int,
    age_group: str = "old",
    clutter: float = 0.2,
) -> DatasetPools:
    """Deterministic in-memory corpus; seeds partition by role and index."""
    young = [
        synth_image(profiles[0], False, seed * 1_000_003 + i, size, clutter)
        for i in range(young_count)
    ]
    eval_young = [
        synth_image(profiles[0], False, seed * 1_000_003 + 500_000 + i, size, clutter)
        for i in range(eval_count)
    ]
    real = {
        prof.occupation: [
            synth_image(
                prof, True, seed * 1_000_003 + 100_000 * prof.occupation + i, size, clutter
            )
            for i in range(aged_per_occupation)
        ]
        for prof in profiles
    }
    names = [f"texture{p.occupation}" for p in profiles]
    return DatasetPools(young, real, eval_young, names).validate()


def manifest_pools(
    manifest: Manifest, root: Path | str, age_group: str, require_real: bool = True
) -> DatasetPools:
    """Load the manifest's samples for one target age group.

    ``require_real=False`` admits young-only catalogs (evaluation inputs);
    training always needs every occupation pool populated.
    """
    root = Path(root)
    young: list[np.ndarray] = []
    real: dict[int, list[np.ndarray]] = {
        idx + 1: [] for idx in range(manifest.condition_count)
    }
    for entry in manifest.entries:
        if entry.age_group != age_group:
            continue
        image = load_png(root / entry.path).data[0]
        if entry.role == "young":
            young.append(image)
        else:
            real[manifest.occupation_index(entry.occupation)].append(image)
    pools = DatasetPools(young, real, [], list(manifest.occupations))
    if not require_real:
        pools.real = {p: pool for p, pool in real.items() if pool}
        if not pools.young:
            raise DomainError("young sample pool is empty")
        return pools
    return pools.validate()


class BatchStream:
    """Seeded, resumable stream of StepBatch objects.

    One epoch visits every young sample exactly once in a per-epoch shuffled
    order; each step draws one real sample per occupation (with replacement)
    from per-step derived RNG, so the batch at (epoch, index) is a pure
    function of the seed.
    """

    def __init__(self, pools: DatasetPools, batch_size: int, seed: int):
        if batch_size < 1:
            raise DomainError(f"batch size must be >= 1, got {batch_size}")
        pools.validate()
        if len(pools.real) < 2:
            raise DomainError("training needs at least two occupations")
        self.pools = pools
        self.batch_size = batch_size
        self.seed = seed

    @property
    def steps_per_epoch(self) -> int:
        return (len(self.pools.young) + self.batch_size - 1) // self.batch_size

    def epoch_order(self, epoch: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, epoch, 0xB]))
        return rng.permutation(len(self.pools.young))

    def batch_at(self, epoch: int, index: int) -> StepBatch:
        order = self.epoch_order(epoch)
        lo = index * self.batch_size
        chosen = order[lo : lo + self.batch_size]
        if chosen.size == 0:
            raise DomainError(f"step index {index} outside epoch of {self.steps_per_epoch}")
        young = np.stack([self.pools.young[i] for i in chosen])
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, epoch, index, 0xD]))
        real = {}
        for p in self.pools.occupations:
            pool = self.pools.real[p]
            picks = rng.integers(0, len(pool), size=len(chosen))
            real[p] = Tensor(np.stack([pool[i] for i in picks]))
        return StepBatch(young=Tensor(young), real=real)

    def wrong_occupation_for(self, epoch: int, index: int) -> dict[int, int]:
        """Per-step uniform draw of one wrong occupation per condition."""
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, epoch, index, 0x9]))
        occupations = self.pools.occupations
        out = {}
        for p in occupations:
            others = [q for q in occupations if q != p]
            out[p] = others[int(rng.integers(0, len(others)))]
        return out

    def epoch(self, epoch: int):
        for index in range(self.steps_per_epoch):
            yield self.batch_at(epoch, index)
