"""Vibration signal ingest, segmentation, normalisation, surrogates and scenario splits."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

UNDAMAGED, DAMAGED = 0, 1


class IngestionError(ValueError):
    pass


class AllocationError(ValueError):
    pass


class DegenerateRangeError(ValueError):
    pass


@dataclass
class RawSignal:
    samples: np.ndarray
    sample_rate_hz: float = 1024.0
    condition: int = UNDAMAGED
    joint_id: int = 1
    source: str = "real"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).ravel()
        if self.samples.size == 0:
            raise IngestionError("signal is empty")
        bad = np.flatnonzero(~np.isfinite(self.samples))
        if bad.size:
            raise IngestionError(f"non-finite sample at offset {bad[0]}")
        if self.condition not in (UNDAMAGED, DAMAGED):
            raise ValueError(f"condition must be 0 or 1, got {self.condition}")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        if self.source not in ("real", "fake"):
            raise ValueError(f"source must be 'real' or 'fake', got {self.source!r}")

    def __len__(self) -> int:
        return self.samples.size


@dataclass
class Segment:
    values: np.ndarray
    condition: int = UNDAMAGED
    joint_id: int = 1
    source: str = "real"
    segment_index: int = 0

    @property
    def key(self) -> tuple:
        return (self.source, self.condition, self.joint_id, self.segment_index)

    def __len__(self) -> int:
        return self.values.size


def stack(segments: Sequence[Segment]) -> np.ndarray:
    """Segments as a [N, 1, L] array."""
    return np.stack([s.values for s in segments])[:, None, :]


# --------------------------------------------------------------------------
# ingest

def load_metadata(path) -> dict:
    with open(path) as fh:
        meta = yaml.safe_load(fh) or {}
    return meta


def load_signal(path, fmt: str | None = None, metadata: dict | None = None,
                seg_len: int = 1) -> RawSignal:
    """Read a ``.f64`` (little-endian float64, no header) or ``.csv`` signal.

    ``metadata`` defaults to a ``<path>.yaml`` sidecar when one exists.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: no such file")
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "f64le-binary"
    if metadata is None:
        sidecar = path.with_suffix(path.suffix + ".yaml")
        metadata = load_metadata(sidecar) if sidecar.exists() else {}

    if fmt == "csv":
        values = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                text = line.strip()
                if not text:
                    continue
                try:
                    values.append(float(text.split(",")[0]))
                except ValueError:
                    raise IngestionError(f"{path}: cannot parse line {lineno}: {text[:40]!r}") from None
        samples = np.asarray(values, dtype=np.float64)
    elif fmt in ("f64", "f64le-binary", "binary"):
        raw = path.read_bytes()
        if len(raw) % 8:
            raise IngestionError(f"{path}: size {len(raw)} is not a multiple of 8 bytes "
                                 f"(trailing bytes at offset {len(raw) - len(raw) % 8})")
        samples = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    else:
        raise ValueError(f"unknown signal format {fmt!r}")

    if samples.size == 0:
        raise IngestionError(f"{path}: empty signal")
    if samples.size < seg_len:
        raise IngestionError(f"{path}: {samples.size} samples, need at least {seg_len}")
    bad = np.flatnonzero(~np.isfinite(samples))
    if bad.size:
        raise IngestionError(f"{path}: non-finite value at sample offset {bad[0]}")
    return RawSignal(samples,
                     sample_rate_hz=float(metadata.get("sample_rate_hz", 1024.0)),
                     condition=int(metadata.get("condition", UNDAMAGED)),
                     joint_id=int(metadata.get("joint_id", 1)),
                     source=str(metadata.get("source", "real")))


def save_signal(raw: RawSignal, path) -> None:
    """Write ``raw`` as ``.f64`` or ``.csv`` plus a YAML metadata sidecar."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        np.savetxt(path, raw.samples, fmt="%.17g")
    else:
        path.write_bytes(raw.samples.astype("<f8").tobytes())
    meta = {"sample_rate_hz": raw.sample_rate_hz, "condition": raw.condition,
            "joint_id": raw.joint_id, "source": raw.source}
    with open(path.with_suffix(path.suffix + ".yaml"), "w") as fh:
        yaml.safe_dump(meta, fh, sort_keys=True)


# --------------------------------------------------------------------------
# segmentation and scaling

def segment(raw: RawSignal, seg_len: int = 1024, shuffle: bool = False,
            rng: np.random.Generator | None = None) -> list[Segment]:
    """Tile ``raw`` into non-overlapping windows; the remainder is dropped."""
    if seg_len < 1:
        raise ValueError(f"seg_len must be >= 1, got {seg_len}")
    n = len(raw) // seg_len
    if n == 0:
        raise ValueError(f"seg_len {seg_len} exceeds signal length {len(raw)}")
    tiles = raw.samples[: n * seg_len].reshape(n, seg_len)
    segs = [Segment(tiles[i].copy(), raw.condition, raw.joint_id, raw.source, i) for i in range(n)]
    if shuffle:
        if rng is None:
            raise ValueError("shuffle=True needs an rng")
        segs = [segs[i] for i in rng.permutation(n)]
    return segs


def normalize_minmax(seg: Segment, lo: float = -1.0, hi: float = 1.0):
    """Affinely map ``seg`` onto [lo, hi].

    Returns ``(segment, scale, offset)`` with ``new = scale * old + offset``.
    """
    v = seg.values
    vmin, vmax = float(v.min()), float(v.max())
    if vmax == vmin:
        raise DegenerateRangeError("constant segment has no range to normalise")
    scale = (hi - lo) / (vmax - vmin)
    offset = lo - scale * vmin
    out = scale * v + offset
    # pin the extremes so rounding never leaves them a ulp off
    out[v == vmin] = lo
    out[v == vmax] = hi
    return replace(seg, values=out), scale, offset


def denormalize(seg: Segment, scale: float, offset: float) -> Segment:
    return replace(seg, values=(seg.values - offset) / scale)


def normalize_pool(segs: Sequence[Segment], lo: float = -1.0, hi: float = 1.0) -> list[Segment]:
    return [normalize_minmax(s, lo, hi)[0] for s in segs]


# --------------------------------------------------------------------------
# surrogate data

@dataclass
class Mode:
    frequency_hz: float
    damping_ratio: float
    amplitude: float


@dataclass
class SurrogateSpec:
    """Stand-in for laboratory accelerations: randomly re-excited damped modes.

    ``damage_freq_shift`` and ``damage_amp_shift`` are multipliers applied to
    mode frequency and amplitude when the damaged condition is drawn; a scalar
    applies to every mode. The default is lightly damped and densely excited,
    so the damaged condition (all frequencies halved) is easy to separate.
    """
    modes: list[Mode] = field(default_factory=lambda: [Mode(120.0, 0.01, 0.06), Mode(300.0, 0.01, 0.045)])
    noise_std: float = 0.01
    damage_freq_shift: float | list[float] = 0.5
    damage_amp_shift: float | list[float] = 1.0
    excitation_rate_hz: float = 200.0
    duration_s: float = 16.0
    sample_rate_hz: float = 1024.0

    def __post_init__(self):
        self.modes = [m if isinstance(m, Mode) else Mode(**m) if isinstance(m, dict) else Mode(*m)
                      for m in self.modes]
        self.validate()

    @classmethod
    def broadband(cls, **overrides) -> "SurrogateSpec":
        """Five heavily damped modes: windows decorrelate quickly, so real-real SSIM stays low."""
        kw = dict(modes=[Mode(f, 0.08, 0.1) for f in (100.0, 180.0, 260.0, 340.0, 420.0)],
                  noise_std=0.03, excitation_rate_hz=60.0)
        kw.update(overrides)
        return cls(**kw)

    def _per_mode(self, name: str) -> list[float]:
        v = getattr(self, name)
        if isinstance(v, (int, float)):
            return [float(v)] * len(self.modes)
        if len(v) != len(self.modes):
            raise ValueError(f"{name} needs one entry per mode")
        return [float(x) for x in v]

    def validate(self) -> None:
        nyq = self.sample_rate_hz / 2.0
        if not self.modes:
            raise ValueError("surrogate needs at least one mode")
        for m in self.modes:
            if not 0 < m.frequency_hz < nyq:
                raise ValueError(f"mode frequency {m.frequency_hz} Hz outside (0, {nyq})")
            if not 0.0 <= m.damping_ratio < 1.0:
                raise ValueError(f"damping ratio {m.damping_ratio} outside [0, 1)")
        for m in self.damaged_modes():
            if not 0 < m.frequency_hz < nyq:
                raise ValueError(f"damaged frequency {m.frequency_hz} Hz outside (0, {nyq})")
        if self.noise_std < 0 or self.duration_s <= 0 or self.excitation_rate_hz < 0:
            raise ValueError("noise_std, duration_s and excitation_rate_hz must be non-negative")

    def damaged_modes(self) -> list[Mode]:
        return [Mode(m.frequency_hz * f, m.damping_ratio, m.amplitude * a)
                for m, f, a in zip(self.modes, self._per_mode("damage_freq_shift"),
                                   self._per_mode("damage_amp_shift"))]

    def to_dict(self) -> dict:
        return asdict(self)


def synthesize_surrogate(spec: SurrogateSpec, condition: int,
                         rng: np.random.Generator, joint_id: int = 1) -> RawSignal:
    """Sum of damped sinusoids re-excited at Poisson instants, plus white noise."""
    spec.validate()
    n = int(round(spec.duration_s * spec.sample_rate_hz))
    t = np.arange(n) / spec.sample_rate_hz
    modes = spec.damaged_modes() if condition == DAMAGED else spec.modes
    out = np.zeros(n)
    n_hits = rng.poisson(spec.excitation_rate_hz * spec.duration_s)
    starts = np.sort(rng.integers(0, n, size=n_hits))
    for m in modes:
        omega = 2 * math.pi * m.frequency_hz
        decay = m.damping_ratio * omega
        # response length until the envelope falls below 1e-3
        span = n if decay == 0 else min(n, int(math.ceil(math.log(1e3) / decay * spec.sample_rate_hz)) + 1)
        tau = t[:span]
        phases = rng.uniform(0, 2 * math.pi, size=n_hits)
        signs = rng.choice([-1.0, 1.0], size=n_hits)
        for s0, ph, sg in zip(starts, phases, signs):
            stop = min(n, s0 + span)
            k = stop - s0
            out[s0:stop] += sg * m.amplitude * np.exp(-decay * tau[:k]) * np.sin(omega * tau[:k] + ph)
    if spec.noise_std > 0:
        out += rng.normal(0.0, spec.noise_std, n)
    return RawSignal(out, spec.sample_rate_hz, condition, joint_id, "real")


# --------------------------------------------------------------------------
# scenario splits

@dataclass
class ScenarioSplit:
    scenario_id: int
    train: list[tuple[Segment, int]]
    test: list[tuple[Segment, int]]


def build_scenario(undamaged: Sequence[Segment], damaged_real: Sequence[Segment],
                   damaged_fake: Sequence[Segment] | None, scenario_id: int,
                   rng: np.random.Generator, n_train: int = 60, n_test: int = 15) -> ScenarioSplit:
    """Draw the train/test split of one scenario without replacement.

    Scenario 1 tests on real damaged segments, scenario 2 on generated ones.
    Undamaged test segments are always real.
    """
    if scenario_id not in (1, 2):
        raise ValueError(f"scenario_id must be 1 or 2, got {scenario_id}")

    def draw(pool, count, what):
        if len(pool) < count:
            raise AllocationError(f"{what}: need {count} segments, pool has {len(pool)} "
                                  f"(short by {count - len(pool)})")
        idx = rng.choice(len(pool), size=count, replace=False)
        return [pool[i] for i in idx]

    if scenario_id == 1:
        und = draw(undamaged, n_train + n_test, "undamaged real")
        dam = draw(damaged_real, n_train + n_test, "damaged real")
        train = [(s, UNDAMAGED) for s in und[:n_train]] + [(s, DAMAGED) for s in dam[:n_train]]
        test = [(s, UNDAMAGED) for s in und[n_train:]] + [(s, DAMAGED) for s in dam[n_train:]]
    else:
        if damaged_fake is None:
            raise AllocationError("scenario 2 needs a pool of generated damaged segments")
        und = draw(undamaged, n_train + n_test, "undamaged real")
        dam = draw(damaged_real, n_train, "damaged real")
        fake = draw(damaged_fake, n_test, "damaged fake")
        train = [(s, UNDAMAGED) for s in und[:n_train]] + [(s, DAMAGED) for s in dam]
        test = [(s, UNDAMAGED) for s in und[n_train:]] + [(s, DAMAGED) for s in fake]
    return ScenarioSplit(scenario_id, train, test)


# --------------------------------------------------------------------------
# segment pools on disk

POOL_MANIFEST = "manifest.csv"


def save_pool(segs: Sequence[Segment], directory, prefix: str = "seg") -> list[Path]:
    """Write each segment as ``.f64`` plus a CSV manifest of labels."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    with open(directory / POOL_MANIFEST, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["filename", "condition", "joint_id", "source", "segment_index"])
        for i, s in enumerate(segs):
            name = f"{prefix}_{i:05d}.f64"
            (directory / name).write_bytes(s.values.astype("<f8").tobytes())
            w.writerow([name, s.condition, s.joint_id, s.source, s.segment_index])
            written.append(directory / name)
    written.append(directory / POOL_MANIFEST)
    return written


def load_pool(directory) -> list[Segment]:
    directory = Path(directory)
    manifest = directory / POOL_MANIFEST
    if not manifest.exists():
        raise IngestionError(f"{manifest}: pool manifest missing")
    segs = []
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            values = np.frombuffer((directory / row["filename"]).read_bytes(), dtype="<f8").astype(np.float64)
            segs.append(Segment(values, int(row["condition"]), int(row["joint_id"]),
                                row["source"], int(row["segment_index"])))
    return segs
