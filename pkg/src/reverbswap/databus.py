"""Reverb-bus mixing and training-quad assembly.

A mixed track is (src + gamma * rev) / (gamma + 1): the dry source plus its
100%-wet render blended at bus-send ratio gamma, renormalized so the blend
can never exceed the louder of the two parts. One training example is a quad
of four mixes over two sources and two reverbs,

    in_a = s_a r_1    in_b = s_b r_2    gt_a = s_a r_2    gt_b = s_b r_1

so each input shares its source with one ground truth and its reverb (preset
and gamma) with the other. Quads are materialized lazily from manifest
descriptors; audio is rendered on demand.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .audio import Waveform
from .reverb import ReverbPreset, render_wet

# Bus-send ratios used for training data: 0% to 75% in 5% steps
GAMMA_GRID = tuple(round(k * 0.05, 2) for k in range(16))


def _on_grid(gamma: float) -> bool:
    return any(abs(gamma - g) < 1e-9 for g in GAMMA_GRID)


@dataclass(frozen=True)
class MixSpec:
    source_id: str
    preset_id: str
    gamma: float

    def __post_init__(self):
        if not _on_grid(self.gamma):
            raise ValueError(f"gamma {self.gamma} not on the 0.05-step grid {GAMMA_GRID}")


@dataclass
class MixedTrack:
    spec: MixSpec
    audio: Waveform


@dataclass
class TrainingQuad:
    in_a: MixedTrack   # s_a r_1
    in_b: MixedTrack   # s_b r_2
    gt_a: MixedTrack   # s_a r_2
    gt_b: MixedTrack   # s_b r_1


def mix_bus(src: Waveform, rev: Waveform, gamma: float) -> Waveform:
    """(src + gamma * rev) / (gamma + 1); exact identity at gamma = 0."""
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    if src.n_frames != rev.n_frames or src.n_channels != rev.n_channels:
        raise ValueError(
            f"src/rev shape mismatch: {src.samples.shape} vs {rev.samples.shape}"
        )
    if src.sample_rate != rev.sample_rate:
        raise ValueError(f"src/rev rate mismatch: {src.sample_rate} vs {rev.sample_rate}")
    mixed = (src.samples + gamma * rev.samples) / (gamma + 1.0)
    return Waveform(samples=mixed, sample_rate=src.sample_rate)


def build_quad(
    dry_a: Waveform,
    dry_b: Waveform,
    p1: ReverbPreset,
    p2: ReverbPreset,
    gamma1: float,
    gamma2: float,
    source_a: str = "a",
    source_b: str = "b",
) -> TrainingQuad:
    """Render both sources through both presets and mix the four tracks."""
    if dry_a.n_frames != dry_b.n_frames:
        raise ValueError(f"dry clips must have equal length, got {dry_a.n_frames} vs {dry_b.n_frames}")
    if dry_a.sample_rate != dry_b.sample_rate:
        raise ValueError("dry clips must share a sample rate")

    wet_a1 = render_wet(dry_a, p1)
    wet_a2 = render_wet(dry_a, p2)
    wet_b1 = render_wet(dry_b, p1)
    wet_b2 = render_wet(dry_b, p2)

    def track(dry, wet, src_id, preset, gamma):
        return MixedTrack(
            spec=MixSpec(source_id=src_id, preset_id=preset.preset_id, gamma=gamma),
            audio=mix_bus(dry, wet, gamma),
        )

    return TrainingQuad(
        in_a=track(dry_a, wet_a1, source_a, p1, gamma1),
        in_b=track(dry_b, wet_b2, source_b, p2, gamma2),
        gt_a=track(dry_a, wet_a2, source_a, p2, gamma2),
        gt_b=track(dry_b, wet_b1, source_b, p1, gamma1),
    )


def make_derev_pair(in_track: MixedTrack, dry_ref: Waveform, ref_source_id: str = "ref") -> tuple[MixedTrack, MixedTrack]:
    """Pair an input with a gamma=0 (dry) reference; feeding the pair to the
    model requests de-reverberation of the input."""
    ref = MixedTrack(
        spec=MixSpec(source_id=ref_source_id, preset_id=in_track.spec.preset_id, gamma=0.0),
        audio=dry_ref,
    )
    return in_track, ref


@dataclass(frozen=True)
class QuadSpec:
    """Manifest record describing one quad; audio is rebuilt on demand."""

    quad_id: str
    source_a: str        # corpus paths
    source_b: str
    preset_1: str        # preset ids
    preset_2: str
    gamma_1: float
    gamma_2: float
    segment_offset: int  # start frame within the source files
    seed: int


def make_dataset(
    sources: list[tuple[str, int]],
    presets: list[ReverbPreset],
    count: int,
    seed: int,
    clip_len: int,
) -> list[QuadSpec]:
    """Draw `count` quad descriptors: distinct sources, presets and grid
    gammas chosen uniformly, segment offsets within the shorter source.

    `sources` carries (path, n_frames) pairs so offsets stay inside the files.
    Deterministic under (sources, presets, count, seed).
    """
    if not sources:
        raise ValueError("empty dry corpus")
    if len(sources) < 2:
        raise ValueError("need at least two dry sources to form quads")
    rng = np.random.default_rng(seed)
    quads = []
    for k in range(count):
        ia, ib = rng.choice(len(sources), size=2, replace=False)
        p1, p2 = (presets[i] for i in rng.integers(0, len(presets), size=2))
        g1, g2 = (GAMMA_GRID[i] for i in rng.integers(0, len(GAMMA_GRID), size=2))
        max_off = max(min(sources[ia][1], sources[ib][1]) - clip_len, 0)
        offset = int(rng.integers(0, max_off + 1))
        quads.append(
            QuadSpec(
                quad_id=f"q{k:06d}",
                source_a=sources[ia][0],
                source_b=sources[ib][0],
                preset_1=p1.preset_id,
                preset_2=p2.preset_id,
                gamma_1=g1,
                gamma_2=g2,
                segment_offset=offset,
                seed=seed,
            )
        )
    return quads


def write_manifest(quads: list[QuadSpec], path) -> None:
    with open(path, "w") as fh:
        for q in quads:
            fh.write(json.dumps(asdict(q), sort_keys=True) + "\n")


def read_manifest(path) -> list[QuadSpec]:
    quads = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                quads.append(QuadSpec(**json.loads(line)))
    return quads
