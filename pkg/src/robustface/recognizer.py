"""The identification pipelines.

Three variants, each scoring the probe against every gallery class:

  brfr   blur only — fit a TSF per class, blur the gallery chip, compare
  birfr  blur + illumination — alternate TSF and 9D lighting fits, transform
         the gallery chip with both, compare
  biefr  blur + illumination + expression — neutralize probe and gallery
         with the wavelet smoother, then run the birfr path

Comparison uses the weighted block-LBP chi-square distance by default;
the weighted reconstruction residual is available behind a config flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .features import (
    BlockWeightMap,
    LBPDescriptor,
    default_weight_map,
    descriptor_distance,
    extract_descriptor,
)
from .fer import neutralize
from .illum import BasisSet, IllumCoeffs, NormalMap, default_normal_map, harmonic_basis, relight
from .imagecore import CHIP_SIZE, GrayImage
from .tsfopt import (
    TSF,
    DictionaryMatrix,
    SolverConfig,
    TransformSet,
    WeightMatrix,
    apply_tsf,
    build_dictionary,
    solve_joint,
    solve_tsf,
)

MODES = ("brfr", "birfr", "biefr")


@dataclass
class GalleryEntry:
    """One enrolled image; basis and dictionary are built lazily and cached."""

    class_id: str
    chip: GrayImage
    _basis: BasisSet | None = field(default=None, repr=False, compare=False)
    _dicts: dict[int, DictionaryMatrix] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.class_id:
            raise ValueError("class_id must be non-empty")
        if (self.chip.width, self.chip.height) != (CHIP_SIZE, CHIP_SIZE):
            raise ValueError(
                f"gallery chip must be {CHIP_SIZE}x{CHIP_SIZE}, got {self.chip.width}x{self.chip.height}"
            )

    def basis(self, normals: NormalMap) -> BasisSet:
        if self._basis is None:
            self._basis = harmonic_basis(self.chip, normals)
        return self._basis

    def dictionary(self, ts: TransformSet) -> DictionaryMatrix:
        cached = self._dicts.get(ts.radius)
        if cached is None:
            cached = build_dictionary(self.chip, ts)
            self._dicts[ts.radius] = cached
        return cached


@dataclass(frozen=True, eq=False)
class PerClassScore:
    class_id: str
    lbp_distance: float
    residual: float
    tsf: TSF
    coeffs: IllumCoeffs | None


@dataclass(frozen=True, eq=False)
class MatchResult:
    best_class: str
    per_class: tuple[PerClassScore, ...]
    mode: str


@dataclass
class RecognizerConfig:
    """Pipeline knobs; the defaults target 64x64 chips with an 8x8 LBP grid."""

    solver: SolverConfig = field(default_factory=SolverConfig)
    tsf_radius: int = 5
    blocks_x: int = 8
    blocks_y: int = 8
    weight_map: BlockWeightMap | None = None
    decision: str = "lbp"  # or "residual"
    fer_strength: float = 1.0
    normals: NormalMap | None = None

    def __post_init__(self):
        if self.decision not in ("lbp", "residual"):
            raise ValueError(f"decision must be 'lbp' or 'residual', got {self.decision!r}")
        if self.tsf_radius < 0:
            raise ValueError("tsf_radius must be >= 0")

    def resolved_weight_map(self) -> BlockWeightMap:
        return self.weight_map if self.weight_map is not None else default_weight_map(self.blocks_x, self.blocks_y)

    def resolved_normals(self) -> NormalMap:
        return self.normals if self.normals is not None else default_normal_map()


def _check_inputs(probe: GrayImage, gallery: list[GalleryEntry]):
    if not gallery:
        raise ValueError("gallery is empty")
    if (probe.width, probe.height) != (CHIP_SIZE, CHIP_SIZE):
        raise ValueError(f"probe must be {CHIP_SIZE}x{CHIP_SIZE}, got {probe.width}x{probe.height}")


def _decide(scores: list[PerClassScore], decision: str, mode: str) -> MatchResult:
    """Aggregate per-entry scores to one per class, then argmin the decision score."""
    key = (lambda s: s.lbp_distance) if decision == "lbp" else (lambda s: s.residual)
    by_class: dict[str, PerClassScore] = {}
    for s in scores:
        cur = by_class.get(s.class_id)
        if cur is None or key(s) < key(cur):
            by_class[s.class_id] = s
    ordered = tuple(by_class[c] for c in sorted(by_class))
    best = min(ordered, key=key)  # ties break to the lowest class index
    return MatchResult(best.class_id, ordered, mode)


def recognize_brfr(
    probe: GrayImage, gallery: list[GalleryEntry], cfg: RecognizerConfig = RecognizerConfig()
) -> MatchResult:
    """Blur-robust identification: TSF fit per class, then weighted LBP comparison."""
    _check_inputs(probe, gallery)
    ts = TransformSet.square(cfg.tsf_radius)
    wmap = cfg.resolved_weight_map()
    weights = WeightMatrix.from_pixels(wmap.to_pixel_weights(CHIP_SIZE, CHIP_SIZE))
    probe_desc = extract_descriptor(probe, cfg.blocks_x, cfg.blocks_y)
    scores = []
    for entry in gallery:
        tsf, residual = solve_tsf(probe, entry.dictionary(ts), weights, cfg.solver)
        blurred = apply_tsf(entry.chip, tsf, ts)
        dist = descriptor_distance(probe_desc, extract_descriptor(blurred, cfg.blocks_x, cfg.blocks_y), wmap)
        scores.append(PerClassScore(entry.class_id, dist, residual, tsf, None))
    return _decide(scores, cfg.decision, "brfr")


def _birfr_scores(
    probe: GrayImage, gallery: list[GalleryEntry], cfg: RecognizerConfig
) -> list[PerClassScore]:
    ts = TransformSet.square(cfg.tsf_radius)
    wmap = cfg.resolved_weight_map()
    weights = WeightMatrix.from_pixels(wmap.to_pixel_weights(CHIP_SIZE, CHIP_SIZE))
    normals = cfg.resolved_normals()
    probe_desc = extract_descriptor(probe, cfg.blocks_x, cfg.blocks_y)
    scores = []
    for entry in gallery:
        basis = entry.basis(normals)
        fit = solve_joint(probe, basis, ts, weights, cfg.solver)
        transformed = apply_tsf(relight(basis, fit.coeffs), fit.tsf, ts)
        dist = descriptor_distance(
            probe_desc, extract_descriptor(transformed, cfg.blocks_x, cfg.blocks_y), wmap
        )
        scores.append(PerClassScore(entry.class_id, dist, fit.residual, fit.tsf, fit.coeffs))
    return scores


def recognize_birfr(
    probe: GrayImage, gallery: list[GalleryEntry], cfg: RecognizerConfig = RecognizerConfig()
) -> MatchResult:
    """Blur- and illumination-robust identification via the alternating joint fit."""
    _check_inputs(probe, gallery)
    return _decide(_birfr_scores(probe, gallery, cfg), cfg.decision, "birfr")


def recognize_biefr(
    probe: GrayImage, gallery: list[GalleryEntry], cfg: RecognizerConfig = RecognizerConfig()
) -> MatchResult:
    """Expression-robust variant: neutralize probe and gallery, then run birfr.

    At fer_strength 0 neutralization is the exact identity, so the result
    matches recognize_birfr on every field except the reported mode.
    """
    _check_inputs(probe, gallery)
    s = cfg.fer_strength
    probe_n = neutralize(probe, s)
    gallery_n = [GalleryEntry(e.class_id, neutralize(e.chip, s)) for e in gallery]
    return _decide(_birfr_scores(probe_n, gallery_n, cfg), cfg.decision, "biefr")
