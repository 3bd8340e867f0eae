"""Dataset ingestion, synthetic degradation, weight training, and evaluation.

Datasets are plain directories: `gallery/<class>/*.pgm` holds enrolled
images and `probe/<class>/*.pgm` the test images. Because the standard
face databases cannot ship with the code, a procedural generator
(make_synth) emits a corpus of smooth, class-distinctive textures that
the probe degrader can blur, relight, and perturb reproducibly.
"""

from __future__ import annotations

import time
import warnings
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .detect import CascadeModel, DetectParams, crop_chip, detect_faces
from .features import BlockWeightMap, descriptor_distance, extract_descriptor
from .illum import default_normal_map, harmonic_basis, relight, IllumCoeffs, SH_C0
from .imagecore import CHIP_SIZE, GrayImage, PgmError, convolve, gaussian_kernel, load_image, resize_bilinear, save_image
from .recognizer import (
    GalleryEntry,
    MatchResult,
    RecognizerConfig,
    recognize_biefr,
    recognize_birfr,
    recognize_brfr,
)
from .tsfopt import TSF, TransformSet, apply_tsf

_RECOGNIZERS = {"brfr": recognize_brfr, "birfr": recognize_birfr, "biefr": recognize_biefr}


@dataclass(frozen=True)
class ProbeItem:
    class_id: str
    chip: GrayImage
    path: str


@dataclass
class Dataset:
    """Loaded gallery/probe layout; class labels are sorted directory names."""

    root: str
    classes: tuple[str, ...]
    gallery: list[GalleryEntry]
    probes: list[ProbeItem]
    skipped: int = 0


@dataclass(frozen=True)
class DegradeSpec:
    """Deterministic probe degradation; every random draw comes from `seed`."""

    gaussian_sigma: float = 0.0
    tsf_radius: int = 3
    tsf_mode: str = "none"  # none | random-line | random-sparse
    relight_on: bool = False
    fer_perturb: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.gaussian_sigma < 0:
            raise ValueError("gaussian_sigma must be >= 0")
        if self.tsf_mode not in ("none", "random-line", "random-sparse"):
            raise ValueError(f"unknown tsf_mode {self.tsf_mode!r}")
        if self.tsf_radius < 1:
            raise ValueError("tsf_radius must be >= 1")
        if self.fer_perturb < 0:
            raise ValueError("fer_perturb must be >= 0")

    @property
    def is_identity(self) -> bool:
        return (
            self.gaussian_sigma == 0.0
            and self.tsf_mode == "none"
            and not self.relight_on
            and self.fer_perturb == 0.0
        )


@dataclass(frozen=True)
class ClassStat:
    class_id: str
    total: int
    correct: int

    @property
    def rate(self) -> float:
        return 100.0 * self.correct / self.total if self.total else 0.0


@dataclass(frozen=True)
class EvalReport:
    algorithm: str
    class_stats: tuple[ClassStat, ...]
    confusion: tuple[tuple[tuple[str, str], int], ...]
    mean_probe_seconds: float
    config_echo: tuple[tuple[str, str], ...]

    @property
    def total(self) -> int:
        return sum(s.total for s in self.class_stats)

    @property
    def correct(self) -> int:
        return sum(s.correct for s in self.class_stats)

    @property
    def rate(self) -> float:
        return 100.0 * self.correct / self.total if self.total else 0.0

    def to_csv(self) -> str:
        lines = ["class,total,correct,rate"]
        for s in self.class_stats:
            lines.append(f"{s.class_id},{s.total},{s.correct},{s.rate:.3f}")
        lines.append(f"OVERALL,{self.total},{self.correct},{self.rate:.3f}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max([len("class")] + [len(s.class_id) for s in self.class_stats])
        lines = [f"algorithm: {self.algorithm}"]
        lines += [f"{k} = {v}" for k, v in self.config_echo]
        lines.append(f"{'class':<{width}}  total  correct     rate")
        for s in self.class_stats:
            lines.append(f"{s.class_id:<{width}}  {s.total:5d}  {s.correct:7d}  {s.rate:7.3f}")
        lines.append(f"{'OVERALL':<{width}}  {self.total:5d}  {self.correct:7d}  {self.rate:7.3f}")
        if self.confusion:
            lines.append("confusions (true -> predicted: count):")
            for (true_c, pred_c), n in self.confusion:
                lines.append(f"  {true_c} -> {pred_c}: {n}")
        lines.append(f"mean per-probe time: {self.mean_probe_seconds:.3f} s")
        return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> tuple[tuple[ClassStat, ...], ClassStat]:
    """Parse a to_csv() report back into per-class stats plus the overall row."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "class,total,correct,rate":
        raise ValueError("not a report CSV (bad header)")
    stats = []
    overall = None
    for ln in lines[1:]:
        cid, total, correct, rate = ln.split(",")
        stat = ClassStat(cid, int(total), int(correct))
        if abs(stat.rate - float(rate)) > 5e-4:
            raise ValueError(f"rate column inconsistent with counts in {ln!r}")
        if cid == "OVERALL":
            overall = stat
        else:
            stats.append(stat)
    if overall is None:
        raise ValueError("missing OVERALL row")
    return tuple(stats), overall


def _load_chip(path: Path, detector: CascadeModel | None) -> GrayImage:
    img = load_image(path)
    if detector is not None:
        boxes = detect_faces(img, detector, DetectParams())
        if boxes:
            return crop_chip(img, boxes[0])
    if (img.width, img.height) != (CHIP_SIZE, CHIP_SIZE):
        img = resize_bilinear(img, CHIP_SIZE, CHIP_SIZE)
    return img


def load_dataset(root, strict: bool = True, detector: CascadeModel | None = None) -> Dataset:
    """Load `gallery/<class>/*.pgm` and `probe/<class>/*.pgm` under root.

    Labels come from directory names, sorted lexicographically. Every probe
    class must exist in the gallery. With strict=False unreadable images
    are skipped with a warning and counted in the dataset.
    """
    root = Path(root)
    gallery_dir = root / "gallery"
    if not gallery_dir.is_dir():
        raise FileNotFoundError(f"missing gallery directory: {gallery_dir}")
    probe_dir = root / "probe"

    skipped = 0

    def read(path: Path) -> GrayImage | None:
        nonlocal skipped
        try:
            return _load_chip(path, detector)
        except (PgmError, OSError) as e:
            if strict:
                raise
            warnings.warn(f"skipping {path}: {e}")
            skipped += 1
            return None

    gallery_classes = sorted(p.name for p in gallery_dir.iterdir() if p.is_dir())
    if not gallery_classes:
        raise FileNotFoundError(f"no class directories under {gallery_dir}")
    gallery = []
    for cid in gallery_classes:
        for path in sorted((gallery_dir / cid).glob("*.pgm")):
            chip = read(path)
            if chip is not None:
                gallery.append(GalleryEntry(cid, chip))
    present = {e.class_id for e in gallery}
    missing = [c for c in gallery_classes if c not in present]
    if missing:
        raise ValueError(f"gallery classes with no readable images: {', '.join(missing)}")

    probes = []
    if probe_dir.is_dir():
        for cdir in sorted(p for p in probe_dir.iterdir() if p.is_dir()):
            if cdir.name not in present:
                raise ValueError(f"probe class {cdir.name!r} absent from gallery")
            for path in sorted(cdir.glob("*.pgm")):
                chip = read(path)
                if chip is not None:
                    probes.append(ProbeItem(cdir.name, chip, str(path)))
    return Dataset(str(root), tuple(gallery_classes), gallery, probes, skipped)


def _random_tsf(rng: np.random.Generator, spec: DegradeSpec) -> tuple[TSF, TransformSet]:
    k = spec.tsf_radius
    ts = TransformSet.square(k)
    weights = np.zeros(len(ts))
    if spec.tsf_mode == "random-line":
        angle = rng.uniform(0.0, np.pi)
        length = rng.uniform(1.0, k)
        steps = np.linspace(-length, length, 2 * k + 1)
        for t in steps:
            dx = int(np.floor(t * np.cos(angle) + 0.5))
            dy = int(np.floor(t * np.sin(angle) + 0.5))
            weights[ts.offsets.index((dx, dy))] += 1.0
    else:  # random-sparse
        m = int(rng.integers(2, 5))
        idx = rng.choice(len(ts), size=m, replace=False)
        weights[idx] = rng.uniform(0.2, 1.0, size=m)
    weights /= weights.sum()
    return TSF(weights), ts


def _random_relight(img: GrayImage, rng: np.random.Generator) -> GrayImage:
    basis = harmonic_basis(img, default_normal_map(img.width, img.height))
    alpha = np.empty(9)
    alpha[0] = rng.uniform(0.85, 1.15) / SH_C0
    alpha[1:] = rng.uniform(-0.12, 0.12, size=8)
    return relight(basis, IllumCoeffs(alpha))


def _checkerboard_perturb(img: GrayImage, amplitude: float, rng: np.random.Generator) -> GrayImage:
    """Additive pattern supported entirely in the HH wavelet subband."""
    h, w = img.height, img.width
    signs = rng.choice((-1.0, 1.0), size=((h + 1) // 2, (w + 1) // 2))
    block = np.array([[1.0, -1.0], [-1.0, 1.0]])
    pattern = np.kron(signs, block)[:h, :w]
    return GrayImage(img.pixels + amplitude * pattern)


def degrade(img: GrayImage, spec: DegradeSpec) -> GrayImage:
    """Apply TSF blur, Gaussian blur, relighting, and detail-band perturbation.

    Fully reproducible: the same spec (including seed) gives bit-identical
    output.
    """
    rng = np.random.default_rng(spec.seed)
    out = img
    if spec.tsf_mode != "none":
        tsf, ts = _random_tsf(rng, spec)
        out = apply_tsf(out, tsf, ts)
    if spec.gaussian_sigma > 0:
        out = convolve(out, gaussian_kernel(spec.gaussian_sigma))
    if spec.relight_on:
        out = _random_relight(out, rng)
    if spec.fer_perturb > 0:
        out = _checkerboard_perturb(out, spec.fer_perturb, rng)
    return out


def make_synth(root, classes: int, seed: int, probes_per_class: int = 1) -> None:
    """Generate a synthetic corpus of smooth class-distinctive textures.

    Each class is a random mixture of low-frequency cosines; the probe set
    holds verbatim copies of the gallery image, ready for in-memory
    degradation during a benchmark run.
    """
    if classes < 1:
        raise ValueError("classes must be >= 1")
    root = Path(root)
    ys, xs = np.mgrid[0:CHIP_SIZE, 0:CHIP_SIZE].astype(np.float64)
    for c in range(classes):
        rng = np.random.default_rng([seed, c])
        tex = np.zeros((CHIP_SIZE, CHIP_SIZE))
        for _ in range(8):
            fx, fy = rng.uniform(-6.0, 6.0, size=2)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            amp = rng.uniform(0.5, 1.0)
            tex += amp * np.cos(2.0 * np.pi * (fx * xs + fy * ys) / CHIP_SIZE + phase)
        lo, hi = tex.min(), tex.max()
        tex = 0.25 + 0.65 * (tex - lo) / (hi - lo)
        cid = f"c{c:02d}"
        img = GrayImage(tex)
        gdir = root / "gallery" / cid
        pdir = root / "probe" / cid
        gdir.mkdir(parents=True, exist_ok=True)
        pdir.mkdir(parents=True, exist_ok=True)
        save_image(img, gdir / "g0.pgm")
        for j in range(probes_per_class):
            save_image(img, pdir / f"p{j}.pgm")


def train_block_weights(
    dataset: Dataset, sigma: float = 4.0, grid: tuple[int, int] = (8, 8)
) -> BlockWeightMap:
    """Learn per-block weight levels from single-block recognition rates.

    Probes are blurred with the given Gaussian, each block classifies
    probes on its own (nearest gallery histogram, plain chi-square), and
    block rates map to levels by quartile: above the 75th percentile -> 4,
    above the median -> 2, above the 25th percentile -> 1, else 0. The
    best block is floored at level 1 so the map is never all zero.
    """
    bx, by = grid
    if len(dataset.classes) < 2:
        raise ValueError("weight training needs at least 2 classes")
    if not dataset.probes:
        raise ValueError("weight training needs probe images")
    gallery_descs = [
        (e.class_id, extract_descriptor(e.chip, bx, by)) for e in dataset.gallery
    ]
    kernel = gaussian_kernel(sigma) if sigma > 0 else None
    n_blocks = bx * by
    correct = np.zeros(n_blocks)
    for probe in dataset.probes:
        img = convolve(probe.chip, kernel) if kernel is not None else probe.chip
        pdesc = extract_descriptor(img, bx, by)
        phist = pdesc.histograms.reshape(n_blocks, -1).astype(np.float64)
        best_d = np.full(n_blocks, np.inf)
        best_c = [""] * n_blocks
        for cid, gdesc in gallery_descs:
            ghist = gdesc.histograms.reshape(n_blocks, -1).astype(np.float64)
            diff2 = (phist - ghist) ** 2
            denom = phist + ghist
            d = np.divide(diff2, denom, out=np.zeros_like(diff2), where=denom > 0).sum(axis=1)
            for b in range(n_blocks):
                if d[b] < best_d[b]:
                    best_d[b] = d[b]
                    best_c[b] = cid
        for b in range(n_blocks):
            if best_c[b] == probe.class_id:
                correct[b] += 1
    rates = correct / len(dataset.probes)
    q25, q50, q75 = np.quantile(rates, [0.25, 0.5, 0.75])
    levels = np.zeros(n_blocks)
    levels[rates > q25] = 1.0
    levels[rates > q50] = 2.0
    levels[rates > q75] = 4.0
    best_block = int(np.argmax(rates))
    if levels[best_block] < 1.0:
        levels[best_block] = 1.0
    return BlockWeightMap(levels.reshape(by, bx))


@dataclass
class BenchConfig:
    """Benchmark run settings: recognizer knobs, probe degradation, scheduling."""

    recognizer: RecognizerConfig = field(default_factory=RecognizerConfig)
    degrade: DegradeSpec | None = None
    threads: int = 1
    scramble: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


def _probe_seed(base: int, index: int) -> int:
    return base * 1000003 + index


def run_benchmark(dataset: Dataset, algorithm: str, cfg: BenchConfig = BenchConfig()) -> EvalReport:
    """Classify every probe and tally per-class recognition rates.

    Deterministic given dataset, algorithm, and config: per-probe
    degradation seeds derive from (seed, probe index) and aggregation
    follows probe order, so the report is identical for any thread count.
    """
    if algorithm not in _RECOGNIZERS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if not dataset.probes:
        raise ValueError("dataset has no probes")
    recognize = _RECOGNIZERS[algorithm]
    rcfg = cfg.recognizer
    # resolve shared lazy state up front so worker threads only read
    rcfg = replace(rcfg, weight_map=rcfg.resolved_weight_map(), normals=rcfg.resolved_normals())
    ts = TransformSet.square(rcfg.tsf_radius)
    for entry in dataset.gallery:
        if algorithm == "brfr":
            entry.dictionary(ts)
        else:
            entry.basis(rcfg.normals)

    true_labels = [p.class_id for p in dataset.probes]
    if cfg.scramble:
        rng = np.random.default_rng(cfg.seed)
        true_labels = [true_labels[i] for i in rng.permutation(len(true_labels))]

    def job(index: int) -> tuple[str, float]:
        probe = dataset.probes[index]
        chip = probe.chip
        if cfg.degrade is not None and not cfg.degrade.is_identity:
            spec = replace(cfg.degrade, seed=_probe_seed(cfg.degrade.seed, index))
            chip = degrade(chip, spec)
        start = time.perf_counter()
        result: MatchResult = recognize(chip, dataset.gallery, rcfg)
        return result.best_class, time.perf_counter() - start

    indices = range(len(dataset.probes))
    if cfg.threads == 1:
        outcomes = [job(i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            outcomes = list(pool.map(job, indices))

    per_class = {c: [0, 0] for c in dataset.classes}
    confusion: Counter = Counter()
    total_time = 0.0
    for index, (predicted, elapsed) in zip(indices, outcomes):
        true_c = true_labels[index]
        per_class[true_c][0] += 1
        if predicted == true_c:
            per_class[true_c][1] += 1
        else:
            confusion[(true_c, predicted)] += 1
        total_time += elapsed

    stats = tuple(
        ClassStat(c, n, k) for c, (n, k) in per_class.items() if n > 0
    )
    echo = [
        ("algorithm", algorithm),
        ("tsf_radius", str(rcfg.tsf_radius)),
        ("decision", rcfg.decision),
        ("threads", str(cfg.threads)),
        ("seed", str(cfg.seed)),
    ]
    if cfg.degrade is not None:
        d = cfg.degrade
        echo.append(
            (
                "degrade",
                f"sigma={d.gaussian_sigma} tsf={d.tsf_mode}/k={d.tsf_radius} "
                f"relight={d.relight_on} perturb={d.fer_perturb} seed={d.seed}",
            )
        )
    if cfg.scramble:
        echo.append(("scramble", "true"))
    return EvalReport(
        algorithm=algorithm,
        class_stats=stats,
        confusion=tuple(sorted(confusion.items())),
        mean_probe_seconds=total_time / len(dataset.probes),
        config_echo=tuple(echo),
    )
