"""Cascade face detection with Haar rectangle features over integral images.

Only cascade evaluation lives here; training is out of scope, so models
are loaded from a small line-oriented text format (see load_cascade).
Feature values are computed by scaling the feature rectangles rather than
the image, with per-rectangle area compensation so features balanced at
the base scale stay balanced at every scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from .imagecore import CHIP_SIZE, GrayImage, IntegralImage, integral_image, resize_bilinear

_RECT_COUNT = {"two-rect": 2, "three-rect": 3, "four-rect": 4}


class CascadeFormatError(ValueError):
    """Cascade file is syntactically or structurally invalid."""


def _round_half_up(v: float) -> int:
    return math.floor(v + 0.5)


@dataclass(frozen=True)
class FeatureRect:
    x: int
    y: int
    w: int
    h: int
    sign: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"rect {self.w}x{self.h} must be at least 1x1")
        if self.sign not in (-1, 1):
            raise ValueError(f"rect sign must be +-1, got {self.sign}")


@dataclass(frozen=True)
class HaarFeature:
    """Signed rectangles with balanced areas, so constant windows score 0."""

    kind: str
    rects: tuple[FeatureRect, ...]

    def __post_init__(self):
        expected = _RECT_COUNT.get(self.kind)
        if expected is None:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if len(self.rects) != expected:
            raise ValueError(f"{self.kind} feature needs {expected} rects, got {len(self.rects)}")
        balance = sum(r.sign * r.w * r.h for r in self.rects)
        if balance != 0:
            raise ValueError(f"rect areas unbalanced by {balance}; constant images would not score 0")


@dataclass(frozen=True)
class WeakClassifier:
    feature: HaarFeature
    threshold: float
    polarity: int
    vote: float

    def __post_init__(self):
        if self.polarity not in (-1, 1):
            raise ValueError("polarity must be +-1")
        if self.vote < 0:
            raise ValueError("vote must be non-negative")


@dataclass(frozen=True)
class CascadeStage:
    weaks: tuple[WeakClassifier, ...]
    stage_threshold: float

    def __post_init__(self):
        if not self.weaks:
            raise ValueError("stage must contain at least one weak classifier")


@dataclass(frozen=True)
class CascadeModel:
    base_width: int
    base_height: int
    stages: tuple[CascadeStage, ...]

    def __post_init__(self):
        if self.base_width < 4 or self.base_height < 4:
            raise ValueError("base window must be at least 4x4")
        if not self.stages:
            raise ValueError("cascade must contain at least one stage")
        for si, stage in enumerate(self.stages):
            for wi, weak in enumerate(stage.weaks):
                for r in weak.feature.rects:
                    if r.x < 0 or r.y < 0 or r.x + r.w > self.base_width or r.y + r.h > self.base_height:
                        raise ValueError(
                            f"stage {si} weak {wi}: rect ({r.x},{r.y},{r.w},{r.h}) "
                            f"outside base window {self.base_width}x{self.base_height}"
                        )


@dataclass(frozen=True)
class Box:
    x: int
    y: int
    w: int
    h: int


@dataclass(frozen=True)
class DetectParams:
    scale_step: float = 1.25
    window_stride: int = 2
    min_overlap: float = 0.3

    def __post_init__(self):
        if self.scale_step <= 1.0:
            raise ValueError("scale_step must be > 1")
        if self.window_stride < 1:
            raise ValueError("window_stride must be >= 1")


def _scaled_rect(r: FeatureRect, scale: float) -> tuple[int, int, int, int, float]:
    """Round each coordinate, then compensate so the contribution keeps base-scale area."""
    sx = _round_half_up(r.x * scale)
    sy = _round_half_up(r.y * scale)
    sw = max(1, _round_half_up(r.w * scale))
    sh = max(1, _round_half_up(r.h * scale))
    comp = (r.w * r.h) / (sw * sh)
    return sx, sy, sw, sh, comp


def eval_feature(
    ii: IntegralImage, feat: HaarFeature, origin: tuple[int, int], scale: float = 1.0
) -> float:
    """Signed, area-compensated sum of the feature's scaled rectangles."""
    if scale < 1.0:
        raise ValueError("scale must be >= 1")
    ox, oy = origin
    total = 0.0
    for r in feat.rects:
        sx, sy, sw, sh, comp = _scaled_rect(r, scale)
        x0, y0 = ox + sx, oy + sy
        if x0 < 0 or y0 < 0 or x0 + sw > ii.width or y0 + sh > ii.height:
            raise ValueError(
                f"feature rect ({x0},{y0},{sw},{sh}) out of bounds for {ii.width}x{ii.height}"
            )
        total += r.sign * comp * ii.rect_sum(x0, y0, x0 + sw, y0 + sh)
    return total


def load_cascade(path) -> CascadeModel:
    """Parse the line-oriented cascade format.

    Grammar (UTF-8, `#` starts a comment):
        window W H
        stage T
        weak vote polarity threshold kind n
        rect x y w h sign      (n per weak)
    """
    window = None
    stages: list[CascadeStage] = []
    cur_weaks: list[WeakClassifier] = []
    cur_threshold = None
    pending = None  # (vote, polarity, threshold, kind, rects_left, rects)

    def fail(lineno, msg):
        raise CascadeFormatError(f"{path}: line {lineno}: {msg}")

    def close_weak(lineno):
        nonlocal pending
        vote, polarity, threshold, kind, left, rects = pending
        if left:
            fail(lineno, f"weak classifier missing {left} rect line(s)")
        try:
            feature = HaarFeature(kind, tuple(rects))
            cur_weaks.append(WeakClassifier(feature, threshold, polarity, vote))
        except ValueError as e:
            fail(lineno, f"weak classifier {len(cur_weaks)}: {e}")
        pending = None

    def close_stage(lineno):
        nonlocal cur_threshold
        if pending is not None:
            close_weak(lineno)
        if cur_threshold is not None:
            try:
                stages.append(CascadeStage(tuple(cur_weaks), cur_threshold))
            except ValueError as e:
                fail(lineno, f"stage {len(stages)}: {e}")
            cur_weaks.clear()
            cur_threshold = None

    lines = Path(path).read_text(encoding="utf-8").splitlines()
    for lineno, raw in enumerate(lines, start=1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        tag = parts[0]
        try:
            if tag == "window":
                if window is not None:
                    fail(lineno, "duplicate window line")
                window = (int(parts[1]), int(parts[2]))
            elif tag == "stage":
                close_stage(lineno)
                cur_threshold = float(parts[1])
            elif tag == "weak":
                if cur_threshold is None:
                    fail(lineno, "weak before any stage line")
                if pending is not None:
                    close_weak(lineno)
                vote, polarity, threshold = float(parts[1]), int(parts[2]), float(parts[3])
                kind, n = parts[4], int(parts[5])
                pending = (vote, polarity, threshold, kind, n, [])
            elif tag == "rect":
                if pending is None:
                    fail(lineno, "rect outside a weak classifier")
                vote, polarity, threshold, kind, left, rects = pending
                if left == 0:
                    fail(lineno, "more rect lines than declared")
                rects.append(FeatureRect(int(parts[1]), int(parts[2]), int(parts[3]), int(parts[4]), int(parts[5])))
                pending = (vote, polarity, threshold, kind, left - 1, rects)
            else:
                fail(lineno, f"unknown directive {tag!r}")
        except CascadeFormatError:
            raise
        except (IndexError, ValueError) as e:
            fail(lineno, f"bad {tag} line: {e}")
    close_stage(len(lines))
    if window is None:
        raise CascadeFormatError(f"{path}: missing window line")
    try:
        return CascadeModel(window[0], window[1], tuple(stages))
    except ValueError as e:
        raise CascadeFormatError(f"{path}: {e}") from None


def save_cascade(model: CascadeModel, path) -> None:
    lines = [f"window {model.base_width} {model.base_height}"]
    for stage in model.stages:
        lines.append(f"stage {stage.stage_threshold:.17g}")
        for weak in stage.weaks:
            lines.append(
                f"weak {weak.vote:.17g} {weak.polarity} {weak.threshold:.17g} "
                f"{weak.feature.kind} {len(weak.feature.rects)}"
            )
            for r in weak.feature.rects:
                lines.append(f"rect {r.x} {r.y} {r.w} {r.h} {r.sign}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _iou(a: Box, b: Box) -> float:
    ix = max(0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def merge_boxes(boxes: list[Box], min_overlap: float) -> list[Box]:
    """Cluster boxes by IoU >= min_overlap (greedy, in sorted order) and average each cluster."""
    ordered = sorted(boxes, key=lambda b: (b.y, b.x, b.w, b.h))
    clusters: list[list[Box]] = []
    for box in ordered:
        for cluster in clusters:
            if any(_iou(box, member) >= min_overlap for member in cluster):
                cluster.append(box)
                break
        else:
            clusters.append([box])
    merged = [
        Box(
            _round_half_up(sum(b.x for b in c) / len(c)),
            _round_half_up(sum(b.y for b in c) / len(c)),
            _round_half_up(sum(b.w for b in c) / len(c)),
            _round_half_up(sum(b.h for b in c) / len(c)),
        )
        for c in clusters
    ]
    return sorted(merged, key=lambda b: (b.y, b.x, b.w, b.h))


def detect_faces(img: GrayImage, model: CascadeModel, params: DetectParams = DetectParams()) -> list[Box]:
    """Slide the cascade over a scale pyramid and merge overlapping passes.

    A window passes when every stage's vote sum reaches the stage threshold;
    a weak classifier votes iff polarity * value >= polarity * threshold.
    Candidates are sorted before merging, so the result is independent of
    evaluation order.
    """
    if img.width < model.base_width or img.height < model.base_height:
        raise ValueError(
            f"image {img.width}x{img.height} smaller than base window "
            f"{model.base_width}x{model.base_height}"
        )
    ii = integral_image(img)
    detections: list[Box] = []
    scale = 1.0
    while True:
        win_w = _round_half_up(model.base_width * scale)
        win_h = _round_half_up(model.base_height * scale)
        if win_w > img.width or win_h > img.height:
            break
        # prescale every feature once per scale
        staged = []
        ext_w, ext_h = win_w, win_h
        for stage in model.stages:
            weaks = []
            for weak in stage.weaks:
                rects = [_scaled_rect(r, scale) + (r.sign,) for r in weak.feature.rects]
                for sx, sy, sw, sh, _, _ in rects:
                    ext_w = max(ext_w, sx + sw)
                    ext_h = max(ext_h, sy + sh)
                weaks.append((weak.vote, weak.polarity, weak.threshold, rects))
            staged.append((stage.stage_threshold, weaks))
        if ext_w > img.width or ext_h > img.height:
            break
        stride = max(1, _round_half_up(params.window_stride * scale))
        table = ii.table
        for oy in range(0, img.height - ext_h + 1, stride):
            for ox in range(0, img.width - ext_w + 1, stride):
                passed = True
                for stage_threshold, weaks in staged:
                    votes = 0.0
                    for vote, polarity, threshold, rects in weaks:
                        value = 0.0
                        for sx, sy, sw, sh, comp, sign in rects:
                            x0, y0 = ox + sx, oy + sy
                            x1, y1 = x0 + sw, y0 + sh
                            value += sign * comp * (
                                table[y1, x1] - table[y0, x1] - table[y1, x0] + table[y0, x0]
                            )
                        if polarity * value >= polarity * threshold:
                            votes += vote
                    if votes < stage_threshold:
                        passed = False
                        break
                if passed:
                    detections.append(Box(ox, oy, win_w, win_h))
        scale *= params.scale_step
    return merge_boxes(detections, params.min_overlap)


def crop_chip(img: GrayImage, box: Box) -> GrayImage:
    """Crop the box and resample it to the canonical chip size."""
    if box.x < 0 or box.y < 0 or box.x + box.w > img.width or box.y + box.h > img.height:
        raise ValueError(f"box ({box.x},{box.y},{box.w},{box.h}) outside {img.width}x{img.height}")
    if box.w < 1 or box.h < 1:
        raise ValueError("box must be at least 1x1")
    sub = GrayImage(img.pixels[box.y : box.y + box.h, box.x : box.x + box.w])
    return resize_bilinear(sub, CHIP_SIZE, CHIP_SIZE)
