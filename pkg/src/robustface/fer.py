"""Expression smoothing via a single-level 2D Haar wavelet transform.

High-frequency facial deformation (smiles, frowns) concentrates in the
detail subbands; attenuating them and reconstructing yields a neutralized
face. The transform here is the orthonormal Haar, so energy is preserved
and reconstruction is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import GrayImage


@dataclass(frozen=True, eq=False)
class SubbandSet:
    """LL/LH/HL/HH half-resolution subbands plus the pre-padding image size."""

    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        shape = self.ll.shape
        for name in ("lh", "hl", "hh"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"subband {name} shape {getattr(self, name).shape} != {shape}")
        expect = ((self.height + 1) // 2, (self.width + 1) // 2)
        if shape != expect:
            raise ValueError(f"subband shape {shape} inconsistent with image {self.width}x{self.height}")


def dwt2(img: GrayImage) -> SubbandSet:
    """One orthonormal Haar level; odd dimensions are replicate-padded to even.

    Per 2x2 block (a b / c d):
        LL = (a+b+c+d)/2   LH = (a+b-c-d)/2
        HL = (a-b+c-d)/2   HH = (a-b-c+d)/2
    """
    h, w = img.height, img.width
    if h < 2 or w < 2:
        raise ValueError(f"image must be at least 2x2, got {w}x{h}")
    px = img.pixels
    if h % 2 or w % 2:
        px = np.pad(px, ((0, h % 2), (0, w % 2)), mode="edge")
    a = px[0::2, 0::2]
    b = px[0::2, 1::2]
    c = px[1::2, 0::2]
    d = px[1::2, 1::2]
    # pairwise grouping keeps constant blocks exact in floating point
    ab, cd = a + b, c + d
    amb, cmd = a - b, c - d
    return SubbandSet(
        ll=(ab + cd) / 2.0,
        lh=(ab - cd) / 2.0,
        hl=(amb + cmd) / 2.0,
        hh=(amb - cmd) / 2.0,
        width=w,
        height=h,
    )


def idwt2(sub: SubbandSet) -> GrayImage:
    """Invert dwt2 exactly, cropping any replicate padding back off."""
    sll, slh = sub.ll + sub.lh, sub.ll - sub.lh
    shh, shm = sub.hl + sub.hh, sub.hl - sub.hh
    hs, ws = sub.ll.shape
    out = np.empty((2 * hs, 2 * ws), dtype=np.float64)
    out[0::2, 0::2] = (sll + shh) / 2.0
    out[0::2, 1::2] = (sll - shh) / 2.0
    out[1::2, 0::2] = (slh + shm) / 2.0
    out[1::2, 1::2] = (slh - shm) / 2.0
    return GrayImage(out[: sub.height, : sub.width])


def neutralize(img: GrayImage, strength: float = 1.0) -> GrayImage:
    """Attenuate the detail subbands by (1 - strength) and reconstruct.

    strength 0 is the exact identity (short-circuited, no transform round
    trip); strength 1 collapses every 2x2 block to its mean.
    """
    if not 0.0 <= strength <= 1.0:
        raise ValueError(f"strength must lie in [0, 1], got {strength}")
    if strength == 0.0:
        return img
    sub = dwt2(img)
    keep = 1.0 - strength
    return idwt2(
        SubbandSet(
            ll=sub.ll,
            lh=sub.lh * keep,
            hl=sub.hl * keep,
            hh=sub.hh * keep,
            width=sub.width,
            height=sub.height,
        )
    )
