"""Face identification robust to blur, illumination, and expression changes.

Gallery images are optimally blurred (non-negative weights over translated
copies) and relit (nine-dimensional harmonic lighting subspace) to match a
probe, then compared with weighted block-LBP histograms; a Haar-wavelet
smoother neutralizes expressions first when asked to.
"""

from .imagecore import (
    CHIP_SIZE,
    GrayImage,
    IntegralImage,
    Kernel2D,
    PgmError,
    convolve,
    gaussian_kernel,
    integral_image,
    load_image,
    resize_bilinear,
    save_image,
)
from .detect import Box, CascadeModel, DetectParams, crop_chip, detect_faces, load_cascade, save_cascade
from .illum import (
    BasisSet,
    IllumCoeffs,
    NormalMap,
    default_normal_map,
    fit_illumination,
    harmonic_basis,
    relight,
)
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
    transform_gallery,
)
from .features import (
    BlockWeightMap,
    LBPDescriptor,
    default_weight_map,
    descriptor_distance,
    extract_descriptor,
    lbp_code,
    uniform_mapping,
)
from .fer import SubbandSet, dwt2, idwt2, neutralize
from .recognizer import (
    GalleryEntry,
    MatchResult,
    RecognizerConfig,
    recognize_biefr,
    recognize_birfr,
    recognize_brfr,
)
from .bench import (
    BenchConfig,
    Dataset,
    DegradeSpec,
    EvalReport,
    degrade,
    load_dataset,
    make_synth,
    run_benchmark,
    train_block_weights,
)

__version__ = "0.1.0"
