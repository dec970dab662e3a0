"""Upper-lip segmentation toolkit.

Texture-augmented inputs (LBP/GLBP), landmark-template mask generation,
a from-scratch attention UNet pipeline with verified gradients, a mask
autoencoder, segmentation metrics, and a synthetic data harness.
"""

from .errors import FormatError, GeometryError, LiplabError, NumericalError
from .imagio import (
    LandmarkSet,
    read_landmarks,
    read_mask_pgm,
    read_pgm,
    read_ppm,
    read_tensor,
    to_grayscale,
    write_landmarks,
    write_mask_pgm,
    write_pgm,
    write_ppm,
    write_tensor,
)
from .maskgen import (
    DensifiedContour,
    SimilarityTransform,
    TemplateContour,
    TemplateMaskMaker,
    align_template,
    default_template,
    discretize_template,
    generate_mask,
    procrustes_align,
    project_to_landmarks,
    rasterize,
    read_template,
    write_template,
)
from .metrics import (
    ConfusionCounts,
    MetricsReport,
    evaluate_report,
    hausdorff,
    overlap_metrics,
    pixel_accuracy,
)
from .segnet import (
    AUNetSpec,
    AutoencoderSpec,
    GRADCHECK_SPEC,
    MaskAutoencoder,
    FULL_SPEC,
    Pipeline,
    PipelineSpec,
    SequentialLipSegmenter,
    TOY_SPEC,
    TrainConfig,
    infer,
    init_pipeline,
    load_pipeline,
    save_pipeline,
    train_pipeline,
)
from .synth import LipShapeParams, SynthSample, augment, generate
from .texture import GradientField, LbpParams, TextureInputBuilder, build_input, glbp, gradients, lbp

__version__ = "0.1.0"

__all__ = [
    "AUNetSpec", "AutoencoderSpec", "ConfusionCounts", "DensifiedContour",
    "FormatError", "GeometryError", "GradientField", "GRADCHECK_SPEC",
    "LandmarkSet", "LbpParams", "LiplabError", "LipShapeParams",
    "FULL_SPEC", "MaskAutoencoder", "MetricsReport", "NumericalError",
    "Pipeline", "PipelineSpec", "SequentialLipSegmenter", "SimilarityTransform",
    "SynthSample", "TOY_SPEC", "TemplateContour", "TemplateMaskMaker",
    "TextureInputBuilder", "TrainConfig", "align_template", "augment",
    "build_input", "default_template", "discretize_template", "evaluate_report",
    "generate", "generate_mask", "glbp", "gradients", "hausdorff", "infer",
    "init_pipeline", "lbp", "load_pipeline", "overlap_metrics",
    "pixel_accuracy", "procrustes_align", "project_to_landmarks", "rasterize",
    "read_landmarks", "read_mask_pgm", "read_pgm", "read_ppm", "read_template",
    "read_tensor", "save_pipeline", "to_grayscale", "train_pipeline",
    "write_landmarks", "write_mask_pgm", "write_pgm", "write_ppm",
    "write_template", "write_tensor",
]
