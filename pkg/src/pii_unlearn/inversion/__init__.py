from pii_unlearn.inversion.align import AlignmentError, alignment_map, check_total
from pii_unlearn.inversion.annotate import (
    ENDPOINT_ENV,
    Annotation,
    AnnotationError,
    AnnotatorKind,
    AnnotatorSpec,
    Span,
    annotate,
    annotate_many,
    builtin_spans,
    external_spans,
    mask_to_spans,
    normalize_spans,
    spans_to_mask,
)
from pii_unlearn.inversion.inverter import (
    Inverter,
    InverterConfig,
    conditioning,
    init_inverter,
    invert,
    soft_embed,
    teacher_forced_ce,
    tempered_weights,
    train_inverter,
)
from pii_unlearn.inversion.logits import LogitRecord, precompute_logits, stack_logprobs
from pii_unlearn.inversion.quality import corpus_bleu, inversion_quality, token_f1
from pii_unlearn.inversion.synth import PseudoSample, PseudoSet, build_pseudo_set, synthesize_pseudo

__all__ = [
    "AlignmentError",
    "Annotation",
    "AnnotationError",
    "AnnotatorKind",
    "AnnotatorSpec",
    "ENDPOINT_ENV",
    "Inverter",
    "InverterConfig",
    "LogitRecord",
    "PseudoSample",
    "PseudoSet",
    "Span",
    "alignment_map",
    "annotate",
    "annotate_many",
    "build_pseudo_set",
    "builtin_spans",
    "check_total",
    "conditioning",
    "corpus_bleu",
    "external_spans",
    "init_inverter",
    "invert",
    "inversion_quality",
    "mask_to_spans",
    "normalize_spans",
    "precompute_logits",
    "soft_embed",
    "spans_to_mask",
    "stack_logprobs",
    "synthesize_pseudo",
    "teacher_forced_ce",
    "tempered_weights",
    "token_f1",
]
