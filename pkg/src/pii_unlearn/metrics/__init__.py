from pii_unlearn.metrics.privacy import (
    BundleRecord,
    GenerationBundle,
    as_bundle,
    e_hit,
    err,
    frs,
    levenshtein,
    privacy_metrics,
    read_bundle,
    s_exp,
    token_f1_suffix,
    write_bundle,
)
from pii_unlearn.metrics.report import (
    PrivacyReport,
    evaluate,
    generate_bundle,
    markdown_table,
    snapshot_id,
)

__all__ = [
    "BundleRecord",
    "GenerationBundle",
    "PrivacyReport",
    "as_bundle",
    "e_hit",
    "err",
    "evaluate",
    "frs",
    "generate_bundle",
    "levenshtein",
    "markdown_table",
    "privacy_metrics",
    "read_bundle",
    "s_exp",
    "snapshot_id",
    "token_f1_suffix",
    "write_bundle",
]
