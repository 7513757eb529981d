from pii_unlearn.corpus.injection import (
    REPLICATION_BASE,
    Entity,
    EvalRecord,
    EvalSet,
    InjectedCorpus,
    PIISample,
    build_eval_set,
    entity_swap,
    inject,
    make_samples,
    render,
    split_point,
)
from pii_unlearn.corpus.io import (
    read_corpus,
    read_eval_set,
    read_jsonl,
    read_pool,
    read_texts,
    write_corpus,
    write_eval_set,
    write_jsonl,
    write_pool,
    write_texts,
)
from pii_unlearn.corpus.pools import (
    SLOT_TYPES,
    CoverageError,
    DisjointnessError,
    EntityPool,
    check_disjoint,
    make_pool,
)
from pii_unlearn.corpus.templates import (
    DEFAULT_TEMPLATES,
    LABELS,
    Template,
    make_background,
    make_classification_set,
)

__all__ = [
    "DEFAULT_TEMPLATES",
    "LABELS",
    "REPLICATION_BASE",
    "SLOT_TYPES",
    "CoverageError",
    "DisjointnessError",
    "Entity",
    "EntityPool",
    "EvalRecord",
    "EvalSet",
    "InjectedCorpus",
    "PIISample",
    "Template",
    "build_eval_set",
    "check_disjoint",
    "entity_swap",
    "inject",
    "make_background",
    "make_classification_set",
    "make_pool",
    "make_samples",
    "read_corpus",
    "read_eval_set",
    "read_jsonl",
    "read_pool",
    "read_texts",
    "render",
    "split_point",
    "write_corpus",
    "write_eval_set",
    "write_jsonl",
    "write_pool",
    "write_texts",
]
