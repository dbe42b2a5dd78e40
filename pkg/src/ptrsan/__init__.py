"""Identity-based pointer sanitizer for AArch64-style instruction streams."""
from .metadata import (
    MAX_FRAGMENTS, Fragment, Identity, MetadataError, MetaTransform, TransformKind,
    ValueMetadata, meta_combine, meta_concat, meta_empty, meta_insert_bits, meta_pointer,
    meta_reduce, meta_slice, meta_transform,
)
from .annotations import AnnotationDb, AnnotationError, dump_annotations, load_annotations
from .ops import (
    Access, BitFieldCopy, Clear, Combine, Copy, CreateGlobalPointer, CreateStackPointer,
    FunctionCall, Return, SanitizerError, StackChange, Violation, ViolationKind, READ, WRITE,
)
from .engine import SanitizerState, engine_init

__version__ = "0.1.0"
