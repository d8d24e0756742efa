"""Prompt-based emotion labeling through a pluggable chat-completion backend."""

from .backends import (
    AuthenticationError,
    Backend,
    BackendConfig,
    BackendError,
    ChatCompletionBackend,
    CompletionRequest,
    MockBackend,
    RequestTimeoutError,
    RetriesExhaustedError,
    mock_backend,
)
from .prompts import (
    CODE_COUNT,
    FEW_SHOT_COUNT,
    TEMPLATE_VERSION,
    ContextVariant,
    FewShotExample,
    PromptContextError,
    PromptSpec,
    build_prompt,
    parse_label,
    select_few_shot,
    to_few_shot_examples,
)
from .runner import (
    AnnotationCache,
    AnnotationResult,
    AnnotationRunError,
    AnnotationSummary,
    MissingContextFileError,
    annotate,
    annotate_corpus,
    apply_annotations,
    load_annotations,
    write_annotations,
)

__all__ = [
    "AnnotationCache",
    "AnnotationResult",
    "AnnotationRunError",
    "AnnotationSummary",
    "AuthenticationError",
    "Backend",
    "BackendConfig",
    "BackendError",
    "CODE_COUNT",
    "ChatCompletionBackend",
    "CompletionRequest",
    "ContextVariant",
    "FEW_SHOT_COUNT",
    "FewShotExample",
    "MissingContextFileError",
    "MockBackend",
    "PromptContextError",
    "PromptSpec",
    "RequestTimeoutError",
    "RetriesExhaustedError",
    "TEMPLATE_VERSION",
    "annotate",
    "annotate_corpus",
    "apply_annotations",
    "build_prompt",
    "load_annotations",
    "mock_backend",
    "parse_label",
    "select_few_shot",
    "to_few_shot_examples",
    "write_annotations",
]
