"""Exception types shared across the package."""


class MindstoresError(Exception):
    """Base class for package errors."""


class EmbeddingError(MindstoresError):
    """Embedding service transport or response failure. Callers may retry."""

    retryable = True


class StoreError(MindstoresError):
    """Experience store persistence failure."""


class RecipeError(MindstoresError):
    """Invalid recipe or task table."""


class PlanError(MindstoresError):
    """A plan that cannot be parsed or executed at all (rejected before mutation)."""


class PlanningError(MindstoresError):
    """The planner could not produce a plan."""


class ServiceError(MindstoresError):
    """LLM service transport or protocol failure."""
