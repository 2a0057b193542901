"""Token id layout: content tokens first, reserved ids on top."""

from dataclasses import dataclass

from .errors import ConfigurationError, ValidationError

# Engine-level sentinel for a masked position inside layouts and sequences.
MASK_TOKEN = -1


@dataclass(frozen=True)
class Vocabulary:
    """
    Id layout for a task with ``content_size`` content tokens.

    Content ids are ``0..K-1``. Reserved ids follow in a fixed order:
    EOS, MASK, PAD and, when tags are enabled, THINK and NO_THINK.
    Predictions cover the content tokens plus EOS; MASK and PAD are never
    predicted.
    """
    content_size: int
    with_tags: bool = True

    def __post_init__(self):
        if self.content_size < 1:
            raise ValidationError(f"content_size must be >= 1, got {self.content_size}")

    @property
    def eos_id(self) -> int:
        return self.content_size

    @property
    def mask_id(self) -> int:
        return self.content_size + 1

    @property
    def pad_id(self) -> int:
        return self.content_size + 2

    @property
    def think_id(self) -> int:
        if not self.with_tags:
            raise ConfigurationError("vocabulary has no reserved THINK token")
        return self.content_size + 3

    @property
    def no_think_id(self) -> int:
        if not self.with_tags:
            raise ConfigurationError("vocabulary has no reserved NO_THINK token")
        return self.content_size + 4

    @property
    def output_size(self) -> int:
        """Number of predictable ids (content + EOS)."""
        return self.content_size + 1

    @property
    def embedding_size(self) -> int:
        """Number of embedding rows (every id, reserved ones included)."""
        return self.content_size + (5 if self.with_tags else 3)

    @property
    def stop_ids(self) -> frozenset[int]:
        """Ids stripped from the tail of generated responses."""
        return frozenset({self.eos_id, self.pad_id})

    def check_ids(self, tokens, what: str = "tokens") -> None:
        """Raise if any id lies outside the embedding table."""
        for tok in tokens:
            if tok < 0 or tok >= self.embedding_size:
                raise ValidationError(
                    f"{what} contain id {tok} outside [0, {self.embedding_size})"
                )
