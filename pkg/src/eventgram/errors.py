"""Exception hierarchy and CLI exit codes.

Every error class carries a stable ``code`` string (used in messages and
machine-readable reports) and an ``exit_code`` for the command line surface.
"""
from __future__ import annotations


class EventGramError(Exception):
    """Base class for all package errors."""

    code = "error"
    exit_code = 1


class MalformedDocumentError(EventGramError):
    """A text document (grammar, model, stream, config) could not be parsed."""

    code = "malformed-document"
    exit_code = 3


class StreamFormatError(MalformedDocumentError):
    """A detection stream record violates the frame schema."""

    code = "stream-format"
    exit_code = 3


class GrammarError(EventGramError):
    code = "grammar"
    exit_code = 4


class GrammarValidationError(GrammarError):
    """A grammar invariant (structure, markers, productivity) is violated."""

    code = "grammar-invalid"


class UndefinedSymbolError(GrammarError):
    """A production references a symbol that is neither a terminal nor a head."""

    code = "undefined-symbol"
    exit_code = 3


class ProbabilityNormalizationError(GrammarError):
    """Or-branch probabilities are outside (0, 1] or do not sum to one."""

    code = "probability-normalization"
    exit_code = 3


class DerivationDepthError(GrammarError):
    """Expansion exceeded the derivation depth cap (runaway recursion)."""

    code = "derivation-depth"


class LanguageTooLargeError(GrammarError):
    """Language enumeration exceeded the configured sentence cap."""

    code = "language-too-large"


class ParseRejectedError(GrammarError):
    """An operation that requires an accepted prefix was given a rejected one."""

    code = "parse-rejected"


class UnderivableSentenceError(GrammarError):
    """A corpus sentence is not derivable by the grammar."""

    code = "underivable-sentence"

    def __init__(self, sentence):
        self.sentence = tuple(sentence)
        super().__init__("sentence not derivable: %s" % " ".join(self.sentence))


class ModelError(EventGramError):
    """An emission model violates its invariants or mismatches an alphabet."""

    code = "model-invalid"
    exit_code = 4


class ExperimentStageError(EventGramError):
    """A pipeline stage failed; carries the stage name and the original cause."""

    code = "experiment-stage"
    exit_code = 6

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
