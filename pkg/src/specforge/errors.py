"""Exception hierarchy shared by all pipeline stages."""

from __future__ import annotations


class SpecforgeError(Exception):
    """Base class for every error raised by specforge."""


# ingest

class UnsupportedFormat(SpecforgeError):
    pass


class NoSectionsFound(SpecforgeError):
    pass


# extract / LLM plumbing

class ProviderError(SpecforgeError):
    pass


class SchemaViolation(SpecforgeError):
    def __init__(self, message: str, *, raw: str | None = None, attempts: int = 1):
        super().__init__(message)
        self.raw = raw
        self.attempts = attempts


# graph

class TargetUnreachable(SpecforgeError):
    def __init__(self, targets, mtps=()):
        self.targets = list(targets)
        self.mtps = list(mtps)
        super().__init__("unreachable targets: " + ", ".join(map(str, self.targets)))


# retrieve

class EmptyCorpus(SpecforgeError):
    pass


# iogrammar

class GrammarError(SpecforgeError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"{message} (line {line}, column {col})"
        super().__init__(message)


class GrammarSyntaxError(GrammarError):
    pass


class UndefinedNonterminal(GrammarError):
    def __init__(self, name: str, line: int | None = None, col: int | None = None):
        self.name = name
        super().__init__(f"undefined nonterminal <{name}>", line, col)


class DuplicateDefinition(GrammarError):
    pass


class UnknownPartyTag(GrammarError):
    pass


class DerivationExhausted(SpecforgeError):
    pass


class ParseFailure(SpecforgeError):
    def __init__(self, position: int, expected=(), rule: str | None = None, stack=()):
        self.position = position
        self.expected = sorted(set(expected))
        self.rule = rule
        self.stack = tuple(stack)
        exp = ", ".join(self.expected) or "nothing"
        super().__init__(f"parse failure at byte {position}: expected {exp}")


class UnresolvableFieldRef(SpecforgeError):
    pass


# synth

class InconsistentMtps(SpecforgeError):
    pass


class PatchRejected(SpecforgeError):
    REASONS = ("parse_failure", "schema_failure", "mtp_regression", "unknown_target")

    def __init__(self, reason: str, detail: str = ""):
        assert reason in self.REASONS, reason
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


# harness

class ConnectFailure(SpecforgeError):
    pass


class BindFailure(SpecforgeError):
    pass


class EmptyInput(SpecforgeError):
    pass


# repair

class LocalizationFailure(SpecforgeError):
    pass


# cli

class ConfigError(SpecforgeError):
    pass


class MissingArtifact(SpecforgeError):
    pass
