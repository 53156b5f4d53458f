"""Exception hierarchy shared by every stage of the toolchain."""

from __future__ import annotations


class LPError(Exception):
    """Base class. ``pos`` is an optional (line, col) pair, ``file`` an optional path."""

    def __init__(self, message: str = "", pos: tuple[int, int] | None = None, file: str | None = None):
        super().__init__(message)
        self.message = message
        self.pos = pos
        self.file = file

    @property
    def kind(self) -> str:
        return type(self).__name__

    def where(self) -> str:
        parts = []
        if self.file:
            parts.append(self.file)
        if self.pos:
            parts.extend(str(p) for p in self.pos)
        return ":".join(parts)

    def __str__(self) -> str:
        loc = self.where()
        head = f"{loc}: " if loc else ""
        return f"{head}{self.kind}: {self.message}"


# -- front end (exit status 3) ------------------------------------------------

class FrontendError(LPError):
    pass


class UnterminatedString(FrontendError):
    pass


class IllegalCharacter(FrontendError):
    pass


class ParseError(FrontendError):
    """Syntax error; ``expected`` lists what the parser would have accepted."""

    def __init__(self, message: str, pos=None, expected: tuple[str, ...] = (), file=None):
        super().__init__(message, pos, file)
        self.expected = expected


class DuplicateHeader(ParseError):
    pass


class ClauseInSignature(ParseError):
    pass


class UnknownTypeConstructor(FrontendError):
    pass


class ArityMismatch(FrontendError):
    pass


class ConflictingDeclaration(FrontendError):
    pass


class SignatureMismatch(FrontendError):
    pass


class UseonlyViolation(FrontendError):
    pass


class ExportdefViolation(FrontendError):
    pass


class TypeCheckError(FrontendError):
    pass


class UnknownConstant(FrontendError):
    pass


class LocalConstantInGoal(UnknownConstant):
    """The goal names a constant that exists only behind the module's signature."""


class ModuleNotFound(FrontendError):
    pass


class HeadNotConstant(FrontendError):
    pass


# -- link (exit status 4) -----------------------------------------------------

class LinkError(LPError):
    pass


class CyclicAccumulation(LinkError):
    def __init__(self, cycle: list[str], file=None):
        super().__init__("accumulation cycle " + " -> ".join(cycle), file=file)
        self.cycle = list(cycle)


class MissingObjectFile(LinkError):
    pass


class SignatureSkew(LinkError):
    pass


class RenamingDomainMismatch(LinkError):
    pass


class MergeClosedDefinition(LinkError):
    pass


# -- binary formats -----------------------------------------------------------

class FormatError(LPError):
    pass


class BadMagic(FormatError):
    pass


class UnsupportedVersion(FormatError):
    pass


class Truncated(FormatError):
    pass


class IndexOutOfRange(FormatError):
    pass


class ImageCorrupt(FormatError):
    pass


# -- execution ----------------------------------------------------------------

class ExecutionError(LPError):
    pass


class UnknownPredicate(ExecutionError):
    pass


class DepthLimitExceeded(ExecutionError):
    pass


class MachineFault(ExecutionError):
    pass
