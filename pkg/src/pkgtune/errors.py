"""Exception hierarchy.

Every error carries the process exit code the CLI should use for it:
1 for user errors, 2 for build failures, 3 for an incompatible ISA.
"""

from __future__ import annotations


class PkgTuneError(Exception):
    exit_code = 1


class PackageParseError(PkgTuneError):
    """A package file or package definition is malformed."""


class ResolutionError(PkgTuneError):
    """A package name could not be resolved inside the collection."""


class CycleError(PkgTuneError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("dependency cycle: " + " -> ".join(self.cycle))


class CanonicalizationError(PkgTuneError):
    """A derivation violates the ordering rules of the canonical form."""


class CpuParseError(PkgTuneError):
    pass


class UnknownMicroarchError(PkgTuneError):
    def __init__(self, name, valid):
        self.name = name
        self.valid = list(valid)
        super().__init__(
            f"unknown CPU micro-architecture '{name}'; "
            f"valid names are: {', '.join(self.valid)}"
        )


class UnsupportedSystemError(PkgTuneError):
    pass


class TransformationUsageError(PkgTuneError):
    pass


class UnknownRevisionError(PkgTuneError):
    def __init__(self, commit, available):
        self.commit = commit
        self.available = list(available)
        super().__init__(
            f"unknown channel revision '{commit}'; "
            f"available revisions: {', '.join(self.available)}"
        )


class ManifestFormatError(PkgTuneError):
    pass


class MissingProvenanceError(PkgTuneError):
    pass


class UnsupportedFormatError(PkgTuneError):
    pass


class BuildError(PkgTuneError):
    exit_code = 2

    def __init__(self, message, log="", log_path=None):
        self.log = log
        self.log_path = log_path
        super().__init__(message)


class HermeticityError(BuildError):
    """A recipe tried to reach something outside its declared inputs."""


class StoreCorruptionError(BuildError):
    """Two different derivations (or contents) claim one store path."""


class IncompatibleISAError(PkgTuneError):
    exit_code = 3

    def __init__(self, march, missing):
        self.march = march
        self.missing = sorted(missing)
        super().__init__(
            f"refusing to run code built for '{march}': host lacks "
            f"{', '.join(self.missing)}"
        )
