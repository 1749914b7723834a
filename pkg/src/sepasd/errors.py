"""Exception types raised across the pipeline."""


class SepAsdError(Exception):
    """Base class for all package errors."""


class ManifestError(SepAsdError):
    pass


class InvalidDomain(ManifestError):
    pass


class InvalidSplit(ManifestError):
    pass


class InvalidLabel(ManifestError):
    pass


class AnomalousInTrain(ManifestError):
    pass


class DuplicateId(ManifestError):
    pass


class AudioError(SepAsdError):
    pass


class SampleRateMismatch(AudioError):
    def __init__(self, rate: int):
        super().__init__(f"SampleRateMismatch({rate})")
        self.rate = rate


class ClipTooShort(AudioError):
    pass


class SilentSignal(SepAsdError):
    pass


class ConfigMismatch(SepAsdError):
    pass


class CorruptCheckpoint(SepAsdError):
    pass


class CheckpointNotFound(SepAsdError):
    pass


class NonFiniteValues(SepAsdError):
    pass


class Diverged(SepAsdError):
    def __init__(self, epoch: int):
        super().__init__(f"Diverged({epoch})")
        self.epoch = epoch


class NoNontargetClasses(SepAsdError):
    pass


class EmptyClassPool(SepAsdError):
    pass


class UndefinedMetric(SepAsdError):
    pass
