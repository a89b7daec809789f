"""Exception types raised across the package.

Every error carries enough context to be rendered as a machine-readable
record by the command line front-end (see :func:`HYFaceError.to_record`).
"""


class HYFaceError(Exception):
    """Base class for all package errors."""

    module = "hyface"

    def to_record(self):
        return {
            "error": type(self).__name__,
            "module": self.module,
            "message": str(self),
        }


# audio / dsp
class SampleRateMismatch(HYFaceError):
    module = "audio_dsp"


class AudioTooShort(HYFaceError):
    module = "audio_dsp"


class NoVoicedFrames(HYFaceError):
    module = "audio_dsp"

    def __init__(self, msg, speaker_id=None):
        super().__init__(msg)
        self.speaker_id = speaker_id


class EmptyInput(HYFaceError):
    module = "audio_dsp"


class UnsupportedAudioFormat(HYFaceError):
    module = "audio_dsp"


# dataset
class MissingSplit(HYFaceError):
    module = "dataset"


class EmptyCorpus(HYFaceError):
    module = "dataset"


class DecodeError(HYFaceError):
    module = "dataset"

    def __init__(self, path, reason=""):
        super().__init__(f"cannot decode {path}: {reason}" if reason else f"cannot decode {path}")
        self.path = path


# content provider
class ProviderUnavailable(HYFaceError):
    module = "content_provider"


class ParseError(HYFaceError):
    module = "content_provider"


# shapes and alignment
class FrameMismatch(HYFaceError):
    module = "hyface_model"

    def __init__(self, got, expected, what="frames"):
        super().__init__(f"{what}: got {got}, expected {expected}")
        self.got = got
        self.expected = expected


class ShapeMismatch(HYFaceError):
    module = "hyface_model"


class BadImageShape(HYFaceError):
    module = "hyface_model"


class StructureMismatch(HYFaceError):
    module = "losses"


# training
class NonFiniteLoss(HYFaceError):
    module = "training"

    def __init__(self, step, term):
        super().__init__(f"non-finite loss term {term!r} at step {step}")
        self.step = step
        self.term = term


class ResumeMismatch(HYFaceError):
    module = "training"


# inference
class ConfigMismatch(HYFaceError):
    module = "inference"


class UnknownSpeaker(HYFaceError):
    module = "inference"

    def __init__(self, speaker_id):
        super().__init__(f"unknown speaker {speaker_id!r}")
        self.speaker_id = speaker_id


# evaluation
class DimMismatch(HYFaceError):
    module = "evaluation"


class ZeroNorm(HYFaceError):
    module = "evaluation"


class InsufficientEmbeddings(HYFaceError):
    module = "evaluation"

    def __init__(self, speaker_id, n):
        super().__init__(f"speaker {speaker_id!r} has {n} embedding(s); need >= 2")
        self.speaker_id = speaker_id


class InsufficientSpeakers(HYFaceError):
    module = "evaluation"


class MissingGroundTruth(HYFaceError):
    module = "evaluation"

    def __init__(self, speaker_id):
        super().__init__(f"no ground-truth embedding for speaker {speaker_id!r}")
        self.speaker_id = speaker_id


class LengthMismatch(HYFaceError):
    module = "evaluation"


class DegenerateVariance(HYFaceError):
    module = "evaluation"


class MissingSet(HYFaceError):
    module = "evaluation"


class GenderMismatch(HYFaceError):
    module = "evaluation"


# cli
class ConfigParse(HYFaceError):
    module = "cli"
