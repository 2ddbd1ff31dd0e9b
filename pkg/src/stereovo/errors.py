"""Exception hierarchy shared across the toolkit."""


class StereoVoError(Exception):
    """Base class for all toolkit errors."""


# geometry
class NonPositiveDepth(StereoVoError):
    pass


class NonPositiveDisparity(StereoVoError):
    pass


class EpipolarViolation(StereoVoError):
    pass


# detector
class ImageTooSmall(StereoVoError):
    pass


# descriptor
class MissingDepth(StereoVoError):
    pass


class SupportOutOfBounds(StereoVoError):
    pass


class LengthMismatch(StereoVoError):
    pass


# odometry
class InsufficientMatches(StereoVoError):
    pass


class DegenerateGeometry(StereoVoError):
    pass


class NoConsensus(StereoVoError):
    pass


class TooFewFrames(StereoVoError):
    pass


# evaluation
class MissingGroundTruth(StereoVoError):
    pass


class SequenceTooShort(StereoVoError):
    pass


# dataset io
class MissingCalibration(StereoVoError):
    pass


class MalformedPoseFile(StereoVoError):
    pass


class ImageDecodeError(StereoVoError):
    pass


class IndexOutOfRange(StereoVoError):
    pass
