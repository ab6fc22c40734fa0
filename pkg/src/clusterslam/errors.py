"""Exception types raised across the package."""


class ClusterSlamError(Exception):
    """Base class for all library errors."""


class BehindCamera(ClusterSlamError):
    pass


class DegenerateGeometry(ClusterSlamError):
    pass


class OutOfBounds(ClusterSlamError):
    pass


class DegenerateUpdate(ClusterSlamError):
    """Bayes update whose elementwise product vanishes (disjoint supports)."""


class EmptyCluster(ClusterSlamError):
    pass


class NoModel(ClusterSlamError):
    """RANSAC found no hypothesis with enough consensus."""


class EmptyWindow(ClusterSlamError):
    pass


class SingularNormalEquations(ClusterSlamError):
    pass


class NoMatches(ClusterSlamError):
    pass


class DegenerateConfiguration(ClusterSlamError):
    pass


class InvalidSpec(ClusterSlamError):
    pass


class ConfigError(ClusterSlamError):
    pass


class StageError(ClusterSlamError):
    """Wraps a module error with the pipeline stage it came from."""

    def __init__(self, stage: str, keyframe, cause: Exception):
        self.stage = stage
        self.keyframe = keyframe
        self.cause = cause
        super().__init__(f"[{stage} @ keyframe {keyframe}] {type(cause).__name__}: {cause}")
