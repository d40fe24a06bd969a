"""Exception hierarchy.

DataError subclasses indicate malformed or missing input data (CLI exit
code 2); ConfigError indicates a bad run configuration (exit code 1);
everything else is a runtime failure (exit code 3).
"""


class SkillStreamError(Exception):
    pass


class ConfigError(SkillStreamError):
    pass


class DataError(SkillStreamError):
    pass


# trajectory store
class MissingFile(DataError):
    pass


class UnknownTask(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class NonContiguousOrder(DataError):
    pass


class ShortDemo(DataError):
    pass


class NonMonotoneTime(DataError):
    pass


# segmentation
class EmptySlice(SkillStreamError):
    pass


class ZeroNorm(SkillStreamError):
    pass


class DemoTooShort(SkillStreamError):
    pass


# clustering
class TooFewSegments(SkillStreamError):
    pass


class BadK(SkillStreamError):
    pass


class SingleCluster(SkillStreamError):
    pass


class UnknownPartition(SkillStreamError):
    pass


# replay
class UnknownSkillLabel(SkillStreamError):
    pass


# policies
class EmptyTrainingSet(SkillStreamError):
    pass


class Untrained(SkillStreamError):
    pass


class BadMaskWidth(SkillStreamError):
    pass


# engine
class OutOfOrderTask(SkillStreamError):
    pass


class MissingDemos(DataError):
    pass


class UnlearnedTask(SkillStreamError):
    pass


class BadEpisodeCount(SkillStreamError):
    pass


# metrics
class IncompleteMatrix(SkillStreamError):
    pass


# synthetic benchmark
class InfeasibleProgram(SkillStreamError):
    pass


# cli / reporting
class IncompleteRun(SkillStreamError):
    pass
