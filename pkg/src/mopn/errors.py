"""Exception types raised across the package."""


class MOPNError(Exception):
    pass


class InvalidInstanceError(MOPNError, ValueError):
    pass


class InvalidWeightError(MOPNError, ValueError):
    pass


class InvalidTourError(MOPNError, ValueError):
    pass


class TsplibParseError(MOPNError, ValueError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class ShapeError(MOPNError, ValueError):
    pass


class EmptySupportError(MOPNError, ValueError):
    pass


class TapeError(MOPNError, RuntimeError):
    pass


class CheckpointError(MOPNError, ValueError):
    pass


class MissingPrerequisiteError(MOPNError, RuntimeError):
    pass


class TrainingDivergedError(MOPNError, RuntimeError):
    pass


class ConfigError(MOPNError, ValueError):
    pass
