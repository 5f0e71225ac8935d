class SwarmflowError(RuntimeError):
    pass


class GridMismatch(SwarmflowError):
    pass


class NonZeroMean(SwarmflowError):
    pass


class NegativeDensityError(SwarmflowError):
    pass


class NoCruiseSpeed(SwarmflowError):
    pass


class SingularOnTorus(SwarmflowError):
    pass


class FrictionNotMonotone(SwarmflowError):
    pass


class SwarmDiverged(SwarmflowError):
    pass


class FlockNotConverged(SwarmflowError):
    pass


class DegenerateStrongDensity(SwarmflowError):
    pass


class TimeGridMismatch(SwarmflowError):
    pass


class InadmissibleDensityPotential(SwarmflowError):
    pass


class NonPositiveEnergy(SwarmflowError):
    pass


class LambdaSearchDiverged(SwarmflowError):
    pass


class DissipationBoundUnavailable(SwarmflowError):
    pass


class ConfigError(SwarmflowError):
    def __init__(self, message: str, line: int = None, key: str = None):
        location = []
        if line is not None:
            location.append(f"line {line}")
        if key is not None:
            location.append(f"key '{key}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super(ConfigError, self).__init__(message)
        self.line = line
        self.key = key
