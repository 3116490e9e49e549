"""Exception hierarchy shared by every reservesets module."""


class ReserveSetError(Exception): ...


class DegenerateShape(ReserveSetError): ...


class ZeroDirection(ReserveSetError): ...


class ZeroRealization(ReserveSetError): ...


class NotPSD(ReserveSetError): ...


class SolverStall(ReserveSetError): ...


class NotOptimal(ReserveSetError): ...


class BaseInfeasible(ReserveSetError): ...


class NumericalError(ReserveSetError): ...


class DegenerateWeights(ReserveSetError): ...


class InsufficientCalibration(ReserveSetError): ...


class TooShort(ReserveSetError): ...


class BadParams(ReserveSetError, ValueError): ...


class InfeasibleAtShape(ReserveSetError):
    """Robust SCED had no feasible dispatch at the current shape/radius."""

    def __init__(self, message: str, *, iteration: int | None = None, sample: int | None = None):
        self.iteration = iteration
        self.sample = sample
        where = []
        if iteration is not None:
            where.append(f"iteration {iteration}")
        if sample is not None:
            where.append(f"sample {sample}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class ConfigError(ReserveSetError, ValueError):
    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(f"{message}: '{key}'" if key else message)
