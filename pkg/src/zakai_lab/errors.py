"""Exception hierarchy shared by all modules."""


class ZakaiLabError(Exception):
    """Base class for errors raised by this package."""


class CoefficientSingularityError(ZakaiLabError):
    def __init__(self, t, cond):
        super().__init__(f"sigma2 is singular at t={t!r} (condition number {cond:.3e})")
        self.t = t
        self.cond = cond


class DivergenceError(ZakaiLabError):
    def __init__(self, step, what="state"):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


class UnsupportedInputError(ZakaiLabError):
    pass


class ZeroMassError(ZakaiLabError):
    pass


class FactorizationError(ZakaiLabError):
    pass


class RiccatiBlowupError(ZakaiLabError):
    def __init__(self, step):
        super().__init__(f"Riccati covariance blew up at step {step}")
        self.step = step


class ConfigError(ZakaiLabError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class MissingArtifactError(ZakaiLabError):
    pass
