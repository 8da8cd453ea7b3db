class SfMError(RuntimeError):
    """Base class for reconstruction failures."""


class BehindCameraError(SfMError):
    pass


class EstimationError(SfMError):
    pass


class DegenerateConfigurationError(SfMError):
    pass


class TriangulationError(SfMError):
    pass


class RegistrationError(SfMError):
    pass


class NumericalError(SfMError):
    def __init__(self, message: str, observation: int | None = None):
        super().__init__(message)
        self.observation = observation


class ReconstructionError(SfMError):
    pass


class AlignmentError(SfMError):
    pass
