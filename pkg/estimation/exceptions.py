# Base exception: FleetError
class FleetError(Exception):
    """Base class for every error raised by the estimation and simulation packages."""

    def __init__(self, message: str):
        self.message = message
        super().__init__(self.message)

# Custom exception: InvariantError
class InvariantError(FleetError):
    """Raised when a value breaks a unit-norm, symmetry or shape invariant."""

# Custom exception: DomainError
class DomainError(FleetError):
    """Raised when a reduced quaternion vector leaves the closed unit ball."""

# Custom exception: DivergenceError
class DivergenceError(FleetError):
    """Raised when a filter correction cannot be mapped back to a unit dual quaternion."""

# Custom exception: FilterError
class FilterError(FleetError):
    """Raised when a filter step receives missing inputs, mismatched dimensions or singular matrices."""

# Custom exception: GraphError
class GraphError(FleetError):
    """Raised on invalid node ids, sends along non-edges or unusable topologies."""

# Custom exception: ConfigError
class ConfigError(FleetError):
    """Raised when a scenario configuration cannot be parsed or validated."""

# Custom exception: ControlError
class ControlError(FleetError):
    """Raised when the LQR gain cannot be computed."""

# Custom exception: ExportError
class ExportError(FleetError):
    """Raised when writing results to disk fails."""
