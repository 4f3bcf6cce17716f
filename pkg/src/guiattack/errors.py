"""Exception hierarchy shared by every module."""


class GuiAttackError(Exception):
    """Base class for domain errors (CLI maps these to exit code 1)."""


class BoundsError(GuiAttackError, ValueError):
    """A rectangle or sprite placement falls outside the image it indexes."""


class ConfigurationError(GuiAttackError):
    pass


class NumericError(GuiAttackError, ArithmeticError):
    """Non-finite weights, gradients or activations."""


class TrainingFailure(GuiAttackError):
    pass


class ModelQualityError(GuiAttackError):
    """Raised when a model is too degenerate to drive the workflow."""
