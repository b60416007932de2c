"""Exception hierarchy shared across the package."""


class PanelFilterError(Exception):
    """Base class for all package-specific errors."""


class LayoutError(PanelFilterError):
    """Parameter layout is inconsistent with the data handed to it."""


class DomainError(PanelFilterError, ValueError):
    """A parameter value lies outside the domain of its transform."""


class ModelError(PanelFilterError):
    """A model callback violated its contract (NaN density, bad shape, ...)."""


class FilteringError(PanelFilterError):
    """A particle filter or iterated filter run became unusable."""


class ConfigError(PanelFilterError):
    """An experiment configuration failed validation."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class CapabilityError(PanelFilterError):
    """The request exceeds a documented capability limit (e.g. exact-MLE dimension cap)."""
