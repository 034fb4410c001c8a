class MVPSimError(Exception):
    pass


class ConfigError(MVPSimError, ValueError):
    """Invalid configuration or dimensions."""


class NoEstimateError(MVPSimError):
    """A mean or best grasp was requested from a map/cell with no observations."""


class SceneGenerationError(MVPSimError):
    """Rejection sampling could not place every object."""
