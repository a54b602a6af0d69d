class ConfigError(ValueError):
    """Invalid or incomplete configuration; ``key`` names the offending entry when known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class NonFiniteLossError(RuntimeError):
    def __init__(self, term: str, epoch: int, iteration: int, value: float):
        super().__init__(f"non-finite {term} ({value}) at epoch {epoch}, iteration {iteration}")
        self.term = term
        self.epoch = epoch
        self.iteration = iteration
