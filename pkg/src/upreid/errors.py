class ContractError(ValueError):
    """An input violates a documented precondition (e.g. a gradient-carrying target)."""


class NonFiniteError(FloatingPointError):
    """A NaN or infinity appeared; ``where`` names the layer or loss component."""

    def __init__(self, where: str, detail: str = ""):
        self.where = where
        super().__init__(f"non-finite value in {where}" + (f": {detail}" if detail else ""))
