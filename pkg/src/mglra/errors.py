class ContractError(RuntimeError):
    """A module precondition or state contract was violated."""
