"""Exception hierarchy. CLI exit codes are attached to the classes."""


class CFAError(Exception):
    exit_code = 1


class ConfigError(CFAError, ValueError):
    exit_code = 2


class ContractError(CFAError, ValueError):
    """A precondition on shapes, lengths or values was violated."""


class DatasetError(CFAError):
    exit_code = 2


class TrainingFault(CFAError, RuntimeError):
    exit_code = 3


class EvaluationError(CFAError):
    exit_code = 4
