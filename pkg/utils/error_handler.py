"""
Error Types and Exit-Code Mapping

This module defines the exception hierarchy shared by the parser, the
network model, the conic layer, the screening services and the CLI, plus
an ErrorHandler that turns exceptions into process exit codes.
"""

import logging
from typing import Optional, Sequence


class ScreeningError(Exception):
    """
    Base class for every error raised by the screening application
    """


class ConfigurationError(ScreeningError, ValueError):
    """
    Invalid screening or run configuration
    """


# Case data -----------------------------------------------------------------

class CaseDataError(ScreeningError):
    """
    Case file content that cannot be turned into a network
    """


class MissingTable(CaseDataError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"MATPOWER table 'mpc.{name}' not found")


class MalformedRow(CaseDataError):
    def __init__(self, table: str, line: int, detail: str = ''):
        self.table = table
        self.line = line
        message = f"Malformed row in mpc.{table} at line {line}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class DuplicateBusId(CaseDataError):
    def __init__(self, bus_id: int):
        self.bus_id = bus_id
        super().__init__(f"Duplicate bus id {bus_id}")


class UnknownBusReference(CaseDataError):
    def __init__(self, table: str, bus_id: int):
        self.table = table
        self.bus_id = bus_id
        super().__init__(f"mpc.{table} references unknown bus {bus_id}")


class UnsupportedCostModel(CaseDataError):
    def __init__(self, generator: int, detail: str):
        self.generator = generator
        super().__init__(f"Unsupported cost model for generator {generator}: {detail}")


class UnsupportedBranch(CaseDataError):
    def __init__(self, branch: int, detail: str):
        self.branch = branch
        super().__init__(f"Unsupported branch {branch}: {detail}")


class IslandedNetwork(CaseDataError):
    def __init__(self, buses: Sequence[int]):
        self.buses = list(buses)
        preview = ', '.join(str(b) for b in self.buses[:10])
        super().__init__(
            f"{len(self.buses)} bus(es) unreachable from the reference bus: {preview}"
        )


# Conic programs ------------------------------------------------------------

class ProgramError(ScreeningError):
    """
    Invalid conic program construction
    """


class IndexOutOfRange(ProgramError):
    def __init__(self, index: int, num_vars: int):
        self.index = index
        super().__init__(f"Variable index {index} outside [0, {num_vars})")


class OverlappingCone(ProgramError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"Variable {index} already belongs to a cone")


class NumericalFailure(ProgramError):
    def __init__(self, message: str, residuals: Optional[tuple] = None):
        self.residuals = residuals
        super().__init__(message)


# Relaxations ----------------------------------------------------------------

class RelaxationError(ScreeningError):
    """
    Relaxation building or cost-cap resolution failure
    """


class UnsupportedRelaxation(RelaxationError):
    def __init__(self, kind: str):
        self.kind = kind
        super().__init__(f"Relaxation '{kind}' is declared but not implemented")


class NoCostSource(RelaxationError):
    def __init__(self, case_name: str):
        self.case_name = case_name
        super().__init__(f"No cost source available for case '{case_name}'")


# Power flow -----------------------------------------------------------------

class PowerFlowError(ScreeningError):
    """
    Newton-Raphson power flow failure
    """


class Diverged(PowerFlowError):
    def __init__(self, iterations: int, last_residual: float, message: Optional[str] = None):
        self.iterations = iterations
        self.last_residual = last_residual
        super().__init__(
            message or f"Power flow did not converge after {iterations} iterations "
            f"(mismatch {last_residual:.3e})"
        )


class SingularJacobian(Diverged):
    def __init__(self, iterations: int, last_residual: float):
        super().__init__(
            iterations, last_residual, f"Singular Jacobian at iteration {iterations}"
        )


class NoSlackGenerator(PowerFlowError):
    def __init__(self, bus_id: int):
        self.bus_id = bus_id
        super().__init__(
            f"Reference bus {bus_id} has no in-service generator to balance the power flow"
        )


# Reports --------------------------------------------------------------------

class ReportError(ScreeningError):
    """
    Report loading or comparison failure
    """


class CaseMismatch(ReportError):
    def __init__(self, expected: str, found: str):
        self.expected = expected
        self.found = found
        super().__init__(f"Report is for case '{found}', expected '{expected}'")


class IncompatibleReports(ReportError):
    pass


class ValidationFailure(ScreeningError):
    """
    Screening decisions contradicted by oracle samples
    """

    def __init__(self, count: int):
        self.count = count
        super().__init__(f"{count} counterexample(s) found")


class ErrorHandler:
    """
    Map exceptions raised inside command handlers onto CLI exit codes
    """

    EXIT_OK = 0
    EXIT_VALIDATION = 1
    EXIT_USAGE = 2

    def __init__(self):
        self.logger = logging.getLogger(__name__)

    def exit_code(self, error: BaseException) -> int:
        """
        Translate an exception into an exit code, logging it on the way

        :param error: Exception raised by a command
        :return: Process exit code
        """
        if isinstance(error, ValidationFailure):
            self.logger.error(str(error))
            return self.EXIT_VALIDATION
        if isinstance(error, (ScreeningError, OSError)):
            self.logger.error(f"{type(error).__name__}: {error}")
            return self.EXIT_USAGE
        self.logger.exception(f"Unhandled error: {error}")
        return self.EXIT_USAGE


error_handler = ErrorHandler()

__all__ = [
    'ScreeningError', 'ConfigurationError', 'CaseDataError', 'MissingTable',
    'MalformedRow', 'DuplicateBusId', 'UnknownBusReference', 'UnsupportedCostModel',
    'UnsupportedBranch', 'IslandedNetwork', 'ProgramError', 'IndexOutOfRange',
    'OverlappingCone', 'NumericalFailure', 'RelaxationError', 'UnsupportedRelaxation',
    'NoCostSource', 'PowerFlowError', 'Diverged', 'SingularJacobian', 'NoSlackGenerator',
    'ReportError',
    'CaseMismatch', 'IncompatibleReports', 'ValidationFailure', 'ErrorHandler',
    'error_handler'
]
