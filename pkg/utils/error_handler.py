#!/usr/bin/env python3
"""
Error types and reporting for the SharesSkew workbench
Every domain failure carries a category and a stable code so the CLI can
emit one machine-parsable line per failure.
"""

import json
import logging
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional

EXIT_OK = 0
EXIT_DOMAIN_ERROR = 1
EXIT_UNEXPECTED = 2


class ErrorCategory(Enum):
    """Error categories for classification"""
    CONFIGURATION = "configuration"
    SPECIFICATION = "specification"
    DATA = "data"
    PLANNING = "planning"
    SOLVER = "solver"
    EXECUTION = "execution"
    ORACLE = "oracle"
    UNKNOWN = "unknown"


class SharesSkewError(Exception):
    """Base class for all workbench failures"""

    category = ErrorCategory.UNKNOWN
    code = "unknown"

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.context = context or {}
        self.timestamp = datetime.now()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "category": self.category.value,
            "code": self.code,
            "message": self.message,
            "context": self.context,
            "timestamp": self.timestamp.isoformat(),
        }

    def error_line(self) -> str:
        payload = {
            "category": self.category.value,
            "code": self.code,
            "message": self.message,
            "context": self.context,
        }
        return "ERROR " + json.dumps(payload, sort_keys=True, default=str)


class ConfigurationError(SharesSkewError):
    category = ErrorCategory.CONFIGURATION
    code = "bad_configuration"


class SpecValidationError(SharesSkewError):
    category = ErrorCategory.SPECIFICATION
    code = "invalid_spec"


class UnknownRelationError(SharesSkewError):
    category = ErrorCategory.DATA
    code = "unknown_relation"


class DataFormatError(SharesSkewError):
    category = ErrorCategory.DATA
    code = "bad_data_format"


class ThresholdConfigError(SharesSkewError):
    category = ErrorCategory.CONFIGURATION
    code = "missing_threshold"


class CombinationLimitError(SharesSkewError):
    category = ErrorCategory.PLANNING
    code = "combination_limit"


class InfeasiblePlanError(SharesSkewError):
    category = ErrorCategory.PLANNING
    code = "infeasible_plan"


class SolverConvergenceError(SharesSkewError):
    category = ErrorCategory.SOLVER
    code = "no_convergence"


class UnsupportedClosedFormError(SharesSkewError):
    category = ErrorCategory.SOLVER
    code = "unsupported_closed_form"


class SingularSystemError(SharesSkewError):
    category = ErrorCategory.SOLVER
    code = "singular_system"


class ReducerOverflowError(SharesSkewError):
    category = ErrorCategory.EXECUTION
    code = "reducer_overflow"


class DuplicateOutputError(SharesSkewError):
    category = ErrorCategory.EXECUTION
    code = "duplicate_output"


class CommunicationMismatchError(SharesSkewError):
    category = ErrorCategory.EXECUTION
    code = "communication_mismatch"


class OracleLimitError(SharesSkewError):
    category = ErrorCategory.ORACLE
    code = "oracle_limit"


class ErrorReporter:
    """Logs handled failures, keeps a short history and maps them to exit codes"""

    def __init__(self, logger: Optional[logging.Logger] = None, history_limit: int = 100):
        self.logger = logger or logging.getLogger("ErrorReporter")
        self.history_limit = history_limit
        self.errors: List[Dict[str, Any]] = []
        self.error_counts: Dict[str, int] = {}

    def handle(self, exc: BaseException) -> int:
        """Log the failure and return the process exit code for it"""
        if isinstance(exc, SharesSkewError):
            record = exc.to_dict()
            self.logger.error(f"[{exc.category.value.upper()}] {exc.message}")
            if exc.context:
                self.logger.debug(f"Context: {json.dumps(exc.context, default=str)}")
            exit_code = EXIT_DOMAIN_ERROR
        else:
            record = {
                "category": ErrorCategory.UNKNOWN.value,
                "code": type(exc).__name__,
                "message": str(exc),
                "context": {},
                "timestamp": datetime.now().isoformat(),
            }
            self.logger.exception(f"Unexpected failure: {exc}")
            exit_code = EXIT_UNEXPECTED

        self._track(record)
        return exit_code

    def _track(self, record: Dict[str, Any]) -> None:
        self.errors.append(record)
        self.error_counts[record["code"]] = self.error_counts.get(record["code"], 0) + 1
        if len(self.errors) > self.history_limit:
            self.errors = self.errors[-self.history_limit:]

    @staticmethod
    def error_line(exc: BaseException) -> str:
        if isinstance(exc, SharesSkewError):
            return exc.error_line()
        payload = {
            "category": ErrorCategory.UNKNOWN.value,
            "code": type(exc).__name__,
            "message": str(exc),
            "context": {},
        }
        return "ERROR " + json.dumps(payload, sort_keys=True, default=str)

    def summary(self) -> Dict[str, Any]:
        return {
            "total": sum(self.error_counts.values()),
            "by_code": dict(self.error_counts),
            "last": self.errors[-1] if self.errors else None,
        }
