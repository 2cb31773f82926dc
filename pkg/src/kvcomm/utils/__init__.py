"""Utility modules for kvcomm."""

from kvcomm.utils.validation import ValidationResult, validate_workload

__all__ = ["ValidationResult", "validate_workload"]
