"""Error handling module for pava."""

import logging

logger = logging.getLogger(__name__)


class PavaError(Exception):
    """Base exception class for all pava errors."""

    exit_code = 2  # Runtime failure

    def __init__(
        self,
        message: str,
        details: str | None = None,
        suggestion: str | None = None,
        exit_code: int | None = None,
    ):
        """
        Initialize a new PavaError.

        Args:
            message: The error message
            details: Optional details about the error
            suggestion: Optional suggestion for the user
            exit_code: Optional exit code to override the class default
        """
        super().__init__(message)
        self.message = message
        self.details = details
        self.suggestion = suggestion
        if exit_code is not None:
            self.exit_code = exit_code


class ConfigError(PavaError):
    """Error related to configuration issues."""


class DatasetError(PavaError):
    """Error related to manifests, splits, or clip files."""


class PreprocessError(PavaError):
    """Error raised by frame preprocessing."""


class PrivacyError(PavaError):
    """Error raised while redacting sensitive regions."""


class BackendError(PrivacyError):
    """Error related to a segmentation backend."""

    def __init__(
        self,
        message: str,
        error_type: str = "unknown",
        frame_index: int | None = None,
        exit_code: int | None = None,
    ):
        """Initialize a BackendError.

        Args:
            message: The error message
            error_type: One of the BACKEND_ERROR_TYPES keys
            frame_index: Index of the frame being processed, when known
            exit_code: Optional exit code to override the default
        """
        super().__init__(message, exit_code=exit_code)
        self.error_type = error_type if error_type in BACKEND_ERROR_TYPES else "unknown"
        self.frame_index = frame_index

    @classmethod
    def load_error(cls, message: str) -> "BackendError":
        """Create a backend load error."""
        return cls(message, error_type="load")

    @classmethod
    def inference_error(cls, message: str, frame_index: int | None = None) -> "BackendError":
        """Create an inference error for a given frame."""
        return cls(message, error_type="inference", frame_index=frame_index)


class ModelError(PavaError):
    """Error related to classifier construction, checkpoints, or forward passes."""


class TrainingError(PavaError):
    """Error raised by the training loop."""


class EnsembleError(PavaError):
    """Error related to ensemble weights or members."""


class EvaluationError(PavaError):
    """Error raised while computing or writing metrics."""


BACKEND_ERROR_TYPES = {
    "load": "model file missing or unreadable",
    "inference": "detector failed on a frame",
    "unknown": "unclassified backend failure",
}


def handle_error(error: Exception, quiet: bool = False) -> None:
    """Log an error with a hint about which stage failed.

    Args:
        error: The error to handle
        quiet: If True, only the error line itself is logged
    """
    logger.error(f"Error: {str(error)}")
    if quiet:
        return

    if isinstance(error, BackendError):
        where = f" at frame {error.frame_index}" if error.frame_index is not None else ""
        logger.error(f"Segmentation backend failed{where} ({BACKEND_ERROR_TYPES[error.error_type]}).")
    elif isinstance(error, DatasetError):
        logger.error("Dataset operation failed. Please check the manifest and clip files.")
    elif isinstance(error, TrainingError):
        logger.error("Training aborted.")
    elif isinstance(error, PavaError):
        logger.error(f"{type(error).__name__} raised.")
    else:
        logger.error("An unexpected error occurred.")

    if isinstance(error, PavaError) and error.details:
        logger.error(error.details)


def format_error_for_user(error: Exception) -> str:
    """
    Format an error message for display to the user.

    Args:
        error: The exception to format

    Returns:
        A user-friendly error message with remediation steps if applicable
    """
    base_message = str(error)
    if isinstance(error, PavaError) and error.suggestion:
        return f"{base_message}\n\n{error.suggestion}"

    if isinstance(error, BackendError):
        if error.error_type == "load":
            return f"{base_message}\n\nCheck the model file path (PAVA_MASKRCNN_WEIGHTS) or use --backend fake."
        if error.error_type == "inference":
            return f"{base_message}\n\nRe-run with --fail-open to pass failing frames through unredacted."

    remediation_steps = {
        ConfigError: "Please check the run config file and command-line flags.",
        DatasetError: "Please check that the manifest paths resolve to readable clips.",
        PreprocessError: "Please check the clip contents and preprocessing settings.",
        ModelError: "Please check the checkpoint file and backbone settings.",
        TrainingError: "Try a lower learning rate or inspect the offending batch.",
        EnsembleError: "Please check the member checkpoints and the calibration manifest.",
        EvaluationError: "Please check the output directory and the evaluated manifest.",
    }

    for error_class, steps in remediation_steps.items():
        if isinstance(error, error_class):
            return f"{base_message}\n\n{steps}"

    return f"{base_message}\n\nIf this issue persists, please report it as a bug."
