"""Exception hierarchy shared by all chisep modules.

Every error carries a stable ``code`` string so the CLI can emit
machine-readable error JSON.
"""

from __future__ import annotations


class ChisepError(Exception):
    """Base class for all chisep errors."""

    code = "Error"

    def to_json_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


class InvalidArgument(ChisepError):
    code = "InvalidArgument"


# --- volume ---------------------------------------------------------------

class GridMismatch(ChisepError):
    code = "GridMismatch"


class DegenerateStats(ChisepError):
    code = "DegenerateStats"


class AxisTooShort(ChisepError):
    code = "AxisTooShort"


class DegenerateX(ChisepError):
    code = "DegenerateX"


# --- nifti ----------------------------------------------------------------

class BadMagic(ChisepError):
    code = "BadMagic"


class BadHeader(ChisepError):
    code = "BadHeader"


class UnsupportedDatatype(ChisepError):
    code = "UnsupportedDatatype"


class TruncatedData(ChisepError):
    code = "TruncatedData"


# --- dipole ---------------------------------------------------------------

class BadB0(ChisepError):
    code = "BadB0"


class TooLarge(ChisepError):
    code = "TooLarge"


class BadThreshold(ChisepError):
    code = "BadThreshold"


# --- phantom --------------------------------------------------------------

class PrimitiveOutOfBounds(ChisepError):
    code = "PrimitiveOutOfBounds"


class BadEchoTimes(ChisepError):
    code = "BadEchoTimes"


# --- relaxometry ----------------------------------------------------------

class TooFewEchoes(ChisepError):
    code = "TooFewEchoes"


class NonUniformSpacing(ChisepError):
    code = "NonUniformSpacing"


# --- fieldproc ------------------------------------------------------------

class WrappedInput(ChisepError):
    code = "WrappedInput"


# --- inversion ------------------------------------------------------------

class TooFewOrientations(ChisepError):
    code = "TooFewOrientations"


class BadDr(ChisepError):
    code = "BadDr"


# --- net ------------------------------------------------------------------

class ChannelMismatch(ChisepError):
    code = "ChannelMismatch"


class ShapeMismatch(ChisepError):
    code = "ShapeMismatch"


class PatchTooLarge(ChisepError):
    code = "PatchTooLarge"


class BadAngle(ChisepError):
    code = "BadAngle"


class B0NotAxial(ChisepError):
    code = "B0NotAxial"


class EmptyDataset(ChisepError):
    code = "EmptyDataset"


class DivergedLoss(ChisepError):
    code = "DivergedLoss"


# --- metrics --------------------------------------------------------------

class EmptyResult(ChisepError):
    code = "EmptyResult"


class ZeroPeak(ChisepError):
    code = "ZeroPeak"


class ZeroReference(ChisepError):
    code = "ZeroReference"


class ZeroDynamicRange(ChisepError):
    code = "ZeroDynamicRange"


class NoLabels(ChisepError):
    code = "NoLabels"
