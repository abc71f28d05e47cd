"""Exception types shared across the package."""


class LdpiError(Exception):
    """Base class for all errors raised by this package."""


# --- capture files ---------------------------------------------------------

class BadMagic(LdpiError):
    """Stream does not start with a classic pcap magic number."""


class TruncatedFile(LdpiError):
    """A pcap record header or body was cut short."""


class IoFailure(LdpiError):
    """Underlying stream write failed."""


# --- flow tracking ---------------------------------------------------------

class CapacityExceeded(LdpiError):
    """Open-flow table exceeded its configured maximum.

    The tracker recovers by evicting the oldest collecting flows; their
    padded samples (``evicted``) and the observed packet's own emission
    (``result``) ride along so no data is lost.
    """

    def __init__(self, msg, evicted=(), result=None):
        super().__init__(msg)
        self.evicted = list(evicted)
        self.result = result


# --- preprocessing ---------------------------------------------------------

class TooShort(LdpiError):
    """Packet bytes do not cover a minimal IPv4 header."""


# --- network core ----------------------------------------------------------

class ShapeMismatch(LdpiError):
    """Input or parameter shapes do not compose."""


class EpochOutOfRange(LdpiError):
    """Schedule queried outside [0, total_epochs)."""


class ConfigInvalid(LdpiError):
    """A configuration value violates its invariants."""


class CorruptCheckpoint(LdpiError):
    """Checkpoint stream is not a valid model file."""


class CenterMissing(LdpiError):
    """Anomaly scoring requested before the center was fitted."""


# --- training --------------------------------------------------------------

class UnknownKind(LdpiError):
    """Augmentation or shift-transform id is not recognized."""


class DegenerateBatch(LdpiError):
    """Contrastive batch has fewer than 2 distinct positive pairs."""


class EmptyDataset(LdpiError):
    """Training routine received no samples."""


class TooFewSamples(LdpiError):
    """Not enough samples to build the requested folds."""


# --- detection -------------------------------------------------------------

class EmptyScores(LdpiError):
    """Threshold calibration received no scores."""


class TemplateInvalid(LdpiError):
    """Block command template is unusable."""


class ExecFailed(LdpiError):
    """Block command execution returned failure."""


# --- metrics / resources ---------------------------------------------------

class SingleClass(LdpiError):
    """AUC is undefined when only one class is present."""


class NoSuchProcess(LdpiError):
    """Resource sampling target process does not exist."""


class UnsupportedPlatform(LdpiError):
    """No live resource provider is available on this platform."""
