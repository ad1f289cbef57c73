"""Exception types raised across the simulator."""


class IdtSimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(IdtSimError):
    pass


class RegionOverlap(IdtSimError):
    pass


class BudgetExceeded(IdtSimError):
    pass


class ProtectionFault(IdtSimError):
    """User-mode access to a page that is not user accessible."""


class ZeroTargetByte(IdtSimError):
    """The oracle target byte is architecturally zero, so cached == uncached."""


class InsufficientUserMemory(IdtSimError):
    pass


class NoDistinctEntry(IdtSimError):
    """Templating found no IDT line whose count differential beats the threshold."""


class DegenerateDataset(IdtSimError):
    pass


class LengthMismatch(IdtSimError):
    pass


class EmptyTruth(IdtSimError):
    pass


class UsageError(IdtSimError):
    pass


class ProfileLibraryMissing(IdtSimError):
    pass
