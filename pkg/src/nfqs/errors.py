class NfqsError(Exception):
    pass


class ScalePinch(NfqsError):
    """A coupling scale |s|^2 fell to (or below) the invertibility floor."""


class NonFinite(NfqsError):
    """Integration or training produced a non-finite or runaway value."""


class CoincidentParticles(NfqsError):
    pass


class InitialStateNotReached(NfqsError):
    """Variational preparation did not reach the requested fidelity."""


class ConfigError(NfqsError, ValueError):
    pass
