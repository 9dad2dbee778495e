"""Exception types shared across the package."""


class VlcError(Exception):
    """Base class for all vlcfed errors."""


class InvalidInput(VlcError):
    """Input violates a documented precondition (non-finite values, bad sizes, ...)."""


class DegenerateDistribution(VlcError):
    """Update vector carries too little structure to fit a decay model."""


class InvalidBits(VlcError):
    """Requested code length is outside the supported [1, 32] range."""


class Infeasible(VlcError):
    """No partition satisfies the packet-budget constraints."""


class PacketOverflow(VlcError):
    """Encoded packet would exceed the packet size budget."""


class FieldOverflow(VlcError):
    """A position or centroid ID does not fit its assigned bit width."""


class UnsupportedVersion(VlcError):
    """Packet carries an unknown format version."""


class CorruptPacket(VlcError):
    """Packet bytes are inconsistent with their header."""
