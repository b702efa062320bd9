"""Hardware abstraction: device client, wire schema, and mock device."""

from chimera.ghost.client import (
    GhostClient,
    ShareSubscription,
    poll_telemetry,
    set_operating_point,
    subscribe_shares,
)
from chimera.ghost.mock import MockConfig, MockDevice, MockServer, serve_mock
from chimera.ghost.schema import (
    DeviceEndpoint,
    GhostError,
    InvalidOperatingPoint,
    OperatingPoint,
    ProtocolError,
    ShareStreamDisconnected,
    Telemetry,
    TransportError,
    VerificationError,
)

__all__ = [
    "DeviceEndpoint", "GhostClient", "GhostError", "InvalidOperatingPoint", "MockConfig",
    "MockDevice", "MockServer", "OperatingPoint", "ProtocolError", "ShareStreamDisconnected",
    "ShareSubscription", "Telemetry", "TransportError", "VerificationError", "poll_telemetry",
    "serve_mock", "set_operating_point", "subscribe_shares",
]
