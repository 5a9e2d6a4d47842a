from __future__ import annotations

from typing import Optional


class PoolwatchError(Exception):
    """Root of the workspace error hierarchy.

    Messages follow the `"<code>: <detail>"` convention so they stay greppable
    in logs and machine-readable when surfaced by the CLI.
    """

    code = "poolwatch_error"

    def __init__(self, detail: str = "", *, code: Optional[str] = None) -> None:
        if code:
            self.code = code
        self.detail = str(detail)
        super().__init__(f"{self.code}: {self.detail}" if self.detail else self.code)


class InputValidationError(PoolwatchError, ValueError):
    code = "invalid_input"


class WireError(InputValidationError):
    code = "wire_error"


class TruncatedPacketError(WireError):
    code = "truncated_packet"


class FieldRangeError(WireError):
    code = "field_out_of_range"


class TimestampRangeError(WireError):
    code = "timestamp_out_of_range"


class IncomparableFingerprints(InputValidationError):
    code = "incomparable_fingerprints"


class MixedFamilyError(InputValidationError):
    code = "mixed_family"


class DuplicatePrefixError(InputValidationError):
    code = "duplicate_prefix"


class UndefinedShareError(InputValidationError):
    code = "undefined_share"


class DomainError(InputValidationError):
    code = "domain_error"


class ScenarioError(InputValidationError):
    code = "invalid_scenario"


class FunnelInputError(InputValidationError):
    code = "inconsistent_funnel_input"


class NetworkError(PoolwatchError):
    code = "network_error"


class TransportError(NetworkError):
    code = "transport_failure"


class ProtocolError(NetworkError):
    code = "protocol_error"


class NotFoundError(NetworkError):
    code = "not_found"


class StateLockedError(PoolwatchError):
    code = "state_locked"
