"""Byte-exact codec for the TPM 1.2 ``TPM_GetRandom`` command and response.

Request layout (14 bytes, big-endian)::

    offset  size  field
    0       2     tag              0x00C1 (no authorization)
    2       4     param_size       total message length, always 14
    6       4     ordinal          0x00000046
    10      4     bytes_requested  >= 1

Response layout (14 + N bytes, big-endian)::

    0       2     tag              0x00C4
    2       4     param_size       14 + N
    6       4     return_code      0 on success
    10      4     random_bytes_size  N
    14      N     random_bytes

A device may answer with fewer bytes than requested while still reporting
success.  Consumers must trust ``random_bytes_size`` from the response, never
the size they asked for.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

TAG_RQU_COMMAND = 0x00C1
TAG_RSP_COMMAND = 0x00C4
ORD_GET_RANDOM = 0x00000046
HEADER_SIZE = 14

# TPM 1.2 return codes used by the simulated command path.
TPM_SUCCESS = 0x00
TPM_BAD_PARAMETER = 0x03
TPM_FAIL = 0x09
TPM_BAD_ORDINAL = 0x0A
TPM_BAD_PARAM_SIZE = 0x19
TPM_BADTAG = 0x1E

_HEADER = struct.Struct(">HIII")
_UINT16_MAX = 0xFFFF
_UINT32_MAX = 0xFFFFFFFF


class WireError(ValueError):
    """Base class for codec failures.

    ``field`` names the offending field and ``offset`` is its byte offset in
    the encoded message (``None`` when the problem is the buffer length).
    """

    return_code = TPM_BAD_PARAMETER

    def __init__(self, message: str, field: str | None = None, offset: int | None = None):
        self.field = field
        self.offset = offset
        where = ""
        if field is not None:
            where = f" [field={field}"
            where += f", offset={offset}]" if offset is not None else "]"
        super().__init__(message + where)


class TruncatedMessage(WireError):
    return_code = TPM_BAD_PARAM_SIZE


class OversizedMessage(WireError):
    return_code = TPM_BAD_PARAM_SIZE


class FramingError(WireError):
    """Length fields disagree with each other or with the buffer."""

    return_code = TPM_BAD_PARAM_SIZE


class ProtocolError(WireError):
    """Wrong tag or ordinal."""

    return_code = TPM_BADTAG


class InvalidField(WireError):
    """A field value is out of range for its declared width or contract."""


_FIELD_OFFSETS = {
    "tag": 0,
    "param_size": 2,
    "ordinal": 6,
    "return_code": 6,
    "bytes_requested": 10,
    "random_bytes_size": 10,
    "random_bytes": 14,
}


def _check_width(name: str, value: int, limit: int) -> None:
    if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value <= limit:
        raise InvalidField(f"{name}={value!r} does not fit", name, _FIELD_OFFSETS[name])


@dataclass(frozen=True)
class GetRandomRequest:
    bytes_requested: int
    tag: int = TAG_RQU_COMMAND
    param_size: int = HEADER_SIZE
    ordinal: int = ORD_GET_RANDOM

    def validate(self) -> None:
        _check_width("tag", self.tag, _UINT16_MAX)
        _check_width("param_size", self.param_size, _UINT32_MAX)
        _check_width("ordinal", self.ordinal, _UINT32_MAX)
        _check_width("bytes_requested", self.bytes_requested, _UINT32_MAX)
        if self.tag != TAG_RQU_COMMAND:
            raise ProtocolError(f"request tag must be 0x{TAG_RQU_COMMAND:04X}, got 0x{self.tag:04X}", "tag", 0)
        if self.param_size != HEADER_SIZE:
            raise FramingError(f"request param_size must be {HEADER_SIZE}, got {self.param_size}", "param_size", 2)
        if self.ordinal != ORD_GET_RANDOM:
            raise ProtocolError(f"ordinal must be 0x{ORD_GET_RANDOM:08X}, got 0x{self.ordinal:08X}", "ordinal", 6)
        if self.bytes_requested < 1:
            raise InvalidField("bytes_requested must be >= 1", "bytes_requested", 10)


@dataclass(frozen=True)
class GetRandomResponse:
    tag: int
    param_size: int
    return_code: int
    random_bytes_size: int
    random_bytes: bytes

    @classmethod
    def success(cls, payload: bytes) -> GetRandomResponse:
        payload = bytes(payload)
        return cls(TAG_RSP_COMMAND, HEADER_SIZE + len(payload), TPM_SUCCESS, len(payload), payload)

    @classmethod
    def failure(cls, return_code: int) -> GetRandomResponse:
        if return_code == TPM_SUCCESS:
            raise InvalidField("failure response needs a nonzero return_code", "return_code", 6)
        return cls(TAG_RSP_COMMAND, HEADER_SIZE, return_code, 0, b"")

    @property
    def ok(self) -> bool:
        return self.return_code == TPM_SUCCESS

    def validate(self) -> None:
        _check_width("tag", self.tag, _UINT16_MAX)
        _check_width("param_size", self.param_size, _UINT32_MAX)
        _check_width("return_code", self.return_code, _UINT32_MAX)
        _check_width("random_bytes_size", self.random_bytes_size, _UINT32_MAX)
        if self.tag != TAG_RSP_COMMAND:
            raise ProtocolError(f"response tag must be 0x{TAG_RSP_COMMAND:04X}, got 0x{self.tag:04X}", "tag", 0)
        if self.random_bytes_size != len(self.random_bytes):
            raise FramingError(
                f"random_bytes_size={self.random_bytes_size} but payload has {len(self.random_bytes)} bytes",
                "random_bytes_size", 10,
            )
        if self.param_size != HEADER_SIZE + self.random_bytes_size:
            raise FramingError(
                f"param_size={self.param_size} but message length is {HEADER_SIZE + self.random_bytes_size}",
                "param_size", 2,
            )
        if self.return_code != TPM_SUCCESS and self.random_bytes_size != 0:
            raise FramingError("failure response must carry an empty payload", "random_bytes_size", 10)


def encode_request(req: GetRandomRequest) -> bytes:
    req.validate()
    return _HEADER.pack(req.tag, req.param_size, req.ordinal, req.bytes_requested)


def decode_request(raw: bytes) -> GetRandomRequest:
    raw = bytes(raw)
    if len(raw) < HEADER_SIZE:
        raise TruncatedMessage(f"request is {len(raw)} bytes, expected {HEADER_SIZE}")
    if len(raw) > HEADER_SIZE:
        raise OversizedMessage(f"request is {len(raw)} bytes, expected {HEADER_SIZE}")
    tag, param_size, ordinal, requested = _HEADER.unpack(raw)
    req = GetRandomRequest(bytes_requested=requested, tag=tag, param_size=param_size, ordinal=ordinal)
    req.validate()
    return req


def encode_response(resp: GetRandomResponse) -> bytes:
    resp.validate()
    return _HEADER.pack(resp.tag, resp.param_size, resp.return_code, resp.random_bytes_size) + resp.random_bytes


def decode_response(raw: bytes) -> GetRandomResponse:
    """Parse a response buffer.

    ``random_bytes_size`` is authoritative: a success response carrying fewer
    bytes than were requested is a valid (truncated) answer, not an error.
    """
    raw = bytes(raw)
    if len(raw) < HEADER_SIZE:
        raise TruncatedMessage(f"response is {len(raw)} bytes, header alone needs {HEADER_SIZE}")
    tag, param_size, return_code, size = _HEADER.unpack_from(raw)
    if tag != TAG_RSP_COMMAND:
        raise ProtocolError(f"response tag must be 0x{TAG_RSP_COMMAND:04X}, got 0x{tag:04X}", "tag", 0)
    if param_size != len(raw):
        raise FramingError(f"param_size={param_size} but buffer holds {len(raw)} bytes", "param_size", 2)
    if size != param_size - HEADER_SIZE:
        raise FramingError(
            f"random_bytes_size={size} disagrees with param_size={param_size}", "random_bytes_size", 10
        )
    resp = GetRandomResponse(tag, param_size, return_code, size, raw[HEADER_SIZE:])
    resp.validate()
    return resp
