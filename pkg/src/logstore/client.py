"""Blocking TCP client for a single node.

Tracks the highest LSN returned by its own writes and passes it along with
reads, so a session always observes its own writes even when pointed at a
follower.
"""

from __future__ import annotations

import socket

from . import wire
from .errors import LogStoreError, NotLeaderError, ReadRejectedError


class ClientError(LogStoreError):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class Client:
    def __init__(self, host: str, port: int, timeout: float = 15.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.last_write_lsn = 0

    def close(self) -> None:
        self.sock.close()

    def __enter__(self) -> "Client":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _call(self, frame: bytes) -> tuple[int, bytes]:
        self.sock.sendall(frame)
        msg_type, payload = wire.read_frame(self.sock)
        if msg_type == wire.MSG_ERR:
            code, message = wire.decode_err(payload)
            if code == wire.ERR_NOT_LEADER:
                raise NotLeaderError(message)
            if code == wire.ERR_REJECTED:
                raise ReadRejectedError(message)
            raise ClientError(code, message)
        return msg_type, payload

    def put(self, key: bytes, value: bytes) -> int:
        _, payload = self._call(wire.encode_put(key, value))
        _, lsn = wire.decode_ok(payload)
        self.last_write_lsn = max(self.last_write_lsn, lsn)
        return lsn

    def delete(self, key: bytes) -> bool:
        _, payload = self._call(wire.encode_delete(key))
        flag, lsn = wire.decode_ok(payload)
        self.last_write_lsn = max(self.last_write_lsn, lsn)
        return flag

    def get(self, key: bytes, view_lsn: int | None = None) -> bytes | None:
        if view_lsn is None:
            view_lsn = self.last_write_lsn
        _, payload = self._call(wire.encode_get(key, view_lsn))
        return wire.decode_value(payload)

    def range(self, start: bytes, end: bytes, limit: int = 0) -> list[tuple[bytes, bytes]]:
        _, payload = self._call(wire.encode_range(start, end, limit))
        return wire.decode_range_result(payload)

    def batch_get(self, keys: list[bytes]) -> list[bytes | None]:
        _, payload = self._call(wire.encode_batch_get(keys))
        return [value for _, value in wire.decode_batch_result(payload)]

    def stats(self) -> str:
        _, payload = self._call(wire.encode_stats())
        return wire.decode_stats_result(payload)

    def promote(self, partition: int) -> int:
        _, payload = self._call(wire.encode_promote(partition))
        _, lsn = wire.decode_ok(payload)
        return lsn
