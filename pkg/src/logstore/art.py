"""Adaptive radix tree mapping key bytes to log positions.

Inner nodes resize among 4/16/48/256-child layouts with pessimistic path
compression (the full prefix bytes are stored on the node).  Keys that are
prefixes of other keys are held in the inner node's `value_leaf` slot, which
sorts before all children, so whole-tree iteration is plain byte order.

Index entries carry a version LSN; `put` replaces an entry only when the new
version is strictly higher, which makes recovery replay idempotent.
"""

from __future__ import annotations

import struct
import zlib
from bisect import bisect_left, insort
from typing import BinaryIO, Iterator, NamedTuple

from .errors import SnapshotCorruptError
from .wal import LogPosition

NODE4 = 4
NODE16 = 16
NODE48 = 48
NODE256 = 256

_SNAP_MAGIC = 0x4C534958  # "LSIX"
_SNAP_VERSION = 1
_SNAP_HEADER = struct.Struct("<IB")
_SNAP_ENTRY = struct.Struct("<IIQQ")    # key_len, segment_id, offset, version_lsn
_SNAP_TRAILER = struct.Struct("<QQIQI")  # entry_count, last_lsn, cursor_seg, cursor_off, crc


class IndexEntry(NamedTuple):
    key: bytes
    position: LogPosition
    version_lsn: int


class _Leaf:
    __slots__ = ("key", "segment_id", "offset", "version_lsn")

    def __init__(self, key: bytes, segment_id: int, offset: int, version_lsn: int):
        self.key = key
        self.segment_id = segment_id
        self.offset = offset
        self.version_lsn = version_lsn

    def entry(self) -> IndexEntry:
        return IndexEntry(self.key, LogPosition(self.segment_id, self.offset), self.version_lsn)


class _Node4:
    __slots__ = ("prefix", "value_leaf", "keys", "children")
    kind = NODE4

    def __init__(self, prefix: bytes):
        self.prefix = prefix
        self.value_leaf: _Leaf | None = None
        self.keys: list[int] = []
        self.children: list[object] = []


class _Node16(_Node4):
    __slots__ = ()
    kind = NODE16


class _Node48:
    __slots__ = ("prefix", "value_leaf", "child_index", "children", "free", "count")
    kind = NODE48

    def __init__(self, prefix: bytes):
        self.prefix = prefix
        self.value_leaf: _Leaf | None = None
        self.child_index = [-1] * 256
        self.children: list[object] = []
        self.free: list[int] = []
        self.count = 0


class _Node256:
    __slots__ = ("prefix", "value_leaf", "children", "count")
    kind = NODE256

    def __init__(self, prefix: bytes):
        self.prefix = prefix
        self.value_leaf: _Leaf | None = None
        self.children: list[object | None] = [None] * 256
        self.count = 0


def _child_count(node) -> int:
    if isinstance(node, _Node4):
        return len(node.keys)
    return node.count


def _get_child(node, byte: int):
    if isinstance(node, _Node4):
        i = bisect_left(node.keys, byte)
        if i < len(node.keys) and node.keys[i] == byte:
            return node.children[i]
        return None
    if isinstance(node, _Node48):
        slot = node.child_index[byte]
        return node.children[slot] if slot >= 0 else None
    return node.children[byte]


def _set_child(node, byte: int, child):
    """Insert or replace; returns the node (possibly grown to a bigger kind)."""
    if isinstance(node, _Node4):
        i = bisect_left(node.keys, byte)
        if i < len(node.keys) and node.keys[i] == byte:
            node.children[i] = child
            return node
        cap = 4 if node.kind == NODE4 else 16
        if len(node.keys) < cap:
            node.keys.insert(i, byte)
            node.children.insert(i, child)
            return node
        bigger = _grow(node)
        return _set_child(bigger, byte, child)
    if isinstance(node, _Node48):
        slot = node.child_index[byte]
        if slot >= 0:
            node.children[slot] = child
            return node
        if node.count < 48:
            if node.free:
                slot = node.free.pop()
                node.children[slot] = child
            else:
                slot = len(node.children)
                node.children.append(child)
            node.child_index[byte] = slot
            node.count += 1
            return node
        bigger = _grow(node)
        return _set_child(bigger, byte, child)
    if node.children[byte] is None:
        node.count += 1
    node.children[byte] = child
    return node


def _remove_child(node, byte: int):
    """Remove the child; returns the node (possibly shrunk to a smaller kind)."""
    if isinstance(node, _Node4):
        i = bisect_left(node.keys, byte)
        node.keys.pop(i)
        node.children.pop(i)
        if node.kind == NODE16 and len(node.keys) <= 4:
            return _shrink(node)
        return node
    if isinstance(node, _Node48):
        slot = node.child_index[byte]
        node.child_index[byte] = -1
        node.children[slot] = None
        node.free.append(slot)
        node.count -= 1
        if node.count <= 16:
            return _shrink(node)
        return node
    node.children[byte] = None
    node.count -= 1
    if node.count <= 48:
        return _shrink(node)
    return node


def _items(node) -> Iterator[tuple[int, object]]:
    """Children in ascending byte order."""
    if isinstance(node, _Node4):
        yield from zip(node.keys, node.children)
    elif isinstance(node, _Node48):
        for byte in range(256):
            slot = node.child_index[byte]
            if slot >= 0:
                yield byte, node.children[slot]
    else:
        for byte in range(256):
            child = node.children[byte]
            if child is not None:
                yield byte, child


def _grow(node):
    if node.kind == NODE4:
        new = _Node16(node.prefix)
        new.value_leaf = node.value_leaf
        new.keys = node.keys
        new.children = node.children
        return new
    if node.kind == NODE16:
        new = _Node48(node.prefix)
    else:
        new = _Node256(node.prefix)
    new.value_leaf = node.value_leaf
    for byte, child in _items(node):
        _set_child(new, byte, child)
    return new


def _shrink(node):
    if node.kind == NODE16:
        new = _Node4(node.prefix)
    elif node.kind == NODE48:
        new = _Node16(node.prefix)
    else:
        new = _Node48(node.prefix)
    new.value_leaf = node.value_leaf
    for byte, child in _items(node):
        _set_child(new, byte, child)
    return new


def _common_prefix_len(a: bytes, b: bytes) -> int:
    n = min(len(a), len(b))
    i = 0
    while i < n and a[i] == b[i]:
        i += 1
    return i


class AdaptiveRadixTree:
    """Ordered byte-key index; at most one entry per key."""

    def __init__(self) -> None:
        self.root = None
        self.size = 0

    # -- point operations -------------------------------------------------

    def get(self, key: bytes) -> IndexEntry | None:
        node = self.root
        depth = 0
        while node is not None:
            if isinstance(node, _Leaf):
                return node.entry() if node.key == key else None
            p = node.prefix
            if p and key[depth:depth + len(p)] != p:
                return None
            depth += len(p)
            if depth == len(key):
                leaf = node.value_leaf
                return leaf.entry() if leaf is not None else None
            node = _get_child(node, key[depth])
            depth += 1
        return None

    def put(self, key: bytes, position: LogPosition, version_lsn: int) -> IndexEntry | None:
        """Insert, or replace iff version_lsn is strictly newer.

        Returns the displaced entry; a stale put is a no-op that returns the
        existing (fresher) entry.
        """
        if not key:
            raise ValueError("empty key")
        if self.root is None:
            self.root = _Leaf(key, position.segment_id, position.offset, version_lsn)
            self.size += 1
            return None
        result: list[IndexEntry | None] = [None]
        self.root = self._insert(self.root, key, 0, position, version_lsn, result, False)
        return result[0]

    def reposition(self, key: bytes, position: LogPosition, version_lsn: int) -> bool:
        """Compaction remap: move an entry iff its version matches exactly."""
        leaf = self._find_leaf(key)
        if leaf is None or leaf.version_lsn != version_lsn:
            return False
        leaf.segment_id = position.segment_id
        leaf.offset = position.offset
        return True

    def _find_leaf(self, key: bytes) -> _Leaf | None:
        node = self.root
        depth = 0
        while node is not None:
            if isinstance(node, _Leaf):
                return node if node.key == key else None
            p = node.prefix
            if p and key[depth:depth + len(p)] != p:
                return None
            depth += len(p)
            if depth == len(key):
                return node.value_leaf
            node = _get_child(node, key[depth])
            depth += 1
        return None

    def _update_leaf(self, leaf: _Leaf, position, version_lsn, result) -> None:
        if version_lsn > leaf.version_lsn:
            result[0] = leaf.entry()
            leaf.segment_id = position.segment_id
            leaf.offset = position.offset
            leaf.version_lsn = version_lsn
        else:
            result[0] = leaf.entry()

    def _insert(self, node, key, depth, position, version_lsn, result, _replaced):
        if isinstance(node, _Leaf):
            if node.key == key:
                self._update_leaf(node, position, version_lsn, result)
                return node
            new_leaf = _Leaf(key, position.segment_id, position.offset, version_lsn)
            self.size += 1
            return _split_leaf(node, new_leaf, depth)
        p = node.prefix
        common = _common_prefix_len(key[depth:], p)
        if common < len(p):
            new_leaf = _Leaf(key, position.segment_id, position.offset, version_lsn)
            self.size += 1
            return _split_node(node, new_leaf, depth, common)
        depth += len(p)
        if depth == len(key):
            if node.value_leaf is None:
                node.value_leaf = _Leaf(key, position.segment_id, position.offset, version_lsn)
                self.size += 1
            else:
                self._update_leaf(node.value_leaf, position, version_lsn, result)
            return node
        byte = key[depth]
        child = _get_child(node, byte)
        if child is None:
            leaf = _Leaf(key, position.segment_id, position.offset, version_lsn)
            self.size += 1
            return _set_child(node, byte, leaf)
        new_child = self._insert(child, key, depth + 1, position, version_lsn, result, _replaced)
        if new_child is not child:
            node = _set_child(node, byte, new_child)
        return node

    def remove(self, key: bytes) -> IndexEntry | None:
        if self.root is None:
            return None
        result: list[IndexEntry | None] = [None]
        self.root = self._remove(self.root, key, 0, result)
        if result[0] is not None:
            self.size -= 1
        return result[0]

    def _remove(self, node, key, depth, result):
        if isinstance(node, _Leaf):
            if node.key == key:
                result[0] = node.entry()
                return None
            return node
        p = node.prefix
        if p and key[depth:depth + len(p)] != p:
            return node
        depth += len(p)
        if depth == len(key):
            if node.value_leaf is not None:
                result[0] = node.value_leaf.entry()
                node.value_leaf = None
                return _collapse(node)
            return node
        byte = key[depth]
        child = _get_child(node, byte)
        if child is None:
            return node
        new_child = self._remove(child, key, depth + 1, result)
        if new_child is None:
            node = _remove_child(node, byte)
            return _collapse(node)
        if new_child is not child:
            node = _set_child(node, byte, new_child)
        return node

    # -- ordered iteration --------------------------------------------------

    def items(self) -> Iterator[IndexEntry]:
        yield from self._iter(self.root, b"", None)

    def items_from(self, start_key: bytes) -> Iterator[IndexEntry]:
        yield from self._iter(self.root, b"", start_key)

    def _iter(self, node, path: bytes, start: bytes | None) -> Iterator[IndexEntry]:
        if node is None:
            return
        if isinstance(node, _Leaf):
            if start is None or node.key >= start:
                yield node.entry()
            return
        path = path + node.prefix
        if start is not None:
            bound = start[:len(path)]
            if path < bound:
                return
            if path > bound:
                start = None
        if node.value_leaf is not None and (start is None or path >= start):
            yield node.value_leaf.entry()
        for byte, child in _items(node):
            child_start = start
            if start is not None:
                p = path + bytes([byte])
                bound = start[:len(p)]
                if p < bound:
                    continue
                if p > bound:
                    child_start = None
            yield from self._iter(child, path + bytes([byte]), child_start)

    def range(self, start_key: bytes, end_key: bytes, limit: int | None = None) -> list[IndexEntry]:
        """Entries with start_key <= key < end_key in ascending order."""
        out: list[IndexEntry] = []
        for entry in self.items_from(start_key):
            if entry.key >= end_key:
                break
            out.append(entry)
            if limit is not None and len(out) >= limit:
                break
        return out

    # -- snapshots ------------------------------------------------------------

    def snapshot_write(
        self, sink: BinaryIO, cursor: tuple[int, int] = (0, 0)
    ) -> tuple[int, int]:
        """Serialize all entries in key order; returns (entry_count, last_lsn).

        `cursor` is the log replay position (active segment id, offset) at
        freeze time, stored in the trailer so recovery can seek straight to
        the uncovered tail.
        """
        crc = 0
        header = _SNAP_HEADER.pack(_SNAP_MAGIC, _SNAP_VERSION)
        sink.write(header)
        crc = zlib.crc32(header, crc)
        count = 0
        last_lsn = 0
        for entry in self.items():
            buf = _SNAP_ENTRY.pack(
                len(entry.key), entry.position.segment_id,
                entry.position.offset, entry.version_lsn,
            ) + entry.key
            sink.write(buf)
            crc = zlib.crc32(buf, crc)
            count += 1
            last_lsn = max(last_lsn, entry.version_lsn)
        tail_wo_crc = struct.pack("<QQIQ", count, last_lsn, cursor[0], cursor[1])
        crc = zlib.crc32(tail_wo_crc, crc)
        sink.write(tail_wo_crc + struct.pack("<I", crc))
        return count, last_lsn

    @classmethod
    def snapshot_load(cls, source: BinaryIO) -> tuple["AdaptiveRadixTree", int, tuple[int, int]]:
        """Rebuild a tree from a snapshot; returns (tree, last_lsn, cursor).

        Raises SnapshotCorruptError on truncation or checksum mismatch.
        """
        data = source.read()
        if len(data) < _SNAP_HEADER.size + _SNAP_TRAILER.size:
            raise SnapshotCorruptError("snapshot too short")
        magic, version = _SNAP_HEADER.unpack_from(data)
        if magic != _SNAP_MAGIC or version != _SNAP_VERSION:
            raise SnapshotCorruptError("bad snapshot header")
        count, last_lsn, cur_seg, cur_off, crc = _SNAP_TRAILER.unpack_from(
            data, len(data) - _SNAP_TRAILER.size
        )
        if zlib.crc32(data[:-4]) != crc:
            raise SnapshotCorruptError("snapshot checksum mismatch")
        tree = cls()
        offset = _SNAP_HEADER.size
        body_end = len(data) - _SNAP_TRAILER.size
        loaded = 0
        while offset < body_end:
            key_len, seg, rec_off, lsn = _SNAP_ENTRY.unpack_from(data, offset)
            offset += _SNAP_ENTRY.size
            key = data[offset:offset + key_len]
            offset += key_len
            tree.put(key, LogPosition(seg, rec_off), lsn)
            loaded += 1
        if loaded != count:
            raise SnapshotCorruptError(f"entry count mismatch: {loaded} != {count}")
        return tree, last_lsn, (cur_seg, cur_off)

    # -- debug introspection ---------------------------------------------------

    def node_kinds(self) -> dict[int, int]:
        """Histogram {kind -> count} of inner nodes, for adaptivity tests."""
        hist: dict[int, int] = {}
        stack = [self.root] if self.root is not None else []
        while stack:
            node = stack.pop()
            if isinstance(node, _Leaf):
                continue
            hist[node.kind] = hist.get(node.kind, 0) + 1
            for _, child in _items(node):
                stack.append(child)
        return hist

    def root_kind(self) -> int | None:
        if self.root is None or isinstance(self.root, _Leaf):
            return None
        return self.root.kind


def _split_leaf(old: _Leaf, new: _Leaf, depth: int):
    """Replace a leaf by a Node4 distinguishing two keys below `depth`."""
    a, b = old.key[depth:], new.key[depth:]
    common = _common_prefix_len(a, b)
    node = _Node4(a[:common])
    for leaf, rest in ((old, a), (new, b)):
        if len(rest) == common:
            node.value_leaf = leaf
        else:
            _set_child(node, rest[common], leaf)
    return node


def _split_node(node, new_leaf: _Leaf, depth: int, common: int):
    """Split a compressed prefix at `common` and hang the old node below."""
    p = node.prefix
    parent = _Node4(p[:common])
    node.prefix = p[common + 1:]
    _set_child(parent, p[common], node)
    rest = new_leaf.key[depth + common:]
    if not rest:
        parent.value_leaf = new_leaf
    else:
        _set_child(parent, rest[0], new_leaf)
    return parent


def _collapse(node):
    """Restore path compression after a removal."""
    n = _child_count(node)
    if n == 0:
        return node.value_leaf  # may be None: node vanishes entirely
    if n == 1 and node.value_leaf is None:
        byte, child = next(_items(node))
        if isinstance(child, _Leaf):
            return child
        child.prefix = node.prefix + bytes([byte]) + child.prefix
        return child
    return node
