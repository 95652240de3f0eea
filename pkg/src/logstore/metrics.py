"""Instrumentation counters.

Every byte that reaches disk is attributed to exactly one category here,
which is what lets tests prove the write-once property: the only durable
bytes are log records, index snapshots, and the (tiny) manifest.
"""


class Counters:
    __slots__ = (
        "record_bytes",       # bytes of serialized log records (appends + compaction output)
        "append_bytes",       # subset of record_bytes written through append()
        "compaction_bytes",   # subset of record_bytes written by compaction
        "snapshot_bytes",     # index snapshot files
        "manifest_bytes",     # MANIFEST rewrites
        "log_point_reads",    # positioned read_at() calls
        "scan_records",       # records decoded by sequential scans
        "seq_scans",          # number of sequential scan passes
        "group_flushes",      # flush() calls that synced the active segment
        "fsyncs",             # file syncs issued
        "records_replayed",   # records replayed during recovery
    )

    def __init__(self) -> None:
        for name in self.__slots__:
            setattr(self, name, 0)

    def snapshot(self) -> dict:
        return {name: getattr(self, name) for name in self.__slots__}

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Counters({self.snapshot()})"
