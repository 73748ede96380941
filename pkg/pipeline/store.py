"""
ジョブデータベース: 各系列の状態スナップショット（jobs）と追記専用の遷移ログ（transitions）
"""
import json
import logging
import os
import sqlite3
import threading
from contextlib import contextmanager
from datetime import datetime

import pytz

from errors import IllegalTransition, StoreError
from .schemas import FAILED_STATES, JobRecord, JobStatus, is_legal

logger = logging.getLogger(__name__)

# 日本標準時 (JST) のタイムゾーンを取得
jst = pytz.timezone('Asia/Tokyo')


def _now_jst():
    return datetime.now(jst)


class JobStore:
    def __init__(self, path=":memory:", max_attempts=3, clock=None):
        self.path = path
        self.max_attempts = max_attempts
        self._clock = clock or _now_jst
        self._lock = threading.Lock()
        self._conn = sqlite3.connect(path, check_same_thread=False, isolation_level=None)
        self._conn.row_factory = sqlite3.Row
        self._init_db()
        last = self._conn.execute("SELECT MAX(at) FROM transitions").fetchone()[0]
        self._last_ts = datetime.fromisoformat(last) if last else None

    # データベースの初期化
    def _init_db(self):
        c = self._conn
        c.execute('''CREATE TABLE IF NOT EXISTS jobs
                     (sequence_id TEXT PRIMARY KEY,
                      seed INTEGER NOT NULL,
                      status TEXT NOT NULL,
                      attempts INTEGER NOT NULL DEFAULT 0,
                      retryable INTEGER NOT NULL DEFAULT 1,
                      last_error TEXT,
                      created_at TEXT NOT NULL,
                      updated_at TEXT NOT NULL,
                      timestamps TEXT NOT NULL DEFAULT '{}',
                      artifacts TEXT NOT NULL DEFAULT '{}',
                      quality TEXT,
                      wall_time_per_frame REAL)''')
        c.execute('''CREATE TABLE IF NOT EXISTS transitions
                     (seq INTEGER PRIMARY KEY AUTOINCREMENT,
                      sequence_id TEXT NOT NULL,
                      from_status TEXT,
                      to_status TEXT NOT NULL,
                      at TEXT NOT NULL,
                      attempt INTEGER NOT NULL,
                      note TEXT)''')

    def close(self):
        self._conn.close()

    def _timestamp(self):
        # 遷移時刻は単調非減少にする
        now = self._clock()
        if self._last_ts is not None and now < self._last_ts:
            now = self._last_ts
        self._last_ts = now
        return now.isoformat()

    @contextmanager
    def _transaction(self):
        with self._lock:
            try:
                self._conn.execute("BEGIN IMMEDIATE")
            except sqlite3.Error as e:
                raise StoreError(f"トランザクションを開始できません: {e}") from e
            try:
                yield self._conn
            except BaseException:
                self._conn.execute("ROLLBACK")
                raise
            self._conn.execute("COMMIT")

    def _log(self, conn, sequence_id, current, requested, at, attempt, note):
        conn.execute(
            "INSERT INTO transitions (sequence_id, from_status, to_status, at, attempt, note) VALUES (?, ?, ?, ?, ?, ?)",
            (sequence_id, current, requested, at, attempt, note),
        )

    def add_jobs(self, jobs):
        """(sequence_id, seed) の組を PENDING で登録する。既存のIDは無視する"""
        added = 0
        with self._transaction() as conn:
            for sequence_id, seed in jobs:
                at = self._timestamp()
                cur = conn.execute(
                    "INSERT OR IGNORE INTO jobs (sequence_id, seed, status, created_at, updated_at, timestamps) "
                    "VALUES (?, ?, ?, ?, ?, ?)",
                    (sequence_id, int(seed), JobStatus.PENDING.value, at, at,
                     json.dumps({JobStatus.PENDING.value: at})),
                )
                if cur.rowcount:
                    self._log(conn, sequence_id, None, JobStatus.PENDING.value, at, 0, "created")
                    added += 1
        return added

    def _claimable_sql(self):
        failed = ", ".join(f"'{s.value}'" for s in FAILED_STATES)
        return (f"status = '{JobStatus.PENDING.value}' OR "
                f"(status IN ({failed}) AND retryable = 1 AND attempts < ?)")

    def claim_pending(self, n):
        """PENDING または再試行可能な失敗ジョブを最大 n 件 QUEUED にして返す"""
        if n <= 0:
            return []
        with self._transaction() as conn:
            rows = conn.execute(
                f"SELECT sequence_id, status, attempts, timestamps FROM jobs WHERE {self._claimable_sql()} "
                "ORDER BY sequence_id LIMIT ?",
                (self.max_attempts, n),
            ).fetchall()
            for row in rows:
                at = self._timestamp()
                stamps = json.loads(row["timestamps"])
                stamps[JobStatus.QUEUED.value] = at
                conn.execute(
                    "UPDATE jobs SET status = ?, attempts = attempts + 1, updated_at = ?, timestamps = ? "
                    "WHERE sequence_id = ?",
                    (JobStatus.QUEUED.value, at, json.dumps(stamps), row["sequence_id"]),
                )
                self._log(conn, row["sequence_id"], row["status"], JobStatus.QUEUED.value, at,
                          row["attempts"] + 1, "claimed")
        return [row["sequence_id"] for row in rows]

    def update_status(self, sequence_id, new_status, expected=None, note=None, **metadata):
        """
        状態を1つ進める（比較して設定）。expected を渡すと現在の状態がそれと一致する場合のみ更新する。
        metadata: last_error, retryable, artifacts, quality, wall_time_per_frame
        """
        new_status = JobStatus(new_status)
        with self._transaction() as conn:
            row = conn.execute("SELECT * FROM jobs WHERE sequence_id = ?", (sequence_id,)).fetchone()
            if row is None:
                raise StoreError(f"ジョブが存在しません: {sequence_id}")
            current = JobStatus(row["status"])
            if expected is not None and current != JobStatus(expected):
                raise IllegalTransition(sequence_id, current.value, new_status.value)
            if not is_legal(current, new_status):
                raise IllegalTransition(sequence_id, current.value, new_status.value)
            if new_status == JobStatus.QUEUED and not (row["retryable"] and row["attempts"] < self.max_attempts):
                raise IllegalTransition(sequence_id, current.value, new_status.value)

            at = self._timestamp()
            stamps = json.loads(row["timestamps"])
            stamps[new_status.value] = at
            artifacts = json.loads(row["artifacts"])
            artifacts.update(metadata.get("artifacts") or {})
            attempts = row["attempts"] + (1 if new_status == JobStatus.QUEUED else 0)
            quality = metadata.get("quality")
            conn.execute(
                "UPDATE jobs SET status = ?, attempts = ?, retryable = ?, last_error = COALESCE(?, last_error), updated_at = ?, "
                "timestamps = ?, artifacts = ?, quality = COALESCE(?, quality), "
                "wall_time_per_frame = COALESCE(?, wall_time_per_frame) "
                "WHERE sequence_id = ? AND status = ?",
                (
                    new_status.value, attempts, int(metadata.get("retryable", True)),
                    metadata.get("last_error"), at, json.dumps(stamps), json.dumps(artifacts),
                    json.dumps(quality) if quality is not None else None,
                    metadata.get("wall_time_per_frame"), sequence_id, current.value,
                ),
            )
            self._log(conn, sequence_id, current.value, new_status.value, at, attempts,
                      note or metadata.get("last_error"))
        logger.info("%s: %s -> %s", sequence_id, current.value, new_status.value)

    def _record(self, row):
        return JobRecord(
            sequence_id=row["sequence_id"],
            seed=row["seed"],
            status=row["status"],
            attempts=row["attempts"],
            retryable=bool(row["retryable"]),
            last_error=row["last_error"],
            created_at=row["created_at"],
            updated_at=row["updated_at"],
            timestamps=json.loads(row["timestamps"]),
            artifacts=json.loads(row["artifacts"]),
            quality=json.loads(row["quality"]) if row["quality"] else None,
            wall_time_per_frame=row["wall_time_per_frame"],
        )

    def get(self, sequence_id):
        with self._lock:
            row = self._conn.execute("SELECT * FROM jobs WHERE sequence_id = ?", (sequence_id,)).fetchone()
        if row is None:
            raise StoreError(f"ジョブが存在しません: {sequence_id}")
        return self._record(row)

    def jobs(self):
        with self._lock:
            rows = self._conn.execute("SELECT * FROM jobs ORDER BY sequence_id").fetchall()
        return [self._record(r) for r in rows]

    def is_terminal(self, job):
        if job.status == JobStatus.ANNOTATED:
            return True
        if job.status in FAILED_STATES:
            return not job.retryable or job.attempts >= self.max_attempts
        return False

    def counts(self):
        with self._lock:
            rows = self._conn.execute("SELECT status, COUNT(*) AS n FROM jobs GROUP BY status").fetchall()
        counts = {s.value: 0 for s in JobStatus}
        counts.update({r["status"]: r["n"] for r in rows})
        return counts

    def terminal_count(self):
        return sum(1 for job in self.jobs() if self.is_terminal(job))

    def all_terminal(self):
        return all(self.is_terminal(job) for job in self.jobs())

    def transitions(self):
        with self._lock:
            rows = self._conn.execute("SELECT * FROM transitions ORDER BY seq").fetchall()
        return [
            {"seq": r["seq"], "sequence_id": r["sequence_id"], "from": r["from_status"], "to": r["to_status"],
             "at": r["at"], "attempt": r["attempt"], "note": r["note"]}
            for r in rows
        ]

    def export_transitions(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for t in self.transitions():
                f.write(json.dumps(t, ensure_ascii=False) + "\n")


def replay_transitions(transitions, snapshot=None):
    """
    遷移ログを PENDING から再生し、すべて許可された遷移であることを確かめる。
    snapshot（sequence_id → 状態）を渡すと最終状態との一致も確かめる。
    """
    states = {}
    for t in transitions:
        sid = t["sequence_id"]
        if t["from"] is None:
            if sid in states or t["to"] != JobStatus.PENDING.value:
                raise IllegalTransition(sid, None, t["to"])
            states[sid] = JobStatus.PENDING
            continue
        current = states.get(sid)
        if current is None or current.value != t["from"] or not is_legal(current, t["to"]):
            raise IllegalTransition(sid, t["from"], t["to"])
        states[sid] = JobStatus(t["to"])
    if snapshot is not None:
        for sid, status in snapshot.items():
            if states.get(sid) != JobStatus(status):
                raise StoreError(f"遷移ログとスナップショットが一致しません: {sid}")
    return {sid: s.value for sid, s in states.items()}


def load_transitions(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"遷移ログが見つかりません: {path}")
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
