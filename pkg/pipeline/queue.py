"""
メッセージFIFOキュー（リース付き、少なくとも1回の配信）
"""
import logging
import sqlite3
import threading
import time
import uuid
from contextlib import contextmanager

from errors import LeaseError, QueueError
from .schemas import QueueMessage

logger = logging.getLogger(__name__)


class MessageQueue:
    """
    dequeue したメッセージはリース期限まで他の消費者から見えない。
    ack で削除、nack またはリース切れで再び見えるようになり、次の dequeue で配信回数が増える。
    """

    def __init__(self, path=":memory:", clock=time.time):
        self.path = path
        self._clock = clock
        self._lock = threading.Lock()
        self._conn = sqlite3.connect(path, check_same_thread=False, isolation_level=None)
        self._conn.row_factory = sqlite3.Row
        self._conn.execute('''CREATE TABLE IF NOT EXISTS messages
                              (seq INTEGER PRIMARY KEY AUTOINCREMENT,
                               queue TEXT NOT NULL,
                               key TEXT NOT NULL,
                               payload TEXT NOT NULL,
                               lease_deadline REAL,
                               lease_token TEXT,
                               delivery_count INTEGER NOT NULL DEFAULT 0)''')
        self._conn.execute("CREATE INDEX IF NOT EXISTS messages_queue ON messages (queue, seq)")

    def close(self):
        self._conn.close()

    @contextmanager
    def _transaction(self):
        with self._lock:
            try:
                self._conn.execute("BEGIN IMMEDIATE")
            except sqlite3.Error as e:
                raise QueueError(f"トランザクションを開始できません: {e}") from e
            try:
                yield self._conn
            except BaseException:
                self._conn.execute("ROLLBACK")
                raise
            self._conn.execute("COMMIT")

    def enqueue(self, queue, key, payload):
        with self._transaction() as conn:
            cur = conn.execute(
                "INSERT INTO messages (queue, key, payload) VALUES (?, ?, ?)", (queue, key, payload)
            )
            return cur.lastrowid

    def dequeue(self, queue, lease_s):
        """見えているメッセージのうち最も古いものをリースする。なければ None"""
        if lease_s <= 0:
            raise QueueError("リース期間は正でなければなりません")
        with self._transaction() as conn:
            now = self._clock()
            row = conn.execute(
                "SELECT * FROM messages WHERE queue = ? AND (lease_deadline IS NULL OR lease_deadline <= ?) "
                "ORDER BY seq LIMIT 1",
                (queue, now),
            ).fetchone()
            if row is None:
                return None
            token = uuid.uuid4().hex
            deadline = now + lease_s
            conn.execute(
                "UPDATE messages SET lease_deadline = ?, lease_token = ?, delivery_count = delivery_count + 1 "
                "WHERE seq = ?",
                (deadline, token, row["seq"]),
            )
        return QueueMessage(
            seq=row["seq"], queue=row["queue"], key=row["key"], payload=row["payload"],
            lease_deadline=deadline, lease_token=token, delivery_count=row["delivery_count"] + 1,
        )

    def _release(self, msg, sql):
        with self._transaction() as conn:
            cur = conn.execute(sql, (msg.seq, msg.lease_token, self._clock()))
            if cur.rowcount == 0:
                raise LeaseError(f"リースが存在しないか期限切れです: {msg.queue}#{msg.seq}")

    def ack(self, msg):
        self._release(msg, "DELETE FROM messages WHERE seq = ? AND lease_token = ? AND lease_deadline > ?")

    def nack(self, msg):
        self._release(
            msg,
            "UPDATE messages SET lease_deadline = NULL, lease_token = NULL "
            "WHERE seq = ? AND lease_token = ? AND lease_deadline > ?",
        )

    def size(self, queue=None):
        with self._lock:
            if queue is None:
                return self._conn.execute("SELECT COUNT(*) FROM messages").fetchone()[0]
            return self._conn.execute("SELECT COUNT(*) FROM messages WHERE queue = ?", (queue,)).fetchone()[0]

    def pending_keys(self, queue):
        """キューに残っている（リース中を含む）メッセージのキー"""
        with self._lock:
            rows = self._conn.execute("SELECT DISTINCT key FROM messages WHERE queue = ?", (queue,)).fetchall()
        return {r["key"] for r in rows}
