"""
生成ワーカー（シナリオ → 合成 → 品質判定）とアノテーションワーカー（体モデルの当てはめ）。
メッセージは再配信されうるので、処理前にジョブの現在の状態を見て冪等に振る舞う。
"""
import logging
import os
import threading
from dataclasses import dataclass, field

import numpy as np

from analyser.quality import quality_gate
from analyser.schemas import Thresholds
from errors import IllegalTransition, LeaseError
from fitter.schemas import FitConfig
from fitter.solver import ANNOTATION_SUFFIX, fit_sequence, save_annotation
from synth_engine.scenario import spec_from_line
from synth_engine.sequence import SEQUENCE_SUFFIX, add_noise, load_sequence, save_sequence, synthesize_sequence
from .schemas import JobStatus, PipelineSettings

logger = logging.getLogger(__name__)

GENERATE_QUEUE = "generate"
ANNOTATE_QUEUE = "annotate"


@dataclass
class PipelineResources:
    """ワーカー間で共有する読み取り専用の資源"""
    tree: object
    scene: list
    catalogs: object
    camera_dist: object
    intrinsics: object = None
    radii: object = None
    thresholds: Thresholds = field(default_factory=Thresholds)
    fit_config: FitConfig = field(default_factory=FitConfig)
    camera_dist_ref: str = "default"
    config_echo: dict = field(default_factory=dict)


@dataclass
class WorkerContext:
    store: object
    queue: object
    resources: PipelineResources
    settings: PipelineSettings
    out_dir: str
    seed: int = 0
    stop: threading.Event = field(default_factory=threading.Event)
    duplicates: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def sequence_path(self, sequence_id):
        return os.path.join(self.out_dir, "sequences", sequence_id + SEQUENCE_SUFFIX)

    def annotation_path(self, sequence_id):
        return os.path.join(self.out_dir, "annotations", sequence_id + ANNOTATION_SUFFIX)

    def provenance(self, **extra):
        """出力に残す来歴: マスターシードと設定の写し"""
        return {"master_seed": self.seed, "config": self.resources.config_echo, **extra}

    def count_duplicate(self):
        with self._lock:
            self.duplicates += 1


def _remove(path):
    if os.path.exists(path):
        os.remove(path)


def _ack(ctx, msg):
    try:
        ctx.queue.ack(msg)
    except LeaseError as e:
        # リース切れ: 再配信されるが状態確認で読み飛ばされる
        logger.warning("ack できません（%s）: %s", msg.key, e)


def _analyse(ctx, sequence_id, seq):
    """GENERATED の系列を判定し ANALYSED か ANALYSIS_FAILED にする。合格なら True"""
    report = quality_gate(seq, ctx.resources.thresholds)
    if report.passed:
        ctx.store.update_status(sequence_id, JobStatus.ANALYSED, expected=JobStatus.GENERATED,
                                quality=report.to_dict())
        return True
    # 不合格のデータは削除する。品質による不合格は再試行しない
    _remove(ctx.sequence_path(sequence_id))
    ctx.store.update_status(
        sequence_id, JobStatus.ANALYSIS_FAILED, expected=JobStatus.GENERATED,
        quality=report.to_dict(), retryable=False,
        last_error="rejected: " + ",".join(sorted(r.value for r in report.reasons)),
    )
    return False


def _generation_failed(ctx, sequence_id, error):
    logger.warning("生成に失敗しました %s: %s", sequence_id, error)
    _remove(ctx.sequence_path(sequence_id))
    job = ctx.store.get(sequence_id)
    if job.status in (JobStatus.QUEUED, JobStatus.GENERATED):
        try:
            ctx.store.update_status(sequence_id, JobStatus.ANALYSIS_FAILED, expected=job.status,
                                    retryable=True, last_error=f"{type(error).__name__}: {error}")
        except IllegalTransition:
            ctx.count_duplicate()


def process_generate(ctx, msg):
    """generate キューの1メッセージを処理する"""
    sequence_id = msg.key
    job = ctx.store.get(sequence_id)
    res = ctx.resources

    if job.status == JobStatus.QUEUED:
        try:
            spec = spec_from_line(msg.payload)
            seq = synthesize_sequence(spec, res.tree, res.scene, res.catalogs, res.camera_dist,
                                      res.intrinsics, res.radii, provenance=ctx.provenance())
            if ctx.settings.noise_sigma > 0:
                seq = add_noise(seq, ctx.settings.noise_sigma, spec.seed)
            path = ctx.sequence_path(sequence_id)
            save_sequence(seq, path)
            ctx.store.update_status(sequence_id, JobStatus.GENERATED, expected=JobStatus.QUEUED,
                                    artifacts={"sequence": path})
            passed = _analyse(ctx, sequence_id, seq)
        except IllegalTransition:
            ctx.count_duplicate()
            passed = False
        except Exception as e:
            _generation_failed(ctx, sequence_id, e)
            passed = False
    elif job.status == JobStatus.GENERATED:
        # 生成後に中断したジョブ: 保存済みの系列から判定を再開する
        try:
            passed = _analyse(ctx, sequence_id, load_sequence(ctx.sequence_path(sequence_id)))
        except IllegalTransition:
            ctx.count_duplicate()
            passed = False
        except Exception as e:
            _generation_failed(ctx, sequence_id, e)
            passed = False
    elif job.status == JobStatus.ANALYSED:
        passed = sequence_id not in ctx.queue.pending_keys(ANNOTATE_QUEUE)
        ctx.count_duplicate()
    else:
        ctx.count_duplicate()
        passed = False

    if passed:
        ctx.queue.enqueue(ANNOTATE_QUEUE, sequence_id, msg.payload)
    _ack(ctx, msg)


def process_annotate(ctx, msg):
    """annotate キューの1メッセージを処理する"""
    sequence_id = msg.key
    job = ctx.store.get(sequence_id)
    if job.status != JobStatus.ANALYSED:
        ctx.count_duplicate()
        _ack(ctx, msg)
        return

    res = ctx.resources
    try:
        seq = load_sequence(job.artifacts.get("sequence") or ctx.sequence_path(sequence_id))
        result = fit_sequence(seq, res.tree, res.fit_config)
        path = ctx.annotation_path(sequence_id)
        save_annotation(result, path, res.fit_config,
                        ctx.provenance(seed=seq.spec.seed, sequence_id=sequence_id))
        ctx.store.update_status(
            sequence_id, JobStatus.ANNOTATED, expected=JobStatus.ANALYSED,
            artifacts={"annotation": path}, wall_time_per_frame=result.wall_time_per_frame,
        )
    except IllegalTransition:
        ctx.count_duplicate()
    except Exception as e:
        logger.warning("アノテーションに失敗しました %s: %s", sequence_id, e)
        try:
            ctx.store.update_status(sequence_id, JobStatus.ANNOTATION_FAILED, expected=JobStatus.ANALYSED,
                                    retryable=True, last_error=f"{type(e).__name__}: {e}")
        except IllegalTransition:
            ctx.count_duplicate()
    _ack(ctx, msg)


def worker_loop(ctx, queue_name, handler, worker_id, rng=None):
    """stop が立つまでキューをポーリングする。nack_rate の割合でわざと nack する"""
    rng = rng if rng is not None else np.random.default_rng([ctx.seed, worker_id])
    settings = ctx.settings
    while not ctx.stop.is_set():
        msg = ctx.queue.dequeue(queue_name, settings.lease_seconds)
        if msg is None:
            ctx.stop.wait(settings.poll_interval)
            continue
        if settings.nack_rate > 0 and rng.random() < settings.nack_rate:
            try:
                ctx.queue.nack(msg)
            except LeaseError:
                pass
            continue
        try:
            handler(ctx, msg)
        except Exception:
            # ここまで来るのはストア自体の障害。メッセージはリース切れで再配信される
            logger.exception("%s worker %d: %s の処理中にエラー", queue_name, worker_id, msg.key)


def start_workers(ctx, gen_workers, fit_workers):
    threads = []
    for i in range(gen_workers):
        threads.append(threading.Thread(
            target=worker_loop, args=(ctx, GENERATE_QUEUE, process_generate, i),
            name=f"generator-{i}", daemon=True,
        ))
    for i in range(fit_workers):
        threads.append(threading.Thread(
            target=worker_loop, args=(ctx, ANNOTATE_QUEUE, process_annotate, gen_workers + i),
            name=f"annotator-{i}", daemon=True,
        ))
    for t in threads:
        t.start()
    return threads


def recover_orphans(ctx, spec_line_for):
    """キューにメッセージのない途中状態のジョブを再投入する（状態書き込み後・投入前の中断）"""
    generate_keys = ctx.queue.pending_keys(GENERATE_QUEUE)
    annotate_keys = ctx.queue.pending_keys(ANNOTATE_QUEUE)
    recovered = 0
    for job in ctx.store.jobs():
        if job.status in (JobStatus.QUEUED, JobStatus.GENERATED) and job.sequence_id not in generate_keys:
            ctx.queue.enqueue(GENERATE_QUEUE, job.sequence_id, spec_line_for(job))
            recovered += 1
        elif job.status == JobStatus.ANALYSED and job.sequence_id not in annotate_keys:
            ctx.queue.enqueue(ANNOTATE_QUEUE, job.sequence_id, spec_line_for(job))
            recovered += 1
    if recovered:
        logger.info("途中状態のジョブを %d 件再投入しました", recovered)
    return recovered
