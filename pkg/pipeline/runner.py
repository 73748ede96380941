"""
パイプライン全体の実行: ジョブ登録 → 取得してキュー投入 → ワーカーが生成・判定・アノテーション
"""
import json
import logging
import os

from tqdm import tqdm

from synth_engine.scenario import generate_scenario, scenario_seeds, spec_to_line
from .queue import MessageQueue
from .schemas import PipelineSettings, PipelineSummary
from .store import JobStore
from .workers import GENERATE_QUEUE, WorkerContext, recover_orphans, start_workers

logger = logging.getLogger(__name__)

DATABASE_NAME = "pipeline.db"
QUEUE_NAME = "queue.db"
TRANSITIONS_NAME = "transitions.jsonl"
SUMMARY_NAME = "summary.json"


def open_services(out_dir, settings, in_memory=False):
    if in_memory:
        return JobStore(":memory:", settings.max_attempts), MessageQueue(":memory:")
    return (
        JobStore(os.path.join(out_dir, DATABASE_NAME), settings.max_attempts),
        MessageQueue(os.path.join(out_dir, QUEUE_NAME)),
    )


def run_pipeline(resources, settings=None, out_dir="out", seed=0, store=None, queue=None, progress=True):
    """すべてのジョブが終端状態になるまで実行し、状態ごとの件数を返す"""
    settings = settings or PipelineSettings()
    os.makedirs(os.path.join(out_dir, "sequences"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "annotations"), exist_ok=True)
    if store is None or queue is None:
        store, queue = open_services(out_dir, settings)

    jobs = scenario_seeds(seed, settings.sequences)
    added = store.add_jobs(jobs)
    logger.info("ジョブ %d 件（新規 %d 件）", len(jobs), added)

    def spec_line_for(job):
        spec = generate_scenario(job.seed, resources.catalogs, resources.camera_dist_ref,
                                 sequence_id=job.sequence_id, location_extent=settings.location_extent)
        return spec_to_line(spec)

    ctx = WorkerContext(store=store, queue=queue, resources=resources, settings=settings,
                        out_dir=out_dir, seed=seed)
    recover_orphans(ctx, spec_line_for)
    threads = start_workers(ctx, settings.gen_workers, settings.fit_workers)

    total = len(store.jobs())
    bar = tqdm(total=total, desc="pipeline", unit="seq", disable=not progress)
    try:
        while True:
            for sequence_id in store.claim_pending(settings.claim_batch):
                queue.enqueue(GENERATE_QUEUE, sequence_id, spec_line_for(store.get(sequence_id)))
            done = store.terminal_count()
            bar.update(done - bar.n)
            if done == total:
                break
            if not any(t.is_alive() for t in threads):
                logger.error("ワーカーがすべて停止しました")
                break
            ctx.stop.wait(settings.poll_interval)
    finally:
        ctx.stop.set()
        for t in threads:
            t.join()
        bar.close()

    summary = PipelineSummary(
        total=total,
        counts=store.counts(),
        all_terminal=store.all_terminal(),
        seed=seed,
        settings=settings,
        duplicate_deliveries=ctx.duplicates,
    )
    store.export_transitions(os.path.join(out_dir, TRANSITIONS_NAME))
    with open(os.path.join(out_dir, SUMMARY_NAME), "w", encoding="utf-8") as f:
        json.dump(summary.to_dict(), f, indent=1, ensure_ascii=False)
        f.write("\n")
    logger.info("pipeline summary: %s", summary.counts)
    return summary
