"""Inference throughput and latency measurement.

Methodology: eval-mode forward passes over a pre-allocated random batch.
`warmup` untimed passes come first, then `repeats` timed runs of
`iterations` batches each. FPS is batch * iterations * repeats divided by
the summed elapsed time; the per-repeat rates give the coefficient of
variation. Per-batch latencies come from the same timestamp stream, so
every reported number can be recomputed from the raw log.
"""

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np


@dataclass
class BenchReport:
    fps: float
    p50_ms: float
    p95_ms: float
    batch_size: int
    iterations: int
    warmup: int
    repeats: int
    cov: float
    elapsed: list          # per-repeat wall seconds
    latencies_ms: list     # pooled per-batch milliseconds
    threads: int = 1
    flagged: bool = False  # CoV exceeded 10%

    def text(self):
        lines = [
            f"{'fps':<14}{self.fps:.2f}",
            f"{'p50_ms':<14}{self.p50_ms:.3f}",
            f"{'p95_ms':<14}{self.p95_ms:.3f}",
            f"{'batch':<14}{self.batch_size}",
            f"{'iterations':<14}{self.iterations}",
            f"{'warmup':<14}{self.warmup}",
            f"{'repeats':<14}{self.repeats}",
            f"{'threads':<14}{self.threads}",
            f"{'cov':<14}{self.cov:.4f}",
        ]
        if self.flagged:
            lines.append("note          CoV above 10%: machine may not be idle")
        return "\n".join(lines)

    def to_json(self):
        return json.dumps({
            "fps": self.fps, "p50_ms": self.p50_ms, "p95_ms": self.p95_ms,
            "batch_size": self.batch_size, "iterations": self.iterations,
            "warmup": self.warmup, "repeats": self.repeats, "cov": self.cov,
            "threads": self.threads, "flagged": self.flagged,
            "elapsed_s": self.elapsed, "latencies_ms": self.latencies_ms,
        }, indent=2)


def forward_sharded(model, x, threads):
    """Split the batch into `threads` contiguous shards and run eval-mode
    forwards concurrently on structural clones sharing the same weights."""
    shards = np.array_split(np.arange(x.shape[0]), threads)
    shards = [s for s in shards if len(s)]
    clones = [model.clone_for_inference() for _ in shards]
    with ThreadPoolExecutor(max_workers=len(shards)) as pool:
        outs = list(pool.map(lambda cs: cs[0].forward(x[cs[1]], train=False),
                             zip(clones, shards)))
    return np.concatenate(outs, axis=0)


def measure_fps(model, batch_size=50, iterations=10, warmup=3, repeats=5,
                seed=0, threads=1):
    """Time eval-mode inference; returns a BenchReport.

    The input tensor is allocated once, outside every timed region.
    """
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    r = model.config.resolution
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch_size, 3, r, r)).astype(model.dtype)

    runner = (lambda: model.forward(x, train=False)) if threads <= 1 \
        else (lambda: forward_sharded(model, x, threads))

    for _ in range(warmup):
        runner()

    elapsed = []
    latencies = []
    for _ in range(repeats):
        stamps = [time.perf_counter()]
        for _ in range(iterations):
            runner()
            stamps.append(time.perf_counter())
        elapsed.append(stamps[-1] - stamps[0])
        latencies.extend((b - a) * 1e3 for a, b in zip(stamps, stamps[1:]))

    total = sum(elapsed)
    fps = batch_size * iterations * repeats / total
    per_repeat_fps = [batch_size * iterations / e for e in elapsed]
    cov = float(np.std(per_repeat_fps) / np.mean(per_repeat_fps))
    return BenchReport(
        fps=fps,
        p50_ms=float(np.percentile(latencies, 50)),
        p95_ms=float(np.percentile(latencies, 95)),
        batch_size=batch_size, iterations=iterations, warmup=warmup,
        repeats=repeats, cov=cov, elapsed=elapsed, latencies_ms=latencies,
        threads=threads, flagged=cov >= 0.10)
