"""Wall-clock stage accumulation for the pipeline.

Top-level stages partition a scan's processing time; detail stages are a
finer breakdown of map maintenance (they overlap map_update, not the total).
"""
from __future__ import annotations

import time
from contextlib import contextmanager, nullcontext

TOP_STAGES = ("downsample", "predict", "matching", "solve", "map_update")
DETAIL_STAGES = ("ransac", "plane_param_update", "plane_check")


class StageTimer:
    """Accumulates wall-clock seconds per named stage."""

    def __init__(self):
        self.totals: dict = {}

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.totals[name] = self.totals.get(name, 0.0) \
                + (time.perf_counter() - start)

    def add(self, name: str, seconds: float):
        self.totals[name] = self.totals.get(name, 0.0) + seconds

    def report(self) -> dict:
        """Stage seconds with an explicit `other` bucket for untimed glue,
        so the top-level entries sum to `total`."""
        total = self.totals.get("total", 0.0)
        out = {"total": total}
        tracked = 0.0
        for name in TOP_STAGES:
            out[name] = self.totals.get(name, 0.0)
            tracked += out[name]
        out["other"] = max(total - tracked, 0.0)
        for name in DETAIL_STAGES:
            out[name] = self.totals.get(name, 0.0)
        return out

    def format_report(self, num_frames: int = 0) -> str:
        rep = self.report()
        parts = [f"total={rep['total'] * 1e3:.1f}ms"]
        parts += [f"{s}={rep[s] * 1e3:.1f}ms" for s in TOP_STAGES]
        parts.append(f"other={rep['other'] * 1e3:.1f}ms")
        parts.append("|")
        parts += [f"{s}={rep[s] * 1e3:.1f}ms" for s in DETAIL_STAGES]
        if num_frames > 0:
            parts.append(f"| frames={num_frames} "
                         f"per_frame={rep['total'] * 1e3 / num_frames:.2f}ms")
        return "timing " + " ".join(parts)


def maybe_stage(timer, name: str):
    """Context manager that times `name` when a timer is present."""
    return timer.stage(name) if timer is not None else nullcontext()
