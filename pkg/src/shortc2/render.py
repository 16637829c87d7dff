"""Basin-slice rendering.

Pixel ``(i, j)`` (column ``i`` from the left, row ``j`` from the top) samples
exactly the image of its center under the window map::

    x = cx - width/2  + (i + 1/2) * width  / px_w
    y = cy + height/2 - (j + 1/2) * height / px_h

computed in exact rationals and then rounded once into the working context.
On the ``z`` plane the sample is ``(x + iy, w0)``, on the ``w`` plane
``(z0, x + iy)`` and on the ``real`` plane ``(x, y)``.

Work is split into contiguous blocks of pixel indices; each block is computed
independently and the blocks are joined in index order, so the bytes do not
depend on the worker count.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

from . import numerics as nx
from .shortbasin import INSIDE, OUTSIDE, ModelSequence, certificate_row, classify

PLANES = ("z", "w", "real")
UNKNOWN_RGB = (128, 128, 128)
CSV_HEADER = ["i", "j", "re_z", "im_z", "re_w", "im_w", "verdict", "k", "psi_tilde"]


class SpecError(ValueError):
    """Invalid slice description."""


@dataclass(frozen=True)
class SliceSpec:
    plane: str
    center: tuple            # (cx, cy) as Fractions
    width: Fraction
    height: Fraction
    px_w: int
    px_h: int
    seq: ModelSequence
    K_max: int
    fixed: tuple = (Fraction(0), Fraction(0))   # other coordinate, (re, im)

    def __post_init__(self):
        if self.plane not in PLANES:
            raise SpecError(f"plane must be one of {PLANES}, got {self.plane!r}")
        if self.px_w < 1 or self.px_h < 1:
            raise SpecError("resolution must be at least 1x1")
        if not self.width > 0 or not self.height > 0:
            raise SpecError("window must have positive width and height")
        if self.K_max < 1:
            raise SpecError("K_max must be at least 1")

    def pixel_center(self, i: int, j: int) -> tuple:
        """Exact window coordinates ``(x, y)`` of the center of pixel ``(i, j)``."""
        cx, cy = self.center
        x = cx - self.width / 2 + (Fraction(2 * i + 1, 2)) * self.width / self.px_w
        y = cy + self.height / 2 - (Fraction(2 * j + 1, 2)) * self.height / self.px_h
        return x, y

    def pixel_point(self, ctx, i: int, j: int) -> nx.BigComplexPoint:
        x, y = self.pixel_center(i, j)
        if self.plane == "real":
            return nx.point(ctx, x, y)
        moving = nx.to_complex(ctx, (x, y))
        other = nx.to_complex(ctx, self.fixed)
        if self.plane == "z":
            return nx.BigComplexPoint(moving, other)
        return nx.BigComplexPoint(other, moving)

    @classmethod
    def from_json(cls, data, base_dir: str = ".") -> SliceSpec:
        if not isinstance(data, dict):
            raise SpecError("slice spec must be a JSON object")
        try:
            center = data.get("center", ["0", "0"])
            if not isinstance(center, list) or len(center) != 2:
                raise SpecError("center must be a pair")
            res = data["resolution"]
            if not isinstance(res, list) or len(res) != 2:
                raise SpecError("resolution must be [px_w, px_h]")
            width = nx.to_fraction(data["width"])
            height = nx.to_fraction(data.get("height", data["width"]))
            fixed = data.get("fixed", ["0", "0"])
            if not isinstance(fixed, list):
                fixed = [fixed, "0"]
            return cls(plane=data.get("plane", "z"),
                       center=(nx.to_fraction(center[0]), nx.to_fraction(center[1])),
                       width=width, height=height, px_w=int(res[0]), px_h=int(res[1]),
                       seq=_load_sequence(data, base_dir), K_max=int(data.get("K_max", 25)),
                       fixed=(nx.to_fraction(fixed[0]), nx.to_fraction(fixed[1])))
        except KeyError as exc:
            raise SpecError(f"slice spec: missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError, ZeroDivisionError) as exc:
            if isinstance(exc, SpecError):
                raise
            raise SpecError(f"slice spec: {exc}") from None

    def to_json(self) -> dict:
        return {"plane": self.plane, "center": [str(c) for c in self.center],
                "width": str(self.width), "height": str(self.height),
                "resolution": [self.px_w, self.px_h], "fixed": [str(c) for c in self.fixed],
                "seq": self.seq.to_json(), "K_max": self.K_max}


def _load_sequence(data: dict, base_dir: str) -> ModelSequence:
    if "seq" in data:
        ref = data["seq"]
        if isinstance(ref, str):
            with open(os.path.join(base_dir, ref)) as fh:
                ref = json.load(fh)
        return ModelSequence.from_json(ref)
    if "plan" in data:
        from .oscillation import OscillationPlan
        ref = data["plan"]
        if isinstance(ref, str):
            with open(os.path.join(base_dir, ref)) as fh:
                ref = json.load(fh)
        return OscillationPlan.from_json(ref).model_sequence()
    raise SpecError("slice spec needs 'seq' or 'plan'")


def color(cert) -> tuple:
    if cert.verdict == INSIDE:
        return (0, 0, max(0, 255 - 8 * cert.k))
    if cert.verdict == OUTSIDE:
        return (max(0, 255 - 8 * cert.k), 0, 0)
    return UNKNOWN_RGB


def _render_block(args) -> tuple:
    spec_json, prec, start, stop = args
    spec = SliceSpec.from_json(spec_json)
    ctx = nx.set_precision(prec)
    pixels = bytearray()
    rows = []
    for idx in range(start, stop):
        j, i = divmod(idx, spec.px_w)
        P = spec.pixel_point(ctx, i, j)
        cert = classify(spec.seq, P, spec.K_max)
        pixels.extend(color(cert))
        rows.append([i, j] + certificate_row(P, cert))
    return bytes(pixels), rows


def partition(total: int, workers: int) -> list:
    """Contiguous ``[start, stop)`` blocks, sizes differing by at most one."""
    workers = max(1, min(workers, total))
    base, extra = divmod(total, workers)
    out, start = [], 0
    for w in range(workers):
        stop = start + base + (1 if w < extra else 0)
        out.append((start, stop))
        start = stop
    return out


@dataclass
class RenderOutput:
    ppm: bytes
    csv: str
    counts: dict


def render(spec: SliceSpec, prec: int, workers: int = 1) -> RenderOutput:
    total = spec.px_w * spec.px_h
    # specs travel as JSON: sequences carry per-context caches of mpmath values
    jobs = [(spec.to_json(), prec, a, b) for a, b in partition(total, workers)]
    if len(jobs) == 1:
        results = [_render_block(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            results = list(pool.map(_render_block, jobs))
    header = f"P6\n{spec.px_w} {spec.px_h}\n255\n".encode("ascii")
    body = b"".join(r[0] for r in results)
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(CSV_HEADER)
    counts = {"Inside": 0, "Outside": 0, "Unknown": 0}
    for _, rows in results:
        for row in rows:
            counts[row[6]] += 1
            out.writerow(row)
    return RenderOutput(header + body, buf.getvalue(), counts)
