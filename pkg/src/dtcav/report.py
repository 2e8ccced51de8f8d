"""Static HTML cluster-review report.

One index page with a row per cluster (size, share of all patches, per-class
patch distribution, TCAV score or status per class, concept flag) plus a
detail page per cluster showing every patch thumbnail. Pure static files.
"""

import warnings
from dataclasses import dataclass, field
from html import escape
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import PATHOLOGIES

_THUMB_SIZE = 96
_INDEX_THUMBS = 6


@dataclass
class ClusterReportEntry:
    cluster_id: int
    size: int
    share: float  # size / total patches
    per_class_counts: dict[str, int]
    scores: dict[str, dict]  # class -> {score, p_value, status}
    selected: bool
    rejection_reason: str | None
    patch_ids: list[str] = field(default_factory=list)


def build_entries(clusters: list[dict], results: dict) -> list[ClusterReportEntry]:
    total = sum(c["size"] for c in clusters) or 1
    by_concept: dict = {}
    for r in results["results"]:
        by_concept.setdefault(r["concept_id"], {})[r["class_k"]] = {
            "score": r["score"],
            "p_value": r["p_value"],
            "status": r["status"],
        }
    flags = {c["cluster_id"]: c for c in results["concepts"]}
    entries = []
    for c in clusters:
        meta = flags.get(c["cluster_id"], {})
        entries.append(
            ClusterReportEntry(
                cluster_id=c["cluster_id"],
                size=c["size"],
                share=c["size"] / total,
                per_class_counts=c["per_pathology_counts"],
                scores=by_concept.get(c["cluster_id"], {}),
                selected=meta.get("selected", False),
                rejection_reason=meta.get("rejection_reason"),
                patch_ids=c.get("member_patch_ids", []),
            )
        )
    return entries


def _save_thumb(patch_dir: Path, patch_id: str, dest: Path) -> bool:
    src = patch_dir / f"{patch_id}.npy" if patch_dir else None
    if src is None or not src.is_file():
        warnings.warn(f"missing patch file for {patch_id}; rendering placeholder")
        Image.new("L", (_THUMB_SIZE, _THUMB_SIZE), 64).save(dest)
        return False
    arr = np.load(src)
    lo, hi = float(arr.min()), float(arr.max())
    scaled = (arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr)
    img = Image.fromarray((scaled * 255).astype(np.uint8), mode="L")
    img.resize((_THUMB_SIZE, _THUMB_SIZE)).save(dest)
    return True


_STYLE = """
body { font-family: sans-serif; margin: 2em; }
table { border-collapse: collapse; }
td, th { border: 1px solid #aaa; padding: 4px 8px; text-align: center; }
img.thumb { image-rendering: pixelated; margin: 2px; }
.not-concept { color: #a33; }
.concept { color: #273; font-weight: bold; }
"""


def _score_cell(entry: ClusterReportEntry, cls: str) -> str:
    info = entry.scores.get(cls)
    if info is None:
        return ""
    if info["status"] == "degenerate":
        return "degenerate"
    mark = "" if info["status"] == "scored" else " (n.s.)"
    return f"{info['score']:.2f}{mark}"


def render_report(entries: list[ClusterReportEntry], out_dir, patch_dir=None) -> Path:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        thumbs = out_dir / "thumbs"
        thumbs.mkdir(exist_ok=True)
    except OSError as e:
        raise RuntimeError(f"cannot write report to {out_dir}: {e}")

    rows = []
    for e in sorted(entries, key=lambda x: x.cluster_id):
        thumb_html = []
        for pid in e.patch_ids[:_INDEX_THUMBS]:
            dest = thumbs / f"{pid}.png"
            if not dest.exists():
                _save_thumb(Path(patch_dir) if patch_dir else None, pid, dest)
            thumb_html.append(
                f'<img class="thumb" src="thumbs/{pid}.png" width="48" height="48">'
            )
        flag = (
            '<span class="concept">concept</span>'
            if e.selected
            else f'<span class="not-concept">not a concept ({escape(str(e.rejection_reason))})</span>'
        )
        score_cells = "".join(f"<td>{_score_cell(e, c)}</td>" for c in PATHOLOGIES)
        count_cells = "".join(
            f"<td>{e.per_class_counts.get(c, 0)}</td>" for c in PATHOLOGIES
        )
        rows.append(
            f"<tr><td><a href='cluster_{e.cluster_id}.html'>{e.cluster_id}</a></td>"
            f"<td>{e.size} ({e.share:.1%})</td>{count_cells}{score_cells}"
            f"<td>{flag}</td><td>{''.join(thumb_html)}</td></tr>"
        )
        _render_detail(e, out_dir, patch_dir)

    header_counts = "".join(f"<th>{c}</th>" for c in PATHOLOGIES)
    index = f"""<!doctype html>
<html><head><meta charset="utf-8"><title>Cluster review</title>
<style>{_STYLE}</style></head><body>
<h1>Cluster review</h1>
<p>{len(entries)} clusters.</p>
<table>
<tr><th rowspan="2">cluster</th><th rowspan="2">size</th>
<th colspan="{len(PATHOLOGIES)}">patches per class</th>
<th colspan="{len(PATHOLOGIES)}">TCAV score per class</th>
<th rowspan="2">concept</th><th rowspan="2">examples</th></tr>
<tr>{header_counts}{header_counts}</tr>
{''.join(rows)}
</table></body></html>
"""
    (out_dir / "index.html").write_text(index)
    return out_dir / "index.html"


def _render_detail(entry: ClusterReportEntry, out_dir: Path, patch_dir) -> None:
    thumbs = out_dir / "thumbs"
    imgs = []
    for pid in entry.patch_ids:
        dest = thumbs / f"{pid}.png"
        if not dest.exists():
            _save_thumb(Path(patch_dir) if patch_dir else None, pid, dest)
        imgs.append(f'<img class="thumb" src="thumbs/{pid}.png" title="{pid}">')
    page = f"""<!doctype html>
<html><head><meta charset="utf-8"><title>Cluster {entry.cluster_id}</title>
<style>{_STYLE}</style></head><body>
<h1>Cluster {entry.cluster_id}</h1>
<p><a href="index.html">back to index</a></p>
<p>{entry.size} patches ({entry.share:.1%} of all patches).</p>
{''.join(imgs)}
</body></html>
"""
    (out_dir / f"cluster_{entry.cluster_id}.html").write_text(page)
