"""End-to-end pipeline orchestration with per-stage artifact caching.

Stages: prepare -> patches -> embed -> cluster -> cavs -> score -> metrics
-> report. Every stage persists its artifact under the output directory
together with a fingerprint of its configuration and its inputs' fingerprints;
re-running an unchanged stage is a no-op. All randomness derives from the
master seed, so identical (config, inputs) produce byte-identical results.
"""

import hashlib
import json
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import concept_cav, latent_analysis, model_adapter, seg_metrics, superpixel, tcav_engine
from .dataset import PATHOLOGIES, compute_fallback_boxes, load_manifest, roi_crop
from .superpixel import SlicParams, resize_bilinear

STAGES = ("prepare", "patches", "embed", "cluster", "cavs", "score", "metrics", "report")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class AdapterConfig:
    kind: str = "analytic"  # analytic | file_backed
    latent_dim: int = 64
    seed: int = 0
    epsilon: float = 0.1
    head_npz: str | None = None  # optional planted head vectors / diagonals
    store_dir: str | None = None  # file_backed tensor store


@dataclass
class PipelineConfig:
    manifest: str = ""
    out_dir: str = "out"
    seed: int = 0
    input_size: int = 348
    margin_frac: float = 0.2
    slic_compactness: float = 10.0
    slic_max_iters: int = 10
    resolutions: tuple[int, ...] = (5,)
    reduction: str = "pca"  # pca | none
    reduction_dim: int | None = None  # None -> 95% explained variance, cap 32
    k_range: tuple[int, int] | None = None
    selection: concept_cav.SelectionConfig = field(default_factory=concept_cav.SelectionConfig)
    n_concept_cavs: int = 10
    n_random_cavs: int = 100
    alpha: float = 0.05
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    target: str = "FOREGROUND_SUM"
    predictions: str | None = None  # manifest of predicted masks, for metrics

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        doc = json.loads(Path(path).read_text())
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        doc = dict(doc)
        if "selection" in doc:
            doc["selection"] = concept_cav.SelectionConfig(**doc["selection"])
        if "adapter" in doc:
            doc["adapter"] = AdapterConfig(**doc["adapter"])
        if "resolutions" in doc:
            doc["resolutions"] = tuple(doc["resolutions"])
        if doc.get("k_range"):
            doc["k_range"] = tuple(doc["k_range"])
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


def _derive_seed(*parts) -> int:
    digest = hashlib.sha256(repr(parts).encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


def _fingerprint(stage: str, payload: dict) -> str:
    return hashlib.sha256(
        json.dumps({"stage": stage, **payload}, sort_keys=True, default=str).encode()
    ).hexdigest()


class Pipeline:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out = Path(config.out_dir)

    # -- caching -----------------------------------------------------------

    def _stage_dir(self, stage: str) -> Path:
        return self.out / stage

    def _is_fresh(self, stage: str, fp: str) -> bool:
        f = self._stage_dir(stage) / "fingerprint.json"
        if not f.is_file():
            return False
        return json.loads(f.read_text()).get("fingerprint") == fp

    def _begin(self, stage: str, fp: str) -> Path:
        d = self._stage_dir(stage)
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)
        self._pending = (d / "fingerprint.json", fp)
        return d

    def _commit(self) -> None:
        path, fp = self._pending
        path.write_text(json.dumps({"fingerprint": fp}))

    def _upstream_fp(self, stage: str) -> str:
        f = self._stage_dir(stage) / "fingerprint.json"
        if not f.is_file():
            raise PipelineError(stage, "stage has not been run yet")
        return json.loads(f.read_text())["fingerprint"]

    # -- stages ------------------------------------------------------------

    def run(self, stages=("all",)) -> Path:
        order = list(STAGES) if "all" in stages else [s for s in STAGES if s in stages]
        for stage in order:
            getattr(self, f"stage_{stage}")()
        return self.out

    def stage_prepare(self) -> None:
        cfg = self.config
        manifest_path = Path(cfg.manifest)
        try:
            manifest_hash = hashlib.sha256(manifest_path.read_bytes()).hexdigest()
        except OSError as e:
            raise PipelineError("prepare", str(e))
        fp = _fingerprint(
            "prepare",
            {"manifest": manifest_hash, "margin_frac": cfg.margin_frac},
        )
        if self._is_fresh("prepare", fp):
            return
        try:
            records = load_manifest(manifest_path)
        except Exception as e:
            raise PipelineError("prepare", str(e))
        if not records:
            raise PipelineError("prepare", f"manifest {manifest_path} contains no records")
        fallbacks = compute_fallback_boxes(records, cfg.margin_frac)
        d = self._begin("prepare", fp)
        arrays = {}
        meta = []
        for i, rec in enumerate(records):
            try:
                cropped, box = roi_crop(rec, cfg.margin_frac, fallbacks.get(rec.patient_id))
            except Exception as e:
                raise PipelineError("prepare", f"{rec.record_id}: {e}")
            arrays[f"img_{i}"] = cropped.image
            arrays[f"mask_{i}"] = cropped.mask
            meta.append(
                {
                    "record_id": rec.record_id,
                    "patient_id": rec.patient_id,
                    "slice_index": rec.slice_index,
                    "phase": rec.phase,
                    "pathology": rec.pathology,
                    "split": rec.split,
                    "box": [box.row_min, box.row_max, box.col_min, box.col_max],
                }
            )
        np.savez(d / "crops.npz", **arrays)
        (d / "records.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        self._commit()

    def _load_crops(self):
        d = self._stage_dir("prepare")
        meta = json.loads((d / "records.json").read_text())
        crops = np.load(d / "crops.npz")
        return meta, crops

    def stage_patches(self) -> None:
        cfg = self.config
        fp = _fingerprint(
            "patches",
            {
                "upstream": self._upstream_fp("prepare"),
                "compactness": cfg.slic_compactness,
                "max_iters": cfg.slic_max_iters,
                "resolutions": list(cfg.resolutions),
                "input_size": cfg.input_size,
            },
        )
        if self._is_fresh("patches", fp):
            return
        meta, crops = self._load_crops()
        params = SlicParams(
            compactness=cfg.slic_compactness,
            max_iters=cfg.slic_max_iters,
            seed=cfg.seed,
            resolutions=cfg.resolutions,
        )
        d = self._begin("patches", fp)
        (d / "npy").mkdir()
        index = {}
        pid = 0
        for i, m in enumerate(meta):
            rec = _CropRecord(m, crops[f"img_{i}"])
            try:
                patches = superpixel.extract_patches(rec, params, cfg.input_size)
            except Exception as e:
                raise PipelineError("patches", f"{m['record_id']}: {e}")
            for p in patches:
                patch_id = f"p{pid:06d}"
                np.save(d / "npy" / f"{patch_id}.npy", p.rendered.astype(np.float32))
                index[patch_id] = {
                    "record_id": m["record_id"],
                    "patient_id": m["patient_id"],
                    "pathology": m["pathology"],
                    "phase": m["phase"],
                    "split": m["split"],
                    "resolution": p.resolution,
                    "segment_id": p.segment_id,
                    "fill_value": p.fill_value,
                }
                pid += 1
        (d / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True))
        self._commit()

    def _build_adapter(self):
        a = self.config.adapter
        if a.kind == "analytic":
            heads = diags = None
            if a.head_npz:
                data = np.load(a.head_npz)
                heads = {k[2:]: data[k] for k in data.files if k.startswith("w_")}
                diags = {k[2:]: data[k] for k in data.files if k.startswith("d_")}
            return model_adapter.AnalyticAdapter(
                input_size=self.config.input_size,
                latent_dim=a.latent_dim,
                seed=a.seed,
                epsilon=a.epsilon,
                head_vectors=heads,
                head_diagonals=diags,
            )
        if a.kind == "file_backed":
            return model_adapter.FileBackedAdapter(a.store_dir)
        raise PipelineError("embed", f"unknown adapter kind {a.kind!r}")

    def _patch_index(self):
        d = self._stage_dir("patches")
        index = json.loads((d / "index.json").read_text())
        return d, index

    def stage_embed(self) -> None:
        cfg = self.config
        fp = _fingerprint(
            "embed",
            {
                "upstream": self._upstream_fp("patches"),
                "adapter": asdict(cfg.adapter),
                "target": cfg.target,
                "input_size": cfg.input_size,
            },
        )
        if self._is_fresh("embed", fp):
            return
        patch_dir, index = self._patch_index()
        patch_ids = sorted(index)
        adapter = self._build_adapter()

        meta, crops = self._load_crops()
        class_records: dict[str, list[int]] = {p: [] for p in PATHOLOGIES}
        for i, m in enumerate(meta):
            if m["split"] == "train":
                class_records[m["pathology"]].append(i)

        d = self._begin("embed", fp)
        try:
            if cfg.adapter.kind == "analytic":
                rendered = [np.load(patch_dir / "npy" / f"{p}.npy") for p in patch_ids]
                acts = adapter.activations(rendered)
                grads = {}
                for pathology, idxs in class_records.items():
                    if not idxs:
                        continue
                    inputs = [
                        resize_bilinear(crops[f"img_{i}"], cfg.input_size) for i in idxs
                    ]
                    grads[pathology] = adapter.gradients(inputs, cfg.target)
            else:
                acts = adapter.activations(patch_ids)
                grads = {}
                for pathology, idxs in class_records.items():
                    if not idxs:
                        continue
                    record_ids = [meta[i]["record_id"] for i in idxs]
                    grads[pathology] = adapter.gradients(record_ids, cfg.target)
        except model_adapter.AdapterError as e:
            raise PipelineError("embed", str(e))
        np.save(d / "activations.npy", np.asarray(acts, dtype=np.float64))
        (d / "index.json").write_text(json.dumps({"examples": patch_ids}, indent=2))
        np.savez(d / "class_gradients.npz", **{k: np.asarray(v) for k, v in grads.items()})
        self._commit()

    def stage_cluster(self) -> None:
        cfg = self.config
        fp = _fingerprint(
            "cluster",
            {
                "upstream": self._upstream_fp("embed"),
                "reduction": cfg.reduction,
                "reduction_dim": cfg.reduction_dim,
                "k_range": list(cfg.k_range) if cfg.k_range else None,
                "seed": cfg.seed,
            },
        )
        if self._is_fresh("cluster", fp):
            return
        embed_dir = self._stage_dir("embed")
        acts = np.load(embed_dir / "activations.npy")
        patch_ids = json.loads((embed_dir / "index.json").read_text())["examples"]
        _, index = self._patch_index()
        patches = [_PatchMeta(index[p]) for p in patch_ids]

        reduced = latent_analysis.reduce(acts, cfg.reduction, cfg.reduction_dim)
        if cfg.k_range:
            ks = list(range(cfg.k_range[0], cfg.k_range[1] + 1))
        else:
            ks = latent_analysis.default_k_range(len(acts))
        curve = latent_analysis.distortion_scan(reduced, ks, seed=_derive_seed(cfg.seed, "scan"))
        choice = latent_analysis.elbow_select(curve)
        km = latent_analysis.kmeans(reduced, choice.k, seed=_derive_seed(cfg.seed, "kmeans"))
        filtered = latent_analysis.remove_outliers(km.assignments, reduced)
        summaries = latent_analysis.summarize(filtered, acts, patches)

        d = self._begin("cluster", fp)
        np.save(d / "assignments.npy", filtered)
        (d / "elbow.json").write_text(
            json.dumps(
                {
                    "ks": curve.ks,
                    "distortions": curve.distortions,
                    "chosen_k": choice.k,
                    "no_elbow": choice.no_elbow,
                },
                indent=2,
                sort_keys=True,
            )
        )
        (d / "clusters.json").write_text(
            json.dumps(
                [
                    {
                        "cluster_id": s.cluster_id,
                        "member_patch_ids": [patch_ids[i] for i in s.member_patches],
                        "member_indices": s.member_patches,
                        "size": s.size,
                        "per_pathology_counts": s.per_pathology_counts,
                        "per_patient_counts": s.per_patient_counts,
                        "mean_distance": s.mean_distance,
                    }
                    for s in summaries
                ],
                indent=2,
                sort_keys=True,
            )
        )
        self._commit()

    def _load_summaries(self):
        doc = json.loads((self._stage_dir("cluster") / "clusters.json").read_text())
        out = []
        for s in doc:
            out.append(
                latent_analysis.ClusterSummary(
                    cluster_id=s["cluster_id"],
                    member_patches=s["member_indices"],
                    size=s["size"],
                    per_pathology_counts=s["per_pathology_counts"],
                    per_patient_counts=s["per_patient_counts"],
                    centroid=None,
                    mean_distance=s["mean_distance"],
                )
            )
        return out

    def stage_cavs(self) -> None:
        cfg = self.config
        fp = _fingerprint(
            "cavs",
            {
                "upstream": self._upstream_fp("cluster"),
                "selection": asdict(cfg.selection),
                "n_concept_cavs": cfg.n_concept_cavs,
                "n_random_cavs": cfg.n_random_cavs,
                "seed": cfg.seed,
            },
        )
        if self._is_fresh("cavs", fp):
            return
        acts = np.load(self._stage_dir("embed") / "activations.npy")
        summaries = self._load_summaries()
        concepts = concept_cav.select_concepts(summaries, cfg.selection)

        d = self._begin("cavs", fp)
        index = {"concepts": [], "cavs": [], "random_cavs": []}
        n = acts.shape[0]
        for concept in concepts:
            index["concepts"].append(
                {
                    "cluster_id": concept.cluster_id,
                    "selected": concept.selected,
                    "rejection_reason": concept.rejection_reason,
                    "size": len(concept.member_indices),
                }
            )
            members = np.asarray(concept.member_indices)
            size = min(len(members), n - len(members))
            if size < 2 or len(members) < 2:
                continue
            for j in range(cfg.n_concept_cavs):
                seed = _derive_seed(cfg.seed, "cav", concept.cluster_id, j)
                counterpart = concept_cav.sample_counterpart(
                    acts, size, seed, exclude=set(concept.member_indices)
                )
                cav = concept_cav.fit_cav(
                    acts[members], counterpart, seed=seed, concept_id=concept.cluster_id
                )
                name = f"cav_{concept.cluster_id}_{j}"
                np.save(d / f"{name}.npy", cav.direction)
                index["cavs"].append(
                    {
                        "file": f"{name}.npy",
                        "concept_id": concept.cluster_id,
                        "counterpart_seed": seed,
                        "offset": cav.offset,
                        "training_accuracy": cav.training_accuracy,
                        "low_quality": cav.low_quality,
                    }
                )
        rnd_size = max(2, min(200, n // 10, n // 2))
        for t in range(cfg.n_random_cavs):
            seed = _derive_seed(cfg.seed, "random_cav", t)
            perm = np.random.default_rng(seed).permutation(n)
            cav = concept_cav.fit_cav(
                acts[perm[:rnd_size]], acts[perm[rnd_size : 2 * rnd_size]],
                seed=seed, concept_id="random",
            )
            name = f"cav_random_{t}"
            np.save(d / f"{name}.npy", cav.direction)
            index["random_cavs"].append(
                {
                    "file": f"{name}.npy",
                    "trial": t,
                    "training_accuracy": cav.training_accuracy,
                    "low_quality": cav.low_quality,
                }
            )
        (d / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True))
        self._commit()

    def stage_score(self) -> None:
        cfg = self.config
        fp = _fingerprint(
            "score",
            {
                "upstream": self._upstream_fp("cavs"),
                "alpha": cfg.alpha,
            },
        )
        if self._is_fresh("score", fp):
            return
        cav_dir = self._stage_dir("cavs")
        cav_index = json.loads((cav_dir / "index.json").read_text())
        grads_npz = np.load(self._stage_dir("embed") / "class_gradients.npz")
        gradients_by_class = {k: grads_npz[k] for k in grads_npz.files}

        def load_cav(entry, concept_id, seed):
            return concept_cav.Cav(
                direction=np.load(cav_dir / entry["file"]),
                offset=entry.get("offset", 0.0),
                concept_id=concept_id,
                counterpart_seed=seed,
                training_accuracy=entry["training_accuracy"],
                low_quality=entry["low_quality"],
            )

        random_cavs = [
            load_cav(e, "random", e["trial"]) for e in cav_index["random_cavs"]
        ]
        cavs_by_concept: dict[int, list] = {}
        for e in cav_index["cavs"]:
            cavs_by_concept.setdefault(e["concept_id"], []).append(
                load_cav(e, e["concept_id"], e["counterpart_seed"])
            )

        all_results = []
        for meta in cav_index["concepts"]:
            cid = meta["cluster_id"]
            cavs = cavs_by_concept.get(cid, [])
            if len(cavs) < 2:
                continue
            try:
                all_results.extend(
                    tcav_engine.score_concept(
                        cid, cavs, gradients_by_class, random_cavs, cfg.alpha
                    )
                )
            except tcav_engine.TcavError as e:
                raise PipelineError("score", f"concept {cid}: {e}")

        spread = tcav_engine.score_spread(all_results)
        doc = {
            "alpha": cfg.alpha,
            "n_random_trials": len(random_cavs),
            "concepts": cav_index["concepts"],
            "results": [
                {
                    "concept_id": r.concept_id,
                    "class_k": r.class_k,
                    "score": r.score,
                    "p_value": r.p_value,
                    "status": r.status,
                    "n_trials": r.n_trials,
                    "random_mean": r.random_mean,
                    "random_std": r.random_std,
                }
                for r in all_results
            ],
            "spread": spread,
        }
        d = self._begin("score", fp)
        (d / "results.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
        self._commit()

    def stage_metrics(self) -> None:
        cfg = self.config
        fp = _fingerprint("metrics", {"upstream": self._upstream_fp("prepare"), "predictions": cfg.predictions})
        if self._is_fresh("metrics", fp):
            return
        d = self._begin("metrics", fp)
        if not cfg.predictions:
            (d / "metrics.json").write_text(
                json.dumps({"available": False, "note": "no predictions configured"}, indent=2)
            )
            self._commit()
            return
        pred_doc = json.loads(Path(cfg.predictions).read_text())
        base = Path(cfg.predictions).parent
        records = load_manifest(Path(cfg.manifest))
        by_id = {r.record_id: r for r in records}
        pairs = []
        for record_id, rel in sorted(pred_doc["predictions"].items()):
            if record_id not in by_id:
                raise PipelineError("metrics", f"prediction for unknown record {record_id}")
            pairs.append((np.load(base / rel), by_id[record_id].mask))
        report = seg_metrics.dice_report(pairs, dataset_tag=pred_doc.get("dataset_tag", ""), model_tag=pred_doc.get("model_tag", ""))
        (d / "metrics.json").write_text(json.dumps({"available": True, **report.to_dict()}, indent=2, sort_keys=True))
        self._commit()

    def stage_report(self) -> None:
        from . import report as report_mod

        fp = _fingerprint("report", {"upstream": self._upstream_fp("score")})
        if self._is_fresh("report", fp):
            return
        clusters = json.loads((self._stage_dir("cluster") / "clusters.json").read_text())
        results = json.loads((self._stage_dir("score") / "results.json").read_text())
        d = self._begin("report", fp)
        entries = report_mod.build_entries(clusters, results)
        report_mod.render_report(entries, d, patch_dir=self._stage_dir("patches") / "npy")
        self._commit()


class _CropRecord:
    """Adapter giving extract_patches the record fields it needs."""

    def __init__(self, meta: dict, image: np.ndarray):
        self.patient_id = meta["patient_id"]
        self.slice_index = meta["slice_index"]
        self.phase = meta["phase"]
        self.pathology = meta["pathology"]
        self.image = image


class _PatchMeta:
    def __init__(self, entry: dict):
        self.pathology = entry["pathology"]
        self.patient_id = entry["patient_id"]


def run_pipeline(config: PipelineConfig, stages=("all",)) -> Path:
    return Pipeline(config).run(stages)
