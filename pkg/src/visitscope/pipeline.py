"""Staged pipeline: ingest -> quality -> visits -> fit -> classify -> patterns -> report.

Each stage writes its artifacts under ``<out>/<stage>/`` and records a cache
key in ``<out>/run_manifest.json``; re-running an unchanged stage is a no-op.
"""

from __future__ import annotations

import csv
import glob
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import classify as classify_mod
from . import ingest as ingest_mod
from . import model as model_mod
from . import patterns as patterns_mod
from . import quality as quality_mod
from . import visits as visits_mod

STAGES = ("ingest", "quality", "visits", "fit", "classify", "patterns", "report")


class ConfigError(Exception):
    """Invalid configuration; the message starts with the offending field path."""


@dataclass
class PipelineConfig:
    out_dir: str
    ingest: dict = field(default_factory=dict)
    quality: dict = field(default_factory=dict)
    visits: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    classify: dict = field(default_factory=dict)
    patterns: dict = field(default_factory=dict)

    DEFAULTS = {
        "quality": {
            "p_hours": 24.0,
            "tau_hours": 1.0,
            "t_days": 15,
            "max_speed_kmh": 150.0,
            "tau_set": [1.0, 4.0, 6.0],
            "t_set": [7, 15, 30],
            "mu_t_min": 1.0,
            "mu_s_min": 0.99,
        },
        "visits": {
            "dist_thresh_m": visits_mod.DEFAULT_DIST_THRESH_M,
            "time_thresh_s": visits_mod.DEFAULT_TIME_THRESH_S,
            "snap_radius_m": visits_mod.DEFAULT_SNAP_RADIUS_M,
        },
        "model": {
            "k": 7,
            "cov_kind": "tied",
            "k_max": 21,
            "seed": 0,
            "transform": "log1p",
            "max_iter": 500,
            "tol": 1e-6,
            "reg_covar": 1e-6,
            "n_init": 5,
            "run_sweep": True,
        },
        "classify": {"dwell_override_h": 24.0, "override_enabled": True},
        "patterns": {"k_m": 3, "cell_deg": patterns_mod.DEFAULT_CELL_DEG, "top_k": 5},
    }

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config: must be a JSON object")
        out_dir = raw.get("out_dir")
        if not out_dir or not isinstance(out_dir, str):
            raise ConfigError("out_dir: required string")
        cfg = cls(out_dir=out_dir)
        cfg.ingest = dict(raw.get("ingest", {}))
        for section in ("quality", "visits", "model", "classify", "patterns"):
            merged = dict(cls.DEFAULTS[section])
            user = raw.get(section, {})
            if not isinstance(user, dict):
                raise ConfigError(f"{section}: must be an object")
            for key, val in user.items():
                if key not in merged:
                    raise ConfigError(f"{section}.{key}: unknown field")
                merged[key] = val
            setattr(cfg, section, merged)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        q = self.quality
        if not (0 < q["tau_hours"] <= q["p_hours"]):
            raise ConfigError("quality.tau_hours: must satisfy 0 < tau <= P")
        if q["t_days"] < 1:
            raise ConfigError("quality.t_days: must be >= 1")
        if q["max_speed_kmh"] <= 0:
            raise ConfigError("quality.max_speed_kmh: must be positive")
        if self.model["cov_kind"] not in model_mod.COV_KINDS:
            raise ConfigError(f"model.cov_kind: must be one of {model_mod.COV_KINDS}")
        if self.model["k"] < 1:
            raise ConfigError("model.k: must be >= 1")
        if self.model["transform"] not in ("none", "log1p"):
            raise ConfigError("model.transform: must be 'none' or 'log1p'")
        if self.patterns["k_m"] < 1:
            raise ConfigError("patterns.k_m: must be >= 1")
        for key in ("plt_root", "poi_csv"):
            path = self.ingest.get(key)
            if path and not os.path.exists(path):
                raise ConfigError(f"ingest.{key}: path does not exist: {path}")
        for path in self.ingest.get("trajectory_csvs", []):
            if not os.path.exists(path):
                raise ConfigError(f"ingest.trajectory_csvs: path does not exist: {path}")

    def section(self, name: str) -> dict:
        return getattr(self, name if name != "fit" else "model")

    def to_dict(self) -> dict:
        return {
            "out_dir": self.out_dir,
            "ingest": self.ingest,
            "quality": self.quality,
            "visits": self.visits,
            "model": self.model,
            "classify": self.classify,
            "patterns": self.patterns,
        }


# stage -> stages whose outputs feed it
STAGE_DEPS = {
    "ingest": (),
    "quality": ("ingest",),
    "visits": ("ingest", "quality"),
    "fit": ("visits",),
    "classify": ("fit", "visits"),
    "patterns": ("classify", "visits", "ingest"),
    "report": ("quality", "fit", "classify"),
}

# config sections that feed each stage's cache key
STAGE_CONFIG = {
    "ingest": ("ingest",),
    "quality": ("quality",),
    "visits": ("quality", "visits"),
    "fit": ("model",),
    "classify": ("model", "classify"),
    "patterns": ("patterns",),
    "report": (),
}


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _tree_files(root: str) -> list[str]:
    out = []
    for dirpath, _, names in os.walk(root):
        for name in sorted(names):
            out.append(os.path.join(dirpath, name))
    return sorted(out)


class Pipeline:
    def __init__(self, config: PipelineConfig, progress_json: bool = False):
        self.config = config
        self.out = config.out_dir
        self.progress_json = progress_json
        os.makedirs(self.out, exist_ok=True)
        self.manifest_path = os.path.join(self.out, "run_manifest.json")
        self.manifest = {"config": config.to_dict(), "stages": {}}
        if os.path.exists(self.manifest_path):
            with open(self.manifest_path) as fh:
                self.manifest = json.load(fh)
            self.manifest["config"] = config.to_dict()

    # -- plumbing ----------------------------------------------------------

    def stage_dir(self, stage: str) -> str:
        return os.path.join(self.out, stage)

    def _log(self, stage: str, event: str, **extra) -> None:
        if self.progress_json:
            print(json.dumps({"stage": stage, "event": event, **extra}), file=sys.stderr)
        else:
            print(f"[{stage}] {event}" + (f" {extra}" if extra else ""), file=sys.stderr)

    def _raw_input_files(self, stage: str) -> list[str]:
        if stage != "ingest":
            return []
        files = []
        root = self.config.ingest.get("plt_root")
        if root:
            files += glob.glob(os.path.join(root, "**", "*.plt"), recursive=True)
        files += self.config.ingest.get("trajectory_csvs", [])
        poi = self.config.ingest.get("poi_csv")
        if poi:
            files.append(poi)
        return sorted(files)

    def _cache_key(self, stage: str) -> str:
        h = hashlib.sha256()
        for section in STAGE_CONFIG[stage]:
            h.update(json.dumps(self.config.section(section), sort_keys=True).encode())
        for path in self._raw_input_files(stage):
            h.update(path.encode())
            h.update(_sha256_file(path).encode())
        for dep in STAGE_DEPS[stage]:
            dep_entry = self.manifest["stages"].get(dep, {})
            h.update(json.dumps(dep_entry.get("outputs", {}), sort_keys=True).encode())
        return h.hexdigest()

    def _outputs_intact(self, stage: str) -> bool:
        entry = self.manifest["stages"].get(stage)
        if not entry:
            return False
        for rel, digest in entry.get("outputs", {}).items():
            path = os.path.join(self.out, rel)
            if not os.path.exists(path) or _sha256_file(path) != digest:
                return False
        return True

    def _record(self, stage: str, key: str, wall: float) -> None:
        outputs = {}
        sdir = self.stage_dir(stage)
        for path in _tree_files(sdir):
            rel = os.path.relpath(path, self.out)
            outputs[rel] = _sha256_file(path)
        self.manifest["stages"][stage] = {
            "cache_key": key,
            "outputs": outputs,
            "wall_clock_s": wall,
        }
        with open(self.manifest_path, "w") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def run_stage(self, stage: str) -> bool:
        """Run one stage; returns True on a cache hit."""
        key = self._cache_key(stage)
        entry = self.manifest["stages"].get(stage)
        if entry and entry.get("cache_key") == key and self._outputs_intact(stage):
            self._log(stage, "cache-hit")
            return True
        self._log(stage, "start")
        t0 = time.perf_counter()
        getattr(self, f"_stage_{stage}")()
        wall = time.perf_counter() - t0
        self._record(stage, key, wall)
        self._log(stage, "done", wall_clock_s=round(wall, 3))
        return False

    def run(self, stages=STAGES) -> None:
        for stage in stages:
            self.run_stage(stage)

    # -- stages -------------------------------------------------------------

    def _stage_ingest(self) -> None:
        cfg = self.config.ingest
        sdir = self.stage_dir("ingest")
        os.makedirs(sdir, exist_ok=True)
        records: list[ingest_mod.MobilityRecord] = []
        sources: list[str] = []
        errors = 0

        root = cfg.get("plt_root")
        if root:
            for path in sorted(glob.glob(os.path.join(root, "**", "*.plt"), recursive=True)):
                user = os.path.relpath(path, root).split(os.sep)[0]
                with open(path) as fh:
                    recs, stats = ingest_mod.parse_plt(fh, user)
                records += recs
                errors += stats.skipped
                sources.append(path)
        for path in cfg.get("trajectory_csvs", []):
            with open(path) as fh:
                recs, stats = ingest_mod.parse_trajectory_csv(fh, cfg["trajectory_column_map"])
            records += recs
            errors += stats.skipped
            sources.append(path)

        traces, build_stats = ingest_mod.build_traces(records)
        manifest = ingest_mod.write_traces(traces, sdir, sources, errors)
        manifest["build"] = {
            "kept": build_stats.kept,
            "deduped": build_stats.deduped,
            "conflicts": build_stats.conflicts,
        }
        with open(os.path.join(sdir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

        poi_path = cfg.get("poi_csv")
        if poi_path:
            with open(poi_path) as fh:
                pois, _ = ingest_mod.parse_poi_file(fh, cfg["poi_column_map"])
            with open(os.path.join(sdir, "pois.csv"), "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["poi_id", "lat", "lon", "category"])
                for p in sorted(pois, key=lambda p: p.poi_id):
                    writer.writerow([p.poi_id, f"{p.lat:.6f}", f"{p.lon:.6f}", p.category])

    def _load_traces(self):
        return ingest_mod.read_traces(self.stage_dir("ingest"))

    def _load_pois(self) -> list[visits_mod.PoiRecord]:
        path = os.path.join(self.stage_dir("ingest"), "pois.csv")
        pois = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                pois.append(
                    ingest_mod.PoiRecord(
                        row["poi_id"], float(row["lat"]), float(row["lon"]), row["category"]
                    )
                )
        return pois

    def _stage_quality(self) -> None:
        cfg = self.config.quality
        sdir = self.stage_dir("quality")
        os.makedirs(sdir, exist_ok=True)
        traces = self._load_traces()

        cells = quality_mod.grid_assessment(
            traces,
            tau_set=cfg["tau_set"],
            t_set=cfg["t_set"],
            p_hours=cfg["p_hours"],
            max_speed_kmh=cfg["max_speed_kmh"],
        )
        with open(os.path.join(sdir, "reports.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["user_id", "tau_h", "T_d", "mu_T", "mu_S"])
            for (tau, t_days) in sorted(cells):
                for rep in cells[(tau, t_days)].reports:
                    writer.writerow(
                        [rep.user_id, f"{tau:g}", t_days, f"{rep.mu_t:.12g}", f"{rep.mu_s:.12g}"]
                    )
        hist = {
            f"tau={tau:g},T={t}": {
                "mu_t_hist": cell.histogram("mu_t"),
                "mu_s_hist": cell.histogram("mu_s"),
                "mu_t_quantiles": {str(q): v for q, v in cell.quantiles("mu_t").items()},
                "mu_s_quantiles": {str(q): v for q, v in cell.quantiles("mu_s").items()},
            }
            for (tau, t), cell in sorted(cells.items())
        }
        hist["_meta"] = {"aggregation": "per-day mean of day scores"}
        with open(os.path.join(sdir, "histograms.json"), "w") as fh:
            json.dump(hist, fh, indent=2, sort_keys=True)
            fh.write("\n")

        cohort_cell = cells.get((float(cfg["tau_hours"]), int(cfg["t_days"])))
        if cohort_cell is None:
            params = quality_mod.CompletenessParams(
                cfg["p_hours"], cfg["tau_hours"], cfg["t_days"], cfg["max_speed_kmh"]
            )
            reports = [
                quality_mod.assess_user(traces[u], params) for u in sorted(traces) if traces[u].records
            ]
        else:
            reports = cohort_cell.reports
        cohort = quality_mod.select_cohort(reports, cfg["mu_t_min"], cfg["mu_s_min"])
        with open(os.path.join(sdir, "cohort.json"), "w") as fh:
            json.dump(
                {
                    "users": cohort,
                    "tau_hours": cfg["tau_hours"],
                    "t_days": cfg["t_days"],
                    "mu_t_min": cfg["mu_t_min"],
                    "mu_s_min": cfg["mu_s_min"],
                },
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")

    def _stage_visits(self) -> None:
        cfg = self.config.visits
        sdir = self.stage_dir("visits")
        os.makedirs(sdir, exist_ok=True)
        with open(os.path.join(self.stage_dir("quality"), "cohort.json")) as fh:
            cohort = json.load(fh)["users"]
        traces = self._load_traces()
        pois = self._load_pois()
        index = visits_mod.SpatialIndex(pois, cell_m=cfg["snap_radius_m"])

        all_visits: list[visits_mod.Visit] = []
        for user in cohort:
            trace = traces.get(user)
            if trace is None:
                continue
            vs = visits_mod.extract_stay_points(trace, cfg["dist_thresh_m"], cfg["time_thresh_s"])
            visits_mod.snap_visits(vs, index, cfg["snap_radius_m"])
            all_visits += vs

        with open(os.path.join(sdir, "visits.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["user_id", "poi_id", "arrival", "departure", "dwell_s", "lat", "lon"])
            for v in all_visits:
                writer.writerow(
                    [
                        v.user_id,
                        v.poi_id or "",
                        v.arrival.isoformat(),
                        v.departure.isoformat(),
                        f"{v.dwell_s:.12g}",
                        f"{v.lat:.6f}",
                        f"{v.lon:.6f}",
                    ]
                )
        features, unsnapped = visits_mod.aggregate_features(all_visits)
        with open(os.path.join(sdir, "features.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["user_id", "poi_id", "n_days", "mean_dwell_h", "n_visits", "total_dwell_h"])
            for f in features:
                writer.writerow(
                    [
                        f.user_id,
                        f.poi_id,
                        f.n_days,
                        f"{f.mean_dwell_h:.12g}",
                        f.n_visits,
                        f"{f.total_dwell_s / 3600.0:.12g}",
                    ]
                )
        with open(os.path.join(sdir, "meta.json"), "w") as fh:
            json.dump(
                {
                    "n_visits": len(all_visits),
                    "n_unsnapped": unsnapped,
                    "note": "visits realized by anchor-based stay-point detection",
                },
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")

    def _load_features(self) -> list[visits_mod.VisitFeature]:
        path = os.path.join(self.stage_dir("visits"), "features.csv")
        features = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                features.append(
                    visits_mod.VisitFeature(
                        row["user_id"],
                        row["poi_id"],
                        int(row["n_days"]),
                        int(row["n_visits"]),
                        float(row["total_dwell_h"]) * 3600.0,
                    )
                )
        return features

    def _feature_matrix(self) -> visits_mod.FeatureMatrix:
        return visits_mod.feature_matrix(self._load_features(), self.config.model["transform"])

    def _gmm_params(self, k=None, cov_kind=None) -> model_mod.GmmParams:
        cfg = self.config.model
        return model_mod.GmmParams(
            k=k if k is not None else cfg["k"],
            cov_kind=cov_kind if cov_kind is not None else cfg["cov_kind"],
            seed=cfg["seed"],
            max_iter=cfg["max_iter"],
            tol=cfg["tol"],
            reg_covar=cfg["reg_covar"],
            n_init=cfg["n_init"],
        )

    def _stage_fit(self) -> None:
        cfg = self.config.model
        sdir = self.stage_dir("fit")
        os.makedirs(sdir, exist_ok=True)
        fm = self._feature_matrix()

        if cfg["run_sweep"]:
            result = model_mod.sweep(
                fm.x,
                k_max=cfg["k_max"],
                params=self._gmm_params(),
                selected=(cfg["k"], cfg["cov_kind"]),
            )
            with open(os.path.join(sdir, "sweep.csv"), "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["k", "cov_kind", "loglik", "bic", "aic", "converged"])
                for cell in result.rows():
                    writer.writerow(
                        [
                            cell.k,
                            cell.cov_kind,
                            f"{cell.loglik:.12g}",
                            f"{cell.bic:.12g}",
                            f"{cell.aic:.12g}",
                            cell.converged,
                        ]
                    )
            with open(os.path.join(sdir, "sweep_meta.json"), "w") as fh:
                json.dump(
                    {
                        "selected_k": cfg["k"],
                        "selected_cov_kind": cfg["cov_kind"],
                        "elbow_k": result.elbow_k,
                        "elbow_flag": result.elbow_flag,
                    },
                    fh,
                    indent=2,
                    sort_keys=True,
                )
                fh.write("\n")

        model = model_mod.fit_gmm(fm.x, self._gmm_params())
        doc = model.to_dict()
        doc["seed"] = cfg["seed"]
        doc["transform"] = fm.transform
        with open(os.path.join(sdir, "model.json"), "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def _load_model(self) -> model_mod.GmmModel:
        with open(os.path.join(self.stage_dir("fit"), "model.json")) as fh:
            return model_mod.GmmModel.from_dict(json.load(fh))

    def _labeling_rules(self) -> classify_mod.LabelingRules:
        cfg = self.config.classify
        return classify_mod.LabelingRules(
            dwell_override_h=cfg["dwell_override_h"],
            override_enabled=cfg["override_enabled"],
        )

    def _stage_classify(self) -> None:
        sdir = self.stage_dir("classify")
        os.makedirs(sdir, exist_ok=True)
        fm = self._feature_matrix()
        model = self._load_model()
        rules = self._labeling_rules()
        labeling = classify_mod.assign_labels(model, fm, rules)
        labeled = classify_mod.classify_features(fm, model, labeling, rules)

        with open(os.path.join(sdir, "labeled_features.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["user_id", "poi_id", "n_days", "mean_dwell_h", "component", "label"])
            for lf in labeled:
                writer.writerow(
                    [
                        lf.user_id,
                        lf.poi_id,
                        f"{lf.n_days:g}",
                        f"{lf.mean_dwell_h:.12g}",
                        lf.component,
                        lf.label,
                    ]
                )
        with open(os.path.join(sdir, "labeling.json"), "w") as fh:
            json.dump(labeling.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def _load_labeled_features(self) -> list[classify_mod.LabeledFeature]:
        path = os.path.join(self.stage_dir("classify"), "labeled_features.csv")
        out = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                out.append(
                    classify_mod.LabeledFeature(
                        row["user_id"],
                        row["poi_id"],
                        float(row["n_days"]),
                        float(row["mean_dwell_h"]),
                        int(row["component"]),
                        row["label"],
                    )
                )
        return out

    def _load_visits(self) -> list[visits_mod.Visit]:
        from datetime import datetime

        path = os.path.join(self.stage_dir("visits"), "visits.csv")
        out = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                out.append(
                    visits_mod.Visit(
                        row["user_id"],
                        float(row["lat"]),
                        float(row["lon"]),
                        datetime.fromisoformat(row["arrival"]),
                        datetime.fromisoformat(row["departure"]),
                        row["poi_id"] or None,
                    )
                )
        return out

    def _stage_patterns(self) -> None:
        cfg = self.config.patterns
        sdir = self.stage_dir("patterns")
        os.makedirs(sdir, exist_ok=True)
        labeled = self._load_labeled_features()
        visits = self._load_visits()
        lvisits = patterns_mod.label_visits(visits, labeled)
        categories = {p.poi_id: p.category for p in self._load_pois()}

        by_user: dict[str, list] = {}
        for lv in lvisits:
            by_user.setdefault(lv.user_id, []).append(lv)
        matrices = {
            user: patterns_mod.transition_matrix(user, patterns_mod.visit_sequence(vs))
            for user, vs in sorted(by_user.items())
        }
        with open(os.path.join(sdir, "transitions.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["user_id", "from", "to", "count", "prob"])
            for user in sorted(matrices):
                tm = matrices[user]
                for i, a in enumerate(patterns_mod.LABELS):
                    for j, b in enumerate(patterns_mod.LABELS):
                        writer.writerow(
                            [user, a, b, int(tm.counts[i, j]), f"{tm.probs[i, j]:.12g}"]
                        )

        motif_doc = {"k_m": cfg["k_m"], "note": "fewer users than k_m; clustering skipped"}
        nonzero = {u: m for u, m in matrices.items() if m.counts.sum() > 0}
        if len(nonzero) >= cfg["k_m"]:
            motifs = patterns_mod.cluster_motifs(
                nonzero, k_m=cfg["k_m"], seed=self.config.model["seed"]
            )
            motif_doc = {
                "k_m": cfg["k_m"],
                "membership": motifs.membership,
                "centroids": motifs.centroids.tolist(),
                "inertia": motifs.inertia,
            }
        with open(os.path.join(sdir, "motif_centroids.json"), "w") as fh:
            json.dump(motif_doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

        semantic = patterns_mod.semantic_top_k(lvisits, categories, k=cfg["top_k"])
        with open(os.path.join(sdir, "semantic_profile.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "rank", "category", "share"])
            for lab in patterns_mod.LABELS:
                for rank, (cat, share) in enumerate(semantic.top[lab], start=1):
                    writer.writerow([lab, rank, cat, f"{share:.12g}"])

        n_weeks = self.config.quality["t_days"] / 7.0
        profile = patterns_mod.temporal_profile(lvisits, n_weeks)
        with open(os.path.join(sdir, "temporal_profile.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "dow", "hour", "intensity"])
            for lab in patterns_mod.LABELS:
                mat = profile.intensity[lab]
                for dow in range(7):
                    for hour in range(24):
                        writer.writerow([lab, dow, hour, f"{mat[dow, hour]:.12g}"])

        grid = patterns_mod.spatial_grid(lvisits, cell_deg=cfg["cell_deg"])
        with open(os.path.join(sdir, "spatial_grid.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "lat_idx", "lon_idx", "count"])
            for lab in patterns_mod.LABELS:
                for (i, j) in sorted(grid.counts[lab]):
                    writer.writerow([lab, i, j, grid.counts[lab][(i, j)]])
        with open(os.path.join(sdir, "grid_meta.json"), "w") as fh:
            json.dump(
                {
                    "cell_deg": grid.cell_deg,
                    "lat0": grid.lat0,
                    "lon0": grid.lon0,
                    "normalization": profile.mode,
                },
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")

    def _stage_report(self) -> None:
        sdir = self.stage_dir("report")
        os.makedirs(sdir, exist_ok=True)
        with open(os.path.join(self.stage_dir("quality"), "cohort.json")) as fh:
            cohort = json.load(fh)
        labeled = self._load_labeled_features()
        label_counts = {lab: 0 for lab in classify_mod.LABELS}
        for lf in labeled:
            label_counts[lf.label] += 1

        sweep_rows = []
        sweep_path = os.path.join(self.stage_dir("fit"), "sweep.csv")
        if os.path.exists(sweep_path):
            with open(sweep_path, newline="") as fh:
                sweep_rows = list(csv.DictReader(fh))
        with open(os.path.join(self.stage_dir("fit"), "model.json")) as fh:
            model_doc = json.load(fh)

        summary = {
            "cohort_size": len(cohort["users"]),
            "cohort_params": {k: cohort[k] for k in ("tau_hours", "t_days", "mu_t_min", "mu_s_min")},
            "label_counts": label_counts,
            "n_features": len(labeled),
            "selected_model": {
                "k": len(model_doc["weights"]),
                "cov_kind": model_doc["cov_kind"],
                "loglik": model_doc["loglik"],
                "converged": model_doc["converged"],
            },
            "sweep_table": sweep_rows,
        }
        with open(os.path.join(sdir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        lines = [
            "visitscope run summary",
            "======================",
            f"cohort size: {summary['cohort_size']}",
            f"features labeled: {summary['n_features']}",
            "label counts: " + ", ".join(f"{k}={v}" for k, v in sorted(label_counts.items())),
            f"selected model: k={summary['selected_model']['k']} "
            f"({summary['selected_model']['cov_kind']}), "
            f"loglik={summary['selected_model']['loglik']:.6g}",
            f"sweep cells: {len(sweep_rows)}",
        ]
        with open(os.path.join(sdir, "summary.txt"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
