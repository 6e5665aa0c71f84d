"""Stage runner behind the command line.

Every stage writes into its own directory under the output root: its
artifacts, the expanded configuration (``config.json``) and a manifest of
input and output hashes (``manifest.json``). A stage whose configuration
sections and input hashes match the existing manifest is skipped unless
forced. Artifacts carry no timestamps or absolute output paths, so equal
inputs give byte-identical files.
"""
import hashlib
import json
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import config as C
from .clustering import REST_LABEL, assignment_csv, cluster_gestures
from .dataset import (EmgRecording, generate_synthetic_recordings, load_csv_recording,
                      load_mat_recording)
from .errors import ArgumentError, ConfigError, DataError, DependencyError
from .evaluation import (compare_models, comparison_csv, cross_validate, learning_curve, make_folds,
                         window_comparison)
from .featsel import hybrid_select, summaries_csv
from .features import FeatureTable, extract_feature_table
from .models import canonical_kind, predict, save_model, train
from .preprocess import preprocess

log = logging.getLogger(__name__)

RECORDINGS = "recordings"
MANIFEST = "manifest.json"
CONFIG = "config.json"


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


# -- recording store

def save_recordings(recs, directory: Path) -> list:
    index, files = [], []
    for rec in recs:
        name = f"subject_{rec.subject_id}.npz"
        with open(directory / name, "wb") as fh:
            np.savez(fh, channels=rec.channels, stimulus=rec.stimulus, repetition=rec.repetition)
        index.append({"subject_id": rec.subject_id, "sample_rate_hz": rec.sample_rate_hz, "file": name,
                      "metadata": rec.metadata})
        files.append(name)
    if len({r["subject_id"] for r in index}) != len(index):
        raise DataError("subject ids must be unique across recordings")
    write_json(directory / "recordings.json", index)
    return files + ["recordings.json"]


def load_recordings(directory: Path) -> list:
    out = []
    for item in read_json(directory / "recordings.json"):
        with np.load(directory / item["file"]) as z:
            out.append(EmgRecording(item["subject_id"], item["sample_rate_hz"], z["channels"], z["stimulus"],
                                    z["repetition"], item["metadata"]))
    return out


# -- stage machinery

@dataclass(frozen=True)
class Stage:
    name: str
    directory: str
    sections: tuple
    needs: tuple            # upstream directories
    run: Callable


class Runner:
    def __init__(self, cfg: dict, root, force: bool = False, jobs: int = 1, echo=print):
        self.cfg = cfg
        self.root = Path(root)
        self.force = force
        self.jobs = max(1, int(jobs))
        self.echo = echo

    def dir(self, name: str) -> Path:
        return self.root / name

    def require(self, directory: str, for_stage: str) -> Path:
        d = self.dir(directory)
        man = d / MANIFEST
        producer = " or ".join(PRODUCERS.get(directory, (directory,)))
        if not man.exists():
            raise DependencyError(f"stage '{for_stage}' needs the outputs of '{producer}'; "
                                  f"run `emgpipe {PRODUCERS.get(directory, (directory,))[0]}` first")
        for rel in read_json(man)["outputs"]:
            if not (d / rel).exists():
                raise DependencyError(f"stage '{for_stage}': artifact {directory}/{rel} from '{producer}' is missing")
        return d

    def _inputs(self, stage: Stage) -> dict:
        hashes = {}
        for up in stage.needs:
            d = self.require(up, stage.name)
            for rel in read_json(d / MANIFEST)["outputs"]:
                hashes[f"{up}/{rel}"] = sha256_file(d / rel)
        return hashes

    def _section_digest(self, stage: Stage) -> str:
        picked = {}
        for path in stage.sections:
            node = self.cfg
            for part in path.split("."):
                node = node[part]
            picked[path] = node
        return C.digest(picked)

    def execute(self, stage: Stage) -> bool:
        """Run ``stage``; returns False when it was skipped as up to date."""
        inputs = self._inputs(stage)
        d = self.dir(stage.directory)
        manifest = {"stage": stage.name, "config_digest": self._section_digest(stage), "inputs": inputs}
        if not self.force and (d / MANIFEST).exists():
            old = read_json(d / MANIFEST)
            same = all(old.get(k) == v for k, v in manifest.items())
            intact = same and all((d / rel).exists() and sha256_file(d / rel) == h
                                  for rel, h in old["outputs"].items())
            if intact:
                self.echo(f"{stage.name}: up to date, skipped (use --force to rerun)")
                return False
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)
        outputs = stage.run(self, d)
        expanded = dict(self.cfg)
        expanded["output_dir"] = None
        write_json(d / CONFIG, expanded)
        manifest["outputs"] = {rel: sha256_file(d / rel) for rel in sorted(outputs)}
        write_json(d / MANIFEST, manifest)
        self.echo(f"{stage.name}: wrote {len(outputs)} artifact(s) to {d}")
        return True

    # -- shared loaders

    def feature_table(self, stage: str) -> FeatureTable:
        return FeatureTable.from_csv(self.require("features", stage) / "features.csv")

    def task_table(self, stage: str, table: FeatureTable, with_selection: bool = True) -> FeatureTable:
        """Restrict rows to the configured gestures and columns to the selected set."""
        g = self.cfg["task"]["gestures"]
        if g == "representatives":
            reps = read_json(self.require("cluster", stage) / "clusters.json")["representatives"]
            table = table.take_rows(np.isin(table.gesture, reps))
        elif isinstance(g, list):
            table = table.take_rows(np.isin(table.gesture, g))
        if with_selection and self.cfg["selection"]["apply"]:
            final = read_json(self.require("select", stage) / "selection.json")["final_set"]
            keep = {f["column"] for f in final}
            table = table.take_columns([i for i, c in enumerate(table.columns) if c in keep])
        if table.n_rows == 0 or not table.columns:
            raise DataError(f"stage '{stage}': task selection leaves an empty table")
        return table


# -- stages

def _synth(r: Runner, d: Path) -> list:
    recs = generate_synthetic_recordings(C.synthetic_spec(r.cfg))
    return save_recordings(recs, d)


def _ingest(r: Runner, d: Path) -> list:
    ds = r.cfg["dataset"]
    paths = [Path(p) for p in ds["paths"]]
    if not paths:
        raise ConfigError("dataset.paths: no input files given for ingest")
    ids = ds["subject_ids"]
    if ids is not None and len(ids) != len(paths):
        raise ConfigError("dataset.subject_ids: must have one id per path")
    recs = []
    for i, p in enumerate(paths):
        if not p.exists():
            raise DataError(f"input file {p} does not exist")
        fmt = ds["format"] if ds["format"] != "auto" else ("mat" if p.suffix.lower() == ".mat" else "csv")
        sid = ids[i] if ids is not None else None
        if fmt == "mat":
            rec = load_mat_recording(p, subject_id=sid, sample_rate_hz=ds["sample_rate_hz"])
            if sid is None and rec.subject_id == 0:
                rec = EmgRecording(i + 1, rec.sample_rate_hz, rec.channels, rec.stimulus, rec.repetition,
                                   rec.metadata)
        else:
            rec = load_csv_recording(p, C.csv_schema(r.cfg), i + 1 if sid is None else sid, ds["sample_rate_hz"])
        recs.append(rec)
    return save_recordings(recs, d)


def _preprocess(r: Runner, d: Path) -> list:
    pc = C.preprocess_config(r.cfg)
    recs = [preprocess(rec, pc) for rec in load_recordings(r.dir(RECORDINGS))]
    files = save_recordings(recs, d)
    write_json(d / "normalization.json", {str(rec.subject_id): rec.metadata.get("normalization") for rec in recs})
    return files + ["normalization.json"]


def _features(r: Runner, d: Path) -> list:
    recs = load_recordings(r.dir("preprocess"))
    try:
        table = extract_feature_table(recs, None, C.window_spec(r.cfg), r.cfg["features"]["include_rest"])
    except ArgumentError as exc:
        raise ConfigError(f"features: {exc}") from None
    table.to_csv(d / "features.csv", {"window_ms": r.cfg["features"]["window_ms"]})
    return ["features.csv", "features.json"]


def _cluster(r: Runner, d: Path) -> list:
    table = r.feature_table("cluster")
    cl = r.cfg["clustering"]
    n_gestures = len(set(table.gesture.tolist()) - {REST_LABEL})
    if not 1 <= cl["k"] <= n_gestures:
        raise ConfigError(f"clustering.k: must lie in [1, {n_gestures}] for this table, got {cl['k']}")
    res = cluster_gestures(table, cl["k"], cl["ridge_lambda"])
    tree = res["tree"]
    (d / "linkage.json").write_text(tree.to_json(), encoding="utf-8")
    (d / "dendrogram.dot").write_text(tree.to_dot(), encoding="utf-8")
    (d / "assignment.csv").write_text(assignment_csv(res["assignment"]), encoding="utf-8")
    (d / "representatives.csv").write_text(
        "gesture\n" + "".join(f"{g}\n" for g in res["representatives"]), encoding="utf-8")
    labels, D = res["labels"], res["distances"]
    (d / "distances.csv").write_text(
        "gesture," + ",".join(map(str, labels)) + "\n"
        + "".join(f"{a}," + ",".join(repr(float(v)) for v in row) + "\n" for a, row in zip(labels, D)),
        encoding="utf-8")
    write_json(d / "clusters.json", {"k": cl["k"], "ridge_lambda_applied": res["covariance"].shrinkage_lambda,
                                     "assignment": {str(g): c for g, c in sorted(res["assignment"].items())},
                                     "representatives": res["representatives"]})
    return ["linkage.json", "dendrogram.dot", "assignment.csv", "representatives.csv", "distances.csv",
            "clusters.json"]


def _select(r: Runner, d: Path) -> list:
    s = r.cfg["selection"]
    table = r.task_table("select", r.feature_table("select"), with_selection=False)
    rep = hybrid_select(table, None, s["mi_min"], s["importance_min"], s["retain_ratio"], n_bins=s["n_bins"],
                        unit=s["unit"], replication=s["replication"], target_units=s["target_units"],
                        drop_channels=s["drop_channels"], max_depth=s["max_depth"], min_leaf=s["min_leaf"])
    (d / "selection.json").write_text(rep.to_json(), encoding="utf-8")
    (d / "final_set.csv").write_text(rep.final_set_csv(), encoding="utf-8")
    (d / "class_summaries.csv").write_text(summaries_csv(rep.summaries), encoding="utf-8")
    return ["selection.json", "final_set.csv", "class_summaries.csv"]


def _kinds(names) -> list:
    return list(dict.fromkeys(canonical_kind(str(k)) for k in names))


def _train(r: Runner, d: Path) -> list:
    table = r.task_table("train", r.feature_table("train"))
    tc = C.train_config(r.cfg)
    X, y = table.values, table.gesture
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    Z = (X - mu) / sd
    files, summary = [], {"columns": list(table.columns), "n_rows": table.n_rows, "models": {}}
    for kind in _kinds(r.cfg["models"]["train"]):
        art = train(kind, Z, y, tc, table.columns, r.jobs)
        save_model(art, d / f"model_{kind}.emgm")
        pred, _ = predict(art, Z, table.columns)
        summary["models"][kind] = {"file": f"model_{kind}.emgm", "train_accuracy": float(np.mean(pred == y)),
                                   "schema_hash": art.schema_hash}
        files.append(f"model_{kind}.emgm")
    write_json(d / "scaler.json", {"columns": list(table.columns), "mean": mu.tolist(), "scale": sd.tolist()})
    write_json(d / "train.json", summary)
    return files + ["scaler.json", "train.json"]


def _folds(r: Runner, table: FeatureTable):
    ev = r.cfg["evaluation"]
    return make_folds(table, ev["folds"], r.cfg["seed"], ev["split_mode"])


def _evaluate(r: Runner, d: Path) -> list:
    trained = read_json(r.require("train", "evaluate") / "train.json")
    table = r.task_table("evaluate", r.feature_table("evaluate"))
    if list(table.columns) != trained["columns"]:
        raise DependencyError("stage 'evaluate': trained models use different columns; rerun `emgpipe train`")
    ev, tc = r.cfg["evaluation"], C.train_config(r.cfg)
    folds = _folds(r, table)
    (d / "folds.csv").write_text("row,subject,gesture,repetition,window_index,fold\n" + "".join(
        f"{i},{m[0]},{m[1]},{m[2]},{m[3]},{f}\n" for i, (m, f) in enumerate(zip(table.meta.tolist(), folds))),
        encoding="utf-8")
    files, summary = ["folds.csv"], {"split_mode": ev["split_mode"], "n_folds": ev["folds"], "models": {}}
    for kind in trained["models"]:
        rep = cross_validate(kind, tc, table, folds, r.jobs, ev["split_mode"])
        write_json(d / f"report_{kind}.json", rep.to_dict())
        (d / f"confusion_{kind}.csv").write_text(rep.confusion_csv(), encoding="utf-8")
        files += [f"report_{kind}.json", f"confusion_{kind}.csv"]
        summary["models"][kind] = {"pooled": rep.aggregate["pooled"], "fold_mean_std": rep.aggregate["fold_mean_std"],
                                   "subject_mean": rep.aggregate["subject_mean"]}
        lc = ev["learning_curve"]
        if lc["enabled"]:
            curve = learning_curve(kind, tc, table, lc["fractions"], lc["repeats"], r.cfg["seed"], folds)
            (d / f"learning_curve_{kind}.csv").write_text(curve.to_csv(), encoding="utf-8")
            files.append(f"learning_curve_{kind}.csv")
    write_json(d / "evaluation.json", summary)
    return files + ["evaluation.json"]


def _compare(r: Runner, d: Path) -> list:
    table = r.task_table("compare", r.feature_table("compare"))
    folds = _folds(r, table)
    res = compare_models(_kinds(r.cfg["evaluation"]["compare"]), C.train_config(r.cfg), table, folds, r.jobs)
    (d / "comparison.csv").write_text(comparison_csv(res), encoding="utf-8")
    write_json(d / "comparison.json", {"rows": res["rows"], "folds_hash": res["folds_hash"],
                                       "split_mode": r.cfg["evaluation"]["split_mode"],
                                       "confusion": {k: v.confusion.tolist() for k, v in res["reports"].items()}})
    return ["comparison.csv", "comparison.json"]


def _windows(r: Runner, d: Path) -> list:
    ev = r.cfg["evaluation"]
    recs = load_recordings(r.dir("preprocess"))
    rows = window_comparison(recs, [float(w) for w in ev["windows_ms"]], canonical_kind(ev["window_model"]),
                             C.train_config(r.cfg), None, r.cfg["features"]["include_rest"], ev["folds"],
                             ev["split_mode"], r.cfg["seed"], r.jobs)
    keys = ("window_ms", "n_windows", "accuracy", "dispersion_index", "outlier_rate")
    (d / "window_comparison.csv").write_text(",".join(keys) + "\n" + "".join(
        ",".join(repr(row[k]) for k in keys) + "\n" for row in rows), encoding="utf-8")
    write_json(d / "window_comparison.json", {"model": canonical_kind(ev["window_model"]), "rows": rows})
    return ["window_comparison.csv", "window_comparison.json"]


BUNDLED = (".json", ".csv", ".dot")


def _report(r: Runner, d: Path) -> list:
    summary, files = {"stages": {}}, []
    for stage in STAGE_LIST:
        if stage.name in ("report", "ingest"):
            continue
        src = r.dir(stage.directory)
        if not (src / MANIFEST).exists() or stage.directory in summary["stages"]:
            continue
        man = read_json(src / MANIFEST)
        summary["stages"][stage.directory] = {"stage": man["stage"], "outputs": man["outputs"]}
        (d / stage.directory).mkdir()
        for rel in sorted(man["outputs"]) + [CONFIG, MANIFEST]:
            if rel.endswith(BUNDLED):
                shutil.copyfile(src / rel, d / stage.directory / rel)
                files.append(f"{stage.directory}/{rel}")
    if not summary["stages"]:
        raise DependencyError("stage 'report' found no stage outputs; run the pipeline first")
    highlights = {}
    if "evaluate" in summary["stages"]:
        ev = read_json(r.dir("evaluate") / "evaluation.json")
        highlights["evaluate"] = {k: v["pooled"] for k, v in ev["models"].items()}
    if "compare" in summary["stages"]:
        highlights["compare"] = read_json(r.dir("compare") / "comparison.json")["rows"]
    if "windows" in summary["stages"]:
        highlights["windows"] = read_json(r.dir("windows") / "window_comparison.json")["rows"]
    if "cluster" in summary["stages"]:
        highlights["cluster"] = read_json(r.dir("cluster") / "clusters.json")["representatives"]
    if "select" in summary["stages"]:
        sel = read_json(r.dir("select") / "selection.json")
        highlights["select"] = {"final_families": sel["final_families"], "dropped_channels": sel["dropped_channels"]}
    summary["highlights"] = highlights
    write_json(d / "run_summary.json", summary)
    return files + ["run_summary.json"]


STAGE_LIST = (
    Stage("synth", RECORDINGS, ("seed", "dataset.synthetic"), (), _synth),
    Stage("ingest", RECORDINGS, ("dataset",), (), _ingest),
    Stage("preprocess", "preprocess", ("preprocess",), (RECORDINGS,), _preprocess),
    Stage("features", "features", ("features",), ("preprocess",), _features),
    Stage("cluster", "cluster", ("clustering",), ("features",), _cluster),
    Stage("select", "select", ("selection", "task"), ("features",), _select),
    Stage("train", "train", ("seed", "models", "task", "selection.apply"), ("features",), _train),
    Stage("evaluate", "evaluate", ("seed", "models", "task", "selection.apply", "evaluation"),
          ("train", "features"), _evaluate),
    Stage("compare", "compare", ("seed", "models", "task", "selection.apply", "evaluation"), ("features",),
          _compare),
    Stage("windows", "windows", ("seed", "models", "features", "evaluation"), ("preprocess",), _windows),
    Stage("report", "report", (), (), _report),
)
STAGES = {s.name: s for s in STAGE_LIST}
PRODUCERS = {RECORDINGS: ("synth", "ingest")}
PRODUCERS.update({s.directory: (s.name,) for s in STAGE_LIST if s.directory != RECORDINGS})


def extra_needs(cfg: dict, stage: Stage) -> tuple:
    """Upstream directories that depend on the configuration."""
    needs = []
    if stage.name in ("select", "train", "evaluate", "compare") and cfg["task"]["gestures"] == "representatives":
        needs.append("cluster")
    if stage.name in ("train", "evaluate", "compare") and cfg["selection"]["apply"]:
        needs.append("select")
    if stage.name == "report":
        needs = [s.directory for s in STAGE_LIST if s.name not in ("report", "ingest")]
    return tuple(needs)


def run_stage(name: str, cfg: dict, root, force: bool = False, jobs: int = 1, echo=print) -> bool:
    stage = STAGES[name]
    runner = Runner(cfg, root, force, jobs, echo)
    extra = extra_needs(cfg, stage)
    if name == "report":
        present = tuple(d for d in dict.fromkeys(extra) if (runner.dir(d) / MANIFEST).exists())
        stage = Stage(stage.name, stage.directory, stage.sections, present, stage.run)
    elif extra:
        stage = Stage(stage.name, stage.directory, stage.sections, stage.needs + extra, stage.run)
    return runner.execute(stage)
