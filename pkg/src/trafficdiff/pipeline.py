"""Stage-per-command pipeline with checksummed manifests.

Layout under the artifact root::

    ingest/<dataset>/{traces.npy,labels.npy,ids.json,split.json}
    encode/<dataset>/gasf.bin
    enhance/<dataset>/{images.npy,preview/*.png}
    train-dm/<dataset>/{model.pt,loss.csv}
    sample/<dataset>/{images.npy,labels.npy,ids.json,preview/*.png}
    fid/{fid.csv,histogram.csv}
    eval/<protocol>/*.csv
    report/{*.csv,*.png}

Every stage directory carries ``manifest.json`` listing the sha256 of each
file it produced plus the digests of the upstream manifests it consumed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import shutil
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import fidelity
from .config import RunConfig, digest, stage_seed
from .diffusion import DiffusionConfig, load_checkpoint, sample_array, save_checkpoint, train
from .enhance import enhance_batch, save_png
from .gasf import GasfImage, gasf_encode_batch, read_gasf_file, write_gasf_file
from .harness import protocols as P
from .harness.data import SCENARIOS, EvalReport, EvalRow, ImageSet
from .harness.synth import DiffusionSynthesizer
from .traces import gen_toy_dataset, load_csv_dataset, preprocess, split_dataset

log = logging.getLogger(__name__)

PROTOCOLS = ("hierarchical", "limited", "anomaly", "realtime", "1d2d", "synthsweep")
MANIFEST = "manifest.json"


class StageError(RuntimeError):
    """A required upstream stage has not been run."""


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")
    os.replace(tmp, path)


class Stage:
    def __init__(self, root: Path, name: str):
        self.root = Path(root)
        self.name = name
        self.dir = self.root / name

    @property
    def manifest_path(self) -> Path:
        return self.dir / MANIFEST

    def manifest(self) -> dict | None:
        if not self.manifest_path.is_file():
            return None
        return json.loads(self.manifest_path.read_text())

    def files(self) -> dict[str, str]:
        out = {}
        for p in sorted(self.dir.rglob("*")):
            if p.is_file() and p.name != MANIFEST and not p.name.endswith(".tmp"):
                out[p.relative_to(self.dir).as_posix()] = sha256_file(p)
        return out

    def is_current(self, key: str) -> bool:
        m = self.manifest()
        return bool(m) and m["key"] == key and m["files"] == self.files()

    def reset(self) -> None:
        if self.dir.exists():
            shutil.rmtree(self.dir)
        self.dir.mkdir(parents=True)

    def finish(self, key: str, inputs: dict[str, str]) -> dict:
        m = {"stage": self.name, "key": key, "inputs": inputs, "files": self.files()}
        _write_json(self.manifest_path, m)
        return m


def upstream(root: Path, name: str) -> str:
    """Digest of an upstream manifest; raises StageError naming the missing stage."""
    st = Stage(root, name)
    if not st.manifest_path.is_file():
        verb = name.split("/")[0]
        raise StageError(f"missing upstream stage '{name}' (run `trafficdiff {verb}` first)")
    return sha256_file(st.manifest_path)


def _run_stage(root: Path, name: str, key_parts: dict, needs: list[str], force: bool, body) -> dict:
    inputs = {n: upstream(root, n) for n in needs}
    key = digest({**key_parts, "inputs": inputs})
    st = Stage(root, name)
    if not force and st.is_current(key):
        log.info("stage %s up to date", name)
        return {"skipped": True, **st.manifest()}
    st.reset()
    body(st.dir)
    return {"skipped": False, **st.finish(key, inputs)}


# ---------------------------------------------------------------------------
# artifact readers


def load_ingested(root: Path, dataset_id: str):
    d = Path(root) / "ingest" / dataset_id
    traces = np.load(d / "traces.npy")
    labels = np.load(d / "labels.npy")
    ids = json.loads((d / "ids.json").read_text())
    split = json.loads((d / "split.json").read_text())
    return traces, labels, ids, split


def load_bundle(root: Path, cfg: RunConfig, dataset_id: str, with_pool: bool = True) -> P.DatasetBundle:
    traces, labels, ids, split = load_ingested(root, dataset_id)
    images = np.load(Path(root) / "enhance" / dataset_id / "images.npy")
    full = ImageSet(images, labels, ids, traces)
    pool = None
    sdir = Path(root) / "sample" / dataset_id
    if with_pool and (sdir / "images.npy").is_file():
        pool = ImageSet(np.load(sdir / "images.npy"), np.load(sdir / "labels.npy"),
                        json.loads((sdir / "ids.json").read_text()), None, synthetic=True)
    entry = cfg.dataset(dataset_id)
    return P.DatasetBundle(dataset_id, full.take(split["train"]), full.take(split["test"]), pool,
                           entry.traffic_type, entry.platform)


# ---------------------------------------------------------------------------
# stages


def cmd_ingest(cfg: RunConfig, root: Path, force: bool = False) -> dict:
    def body(out: Path):
        for entry in cfg.datasets:
            spec = entry.spec()
            if entry.source == "toy":
                raw = gen_toy_dataset(spec, stage_seed(cfg.seed, f"ingest:{spec.dataset_id}"))
            else:
                src = Path(entry.source)
                if not src.is_dir():
                    raise FileNotFoundError(f"input directory not found: {src}")
                _, raw = load_csv_dataset(src, spec.dataset_id)
            traces = [preprocess(r, spec) for r in raw]
            train_set, test_set = split_dataset(traces, cfg.split)
            index = {id(t): i for i, t in enumerate(traces)}
            d = out / spec.dataset_id
            d.mkdir()
            np.save(d / "traces.npy", np.stack([t.samples for t in traces]))
            np.save(d / "labels.npy", np.array([t.class_label for t in traces], dtype=np.int64))
            (d / "ids.json").write_text(json.dumps([t.trace_id for t in traces]))
            (d / "split.json").write_text(json.dumps(
                {"train": [index[id(t)] for t in train_set], "test": [index[id(t)] for t in test_set]}))

    return _run_stage(root, "ingest", {"cfg": cfg.section_hash("datasets", "split"), "seed": cfg.seed},
                      [], force, body)


def cmd_encode(cfg: RunConfig, root: Path, force: bool = False) -> dict:
    def body(out: Path):
        for entry in cfg.datasets:
            traces, labels, _, _ = load_ingested(root, entry.dataset_id)
            d = out / entry.dataset_id
            d.mkdir()
            mats = gasf_encode_batch(traces)
            write_gasf_file(d / "gasf.bin", (GasfImage(m, int(c), entry.dataset_id)
                                             for m, c in zip(mats, labels)))

    return _run_stage(root, "encode", {}, ["ingest"], force, body)


def _previews(d: Path, images: np.ndarray, labels: np.ndarray) -> None:
    p = d / "preview"
    p.mkdir()
    for c in np.unique(labels):
        first = int(np.flatnonzero(labels == c)[0])
        save_png(p / f"class{int(c)}.png", images[first])


def cmd_enhance(cfg: RunConfig, root: Path, force: bool = False) -> dict:
    def body(out: Path):
        for entry in cfg.datasets:
            imgs = read_gasf_file(root / "encode" / entry.dataset_id / "gasf.bin")
            mats = np.stack([g.matrix for g in imgs])
            labels = np.array([g.class_label for g in imgs])
            d = out / entry.dataset_id
            d.mkdir()
            images = enhance_batch(mats, cfg.enhance)
            np.save(d / "images.npy", images)
            _previews(d, images, labels)

    return _run_stage(root, "enhance", {"cfg": cfg.section_hash("enhance")}, ["encode"], force, body)


def cmd_train_dm(cfg: RunConfig, root: Path, force: bool = False) -> dict:
    def body(out: Path):
        for entry in cfg.datasets:
            b = load_bundle(root, cfg, entry.dataset_id, with_pool=False)
            d = out / entry.dataset_id
            d.mkdir()
            model = train(b.train.images, b.train.labels, cfg.diffusion,
                          seed=stage_seed(cfg.seed, f"train-dm:{entry.dataset_id}"),
                          dataset_id=entry.dataset_id, checkpoint_dir=d / "checkpoints")
            save_checkpoint(model, d / "model.pt")
            with open(d / "loss.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["step", "loss"])
                w.writerows((i + 1, repr(v)) for i, v in enumerate(model.loss_curve))

    return _run_stage(root, "train-dm", {"cfg": cfg.section_hash("diffusion"), "seed": cfg.seed},
                      ["enhance"], force, body)


def cmd_sample(cfg: RunConfig, root: Path, force: bool = False, count: int | None = None) -> dict:
    count = cfg.sampling.count_per_class if count is None else count
    if count < 0:
        raise ValueError("count must be >= 0")

    def body(out: Path):
        for entry in cfg.datasets:
            model = load_checkpoint(root / "train-dm" / entry.dataset_id / "model.pt")
            d = out / entry.dataset_id
            d.mkdir()
            arrays, labels = [], []
            for c in model.class_set:
                s = stage_seed(cfg.seed, f"sample:{entry.dataset_id}:{c}")
                arrays.append(sample_array(model, c, count, s)[:, 0])
                labels += [c] * count
            res = cfg.enhance.resolution
            images = np.concatenate(arrays) if arrays else np.zeros((0, res, res), np.float32)
            labels = np.array(labels, dtype=np.int64)
            np.save(d / "images.npy", images.astype(np.float32))
            np.save(d / "labels.npy", labels)
            ids = [f"synth-{entry.dataset_id}-c{c}-{i:05d}" for i, c in enumerate(labels)]
            (d / "ids.json").write_text(json.dumps(ids))
            if len(labels):
                _previews(d, images, labels)

    return _run_stage(root, "sample", {"cfg": cfg.section_hash("sampling"), "count": count,
                                       "seed": cfg.seed}, ["train-dm"], force, body)


def cmd_fid(cfg: RunConfig, root: Path, force: bool = False) -> dict:
    fc = cfg.fidelity

    def body(out: Path):
        reports = []
        hist_rows = []
        edges = np.linspace(0.0, 1.0, fc.histogram_bins + 1)
        for entry in cfg.datasets:
            b = load_bundle(root, cfg, entry.dataset_id)
            if b.pool is None or len(b.pool) == 0:
                raise StageError(f"no synthetic samples for {entry.dataset_id}; run `trafficdiff sample`")
            orig = fidelity.group_by_class(b.train.images, b.train.labels)
            syn = fidelity.group_by_class(b.pool.images, b.pool.labels)
            n = fc.n or min(len(v) for v in syn.values())
            reports.append(fidelity.fid_per_class(orig, syn, n, fc.embedder,
                                                  stage_seed(cfg.seed, f"fid:{entry.dataset_id}"),
                                                  entry.dataset_id))
            ho = fidelity.pixel_histogram(b.train.images, fc.histogram_bins)
            hs = fidelity.pixel_histogram(b.pool.images, fc.histogram_bins)
            overlap = fidelity.histogram_compare(b.train.images, b.pool.images, fc.histogram_bins)
            for k in range(fc.histogram_bins):
                hist_rows.append([entry.dataset_id, repr(float(edges[k])), repr(float(edges[k + 1])),
                                  repr(float(ho[k])), repr(float(hs[k])), repr(float(overlap))])
        fidelity.write_fid_csv(out / "fid.csv", reports)
        with open(out / "histogram.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dataset", "bin_lo", "bin_hi", "original", "synthetic", "overlap"])
            w.writerows(hist_rows)

    return _run_stage(root, "fid", {"cfg": cfg.section_hash("fidelity"), "seed": cfg.seed},
                      ["enhance", "sample"], force, body)


# ---------------------------------------------------------------------------
# evaluation protocols


def _synthesizer(cfg: RunConfig, opts: dict, dims: int = 2, tag: str = "dm") -> DiffusionSynthesizer:
    key = "diffusion_1d" if dims == 1 else "diffusion"
    dcfg = DiffusionConfig(**{**cfg.diffusion.to_dict(), **opts.get(key, {})})
    return DiffusionSynthesizer(dcfg, cfg.enhance, dims, tag)


def _eval_hierarchical(cfg, root, opts, seed, out):
    bundles = [load_bundle(root, cfg, d.dataset_id) for d in cfg.datasets]
    _require_pool(bundles)
    rep = P.hierarchical_eval(bundles, opts.get("synth_count", cfg.sampling.count_per_class), seed,
                              opts.get("classifier", cfg.classifier_kind), cfg=cfg.classifier)
    rep.to_csv(out / "report.csv")


def _require_pool(bundles):
    for b in bundles:
        if b.pool is None:
            raise StageError(f"no synthetic pool for {b.dataset_id}; run `trafficdiff sample`")


def _eval_limited(cfg, root, opts, seed, out):
    b = load_bundle(root, cfg, opts.get("dataset", cfg.datasets[0].dataset_id), with_pool=False)
    sizes = opts.get("train_sizes", [5, 10])
    rep = P.limited_data_sweep(b, sizes, opts.get("synth_count", cfg.sampling.count_per_class),
                               _synthesizer(cfg, opts, tag=f"limited-{b.dataset_id}"), seed,
                               opts.get("classifier", cfg.classifier_kind), cfg.classifier)
    rep.to_csv(out / "report.csv")


def _eval_anomaly(cfg, root, opts, seed, out):
    ds = opts.get("dataset", cfg.datasets[0].dataset_id)
    entry = cfg.dataset(ds)
    b = load_bundle(root, cfg, ds, with_pool=False)
    anomaly = tuple(opts.get("anomaly_classes") or entry.anomaly_classes)
    if not anomaly:
        raise ValueError("anomaly protocol needs anomaly_classes")
    legit = tuple(opts.get("legitimate_classes")
                  or [c for c in b.train.classes if c not in anomaly][:5])
    crop = opts.get("crop_length")
    if crop is None and opts.get("crop_seconds") and entry.bin_width:
        crop = P.prefix_length(opts["crop_seconds"], entry.bin_width)
    synth_count = opts.get("synth_count", cfg.sampling.count_per_class)
    clf = opts.get("classifier", cfg.classifier_kind)
    synth = _synthesizer(cfg, opts, tag=f"anomaly-{ds}")
    rows = []
    for k in opts.get("anomaly_train_counts", [5]):
        for crop_len in [None] + ([int(crop)] if crop else []):
            setup = P.AnomalySetup(anomaly, legit, k, crop_len)
            for sc in opts.get("scenarios", ["original", "ori+synth"]):
                acc = P.anomaly_case1(b, setup, sc, seed, synth, synth_count, cfg.enhance, clf,
                                      cfg.classifier)
                rows.append(EvalRow(ds, "anomaly-case1", sc, clf, k,
                                    0 if sc == "original" else synth_count,
                                    crop_len or b.trace_length, acc, seed, "case1"))
    EvalReport(rows).to_csv(out / "case1.csv")
    M = opts.get("ensemble_size", 5)
    with open(out / "case2.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "scenario", "population", "index", "entropy", "ensemble_size"])
        for sc in opts.get("uncertainty_scenarios", ["original"]):
            u = P.anomaly_case2_uncertainty(b, P.AnomalySetup(anomaly, legit), M, seed, sc,
                                            synth, synth_count, clf, cfg.classifier)
            for pop, vals in (("legitimate", u.legitimate), ("anomaly", u.anomaly)):
                w.writerows([ds, sc, pop, i, repr(float(v)), M] for i, v in enumerate(vals))


def _eval_realtime(cfg, root, opts, seed, out):
    ds_ids = opts.get("datasets") or [opts.get("dataset", cfg.datasets[0].dataset_id)]
    rep = EvalReport()
    for ds in ds_ids:
        b = load_bundle(root, cfg, ds)
        _require_pool([b])
        prefixes = [float(p) if isinstance(p, float) else int(p)
                    for p in opts.get("prefixes", [0.25, 0.5, 1.0])]
        rep.extend(P.realtime_eval(b, prefixes, opts.get("synth_count", cfg.sampling.count_per_class),
                                   seed, cfg.enhance, opts.get("classifier", cfg.classifier_kind),
                                   cfg=cfg.classifier))
    rep.to_csv(out / "report.csv")


def _eval_1d2d(cfg, root, opts, seed, out):
    ds = opts.get("dataset", cfg.datasets[0].dataset_id)
    b = load_bundle(root, cfg, ds, with_pool=False)
    rep = P.compare_1d_2d(b, seed, _synthesizer(cfg, opts, 2, f"2d-{ds}"),
                          _synthesizer(cfg, opts, 1, f"1d-{ds}"),
                          opts.get("synth_count", cfg.sampling.count_per_class),
                          opts.get("fractions", [0.8, 0.4, 0.2]),
                          opts.get("classifier", cfg.classifier_kind), cfg.classifier)
    rep.to_csv(out / "report.csv")


def _eval_synthsweep(cfg, root, opts, seed, out):
    ds = opts.get("dataset", cfg.datasets[0].dataset_id)
    b = load_bundle(root, cfg, ds)
    _require_pool([b])
    counts = opts.get("counts", [cfg.sampling.count_per_class])
    rep = P.synth_count_sweep(b, counts, seed, opts.get("classifier", cfg.classifier_kind),
                              cfg.classifier)
    rep.to_csv(out / "report.csv")


_EVALS = {
    "hierarchical": _eval_hierarchical, "limited": _eval_limited, "anomaly": _eval_anomaly,
    "realtime": _eval_realtime, "1d2d": _eval_1d2d, "synthsweep": _eval_synthsweep,
}
_EVAL_NEEDS = {
    "hierarchical": ["enhance", "sample"], "limited": ["enhance"], "anomaly": ["enhance"],
    "realtime": ["enhance", "sample"], "1d2d": ["enhance"], "synthsweep": ["enhance", "sample"],
}


def cmd_eval(cfg: RunConfig, root: Path, protocol: str, force: bool = False) -> dict:
    if protocol not in _EVALS:
        raise ValueError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    opts = cfg.experiments.get(protocol, {}) or {}
    seed = stage_seed(cfg.seed, f"eval:{protocol}")
    parts = {"cfg": cfg.section_hash("classifier", "classifier_kind", "enhance", "diffusion"),
             "opts": opts, "seed": cfg.seed}
    return _run_stage(root, f"eval/{protocol}", parts, _EVAL_NEEDS[protocol], force,
                      lambda out: _EVALS[protocol](cfg, root, opts, seed, out))


def cmd_report(cfg: RunConfig, root: Path, force: bool = False) -> dict:
    from .report import write_report

    needs = [f"eval/{p}" for p in PROTOCOLS if (root / "eval" / p / MANIFEST).is_file()]
    if (root / "fid" / MANIFEST).is_file():
        needs.append("fid")
    if not needs:
        raise StageError("missing upstream stage 'eval' (run `trafficdiff eval` first)")
    return _run_stage(root, "report", {}, needs, force, lambda out: write_report(root, out))


STAGES = ("ingest", "encode", "enhance", "train-dm", "sample", "fid", "eval", "report")


def run_all(cfg: RunConfig, root: Path, force: bool = False) -> dict[str, dict]:
    out = {
        "ingest": cmd_ingest(cfg, root, force),
        "encode": cmd_encode(cfg, root, force),
        "enhance": cmd_enhance(cfg, root, force),
        "train-dm": cmd_train_dm(cfg, root, force),
        "sample": cmd_sample(cfg, root, force),
        "fid": cmd_fid(cfg, root, force),
    }
    for p in PROTOCOLS:
        if p in cfg.experiments:
            out[f"eval/{p}"] = cmd_eval(cfg, root, p, force)
    out["report"] = cmd_report(cfg, root, force)
    return out
