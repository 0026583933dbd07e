"""Stages of the workflow: ingest, train-gan, generate, eval, train-dcnn, test-dcnn, summary, plots.

Every stage reads its inputs from the run directory, writes its outputs there
and records them in the run manifest, so any stage can be rerun alone.
"""
from __future__ import annotations

import csv
import json
import logging
import time
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import metrics, plots
from .checkpoint import load_checkpoint, save_checkpoint
from .classifier import PredictionRecord, load_classifier, test_classifier, train_classifier
from .config import PipelineConfig, resolve
from .manifest import RunManifest
from .signals import (DAMAGED, UNDAMAGED, build_scenario, load_pool, load_signal,
                      normalize_pool, save_pool, segment, synthesize_surrogate)
from .wdcgan import DAMAGED as GAN_DAMAGED, GanTrainHistory, generate, train_gan

log = logging.getLogger("shmgan")


class DependencyError(FileNotFoundError):
    """An upstream artifact a stage needs is missing."""


def stage_seed(global_seed: int, stage: str) -> int:
    """Per-stage seed derived from the global seed and the stage name."""
    ss = np.random.SeedSequence([int(global_seed), zlib.crc32(stage.encode())])
    return int(ss.generate_state(1, np.uint32)[0])


@dataclass
class Run:
    cfg: PipelineConfig
    root: Path
    manifest: RunManifest

    @classmethod
    def open(cls, cfg: PipelineConfig, root) -> "Run":
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        (root / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
        return cls(cfg, root, RunManifest.open(root, cfg.digest()))

    # -- paths --
    def data_dir(self, condition: str) -> Path:
        return self.root / "data" / condition

    def case_dir(self, case: str) -> Path:
        return self.root / case

    def scenario_dir(self, case: str, scenario: int) -> Path:
        return self.root / case / f"scenario{scenario}"

    def need(self, *paths: Path) -> None:
        for p in paths:
            if not p.exists():
                raise DependencyError(f"missing upstream artifact: {p}")

    def seed(self, stage: str) -> int:
        return stage_seed(self.cfg.seed, stage)


def run_stage(run: Run, name: str, fn: Callable[[Run, int], list[Path]], force: bool = True) -> bool:
    """Execute one stage unless (``force`` is False and) it is already complete. Returns True if run."""
    if not force and run.manifest.is_complete(name):
        log.info("skip %s (up to date)", name)
        return False
    run.manifest.forget(name)
    seed = run.seed(name)
    log.info("run %s (seed %d)", name, seed)
    t0 = time.perf_counter()
    outputs = fn(run, seed)
    run.manifest.record(name, outputs, seed, time.perf_counter() - t0)
    return True


# --------------------------------------------------------------------------
# stages

def ingest(run: Run, seed: int) -> list[Path]:
    cfg = run.cfg
    pools = {}
    if cfg.data.source == "surrogate":
        rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)]
        for cond, rng in zip((UNDAMAGED, DAMAGED), rngs):
            pools[cond] = segment(synthesize_surrogate(cfg.data.surrogate, cond, rng), cfg.seg_len)
    else:
        base = Path(cfg.base_dir)
        for cond, p in ((UNDAMAGED, cfg.data.undamaged), (DAMAGED, cfg.data.damaged)):
            raw = load_signal(resolve(base, p), cfg.data.format, seg_len=cfg.seg_len)
            raw.condition = cond
            pools[cond] = segment(raw, cfg.seg_len)
    for cond, segs in pools.items():
        peak = float(np.max(np.abs([s.values for s in segs])))
        if cond == DAMAGED and peak > 1.0:
            log.warning("damaged pool peaks at %.3g, beyond the generator's tanh range", peak)
    out = []
    for cond, name in ((UNDAMAGED, "undamaged"), (DAMAGED, "damaged")):
        out += save_pool(pools[cond], run.data_dir(name), prefix=name)
    info = run.root / "data" / "ingest.json"
    info.write_text(json.dumps({"seg_len": cfg.seg_len, "undamaged": len(pools[UNDAMAGED]),
                                "damaged": len(pools[DAMAGED]), "source": cfg.data.source},
                               indent=2, sort_keys=True) + "\n")
    return out + [info]


def _load_data(run: Run, name: str):
    d = run.data_dir(name)
    run.need(d / "manifest.csv")
    return load_pool(d)


def train_gan_stage(run: Run, seed: int, case: str) -> list[Path]:
    cfg, c = run.cfg, run.cfg.case(case)
    real = _load_data(run, "damaged")
    gcfg = replace(run.cfg.gan, epochs=c.gan_epochs, seed=seed, condition=GAN_DAMAGED)
    out = run.case_dir(case) / "gan"
    out.mkdir(parents=True, exist_ok=True)

    def progress(rec):
        if rec.epoch == 1 or rec.epoch % max(1, gcfg.epochs // 10) == 0 or rec.epoch == gcfg.epochs:
            log.info("%s gan epoch %d/%d critic %.4g generator %.4g fid %.4g", case, rec.epoch,
                     gcfg.epochs, rec.critic_loss, rec.generator_loss, rec.fid_median)

    ckpt, history, _ = train_gan(gcfg, real, divergence_dump=out / "divergence.ckpt", progress=progress)
    return [save_checkpoint(ckpt, out / "gan.ckpt"), history.write_csv(out / "history.csv")]


def generate_stage(run: Run, seed: int, case: str, n: int | None = None) -> list[Path]:
    ck = run.case_dir(case) / "gan" / "gan.ckpt"
    run.need(ck)
    fakes = generate(load_checkpoint(ck, "gan"), n or run.cfg.eval.n_generate, np.random.default_rng(seed))
    return save_pool(fakes, run.case_dir(case) / "fake", prefix="fake")


def eval_stage(run: Run, seed: int, case: str) -> list[Path]:
    ev = run.cfg.eval
    real = _load_data(run, "damaged")
    fake_dir = run.case_dir(case) / "fake"
    run.need(fake_dir / "manifest.csv")
    fakes = load_pool(fake_dir)
    out = run.case_dir(case) / "eval"
    reports = [metrics.fid_report(fakes, real, np.random.default_rng(seed), ev.fid_all_pairs, ev.bins),
               metrics.creativity_report(fakes, real, ev.ssim_threshold, ev.bins),
               metrics.diversity_report(fakes, ev.ssim_threshold, ev.bins)]
    paths = [p for r in reports for p in r.write(out)]
    verdict = {r.name: r.summary() for r in reports}
    for r in reports:
        verdict[r.name].pop("box")
        verdict[r.name].pop("name")
    vpath = out / "verdicts.json"
    vpath.write_text(json.dumps(verdict, indent=2, sort_keys=True) + "\n")
    return paths + [vpath]


def _scenario_split(run: Run, case: str, scenario: int):
    und = normalize_pool(_load_data(run, "undamaged"))
    dam = normalize_pool(_load_data(run, "damaged"))
    fake = None
    if scenario == 2:
        fake_dir = run.case_dir(case) / "fake"
        run.need(fake_dir / "manifest.csv")
        fake = normalize_pool(load_pool(fake_dir))
    rng = np.random.default_rng(run.seed(f"{case}/scenario{scenario}/split"))
    return build_scenario(und, dam, fake, scenario, rng, run.cfg.n_train, run.cfg.n_test)


def train_dcnn_stage(run: Run, seed: int, case: str, scenario: int) -> list[Path]:
    c = run.cfg.case(case)
    split = _scenario_split(run, case, scenario)
    ccfg = replace(run.cfg.classifier, seed=seed, epochs=c.classifier_epochs or run.cfg.classifier.epochs)

    def progress(epoch, loss):
        if epoch % max(1, ccfg.epochs // 5) == 0 or epoch == ccfg.epochs:
            log.info("%s scenario%d classifier epoch %d/%d loss %.4g", case, scenario, epoch, ccfg.epochs, loss)

    ckpt, history, _ = train_classifier(ccfg, split, progress=progress)
    out = run.scenario_dir(case, scenario)
    out.mkdir(parents=True, exist_ok=True)
    split_csv = out / "split.csv"
    with open(split_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["role", "label", "source", "condition", "segment_index"])
        for role, pairs in (("train", split.train), ("test", split.test)):
            for s, lab in pairs:
                w.writerow([role, lab, s.source, s.condition, s.segment_index])
    return [save_checkpoint(ckpt, out / "classifier.ckpt"), history.write_csv(out / "loss.csv"), split_csv]


def test_dcnn_stage(run: Run, seed: int, case: str, scenario: int) -> list[Path]:
    out = run.scenario_dir(case, scenario)
    ck = out / "classifier.ckpt"
    run.need(ck)
    ccfg, model = load_classifier(ck)
    split = _scenario_split(run, case, scenario)
    result = test_classifier(model, split, ccfg.threshold)
    return result.write(out, "test")


def summary_stage(run: Run, seed: int) -> list[Path]:
    rows = []
    for c in run.cfg.cases:
        for s in run.cfg.scenarios:
            p = run.scenario_dir(c.name, s) / "test_metrics.json"
            run.need(p)
            m = json.loads(p.read_text())
            rows.append({"case": c.name, "scenario": s,
                         "classification_accuracy": m["classification_accuracy"],
                         "mean_absolute_error": m["mean_absolute_error"]})
    path = run.root / "summary.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, ["case", "scenario", "classification_accuracy", "mean_absolute_error"])
        w.writeheader()
        for r in rows:
            w.writerow({**r, "classification_accuracy": repr(r["classification_accuracy"]),
                        "mean_absolute_error": repr(r["mean_absolute_error"])})
    return [path]


def _read_column(path: Path, column: str) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([float(row[column]) for row in csv.DictReader(fh)])


def _read_records(path: Path) -> list[PredictionRecord]:
    with open(path, newline="") as fh:
        return [PredictionRecord(int(r["record_id"]), float(r["score"]), int(r["truth"]),
                                 int(r["label"]), r["source"]) for r in csv.DictReader(fh)]


def plots_stage(run: Run, seed: int) -> list[Path]:
    cfg, d = run.cfg, run.root / "plots"
    out: list[Path] = []
    scores = {"fid": {}, "creativity": {}, "diversity": {}}
    for c in cfg.cases:
        cd = run.case_dir(c.name)
        run.need(cd / "gan" / "history.csv")
        hist = GanTrainHistory.read_csv(cd / "gan" / "history.csv")
        out += plots.loss_curves(hist, d, f"{c.name}_gan_loss", f"GAN training losses, {c.name}")
        out += plots.fid_curve(hist, d, f"{c.name}_fid_curve", f"Median FID during training, {c.name}")
        for name in scores:
            p = cd / "eval" / f"{name}_scores.csv"
            run.need(p)
            scores[name][c.name] = _read_column(p, "value")
        out += plots.score_pdfs({"FID": scores["fid"][c.name]}, d, f"{c.name}_fid_pdf",
                                f"FID probability density, {c.name}", "FID", cfg.eval.bins)
        out += plots.score_pdfs({"creativity": scores["creativity"][c.name],
                                 "diversity": scores["diversity"][c.name]}, d, f"{c.name}_ssim_pdf",
                                f"SSIM probability density, {c.name}", "SSIM", cfg.eval.bins)
        for s in cfg.scenarios:
            sd = run.scenario_dir(c.name, s)
            run.need(sd / "loss.csv", sd / "test_records.csv")
            out += plots.classifier_loss(_read_column(sd / "loss.csv", "loss"), d,
                                         f"{c.name}_scenario{s}_dcnn_loss",
                                         f"Classifier training loss, {c.name} scenario {s}")
            out += plots.prediction_bars(_read_records(sd / "test_records.csv"), d,
                                         f"{c.name}_scenario{s}_predictions",
                                         f"Prediction scores, {c.name} scenario {s}")
    for name, label in (("fid", "FID"), ("creativity", "SSIM"), ("diversity", "SSIM")):
        out += plots.box_plots(scores[name], d, f"{name}_box", f"{name.capitalize()} scores by case", label)
    summary = run.root / "summary.csv"
    run.need(summary)
    with open(summary, newline="") as fh:
        rows = [{"case": r["case"], "scenario": int(r["scenario"]),
                 "classification_accuracy": float(r["classification_accuracy"]),
                 "mean_absolute_error": float(r["mean_absolute_error"])} for r in csv.DictReader(fh)]
    out += plots.summary_bars(rows, d)
    return out


# --------------------------------------------------------------------------
# orchestration

def stage_plan(cfg: PipelineConfig) -> list[tuple[str, Callable[[Run, int], list[Path]]]]:
    """Ordered (stage name, callable) pairs for a full pipeline run."""
    plan: list[tuple[str, Callable]] = [("ingest", ingest)]
    for c in cfg.cases:
        n = c.name
        plan += [(f"{n}/train-gan", lambda r, s, n=n: train_gan_stage(r, s, n)),
                 (f"{n}/generate", lambda r, s, n=n: generate_stage(r, s, n)),
                 (f"{n}/eval", lambda r, s, n=n: eval_stage(r, s, n))]
        for k in cfg.scenarios:
            plan += [(f"{n}/scenario{k}/train-dcnn", lambda r, s, n=n, k=k: train_dcnn_stage(r, s, n, k)),
                     (f"{n}/scenario{k}/test-dcnn", lambda r, s, n=n, k=k: test_dcnn_stage(r, s, n, k))]
    plan += [("summary", summary_stage), ("plots", plots_stage)]
    return plan


def run_pipeline(cfg: PipelineConfig, root, resume: bool = True) -> Run:
    """Run every stage in order; with ``resume`` completed, unchanged stages are skipped.

    A stage reruns whenever anything upstream of it reran.
    """
    run = Run.open(cfg, root)
    dirty = False
    for name, fn in stage_plan(cfg):
        dirty = run_stage(run, name, fn, force=dirty or not resume) or dirty
    return run


def read_summary(root) -> list[dict]:
    with open(Path(root) / "summary.csv", newline="") as fh:
        return list(csv.DictReader(fh))
