"""End-to-end experiment: train, bootstrap, delta, compare, sweep.

Each stage reads what earlier stages left in the output directory, so the
stages can also be run one at a time.  Layout of an output directory::

    config.json                 fully resolved configuration
    MANIFEST.json               stage status and file list
    timing.json                 TimingReport (``run`` only)
    data/                       resampling table
    delta/                      repetition networks, initial checkpoints, train_stats.json,
                                gradient caches, eigenpair bundles, sigmas
    bootstrap/                  replicate networks, initial checkpoints, train_stats.json,
                                ensemble predictions, sigmas
    compare/                    one CSV per (B, K, d) cell, regressions.json
    sweep/                      sweep_K.json, sweep_B.json
    plots/                      SVG figures
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import bootstrap, compare, delta, netcore, persist, plots, trainer
from .data import gen_synthetic, load_idx
from .errors import StageError
from .seeding import COMPONENT_BOOTSTRAP_INIT, COMPONENT_DELTA_INIT, derive_seed, prng_description
from .timing import PhaseTimer

log = logging.getLogger(__name__)

STAGES = ("train", "bootstrap", "delta", "compare", "sweep")
OUT_ENV = "DELTABOOT_OUT"


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_datasets(cfg):
    d = cfg.data
    if d.source == "synthetic":
        train = gen_synthetic(d.classes, d.train_per_class, d.dim, d.separation, cfg.base_seed, stream=0)
        test = gen_synthetic(d.classes, d.test_per_class, d.dim, d.separation, cfg.base_seed, stream=1)
        return train, test
    train = load_idx(d.train_images, d.train_labels, limit=d.n_train or None)
    test = load_idx(d.test_images, d.test_labels, limit=d.n_test or None)
    return train, test


@dataclass
class TabulatedSigmas:
    """Delta sigmas stored per K; usable wherever a LowRankPredictor is."""

    K_values: list
    sigmas: np.ndarray
    epsilons: np.ndarray
    name: str

    def sigma(self, K):
        if K not in self.K_values:
            raise ValueError(f"{self.name}: no sigmas stored for K={K}")
        i = self.K_values.index(K)
        return delta.UncertaintyVector(self.sigmas[i], self.epsilons[i])


class Experiment:
    def __init__(self, cfg, out=None, timer=None):
        self.cfg = cfg
        self.out = Path(out or os.environ.get(OUT_ENV) or cfg.output_dir)
        self.timer = timer or PhaseTimer()
        self._data = None
        self._spec = None

    # -- shared state -------------------------------------------------------

    @property
    def data(self):
        if self._data is None:
            with self.timer.phase("data"):
                self._data = load_datasets(self.cfg)
        return self._data

    @property
    def spec(self):
        if self._spec is None:
            train, _ = self.data
            self._spec = self.cfg.network.build(train.inputs.shape[1:], train.num_classes)
        return self._spec

    def path(self, *parts):
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    @property
    def train_cfg(self):
        return self.cfg.train.build()

    @property
    def delta_policy(self):
        # delta repetitions are always distinguished only by their initialization
        return trainer.SeedPolicy(trainer.DRWI, derive_seed(self.cfg.base_seed, COMPONENT_DELTA_INIT))

    @property
    def boot_policy(self):
        return trainer.SeedPolicy(self.cfg.seed_policy, derive_seed(self.cfg.base_seed, COMPONENT_BOOTSTRAP_INIT))

    def write_config(self):
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "config.json").write_text(self.cfg.dumps())

    # -- stages -------------------------------------------------------------

    def stage_train(self):
        train, test = self.data
        spec, tcfg, policy = self.spec, self.train_cfg, self.delta_policy
        stats = []
        with self.timer.phase("delta.training"):
            for d in range(self.cfg.repetitions):
                init = trainer.init_params(spec, policy.init_seed(d), tcfg.init_stddev)
                persist.save_params(self.path("delta", "init", f"rep{d:03d}.params"), init)
                params, st = trainer.train(spec, train, test, tcfg, policy, replicate=d, init=init)
                persist.save_params(self.path("delta", "nets", f"rep{d:03d}.params"), params)
                stats.append(st)
        _dump(self.path("delta", "train_stats.json"), {
            "repetitions": [s.to_dict(with_time=False) for s in stats],
            "summary": trainer.format_stats_row(trainer.summarize_stats(stats)),
        })
        return stats

    def stage_bootstrap(self):
        train, test = self.data
        spec, tcfg, policy = self.spec, self.train_cfg, self.boot_policy
        idx = bootstrap.make_resamples(len(train), self.cfg.B, self.cfg.base_seed)
        np.save(self.path("data", "resamples.npy"), idx)
        for b in range(self.cfg.B):
            init = trainer.init_params(spec, policy.init_seed(b), tcfg.init_stddev)
            persist.save_params(self.path("bootstrap", "init", f"rep{b:03d}.params"), init)

        def keep(r, params, st):
            persist.save_params(self.path("bootstrap", "nets", f"rep{r:03d}.params"), params)

        workers = self.cfg.threads if self.cfg.threads > 1 else 1
        with self.timer.phase("bootstrap.initial"):
            results = bootstrap.train_ensemble(spec, train, test, idx, tcfg, policy, workers=workers, on_done=keep)
        stats = [st for _, st in results]
        _dump(self.path("bootstrap", "train_stats.json"), {
            "replicates": [s.to_dict(with_time=False) for s in stats],
            "summary": trainer.format_stats_row(trainer.summarize_stats(stats)),
        })
        nets = [p for p, _ in results]
        with self.timer.phase("bootstrap.prediction_train"):
            preds = np.stack([netcore.predict(spec, p, train.inputs) for p in nets])
            persist.save_array(self.path("bootstrap", "sigma_train.arr"), bootstrap.boot_sigma(preds))
        with self.timer.phase("bootstrap.prediction_test"):
            preds = np.stack([netcore.predict(spec, p, test.inputs) for p in nets])
            persist.save_array(self.path("bootstrap", "preds_test.arr"), preds)
            persist.save_array(self.path("bootstrap", "sigma_test.arr"), bootstrap.boot_sigma(preds))
        return stats

    def stage_delta(self):
        train, test = self.data
        spec, cfg = self.spec, self.cfg
        K_values = sorted(cfg.K_values)
        if cfg.K_max > spec.num_params:
            raise ValueError(f"K_max={cfg.K_max} exceeds the parameter count {spec.num_params}")
        for d in range(cfg.repetitions):
            params = persist.load_params(self.out / "delta" / "nets" / f"rep{d:03d}.params", spec)
            with self.timer.phase("delta.initial"):
                grads_path = self.path("delta", "grads", f"rep{d:03d}.grads")
                persist.save_grads(grads_path, netcore.per_example_grads(spec, params, train.inputs, train.labels))
                op = delta.OpgOperator(persist.load_grads(grads_path), spec.reg_rate)
                pairs = delta.lanczos_topk(op, cfg.K_max, seed=cfg.base_seed + d, tol=cfg.lanczos_tol,
                                           max_iters=cfg.lanczos_max_iters or None)
                pairs.name = f"delta/eigen/rep{d:03d}.eig"
                persist.save_eigenpairs(self.path("delta", "eigen", f"rep{d:03d}.eig"), pairs)
                del op
                if not cfg.keep_gradient_cache:
                    grads_path.unlink()
            with self.timer.phase("delta.prediction_train"):
                pred = delta.LowRankPredictor.from_network(spec, params, train.inputs, pairs, len(train))
                persist.save_array(self.path("delta", f"sigma_train_rep{d:03d}.arr"), pred.sigma(cfg.K_max).sigma)
            with self.timer.phase("delta.prediction_test"):
                pred = delta.LowRankPredictor.from_network(spec, params, test.inputs, pairs, len(train))
                us = [pred.sigma(K) for K in K_values]
                persist.save_array(self.path("delta", f"sigma_test_rep{d:03d}.arr"), np.stack([u.sigma for u in us]))
                persist.save_array(self.path("delta", f"epsilon_test_rep{d:03d}.arr"), np.stack([u.epsilon for u in us]))
            _dump(self.path("delta", "eigen", f"rep{d:03d}.json"), {
                "K": len(pairs),
                "eigenvalues_head": pairs.values[:10].tolist(),
                "lambda_K": float(pairs.values[-1]),
                "max_residual": float(pairs.residuals.max()),
            })

    def _delta_tables(self):
        K_values = sorted(self.cfg.K_values)
        tabs = []
        for d in range(self.cfg.repetitions):
            s = persist.load_array(self.out / "delta" / f"sigma_test_rep{d:03d}.arr")
            e = persist.load_array(self.out / "delta" / f"epsilon_test_rep{d:03d}.arr")
            tabs.append(TabulatedSigmas(K_values, s, e, f"rep{d:03d}"))
        return tabs

    def stage_compare(self):
        cfg = self.cfg
        sigma_boot = persist.load_array(self.out / "bootstrap" / "sigma_test.arr")
        results = []
        with self.timer.phase("compare"):
            for d, tab in enumerate(self._delta_tables()):
                for K in tab.K_values:
                    u = tab.sigma(K)
                    meta = {"dataset": f"{cfg.name}:{cfg.data.source}", "B": cfg.B, "K": K, "d": d,
                            "seed_policy": cfg.seed_policy}
                    table = compare.build_table(sigma_boot, u.sigma, u.epsilon, meta)
                    compare.write_table(table, self.path("compare", f"table_B{cfg.B}_K{K}_d{d}.csv"))
                    results.append({**meta, **table.regress().to_dict()})
        _dump(self.path("compare", "regressions.json"), results)
        return results

    def stage_sweep(self):
        cfg = self.cfg
        sigma_boot = persist.load_array(self.out / "bootstrap" / "sigma_test.arr")
        preds = persist.load_array(self.out / "bootstrap" / "preds_test.arr")
        tabs = self._delta_tables()
        with self.timer.phase("sweep"):
            sk = compare.sweep_K(tabs, sigma_boot, cfg.K_values, cfg.B)
            sb = compare.sweep_B(preds, [t.sigma(cfg.K_max) for t in tabs], cfg.B_values, cfg.K_max)
            sk.write_json(self.path("sweep", "sweep_K.json"))
            sb.write_json(self.path("sweep", "sweep_B.json"))
        with self.timer.phase("plots"):
            first = compare.read_table(self.out / "compare" / f"table_B{cfg.B}_K{cfg.K_max}_d0.csv")
            plots.emit_plots({f"B{cfg.B}_K{cfg.K_max}_d0": first}, {"K": sk, "B": sb}, self.out / "plots")
        return sk, sb

    # -- driver ------------------------------------------------------------

    def manifest(self, status, failed=None):
        files = sorted(
            str(p.relative_to(self.out)) for p in self.out.rglob("*")
            if p.is_file() and p.name != "MANIFEST.json"
        )
        _dump(self.out / "MANIFEST.json", {
            "complete": all(status.get(s) == "done" for s in STAGES),
            "stages": status,
            "failed_stage": failed,
            "files": files,
            "prng": prng_description(),
        })

    def run_stages(self, stages=STAGES):
        self.write_config()
        manifest_path = self.out / "MANIFEST.json"
        status = {s: "pending" for s in STAGES}
        if manifest_path.exists():
            status.update(json.loads(manifest_path.read_text()).get("stages", {}))
        for name in stages:
            try:
                with threadpool_limits(limits=self.cfg.threads):
                    getattr(self, f"stage_{name}")()
            except Exception as exc:
                status[name] = "failed"
                self.manifest(status, failed=name)
                raise StageError(name, exc) from exc
            status[name] = "done"
            self.manifest(status)
        return status


def run_experiment(cfg, out=None):
    """Run every stage and write ``timing.json``; returns the output directory."""
    timer = PhaseTimer()
    exp = Experiment(cfg, out, timer)
    exp.run_stages(STAGES)
    timer.stop()
    report = timer.report(cfg.repetitions)
    report.write_json(exp.out / "timing.json")
    status = {s: "done" for s in STAGES}
    exp.manifest(status)
    log.info("timing\n%s", report.table())
    return exp.out
