"""Bouncing-ball experiment: wake-sleep SMC and VBEM fitted to the same data, then compared.

Each stage reads and writes plain files in the output directory so the CLI
can run them separately:

========================  ==========  =========================================
file                      stage       contents
========================  ==========  =========================================
``dataset.csv``           simulate    ``seq,t,dx,dy,true_state``
``smc_params.json``       train       learned Theta/Phi and point HMM parameters
``smc_train_log.jsonl``   train       header line, then one record per epoch
``smc_curve.csv``         train       ``epoch,mean_log_evidence``
``smc_diagnostics.jsonl`` train       per-step SMC diagnostics on sequence 0
``vbem_params.json``      vbem        posterior and point estimate
``vbem_elbo.csv``         vbem        ``iteration,elbo``
``report.json``           evaluate    aligned metrics for both methods
``manifest.json``         every       seed, config hash, SHA-256 of each file
========================  ==========  =========================================

Timings are recorded only when asked for, so reruns are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2

from ..config import RunConfig
from ..errors import ProbCombError
from ..estimators import Adam, ParameterStore, wake_sleep_epoch
from ..inference import FlipKernel, IdentityKernel, SMCOptions, smc
from ..model import EvalContext
from ..rng import RngStream
from .data import BallSettings, Dataset, dataset_from_csv, dataset_to_csv, generate_dataset, true_params
from .exact import exact_hmm
from .metrics import align_states, state_accuracy, transition_error
from .models import init_store, problem_builder, store_params
from .params import HmmParams
from .vbem import VbemPriors, vbem_fit


class ArtifactError(ProbCombError):
    """An input artifact is missing or disagrees with the configuration."""


# -- configuration helpers ------------------------------------------------------

def ball_settings(cfg: RunConfig) -> BallSettings:
    d = cfg.data
    return BallSettings(speed=d.speed, noise_sd=d.noise_sd, persistence=d.persistence)


def priors(cfg: RunConfig) -> VbemPriors:
    p = cfg.model.priors
    return VbemPriors(p.alpha0, p.m0, p.kappa0)


def smc_options(cfg: RunConfig) -> SMCOptions:
    tr, S = cfg.train, cfg.model.S

    def kernel(t):
        # random-scan flip of the state just extended
        return FlipKernel([f"right/step:{t - 1}/z"], S) if t > 0 else IdentityKernel()

    return SMCOptions(resample_threshold=tr.tau, scheme=tr.resample_scheme,
                      moves_per_step=tr.moves_per_step, kernel=kernel if tr.moves_per_step else None)


def make_dataset(cfg: RunConfig) -> Dataset:
    return generate_dataset(cfg.data.n_sequences, cfg.data.T, ball_settings(cfg), seed=cfg.seed)


def truth(cfg: RunConfig) -> HmmParams:
    return true_params(ball_settings(cfg), cfg.model.obs_sd)


def initial_means(ds: Dataset, S: int, seed: int) -> np.ndarray:
    """k-means centers of all displacements, ordered lexicographically for a stable labeling."""
    obs = np.vstack([y for y in ds.sequences if len(y)])
    gen = RngStream(seed).child("init").generator()
    centers, _ = kmeans2(obs, S, minit="++", seed=gen)
    return centers[np.lexsort(centers.T[::-1])]


# -- stages -----------------------------------------------------------------------

@dataclass
class TrainResult:
    store: ParameterStore
    params: HmmParams
    history: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    runtime_ms: float | None = None


def train_wake_sleep(ds: Dataset, cfg: RunConfig, *, workers=1, timing=False, on_epoch=None) -> TrainResult:
    t0 = time.perf_counter()
    S, obs_sd = cfg.model.S, cfg.model.obs_sd
    store = init_store(S, initial_means(ds, S, cfg.seed), obs_sd)
    build = problem_builder(S, obs_sd, priors(cfg))
    opt = Adam(lr=cfg.train.lr)
    opts = smc_options(cfg)
    root = RngStream(cfg.seed).child("train")
    history = []
    for epoch in range(cfg.train.epochs):
        rec = wake_sleep_epoch(ds.sequences, build, cfg.train.K, store, opt, batch_size=cfg.train.batch,
                               smc_opts=opts, rng=root.child(f"epoch:{epoch}"), workers=workers, timing=timing)
        rec = {"epoch": epoch, **rec}
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec, store)
    # diagnostics of one filtering pass at the final parameters
    prob = build(ds.sequences[0], store)
    ctx = EvalContext(RngStream(cfg.seed).child("final"), params=store)
    res = smc(prob.global_model, prob.steps, cfg.train.K, opts, inputs=prob.inputs, ctx=ctx)
    return TrainResult(store, store_params(store, obs_sd), history, res.diagnostics,
                       (time.perf_counter() - t0) * 1e3 if timing else None)


def fit_vbem(ds: Dataset, cfg: RunConfig, *, timing=False):
    t0 = time.perf_counter()
    post = vbem_fit(ds.sequences, cfg.model.S, cfg.model.obs_sd, priors(cfg), max_iters=cfg.vbem.max_iters,
                    tol=cfg.vbem.tol, init_means=initial_means(ds, cfg.model.S, cfg.seed))
    return post, ((time.perf_counter() - t0) * 1e3 if timing else None)


def decode(params: HmmParams, sequences) -> list:
    """Most probable state at each time under the exact posterior marginals."""
    return [np.argmax(exact_hmm(params, y).marginals, axis=1) for y in sequences]


def empirical_transitions(states, S: int) -> np.ndarray:
    counts = np.zeros((S, S))
    for s in states:
        np.add.at(counts, (s[:-1], s[1:]), 1.0)
    counts += 1e-12
    return counts / counts.sum(axis=1, keepdims=True)


def method_metrics(params: HmmParams, ds: Dataset, gen: HmmParams) -> dict:
    """Aligned metrics against the generative parameters and the ground-truth states."""
    if params.n_states != gen.n_states:
        return {"perm": None, "transition_error": None, "transition_error_empirical": None,
                "state_accuracy": None, "note": "state count differs from the generative process"}
    perm = align_states(params.means, gen.means)
    emp = empirical_transitions(ds.states, gen.n_states)
    return {
        "perm": perm.tolist(),
        "transition_error": transition_error(params, gen, perm),
        "transition_error_empirical": transition_error(params, emp, perm),
        "state_accuracy": state_accuracy(decode(params, ds.sequences), ds.states, perm),
    }


# -- artifacts ------------------------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _finite(x):
    return x if x is None or np.isfinite(x) else None


class Artifacts:
    """Writes files into the output directory and keeps ``manifest.json`` current."""

    def __init__(self, cfg: RunConfig, directory=None):
        self.cfg = cfg
        self.dir = os.path.abspath(directory or cfg.output.directory)
        self.meta = {"seed": cfg.seed, "config_hash": cfg.hash()}

    def path(self, name):
        return os.path.join(self.dir, name)

    def exists(self, name):
        return os.path.exists(self.path(name))

    def read(self, name) -> str:
        if not self.exists(name):
            raise ArtifactError(f"missing input file {self.path(name)}")
        with open(self.path(name), encoding="utf-8") as fh:
            return fh.read()

    def read_json(self, name) -> dict:
        obj = json.loads(self.read(name))
        if obj.get("config_hash") != self.meta["config_hash"]:
            raise ArtifactError(f"{name} was produced by a different configuration")
        return obj

    def write(self, name, text: str):
        os.makedirs(self.dir, exist_ok=True)
        with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self._update_manifest(name, text)

    def _update_manifest(self, name, text):
        mpath = self.path("manifest.json")
        files = {}
        if os.path.exists(mpath):
            with open(mpath, encoding="utf-8") as fh:
                old = json.load(fh)
            if old.get("config_hash") == self.meta["config_hash"]:
                files = old.get("files", {})
        files[name] = hashlib.sha256(text.encode()).hexdigest()
        with open(mpath, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(_dump({**self.meta, "files": dict(sorted(files.items()))}))


def load_or_create_dataset(cfg: RunConfig, art: Artifacts) -> Dataset:
    """The configured dataset; written if absent, and checked against the file if present."""
    ds = make_dataset(cfg)
    text = dataset_to_csv(ds)
    if art.exists("dataset.csv"):
        if art.read("dataset.csv") != text:
            raise ArtifactError("dataset.csv does not match the configured data section and seed")
        return dataset_from_csv(text, ball_settings(cfg))
    art.write("dataset.csv", text)
    return ds


def simulate_stage(cfg: RunConfig, art: Artifacts) -> Dataset:
    ds = make_dataset(cfg)
    art.write("dataset.csv", dataset_to_csv(ds))
    return ds


def train_stage(cfg: RunConfig, art: Artifacts, *, workers=1, timing=False, progress=None) -> TrainResult:
    ds = load_or_create_dataset(cfg, art)
    lines = [json.dumps({"type": "header", **art.meta, "config": cfg.to_dict()}, sort_keys=True)]

    def on_epoch(rec, store):
        lines.append(json.dumps({"type": "epoch", **{k: _finite(v) if isinstance(v, float) else v
                                                     for k, v in rec.items()}}, sort_keys=True))
        if progress is not None:
            progress(rec)

    res = train_wake_sleep(ds, cfg, workers=workers, timing=timing, on_epoch=on_epoch)
    art.write("smc_train_log.jsonl", "\n".join(lines) + "\n")
    art.write("smc_curve.csv", "epoch,mean_log_evidence\n"
              + "".join(f"{r['epoch']},{r['mean_log_evidence']!r}\n" for r in res.history))
    art.write("smc_diagnostics.jsonl", "".join(json.dumps(d, sort_keys=True) + "\n" for d in res.diagnostics))
    art.write("smc_params.json", _dump({**art.meta, "method": "wake_sleep_smc", "runtime_ms": res.runtime_ms,
                                        "point": res.params.to_json(), "store": res.store.to_json()}))
    return res


def vbem_stage(cfg: RunConfig, art: Artifacts, *, timing=False):
    ds = load_or_create_dataset(cfg, art)
    post, ms = fit_vbem(ds, cfg, timing=timing)
    art.write("vbem_elbo.csv", "iteration,elbo\n" + "".join(f"{i},{e!r}\n" for i, e in enumerate(post.elbo_trace)))
    art.write("vbem_params.json", _dump({
        **art.meta, "method": "vbem", "runtime_ms": ms, "converged": post.converged,
        "iterations": len(post.elbo_trace), "point": post.point_estimate().to_json(),
        "posterior": {"pi_alpha": post.pi_alpha.tolist(), "A_alpha": post.A_alpha.tolist(),
                      "mean_m": post.mean_m.tolist(), "mean_prec": post.mean_prec.tolist()},
    }))
    return post


METHOD_FILES = {"wake_sleep_smc": "smc_params.json", "vbem": "vbem_params.json"}


def evaluate_stage(cfg: RunConfig, art: Artifacts) -> dict:
    ds = load_or_create_dataset(cfg, art)
    gen = truth(cfg)
    present = {m: f for m, f in METHOD_FILES.items() if art.exists(f)}
    if not present:
        raise ArtifactError("no parameter files to evaluate; run train or vbem first")
    learned, metrics, runtime = {}, {}, {}
    for method, fname in present.items():
        obj = art.read_json(fname)
        params = HmmParams.from_json(obj["point"])
        learned[method] = params.to_json()
        metrics[method] = method_metrics(params, ds, gen)
        runtime[method] = obj.get("runtime_ms")
    curves = {}
    if art.exists("smc_curve.csv"):
        rows = art.read("smc_curve.csv").strip().splitlines()[1:]
        curves["wake_sleep_smc"] = [float(r.split(",")[1]) for r in rows]
    report = {
        **art.meta,
        "config": cfg.to_dict(),
        "generative_params": gen.to_json(),
        "learned_params": learned,
        "transition_error": {m: v["transition_error"] for m, v in metrics.items()},
        "transition_error_empirical": {m: v["transition_error_empirical"] for m, v in metrics.items()},
        "state_accuracy": {m: v["state_accuracy"] for m, v in metrics.items()},
        "alignment": {m: v["perm"] for m, v in metrics.items()},
        "log_evidence_curves": curves,
        "runtime_ms": runtime,
    }
    art.write("report.json", _dump(report))
    return report


def run_experiment(cfg: RunConfig, *, directory=None, workers=1, timing=False, progress=None) -> dict:
    """All stages in order; returns the evaluation report."""
    art = Artifacts(cfg, directory)
    simulate_stage(cfg, art)
    train_stage(cfg, art, workers=workers, timing=timing, progress=progress)
    vbem_stage(cfg, art, timing=timing)
    return evaluate_stage(cfg, art)
