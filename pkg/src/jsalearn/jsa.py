"""Joint stochastic approximation training of a model pair.

Each datapoint carries its own latent Markov chain. One minibatch update:

1. For every datapoint in the batch, run K moves of a Metropolis
   independence sampler whose proposal is q(h|x) and whose target is the
   posterior p(h|x): propose h' ~ q, accept with probability
   min(1, w(h')/w(h)) where w = p(x,h)/q(h|x). The marginal p(x) cancels in
   the ratio, so only the joint and the proposal mass are ever evaluated.
2. Average grad_theta log p(x,h) and grad_phi log q(h|x) over all m*K
   post-move states. Ascending these couples maximum-likelihood learning of
   theta with inclusive-KL minimization for phi.

Training has two stages. In the warm-up stage each visit starts its chain
afresh from an accepted proposal (no state kept); in the cache stage every
datapoint's last latent state persists across epochs, giving the sampler a
warm start. The stage switch only changes where chains start; the update
rule is identical.

A reweighted wake-sleep style baseline update is included for comparison:
it replaces the accept/reject chain with self-normalized importance
weighting over fresh proposals (proposals are always "accepted").

Checkpoints are single-file binary containers: an 8-byte magic header
followed by a pickled payload holding the architecture string, the flat
parameter vector, optimizer moments, cached chains, generator state, and
the epoch counter.
"""

from __future__ import annotations

import math
import pickle
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import evaluation
from .errors import (
    ConfigError,
    FormatError,
    NumericError,
    ShapeError,
    StateError,
    TrainingDiverged,
)
from .models import ModelPair, build_architecture
from .ndnet import AdamState, adam_step

CHECKPOINT_MAGIC = b"JSACKPT\x01"


def log_importance_weight(pair: ModelPair, x, h, c=None):
    """log w(h) = log p(x,h) - log q(h|x); scalar or per-row for batches."""
    return pair.gen.log_joint(x, h, c) - pair.inf.log_q(h, x, c)


def default_accept(delta: float, rng) -> bool:
    """Metropolis test in log space: accept with probability min(1, e^delta)."""
    u = rng.random()
    return u == 0.0 or math.log(u) < delta


def mis_step(pair: ModelPair, x, h_old, c=None, rng=None, accept_rule=None):
    """One independence-sampler move for a single datapoint.

    Returns (h_new, accepted). h_new is the proposal on acceptance and
    h_old itself on rejection.
    """
    accept = accept_rule or default_accept
    h_prop, logq = pair.inf.sample_q(x, c, rng=rng, return_log_q=True)
    logw_prop = pair.gen.log_joint(x, h_prop, c) - logq
    logw_old = log_importance_weight(pair, x, h_old, c)
    if accept(logw_prop - logw_old, rng):
        return h_prop, True
    return h_old, False


class LatentCache:
    """Persistent per-datapoint latent chain states, keyed by dataset index."""

    def __init__(self):
        self._store = {}

    def __len__(self):
        return len(self._store)

    def __contains__(self, index):
        return index in self._store

    def get(self, index):
        if index not in self._store:
            raise StateError(f"no cached latent state for index {index}")
        return self._store[index]

    def put(self, index, h):
        self._store[index] = [np.array(hk, dtype=np.float64, copy=True)
                              for hk in h]

    def indices(self):
        return sorted(self._store)

    def state_dict(self):
        return {i: [hk.copy() for hk in h] for i, h in self._store.items()}

    @classmethod
    def from_state(cls, state):
        cache = cls()
        for i, h in state.items():
            cache.put(i, h)
        return cache


@dataclass
class JsaConfig:
    """Hyperparameters of one training run."""

    particle_number: int = 2
    minibatch_size: int = 50
    total_epochs: int = 100
    stage1_epochs: int = 60
    lr: float = 3e-4
    seed: int = 0
    eval_every: int = 5
    val_samples: int = 100
    val_limit: int | None = None
    freeze_theta: bool = False
    lambda_bound: float = 1e8

    def __post_init__(self):
        if self.particle_number < 1:
            raise ConfigError("particle_number must be at least 1")
        if self.minibatch_size < 1:
            raise ConfigError("minibatch_size must be at least 1")
        if self.total_epochs < 0:
            raise ConfigError("total_epochs must not be negative")
        if not 0 <= self.stage1_epochs <= self.total_epochs:
            raise ConfigError(
                "stage1_epochs must lie between 0 and total_epochs")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be at least 1")
        if self.val_samples < 1:
            raise ConfigError("val_samples must be at least 1")


@dataclass
class GradEstimate:
    """Stochastic gradient estimate from one minibatch, plus sampler stats.

    nll_proxy is the importance-sampled NLL computed from the proposals the
    update already drew; it costs nothing extra and tracks training progress.
    """

    g_theta: np.ndarray
    g_phi: np.ndarray
    accept_count: int
    proposal_count: int
    nll_proxy: float = float("nan")


def _stack_batch(pair, batch):
    if not batch:
        raise ShapeError("empty minibatch")
    idxs = [int(b[0]) for b in batch]
    X = np.stack([np.asarray(b[1], dtype=np.float64) for b in batch])
    C = None
    if pair.context_width:
        if any(len(b) < 3 or b[2] is None for b in batch):
            raise ShapeError("conditional model needs a context per datapoint")
        C = np.stack([np.asarray(b[2], dtype=np.float64) for b in batch])
    return idxs, X, C


def jsa_minibatch_update(pair: ModelPair, cache: LatentCache, batch,
                         config: JsaConfig, rng, *, use_cache: bool,
                         update_cache: bool = True,
                         accept_rule=None) -> GradEstimate:
    """One JSA minibatch update (gradient estimate only; no parameter step).

    batch is a list of (dataset_index, x, context-or-None). With use_cache
    the per-index chains start from (and, unless update_cache is off, are
    written back to) the cache; an index seen for the first time starts from
    a fresh accepted proposal. Without use_cache every visit starts fresh
    and the cache is untouched.
    """
    accept = accept_rule or default_accept
    idxs, X, C = _stack_batch(pair, batch)
    m = len(idxs)
    K = config.particle_number
    n_layers = pair.gen.n_layers

    # K proposals per datapoint, rows ordered (j, k) -> j*K + k. The proposal
    # law of an independence sampler does not depend on the chain state, so
    # all of them can be drawn and scored up front.
    Xr = np.repeat(X, K, axis=0)
    Cr = None if C is None else np.repeat(C, K, axis=0)
    Hp, logq_p = pair.inf.sample_q(Xr, Cr, rng=rng, return_log_q=True)
    logw_p = pair.gen.log_joint(Xr, Hp, Cr) - logq_p

    # Starting states: cached where available, fresh accepted proposals
    # otherwise (always fresh in the no-cache stage).
    if use_cache:
        fresh = [j for j, i in enumerate(idxs) if i not in cache]
    else:
        fresh = list(range(m))
    H0 = [np.empty((m, spec.width)) for spec in pair.layer_specs]
    if fresh:
        Hf = pair.inf.sample_q(X[fresh], None if C is None else C[fresh],
                               rng=rng)
        for k in range(n_layers):
            H0[k][fresh] = Hf[k]
    if use_cache:
        for j, i in enumerate(idxs):
            if i in cache:
                hc = cache.get(i)
                for k in range(n_layers):
                    H0[k][j] = hc[k]
    logw_0 = log_importance_weight(pair, X, H0, C)

    # Sequential accept/reject over the K moves; rows of `stacked` are the
    # m starting states followed by the m*K proposals.
    stacked = [np.concatenate([H0[k], Hp[k]], axis=0) for k in range(n_layers)]
    cur_row = np.arange(m)
    cur_logw = logw_0.copy()
    sel = np.empty(m * K, dtype=np.intp)
    accepted = 0
    for k in range(K):
        for j in range(m):
            p = j * K + k
            if accept(logw_p[p] - cur_logw[j], rng):
                cur_row[j] = m + p
                cur_logw[j] = logw_p[p]
                accepted += 1
            sel[p] = cur_row[j]

    # Average both gradients over all m*K visited post-move states.
    Hsel = [lay[sel] for lay in stacked]
    w = np.full(m * K, 1.0 / (m * K))
    g_theta = pair.gen.grad_log_joint(Xr, Hsel, Cr, weights=w)
    g_phi = pair.inf.grad_log_q(Hsel, Xr, Cr, weights=w)

    if use_cache and update_cache:
        for j, i in enumerate(idxs):
            cache.put(i, [lay[cur_row[j]] for lay in stacked])

    nll_proxy = float(np.mean(
        -(logsumexp(logw_p.reshape(m, K), axis=1) - np.log(K))))
    return GradEstimate(g_theta, g_phi, accepted, m * K, nll_proxy)


def rws_minibatch_update(pair: ModelPair, batch, n_particles: int,
                         rng) -> GradEstimate:
    """Baseline update: self-normalized importance weighting over fresh
    proposals from q. Both gradients use the same normalized weights (the
    inference side is the wake-phase update), and every proposal counts as
    accepted."""
    if n_particles < 1:
        raise ConfigError("n_particles must be at least 1")
    idxs, X, C = _stack_batch(pair, batch)
    m = len(idxs)
    P = n_particles
    Xr = np.repeat(X, P, axis=0)
    Cr = None if C is None else np.repeat(C, P, axis=0)
    Hp, logq = pair.inf.sample_q(Xr, Cr, rng=rng, return_log_q=True)
    logw = (pair.gen.log_joint(Xr, Hp, Cr) - logq).reshape(m, P)
    wn = np.exp(logw - logsumexp(logw, axis=1, keepdims=True))
    w = wn.reshape(-1) / m
    g_theta = pair.gen.grad_log_joint(Xr, Hp, Cr, weights=w)
    g_phi = pair.inf.grad_log_q(Hp, Xr, Cr, weights=w)
    nll_proxy = float(np.mean(-(logsumexp(logw, axis=1) - np.log(P))))
    return GradEstimate(g_theta, g_phi, m * P, m * P, nll_proxy)


def run_mis_chain(pair: ModelPair, x, n_steps: int, rng, c=None, support=None,
                  accept_rule=None, start=None) -> np.ndarray:
    """Occupancy counts of a long sampler chain over an enumerable support.

    Proposals are tabulated up front (valid because the proposal law ignores
    the chain state); every accept/reject decision runs through the
    production rule. Used to verify that the chain's occupancy matches the
    exact posterior.
    """
    accept = accept_rule or default_accept
    support = support or evaluation.enumerate_support(pair.gen)
    X = np.broadcast_to(x, (support.size, x.size))
    C = None if c is None else np.broadcast_to(c, (support.size, c.size))
    logq = pair.inf.log_q(support.layers, X, C)
    logw = pair.gen.log_joint(X, support.layers, C) - logq
    q = np.exp(logq)
    q = q / q.sum()

    props = rng.choice(support.size, size=n_steps, p=q)
    cur = int(rng.choice(support.size, p=q)) if start is None else int(start)
    counts = np.zeros(support.size)
    for t in range(n_steps):
        p = props[t]
        if accept(logw[p] - logw[cur], rng):
            cur = p
        counts[cur] += 1.0
    return counts


@dataclass
class TrainResult:
    """Outcome of a training run. metrics rows are
    (epoch, split, nll, accept_rate, seconds)."""

    metrics: list = field(default_factory=list)
    best_lam: np.ndarray | None = None
    best_epoch: int | None = None
    best_val_nll: float = float("inf")
    cache: LatentCache | None = None
    adam: AdamState | None = None
    epochs_run: int = 0
    elapsed: float = 0.0


def _dataset_arrays(dataset):
    items = getattr(dataset, "items", dataset)
    contexts = getattr(dataset, "contexts", None)
    return np.asarray(items, dtype=np.float64), contexts


def train(pair: ModelPair, dataset, config: JsaConfig, *, valid=None,
          algorithm: str = "jsa", on_update=None, on_epoch=None,
          timing: bool = True) -> TrainResult:
    """Runs the full two-stage training loop with one shared Adam instance
    over the concatenated parameter vector.

    dataset/valid are data.Dataset objects or bare (n, obs_width) arrays.
    Validation NLL is estimated every eval_every epochs with an identical
    sample stream each time, so values are comparable across epochs; the
    parameters with the lowest validation NLL are retained in best_lam.
    Raises TrainingDiverged (carrying the result so far, with parameters
    restored to the last finished epoch) on numeric blow-up.
    """
    if algorithm not in ("jsa", "rws"):
        raise ConfigError(f"unknown algorithm '{algorithm}'")
    items, contexts = _dataset_arrays(dataset)
    v_items = v_contexts = None
    if valid is not None:
        v_items, v_contexts = _dataset_arrays(valid)
    n = items.shape[0]
    if n < 1:
        raise ShapeError("empty training set")

    rng = np.random.default_rng(config.seed)
    adam = AdamState.for_size(pair.lam.size, lr=config.lr)
    result = TrainResult(cache=LatentCache(), adam=adam)
    last_good = pair.copy_lam()
    t0 = time.perf_counter()

    for epoch in range(1, config.total_epochs + 1):
        use_cache = epoch > config.stage1_epochs
        perm = rng.permutation(n)
        ep_accept = ep_prop = ep_updates = 0
        ep_nll = 0.0
        try:
            for startrow in range(0, n, config.minibatch_size):
                sel = perm[startrow:startrow + config.minibatch_size]
                batch = [(int(i), items[i],
                          None if contexts is None else contexts[i])
                         for i in sel]
                if algorithm == "jsa":
                    est = jsa_minibatch_update(pair, result.cache, batch,
                                               config, rng,
                                               use_cache=use_cache)
                else:
                    est = rws_minibatch_update(pair, batch,
                                               config.particle_number, rng)
                g_theta = (np.zeros_like(est.g_theta) if config.freeze_theta
                           else est.g_theta)
                adam_step(pair.lam, -np.concatenate([g_theta, est.g_phi]),
                          adam)
                if not np.isfinite(pair.lam).all() or \
                        np.linalg.norm(pair.lam) > config.lambda_bound:
                    raise NumericError(
                        f"parameters diverged at epoch {epoch}")
                ep_accept += est.accept_count
                ep_prop += est.proposal_count
                ep_nll += est.nll_proxy
                ep_updates += 1
                if on_update is not None:
                    on_update(epoch, ep_updates, pair, est)
        except NumericError as exc:
            pair.set_lam(last_good)
            result.elapsed = time.perf_counter() - t0
            raise TrainingDiverged(str(exc), result=result) from exc

        seconds = (time.perf_counter() - t0) if timing else 0.0
        result.metrics.append((epoch, "train", ep_nll / ep_updates,
                               ep_accept / ep_prop, seconds))
        if v_items is not None and epoch % config.eval_every == 0:
            val_rng = np.random.default_rng(config.seed + 977)
            vnll = evaluation.dataset_nll(
                pair, v_items, v_contexts, n_samples=config.val_samples,
                rng=val_rng, limit=config.val_limit)
            seconds = (time.perf_counter() - t0) if timing else 0.0
            result.metrics.append((epoch, "valid", vnll, "", seconds))
            if vnll < result.best_val_nll:
                result.best_val_nll = vnll
                result.best_lam = pair.copy_lam()
                result.best_epoch = epoch
        last_good = pair.copy_lam()
        result.epochs_run = epoch
        if on_epoch is not None:
            on_epoch(epoch, pair, result)

    if result.best_lam is None:
        result.best_lam = pair.copy_lam()
        result.best_epoch = result.epochs_run
    result.elapsed = time.perf_counter() - t0
    return result


def save_checkpoint(path, pair: ModelPair, *, adam: AdamState | None = None,
                    cache: LatentCache | None = None, rng_state=None,
                    epoch: int = 0, extra: dict | None = None):
    """Writes the versioned binary checkpoint container."""
    payload = {
        "version": 1,
        "arch": pair.arch,
        "lam": pair.lam.copy(),
        "adam": None if adam is None else {
            "m": adam.m.copy(), "v": adam.v.copy(), "step": adam.step,
            "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps,
            "lr": adam.lr},
        "cache": None if cache is None else cache.state_dict(),
        "rng_state": rng_state,
        "epoch": epoch,
        "extra": extra or {},
    }
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        pickle.dump(payload, f, protocol=pickle.HIGHEST_PROTOCOL)


def load_checkpoint(path) -> dict:
    """Reads a checkpoint payload; validates the magic header and version."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path} is not a checkpoint file "
                              f"(bad magic {magic!r})")
        payload = pickle.load(f)
    if payload.get("version") != 1:
        raise FormatError(f"unsupported checkpoint version "
                          f"{payload.get('version')!r}")
    return payload


def restore_pair(payload) -> ModelPair:
    """Rebuilds the model pair stored in a checkpoint payload."""
    pair = build_architecture(payload["arch"], seed=0)
    pair.set_lam(payload["lam"])
    return pair


def restore_adam(payload) -> AdamState | None:
    saved = payload.get("adam")
    if saved is None:
        return None
    return AdamState(m=saved["m"].copy(), v=saved["v"].copy(),
                     step=saved["step"], beta1=saved["beta1"],
                     beta2=saved["beta2"], eps=saved["eps"], lr=saved["lr"])
