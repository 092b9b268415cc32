"""Evaluation tools: importance-sampled NLL, exact enumeration oracles for
tiny models, a Fisher-identity checker, and a gradient-variance probe.

The enumeration oracles brute-force the full latent support, so they are the
independent ground truth against which the samplers and estimators elsewhere
in the package are verified. They refuse supports larger than 2**16
configurations.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import CapabilityError, ShapeError
from .ndnet import finite_diff_grad

ENUMERATION_CAP = 1 << 16


class EnumerableSupport:
    """All joint latent configurations of a model, in a fixed lexicographic
    order. Layer k of configuration i is ``layers[k][i]``."""

    def __init__(self, layer_specs):
        size = 1
        for spec in layer_specs:
            if spec.kind == "bernoulli":
                size *= 2 ** spec.width
            else:
                size *= spec.n_categories ** spec.n_vars
            if size > ENUMERATION_CAP:
                raise CapabilityError(
                    f"latent support exceeds {ENUMERATION_CAP} configurations")
        self.layer_specs = layer_specs
        self.size = size

        per_layer = []
        for spec in layer_specs:
            if spec.kind == "bernoulli":
                rows = np.array(list(itertools.product((0.0, 1.0),
                                                       repeat=spec.width)))
            else:
                eye = np.eye(spec.n_categories)
                rows = np.array([
                    np.concatenate([eye[i] for i in combo])
                    for combo in itertools.product(range(spec.n_categories),
                                                   repeat=spec.n_vars)])
            per_layer.append(rows)

        # Cartesian product across layers; layer 0 varies slowest.
        reps_after = [1] * len(per_layer)
        for k in range(len(per_layer) - 2, -1, -1):
            reps_after[k] = reps_after[k + 1] * per_layer[k + 1].shape[0]
        self.layers = []
        for k, rows in enumerate(per_layer):
            tiles = self.size // (rows.shape[0] * reps_after[k])
            expanded = np.tile(np.repeat(rows, reps_after[k], axis=0), (tiles, 1))
            self.layers.append(expanded)

        self._index = {
            np.concatenate([lay[i] for lay in self.layers]).tobytes(): i
            for i in range(self.size)}

    def config(self, i: int):
        """Latent configuration i as the usual list of per-layer arrays."""
        return [lay[i] for lay in self.layers]

    def index_of(self, h) -> int:
        key = np.concatenate([np.asarray(hk, dtype=np.float64) for hk in h]
                             ).tobytes()
        return self._index[key]


def enumerate_support(model_or_specs) -> EnumerableSupport:
    specs = getattr(model_or_specs, "layer_specs", model_or_specs)
    return EnumerableSupport(specs)


def _support_log_joint(gen, x, c, support):
    """log p(x, h) for every h in the support; x is a single observation."""
    gen = getattr(gen, "gen", gen)  # accept a ModelPair too
    if x.ndim != 1:
        raise ShapeError("enumeration oracles take a single observation")
    X = np.broadcast_to(x, (support.size, x.size))
    C = None if c is None else np.broadcast_to(c, (support.size, c.size))
    return gen.log_joint(X, support.layers, C)


def exact_log_likelihood(gen, x, c=None, support=None) -> float:
    """log p(x) by summing the joint over the entire latent support."""
    support = support or enumerate_support(gen)
    return float(logsumexp(_support_log_joint(gen, x, c, support)))


def exact_posterior(gen, x, c=None, support=None) -> np.ndarray:
    """p(h | x) as a probability table aligned with the support order."""
    support = support or enumerate_support(gen)
    lj = _support_log_joint(gen, x, c, support)
    return np.exp(lj - logsumexp(lj))


def exact_inference_table(inf, x, c=None, support=None) -> np.ndarray:
    """q(h | x) for every h in the support (in support order)."""
    support = support or enumerate_support(inf)
    X = np.broadcast_to(x, (support.size, x.size))
    C = None if c is None else np.broadcast_to(c, (support.size, c.size))
    return np.exp(inf.log_q(support.layers, X, C))


def inclusive_kl_exact(pair, x, c=None, support=None) -> float:
    """KL[p(h|x) || q(h|x)] computed exactly over the support."""
    support = support or enumerate_support(pair.gen)
    post = exact_posterior(pair.gen, x, c, support)
    X = np.broadcast_to(x, (support.size, x.size))
    C = None if c is None else np.broadcast_to(c, (support.size, c.size))
    logq = pair.inf.log_q(support.layers, X, C)
    nz = post > 0
    logpost = np.full(support.size, -np.inf)
    logpost[nz] = np.log(post[nz])
    return float(np.sum(post[nz] * (logpost[nz] - logq[nz])))


def rel_deviation(a: np.ndarray, b: np.ndarray) -> float:
    """Max absolute difference scaled by the overall magnitude of b."""
    scale = max(float(np.max(np.abs(b))), 1e-8)
    return float(np.max(np.abs(a - b)) / scale)


def fisher_identity_check(gen, x, c=None, eps=1e-5, support=None) -> float:
    """Compares the posterior-expected joint gradient against the
    finite-difference gradient of the exact log-likelihood; returns their
    max relative deviation. Both sides should be grad_theta log p(x)."""
    support = support or enumerate_support(gen)
    post = exact_posterior(gen, x, c, support)
    X = np.broadcast_to(x, (support.size, x.size))
    C = None if c is None else np.broadcast_to(c, (support.size, c.size))
    expected = gen.grad_log_joint(X, support.layers, C, weights=post)

    def marginal(params):
        return exact_log_likelihood(gen, x, c, support)

    numeric = finite_diff_grad(marginal, gen.params, eps=eps)
    return rel_deviation(expected, numeric)


def estimate_nll(pair, x, c=None, n_samples=1000, rng=None) -> float:
    """Importance-sampled negative log-likelihood of one observation:
    -log mean_i exp(log p(x,h_i) - log q(h_i|x)) with h_i ~ q. An upper
    bound on the true NLL in expectation."""
    X = np.broadcast_to(x, (n_samples, x.size))
    C = None if c is None else np.broadcast_to(c, (n_samples, c.size))
    h, logq = pair.inf.sample_q(X, C, rng=rng, return_log_q=True)
    logw = pair.gen.log_joint(X, h, C) - logq
    return float(-(logsumexp(logw) - np.log(n_samples)))


def dataset_nll(pair, items, contexts=None, n_samples=100, rng=None,
                limit=None, block=100) -> float:
    """Mean importance-sampled NLL over a dataset, batched for speed."""
    n = items.shape[0] if limit is None else min(limit, items.shape[0])
    total = 0.0
    for start in range(0, n, block):
        stop = min(start + block, n)
        X = items[start:stop]
        m = X.shape[0]
        Xr = np.repeat(X, n_samples, axis=0)
        Cr = None
        if contexts is not None:
            Cr = np.repeat(contexts[start:stop], n_samples, axis=0)
        h, logq = pair.inf.sample_q(Xr, Cr, rng=rng, return_log_q=True)
        logw = (pair.gen.log_joint(Xr, h, Cr) - logq).reshape(m, n_samples)
        total += float(-(logsumexp(logw, axis=1) - np.log(n_samples)).sum())
    return total / n


def exact_dataset_nll(gen, items, contexts=None, support=None) -> float:
    """Mean exact NLL over a dataset by enumeration (tiny models only)."""
    support = support or enumerate_support(gen)
    total = 0.0
    for i in range(items.shape[0]):
        c = None if contexts is None else contexts[i]
        total -= exact_log_likelihood(gen, items[i], c, support)
    return total / items.shape[0]


def mis_transition_matrix(pair, x, c=None, support=None) -> np.ndarray:
    """The exact transition matrix of the independence-sampler kernel that
    proposes from q and accepts with min(1, w'/w). Entry [i, j] is the
    probability of moving from configuration i to configuration j.

    Computed analytically from the model's own mass functions; this is the
    oracle that the sampling implementation is tested against.
    """
    support = support or enumerate_support(pair.gen)
    lj = _support_log_joint(pair.gen, x, c, support)
    X = np.broadcast_to(x, (support.size, x.size))
    C = None if c is None else np.broadcast_to(c, (support.size, c.size))
    logq = pair.inf.log_q(support.layers, X, C)
    q = np.exp(logq)
    logw = lj - logq
    accept = np.minimum(1.0, np.exp(np.minimum(logw[None, :] - logw[:, None],
                                               0.0)))
    K = q[None, :] * accept
    np.fill_diagonal(K, 0.0)
    np.fill_diagonal(K, 1.0 - K.sum(axis=1))
    return K


@dataclass
class VarianceReport:
    """Log of the summed per-parameter gradient variance, per block."""

    log_sum_var_theta: float
    log_sum_var_phi: float
    reps: int


def grad_variance(update_fn, batch, reps, rng) -> VarianceReport:
    """Repeats update_fn(batch, rng) and reports log(sum of per-parameter
    sample variances) for the theta and phi gradient blocks.

    update_fn must be a pure probe: same parameters, fresh randomness each
    call. A deterministic update_fn yields -inf entries.
    """
    gt, gp = [], []
    for _ in range(reps):
        est = update_fn(batch, rng)
        gt.append(est.g_theta)
        gp.append(est.g_phi)
    gt = np.stack(gt)
    gp = np.stack(gp)
    with np.errstate(divide="ignore"):
        log_t = float(np.log(gt.var(axis=0, ddof=1).sum()))
        log_p = float(np.log(gp.var(axis=0, ddof=1).sum()))
    return VarianceReport(log_t, log_p, reps)
