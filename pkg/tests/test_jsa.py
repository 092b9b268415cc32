"""Sampler steps, minibatch updates, the training loop, checkpoints."""

import numpy as np
import pytest
from scipy.special import logsumexp

from jsalearn import evaluation as ev
from jsalearn import jsa
from jsalearn.data import synthetic_dataset
from jsalearn.errors import ConfigError, FormatError, StateError
from jsalearn.jsa import JsaConfig, LatentCache
from jsalearn.models import build_architecture

ARCH = "enc: 5-3s~B3; dec: B3-5s"


def tiny(seed=0, scale=0.8, arch=ARCH):
    pair = build_architecture(arch)
    rng = np.random.default_rng(seed)
    pair.lam[:] = rng.normal(scale=scale, size=pair.lam.size)
    return pair, rng


def always(delta, rng):
    return True


def never(delta, rng):
    return False


class TestAcceptRule:
    def test_nonnegative_delta_always_accepts(self):
        rng = np.random.default_rng(0)
        assert all(jsa.default_accept(0.0, rng) for _ in range(1000))
        assert all(jsa.default_accept(5.0, rng) for _ in range(1000))

    def test_negative_delta_rate(self):
        rng = np.random.default_rng(1)
        n = 40000
        rate = sum(jsa.default_accept(-1.0, rng) for _ in range(n)) / n
        p = np.exp(-1.0)
        assert abs(rate - p) <= 3 * np.sqrt(p * (1 - p) / n)

    def test_log_importance_weight_definition(self):
        pair, rng = tiny(2)
        x = np.array([1.0, 0.0, 1.0, 0.0, 1.0])
        h = [np.array([1.0, 1.0, 0.0])]
        lw = jsa.log_importance_weight(pair, x, h)
        assert lw == pytest.approx(
            pair.gen.log_joint(x, h) - pair.inf.log_q(h, x), abs=1e-12)


class TestMisStep:
    def test_returns_old_state_on_rejection(self):
        pair, rng = tiny(3)
        x = np.array([1.0, 1.0, 0.0, 0.0, 1.0])
        h_old = [np.array([0.0, 1.0, 0.0])]
        h_new, accepted = jsa.mis_step(pair, x, h_old, rng=rng,
                                       accept_rule=never)
        assert not accepted
        assert h_new is h_old

    def test_single_step_law_matches_analytic_kernel(self):
        pair, rng = tiny(4)
        x = np.array([1.0, 0.0, 0.0, 1.0, 1.0])
        sup = ev.enumerate_support(pair.gen)
        K = ev.mis_transition_matrix(pair, x, support=sup)
        i0 = 3
        h_old = sup.config(i0)

        n = 20000
        counts = np.zeros(sup.size)
        for _ in range(n):
            h_new, _ = jsa.mis_step(pair, x, h_old, rng=rng)
            counts[sup.index_of(h_new)] += 1
        freq = counts / n
        se = np.sqrt(K[i0] * (1 - K[i0]) / n)
        assert np.all(np.abs(freq - K[i0]) <= 4 * se + 1e-9)


class TestLatentCache:
    def test_miss_raises(self):
        cache = LatentCache()
        with pytest.raises(StateError):
            cache.get(0)

    def test_put_copies(self):
        cache = LatentCache()
        h = [np.array([1.0, 0.0])]
        cache.put(5, h)
        h[0][0] = 9.0
        assert cache.get(5)[0][0] == 1.0
        assert 5 in cache and len(cache) == 1

    def test_state_round_trip(self):
        cache = LatentCache()
        cache.put(1, [np.array([1.0, 0.0]), np.array([0.0])])
        cache.put(7, [np.array([0.0, 0.0]), np.array([1.0])])
        back = LatentCache.from_state(cache.state_dict())
        assert back.indices() == [1, 7]
        for i in (1, 7):
            for a, b in zip(back.get(i), cache.get(i)):
                assert np.array_equal(a, b)


class TestMinibatchUpdate:
    def batch(self, pair, rng, m=4):
        X = (rng.random((m, pair.gen.obs_width)) < 0.5).astype(float)
        return [(j, X[j], None) for j in range(m)]

    def test_stage_one_never_touches_cache(self):
        pair, rng = tiny(5)
        cache = LatentCache()
        cfg = JsaConfig(particle_number=3)
        jsa.jsa_minibatch_update(pair, cache, self.batch(pair, rng), cfg,
                                 rng, use_cache=False)
        assert len(cache) == 0

    def test_stage_two_fills_and_reuses_cache(self):
        pair, rng = tiny(6)
        cache = LatentCache()
        cfg = JsaConfig(particle_number=2)
        b = self.batch(pair, rng)
        jsa.jsa_minibatch_update(pair, cache, b, cfg, rng, use_cache=True)
        assert cache.indices() == [0, 1, 2, 3]
        first = {i: [a.copy() for a in cache.get(i)] for i in cache.indices()}
        jsa.jsa_minibatch_update(pair, cache, b, cfg, rng, use_cache=True,
                                 accept_rule=never)
        # all moves rejected: chains must still sit at their cached states
        for i in cache.indices():
            for a, b2 in zip(first[i], cache.get(i)):
                assert np.array_equal(a, b2)

    def test_rejected_updates_average_gradient_at_start_states(self):
        pair, rng = tiny(7)
        cache = LatentCache()
        b = self.batch(pair, rng, m=3)
        starts = []
        for j, x, _ in b:
            h = [np.array(v, dtype=float) for v in
                 [(rng.random(3) < 0.5).astype(float)]]
            cache.put(j, h)
            starts.append(h)
        cfg = JsaConfig(particle_number=4)
        est = jsa.jsa_minibatch_update(pair, cache, b, cfg, rng,
                                       use_cache=True, accept_rule=never)
        assert est.accept_count == 0
        assert est.proposal_count == 3 * 4
        manual = np.zeros(pair.n_theta)
        for (j, x, _), h in zip(b, starts):
            manual += pair.gen.grad_log_joint(x, h) / 3
        assert np.allclose(est.g_theta, manual, atol=1e-10)

    def test_always_accept_caches_last_proposal(self):
        pair, rng = tiny(8)
        cache = LatentCache()
        cfg = JsaConfig(particle_number=3)
        b = self.batch(pair, rng, m=2)
        est = jsa.jsa_minibatch_update(pair, cache, b, cfg, rng,
                                       use_cache=True, accept_rule=always)
        assert est.accept_count == est.proposal_count == 6

    def test_update_cache_false_leaves_cache_alone(self):
        pair, rng = tiny(9)
        cache = LatentCache()
        cfg = JsaConfig(particle_number=2)
        b = self.batch(pair, rng, m=2)
        jsa.jsa_minibatch_update(pair, cache, b, cfg, rng, use_cache=True,
                                 update_cache=False)
        assert len(cache) == 0

    def test_stationary_mean_gradient_matches_fisher(self):
        # chains started from the exact posterior stay there, so the average
        # update direction is the marginal gradient
        pair, rng = tiny(10, scale=0.6)
        x = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
        sup = ev.enumerate_support(pair.gen)
        post = ev.exact_posterior(pair.gen, x, support=sup)
        from jsalearn.ndnet import finite_diff_grad
        exact = finite_diff_grad(
            lambda _: ev.exact_log_likelihood(pair.gen, x, support=sup),
            pair.theta)

        cfg = JsaConfig(particle_number=2)
        reps = 3000
        grads = np.empty((reps, pair.n_theta))
        for r in range(reps):
            cache = LatentCache()
            cache.put(0, sup.config(int(rng.choice(sup.size, p=post))))
            est = jsa.jsa_minibatch_update(pair, cache, [(0, x, None)], cfg,
                                           rng, use_cache=True,
                                           update_cache=False)
            grads[r] = est.g_theta
        se = grads.std(axis=0, ddof=1) / np.sqrt(reps)
        z = np.abs(grads.mean(axis=0) - exact) / np.maximum(se, 1e-12)
        assert z.max() < 4.5

    def test_conditional_batch_requires_contexts(self):
        from jsalearn.models import build_conditional
        pair = build_conditional(4, 3, 3, [4])
        cfg = JsaConfig()
        with pytest.raises(Exception):
            jsa.jsa_minibatch_update(pair, LatentCache(),
                                     [(0, np.zeros(4), None)], cfg,
                                     np.random.default_rng(0),
                                     use_cache=False)


class TestRws:
    def test_counts_all_proposals_as_accepted(self):
        pair, rng = tiny(11)
        X = (rng.random((3, 5)) < 0.5).astype(float)
        b = [(j, X[j], None) for j in range(3)]
        est = jsa.rws_minibatch_update(pair, b, 4, rng)
        assert est.accept_count == est.proposal_count == 12

    def test_single_particle_phi_gradient_has_zero_mean(self):
        # with one particle the weight is exactly 1, so the phi part reduces
        # to the score function whose expectation under q vanishes
        pair, rng = tiny(12)
        x = np.array([1.0, 1.0, 0.0, 1.0, 0.0])
        reps = 2500
        grads = np.empty((reps, pair.n_phi))
        for r in range(reps):
            est = jsa.rws_minibatch_update(pair, [(0, x, None)], 1, rng)
            grads[r] = est.g_phi
        se = grads.std(axis=0, ddof=1) / np.sqrt(reps)
        z = np.abs(grads.mean(axis=0)) / np.maximum(se, 1e-12)
        assert z.max() < 4.5

    def test_nll_proxy_approaches_exact_for_many_particles(self):
        pair, rng = tiny(13, scale=0.5)
        x = np.array([0.0, 1.0, 1.0, 0.0, 1.0])
        exact = -ev.exact_log_likelihood(pair.gen, x)
        est = jsa.rws_minibatch_update(pair, [(0, x, None)], 20000, rng)
        assert est.nll_proxy == pytest.approx(exact, abs=0.05)

    def test_rejects_zero_particles(self):
        pair, rng = tiny(14)
        with pytest.raises(ConfigError):
            jsa.rws_minibatch_update(pair, [(0, np.zeros(5), None)], 0, rng)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            JsaConfig(particle_number=0)
        with pytest.raises(ConfigError):
            JsaConfig(lr=0.0)
        with pytest.raises(ConfigError):
            JsaConfig(total_epochs=5, stage1_epochs=6)
        with pytest.raises(ConfigError):
            JsaConfig(total_epochs=-1)
        JsaConfig(total_epochs=0, stage1_epochs=0)  # initial-state run


class TestTrain:
    def small_problem(self, n=60, seed=21):
        ds, _ = synthetic_dataset(ARCH, n=n, seed=seed)
        pair = build_architecture(ARCH, seed=1)
        return pair, ds

    def test_deterministic_given_seed(self):
        cfg = JsaConfig(particle_number=2, minibatch_size=10, total_epochs=4,
                        stage1_epochs=2, lr=1e-3, seed=5, eval_every=2,
                        val_samples=15)
        pair1, ds = self.small_problem()
        r1 = jsa.train(pair1, ds, cfg, valid=ds, timing=False)
        pair2, ds2 = self.small_problem()
        r2 = jsa.train(pair2, ds2, cfg, valid=ds2, timing=False)
        assert np.array_equal(pair1.lam, pair2.lam)
        assert r1.metrics == r2.metrics

    def test_cache_respects_stage_boundary(self):
        pair, ds = self.small_problem()
        cfg = JsaConfig(minibatch_size=20, total_epochs=3, stage1_epochs=3,
                        lr=1e-3, seed=2)
        res = jsa.train(pair, ds, cfg, timing=False)
        assert len(res.cache) == 0

        pair, ds = self.small_problem()
        cfg = JsaConfig(minibatch_size=20, total_epochs=3, stage1_epochs=1,
                        lr=1e-3, seed=2)
        res = jsa.train(pair, ds, cfg, timing=False)
        assert len(res.cache) == len(ds.items)

    def test_freeze_theta(self):
        pair, ds = self.small_problem()
        theta0 = pair.theta.copy()
        phi0 = pair.phi.copy()
        cfg = JsaConfig(minibatch_size=20, total_epochs=3, stage1_epochs=3,
                        lr=1e-3, seed=3, freeze_theta=True)
        jsa.train(pair, ds, cfg, timing=False)
        assert np.array_equal(pair.theta, theta0)
        assert not np.array_equal(pair.phi, phi0)

    def test_divergence_rolls_back_and_carries_result(self):
        pair, ds = self.small_problem()
        cfg = JsaConfig(minibatch_size=20, total_epochs=10, stage1_epochs=10,
                        lr=1e6, seed=4, lambda_bound=10.0)
        snap = pair.copy_lam()
        with pytest.raises(jsa.TrainingDiverged) as e:
            jsa.train(pair, ds, cfg, timing=False)
        assert np.isfinite(pair.lam).all()
        assert np.array_equal(pair.lam, snap)  # rolled back to last good epoch
        assert e.value.result.epochs_run < 10

    def test_best_lam_tracks_minimum_validation(self):
        pair, ds = self.small_problem(n=80)
        cfg = JsaConfig(minibatch_size=20, total_epochs=6, stage1_epochs=3,
                        lr=5e-3, seed=6, eval_every=2, val_samples=25)
        res = jsa.train(pair, ds, cfg, valid=ds, timing=False)
        vals = [r[2] for r in res.metrics if r[1] == "valid"]
        assert res.best_val_nll == pytest.approx(min(vals))
        final = pair.copy_lam()
        pair.set_lam(res.best_lam)
        crn = np.random.default_rng(cfg.seed + 977)
        best_nll = ev.dataset_nll(pair, ds.items, n_samples=25, rng=crn)
        assert best_nll == pytest.approx(res.best_val_nll, abs=1e-9)
        pair.set_lam(final)

    def test_zero_epochs_returns_initial_state(self):
        pair, ds = self.small_problem()
        snap = pair.copy_lam()
        cfg = JsaConfig(total_epochs=0, stage1_epochs=0)
        res = jsa.train(pair, ds, cfg, timing=False)
        assert res.epochs_run == 0
        assert np.array_equal(res.best_lam, snap)
        assert res.metrics == []

    def test_rws_algorithm_route(self):
        pair, ds = self.small_problem()
        cfg = JsaConfig(minibatch_size=20, total_epochs=2, stage1_epochs=0,
                        lr=1e-3, seed=7)
        res = jsa.train(pair, ds, cfg, algorithm="rws", timing=False)
        accs = [r[3] for r in res.metrics if r[1] == "train"]
        assert all(a == 1.0 for a in accs)

    def test_unknown_algorithm_rejected(self):
        pair, ds = self.small_problem()
        with pytest.raises(ConfigError):
            jsa.train(pair, ds, JsaConfig(), algorithm="vae")

    def test_timing_off_writes_zero_seconds(self):
        pair, ds = self.small_problem()
        cfg = JsaConfig(minibatch_size=20, total_epochs=2, stage1_epochs=2,
                        lr=1e-3, seed=8)
        res = jsa.train(pair, ds, cfg, timing=False)
        assert all(r[4] == 0.0 for r in res.metrics)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        pair, rng = tiny(15)
        cache = LatentCache()
        cache.put(3, [np.array([1.0, 0.0, 1.0])])
        adam = jsa.AdamState.for_size(pair.lam.size, lr=2e-3)
        adam.m[:] = rng.normal(size=adam.m.size)
        adam.step = 17
        path = tmp_path / "model.ckpt"
        jsa.save_checkpoint(path, pair, adam=adam, cache=cache, epoch=9,
                            extra={"task": "generative-bernoulli"})
        payload = jsa.load_checkpoint(path)
        back = jsa.restore_pair(payload)
        assert np.array_equal(back.lam, pair.lam)
        assert payload["epoch"] == 9
        assert payload["extra"]["task"] == "generative-bernoulli"
        adam2 = jsa.restore_adam(payload)
        assert adam2.step == 17 and adam2.lr == 2e-3
        assert np.array_equal(adam2.m, adam.m)
        cache2 = LatentCache.from_state(payload["cache"])
        assert np.array_equal(cache2.get(3)[0], [1.0, 0.0, 1.0])

        x = np.array([1.0, 0.0, 1.0, 0.0, 1.0])
        h = [np.array([0.0, 1.0, 1.0])]
        assert back.gen.log_joint(x, h) == \
            pytest.approx(pair.gen.log_joint(x, h), abs=1e-12)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\0" * 64)
        with pytest.raises(FormatError):
            jsa.load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "short.ckpt"
        path.write_bytes(b"JSA")
        with pytest.raises(FormatError):
            jsa.load_checkpoint(path)


class TestChainDriver:
    def test_counts_sum_to_steps(self):
        pair, rng = tiny(16)
        x = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
        counts = jsa.run_mis_chain(pair, x, 5000, rng, start=0)
        assert counts.sum() == 5000

    def test_nll_proxy_is_importance_estimate(self):
        # against an independent recomputation at K=high on a fixed batch
        pair, rng = tiny(17, scale=0.5)
        x = np.array([1.0, 1.0, 0.0, 0.0, 1.0])
        cfg = JsaConfig(particle_number=500)
        est = jsa.jsa_minibatch_update(pair, LatentCache(), [(0, x, None)],
                                       cfg, rng, use_cache=False)
        exact = -ev.exact_log_likelihood(pair.gen, x)
        assert est.nll_proxy == pytest.approx(exact, abs=0.3)
