"""Generative/inference model pairs over binary data with discrete latent
layers (factorized Bernoulli or categorical).

Conventions used throughout:

* Latents are a list ``h`` of arrays ordered from the layer nearest the
  observation (``h[0]``) up to the top layer (``h[-1]``). The generative
  side factorizes as ``p(h_top) * prod_k p(h[k-1] | h[k]) * p(x | h[0])``
  and the inference side as ``q(h[0] | x) * prod_k q(h[k] | h[k-1])``.
* Every operation accepts a single sample (1D arrays) or a batch (2D arrays,
  rows are samples). Gradients over a batch are sums over rows unless a
  per-row weight vector is supplied.
* A ``ModelPair`` owns one flat parameter vector ``lam``; the generative
  parameters ``theta`` are the leading block and the inference parameters
  ``phi`` the trailing block, each a live view. Optimizer updates applied to
  ``lam`` are immediately visible inside every layer.

Architecture strings are either a preset name (``linear``, ``nonlinear``,
``two-layers``, ``categorical-20x10``, ``structured-50``) or an explicit
description in a small grammar::

    arch     := "enc:" enc_chain ";" "dec:" dec_chain
    enc_chain:= INT step*              e.g.  784-200s~B200-200s~B200
    dec_chain:= stoch step*            e.g.  B200-200s~B200-784s
    step     := "-" INT act? | "~" stoch
    act      := "s" | "l" | "t"        sigmoid / leaky-relu / tanh
    stoch    := "B" INT | "C" INT "x" INT

The encoder chain runs from the observation upward and must end at a
stochastic layer; the decoder chain runs from the top latent down and must
end at the observation width with a sigmoid. A Bernoulli layer ``B w`` must
be fed by a ``w``-wide sigmoid; a categorical layer ``C n x k`` by a plain
``n*k``-wide linear (a group-softmax over n groups of k is inserted).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArchParseError, DomainError, ShapeError
from .ndnet import (
    GroupSoftmax,
    LayeredNet,
    LeakyReLU,
    Linear,
    Sigmoid,
    Tanh,
    clamped_sigmoid,
    clamped_sigmoid_vjp,
    group_softmax,
    group_softmax_vjp,
)

# Floor applied inside log() for categorical probabilities, which unlike
# sigmoid outputs are not clamped (clamping would break group normalization).
_TINY = 1e-300


@dataclass(frozen=True)
class StochasticLayerSpec:
    """Shape and family of one stochastic layer."""

    kind: str  # "bernoulli" | "categorical"
    width: int
    n_vars: int = 0
    n_categories: int = 0

    @classmethod
    def bernoulli(cls, width: int) -> "StochasticLayerSpec":
        return cls("bernoulli", width)

    @classmethod
    def categorical(cls, n_vars: int, n_categories: int) -> "StochasticLayerSpec":
        return cls("categorical", n_vars * n_categories, n_vars, n_categories)

    def log_mass(self, probs, values):
        """Log-mass of values under factorized probs; sums the last axis."""
        if self.kind == "bernoulli":
            return (values * np.log(probs)
                    + (1.0 - values) * np.log1p(-probs)).sum(axis=-1)
        return (values * np.log(np.maximum(probs, _TINY))).sum(axis=-1)

    def mass_dprobs(self, probs, values):
        """Derivative of log_mass w.r.t. probs, elementwise."""
        if self.kind == "bernoulli":
            return values / probs - (1.0 - values) / (1.0 - probs)
        return values / np.maximum(probs, _TINY)

    def sample(self, probs, rng):
        if self.kind == "bernoulli":
            return (rng.random(np.shape(probs)) < probs).astype(np.float64)
        shape = np.shape(probs)
        p = np.broadcast_to(probs, shape).reshape(
            shape[:-1] + (self.n_vars, self.n_categories))
        u = rng.random(shape[:-1] + (self.n_vars, 1))
        idx = (u > np.cumsum(p, axis=-1)).sum(axis=-1)
        idx = np.minimum(idx, self.n_categories - 1)
        onehot = np.eye(self.n_categories)[idx]
        return onehot.reshape(shape)

    def check_domain(self, values):
        if not (((values == 0.0) | (values == 1.0)).all()):
            raise DomainError(f"{self.kind} latent entries must be 0 or 1")
        if self.kind == "bernoulli":
            return
        sums = values.reshape(values.shape[:-1] + (self.n_vars, self.n_categories)
                              ).sum(axis=-1)
        if not (sums == 1.0).all():
            raise DomainError("categorical latent groups must be one-hot")


def _rows(*arrays):
    """Promote 1D arrays to single-row 2D; returns (arrays, was_batched)."""
    batched = arrays[0].ndim == 2
    if batched:
        return arrays, True
    return tuple(a[None, :] for a in arrays), False


class GenerativeModel:
    """Latent-variable generative model p(x, h) (optionally p(x, h | c)).

    The top layer has either learned free logits or, in the conditional
    case, a prior net mapping the context c to its distribution. Decoder
    net k maps h[k] to the distribution parameters of h[k-1]; decoder net 0
    maps h[0] (concatenated with c when conditional) to Bernoulli
    probabilities of the observation.
    """

    def __init__(self, layer_specs, decoder_nets, obs_width, params,
                 prior_logits=None, prior_net=None, context_width=0):
        assert (prior_logits is None) != (prior_net is None)
        self.layer_specs = layer_specs
        self.decoder_nets = decoder_nets
        self.obs_width = obs_width
        self.context_width = context_width
        self.prior_logits = prior_logits
        self.prior_net = prior_net
        self.params = params
        self.n_params = params.size

        off = 0
        n_prior = (prior_net.n_params if prior_net is not None
                   else layer_specs[-1].width)
        self.prior_slice = slice(0, n_prior)
        off = n_prior
        self.decoder_slices = []
        for net in decoder_nets:
            self.decoder_slices.append(slice(off, off + net.n_params))
            off += net.n_params

    @property
    def n_layers(self):
        return len(self.layer_specs)

    def _check_inputs(self, x, h, c):
        if len(h) != self.n_layers:
            raise ShapeError(f"expected {self.n_layers} latent layers, got {len(h)}")
        for spec, hk in zip(self.layer_specs, h):
            if hk.shape[-1] != spec.width:
                raise ShapeError(
                    f"latent layer width {hk.shape[-1]}, expected {spec.width}")
            if hk.ndim != x.ndim:
                raise ShapeError("x and h must be all 1D or all 2D")
            spec.check_domain(hk)
        if x.shape[-1] != self.obs_width:
            raise ShapeError(
                f"observation width {x.shape[-1]}, expected {self.obs_width}")
        if self.context_width:
            if c is None:
                raise ShapeError("this model is conditional; context c required")
            if c.shape[-1] != self.context_width:
                raise ShapeError(
                    f"context width {c.shape[-1]}, expected {self.context_width}")
        elif c is not None:
            raise ShapeError("context passed to an unconditional model")

    def _prior_probs(self, c):
        spec = self.layer_specs[-1]
        if self.prior_net is not None:
            return self.prior_net.forward(c)[-1]
        if spec.kind == "bernoulli":
            return clamped_sigmoid(self.prior_logits)
        return group_softmax(self.prior_logits, spec.n_vars, spec.n_categories)

    def log_joint(self, x, h, c=None):
        """log p(x, h) (or log p(x, h | c)); float for 1D inputs, (N,) for 2D."""
        self._check_inputs(x, h, c)
        batched = x.ndim == 2
        (x2, *h2), _ = _rows(x, *h)
        c2 = None
        if c is not None:
            (c2,), _ = _rows(c)

        top_spec = self.layer_specs[-1]
        total = top_spec.log_mass(self._prior_probs(c2), h2[-1])
        for k in range(self.n_layers - 1, 0, -1):
            probs = self.decoder_nets[k].forward(h2[k])[-1]
            total = total + self.layer_specs[k - 1].log_mass(probs, h2[k - 1])
        dec_in = h2[0] if c2 is None else np.concatenate([h2[0], c2], axis=-1)
        probs = self.decoder_nets[0].forward(dec_in)[-1]
        total = total + StochasticLayerSpec.bernoulli(self.obs_width).log_mass(
            probs, x2)
        return total if batched else float(total[0])

    def grad_log_joint(self, x, h, c=None, weights=None):
        """Gradient of log p(x, h) w.r.t. theta, flat (n_params,).

        For batched inputs the result is sum_i weights[i] * grad_i
        (weights default to all ones).
        """
        self._check_inputs(x, h, c)
        (x2, *h2), batched = _rows(x, *h)
        c2 = None
        if c is not None:
            (c2,), _ = _rows(c)
        n = x2.shape[0]
        if weights is None:
            w = np.ones(n)
        else:
            w = np.asarray(weights, dtype=np.float64)
            if w.shape != (n,):
                raise ShapeError(f"weights shape {w.shape}, expected ({n},)")

        g = np.zeros(self.n_params)
        top_spec = self.layer_specs[-1]
        if self.prior_net is not None:
            acts = self.prior_net.forward(c2)
            gout = top_spec.mass_dprobs(acts[-1], h2[-1]) * w[:, None]
            pg, _ = self.prior_net.backward(acts, gout)
            g[self.prior_slice] = pg
        else:
            probs = self._prior_probs(None)
            dmass = top_spec.mass_dprobs(probs, h2[-1]) * w[:, None]
            probs2 = np.broadcast_to(probs, dmass.shape)
            if top_spec.kind == "bernoulli":
                glogits = clamped_sigmoid_vjp(probs2, dmass)
            else:
                glogits = group_softmax_vjp(probs2, dmass, top_spec.n_vars,
                                            top_spec.n_categories)
            g[self.prior_slice] = glogits.sum(axis=0)

        for k in range(self.n_layers - 1, 0, -1):
            net = self.decoder_nets[k]
            acts = net.forward(h2[k])
            gout = self.layer_specs[k - 1].mass_dprobs(acts[-1], h2[k - 1])
            pg, _ = net.backward(acts, gout * w[:, None])
            g[self.decoder_slices[k]] = pg

        dec_in = h2[0] if c2 is None else np.concatenate([h2[0], c2], axis=-1)
        net = self.decoder_nets[0]
        acts = net.forward(dec_in)
        obs_spec = StochasticLayerSpec.bernoulli(self.obs_width)
        gout = obs_spec.mass_dprobs(acts[-1], x2) * w[:, None]
        pg, _ = net.backward(acts, gout)
        g[self.decoder_slices[0]] = pg
        return g

    def sample_joint(self, rng, n=1, c=None):
        """Ancestral sample of (x, h); always batched: x is (n, obs_width).

        For conditional models n is taken from the rows of c.
        """
        if self.context_width:
            if c is None or c.ndim != 2:
                raise ShapeError("conditional sampling needs a 2D context batch")
            n = c.shape[0]
        top_spec = self.layer_specs[-1]
        probs = self._prior_probs(c)
        probs = np.broadcast_to(probs, (n, top_spec.width))
        h = [None] * self.n_layers
        h[-1] = top_spec.sample(probs, rng)
        for k in range(self.n_layers - 1, 0, -1):
            probs = self.decoder_nets[k].forward(h[k])[-1]
            h[k - 1] = self.layer_specs[k - 1].sample(probs, rng)
        dec_in = h[0] if c is None else np.concatenate([h[0], c], axis=-1)
        probs = self.decoder_nets[0].forward(dec_in)[-1]
        x = StochasticLayerSpec.bernoulli(self.obs_width).sample(probs, rng)
        return x, h


class InferenceModel:
    """Factorized approximate posterior q(h | x) (or q(h | x, c)).

    Encoder net 0 maps the observation (the full context+observation vector
    when conditional) to the distribution of h[0]; encoder net k maps the
    sampled h[k-1] to the distribution of h[k].
    """

    def __init__(self, layer_specs, encoder_nets, obs_width, params,
                 context_width=0):
        self.layer_specs = layer_specs
        self.encoder_nets = encoder_nets
        self.obs_width = obs_width
        self.context_width = context_width
        self.params = params
        self.n_params = params.size
        self.encoder_slices = []
        off = 0
        for net in encoder_nets:
            self.encoder_slices.append(slice(off, off + net.n_params))
            off += net.n_params

    @property
    def n_layers(self):
        return len(self.layer_specs)

    def _enc_input(self, x, c):
        if self.context_width:
            if c is None:
                raise ShapeError("this model is conditional; context c required")
            return np.concatenate([c, x], axis=-1)
        if c is not None:
            raise ShapeError("context passed to an unconditional model")
        return x

    def _check(self, h, x):
        if len(h) != self.n_layers:
            raise ShapeError(f"expected {self.n_layers} latent layers, got {len(h)}")
        for spec, hk in zip(self.layer_specs, h):
            if hk.shape[-1] != spec.width:
                raise ShapeError(
                    f"latent layer width {hk.shape[-1]}, expected {spec.width}")
            spec.check_domain(hk)
        if x.shape[-1] != self.obs_width:
            raise ShapeError(
                f"observation width {x.shape[-1]}, expected {self.obs_width}")

    def log_q(self, h, x, c=None):
        """log q(h | x); float for 1D inputs, (N,) for 2D."""
        self._check(h, x)
        batched = x.ndim == 2
        (x2, *h2), _ = _rows(x, *h)
        c2 = None
        if c is not None:
            (c2,), _ = _rows(c)
        inp = self._enc_input(x2, c2)
        total = 0.0
        for k in range(self.n_layers):
            probs = self.encoder_nets[k].forward(inp)[-1]
            total = total + self.layer_specs[k].log_mass(probs, h2[k])
            inp = h2[k]
        return total if batched else float(total[0])

    def grad_log_q(self, h, x, c=None, weights=None):
        """Gradient of log q(h | x) w.r.t. phi, flat (n_params,); batched
        rows are summed with optional per-row weights."""
        self._check(h, x)
        (x2, *h2), _ = _rows(x, *h)
        c2 = None
        if c is not None:
            (c2,), _ = _rows(c)
        n = x2.shape[0]
        if weights is None:
            w = np.ones(n)
        else:
            w = np.asarray(weights, dtype=np.float64)
            if w.shape != (n,):
                raise ShapeError(f"weights shape {w.shape}, expected ({n},)")

        g = np.zeros(self.n_params)
        inp = self._enc_input(x2, c2)
        for k in range(self.n_layers):
            net = self.encoder_nets[k]
            acts = net.forward(inp)
            gout = self.layer_specs[k].mass_dprobs(acts[-1], h2[k]) * w[:, None]
            pg, _ = net.backward(acts, gout)
            g[self.encoder_slices[k]] = pg
            inp = h2[k]
        return g

    def sample_q(self, x, c=None, rng=None, return_log_q=False):
        """Ancestral sample h ~ q(. | x); h layers match x's ndim."""
        batched = x.ndim == 2
        (x2,), _ = _rows(x)
        c2 = None
        if c is not None:
            (c2,), _ = _rows(c)
        inp = self._enc_input(x2, c2)
        h = []
        logq = 0.0
        for k, spec in enumerate(self.layer_specs):
            probs = self.encoder_nets[k].forward(inp)[-1]
            hk = spec.sample(probs, rng)
            if return_log_q:
                logq = logq + spec.log_mass(probs, hk)
            h.append(hk)
            inp = hk
        if not batched:
            h = [hk[0] for hk in h]
        if return_log_q:
            return h, (logq if batched else float(logq[0]))
        return h


class ModelPair:
    """A generative model and its inference model sharing one flat parameter
    vector lam = [theta, phi]."""

    def __init__(self, gen: GenerativeModel, inf: InferenceModel,
                 lam: np.ndarray, arch: str):
        if gen.layer_specs != inf.layer_specs:
            raise ShapeError("generative and inference latent stacks differ")
        self.gen = gen
        self.inf = inf
        self.lam = lam
        self.arch = arch
        self.n_theta = gen.n_params
        self.n_phi = inf.n_params
        self.theta = lam[:self.n_theta]
        self.phi = lam[self.n_theta:]

    @property
    def layer_specs(self):
        return self.gen.layer_specs

    @property
    def context_width(self):
        return self.gen.context_width

    def set_lam(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.lam.shape:
            raise ShapeError(f"lam shape {values.shape}, expected {self.lam.shape}")
        self.lam[:] = values

    def copy_lam(self):
        return self.lam.copy()


# ---------------------------------------------------------------------------
# Architecture construction

PRESETS = {
    "linear": "enc: 784-200s~B200; dec: B200-784s",
    "nonlinear": "enc: 784-200l-200l-200s~B200; dec: B200-200l-200l-784s",
    "two-layers": "enc: 784-200s~B200-200s~B200; dec: B200-200s~B200-784s",
    "categorical-20x10": "enc: 784-512l-256l-200~C20x10; dec: C20x10-256l-512l-784s",
}

PRESET_NAMES = tuple(PRESETS) + ("structured-50",)

_ACT_LAYERS = {"s": Sigmoid, "l": LeakyReLU, "t": Tanh}


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self) -> str:
        ch = self.peek()
        self.pos += 1
        return ch

    def expect(self, literal: str):
        self.skip_ws()
        if not self.text.startswith(literal, self.pos):
            raise ArchParseError(f"expected '{literal}'", self.pos)
        self.pos += len(literal)

    def read_int(self) -> int:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        if self.pos == start:
            raise ArchParseError("expected an integer", start)
        value = int(self.text[start:self.pos])
        if value <= 0:
            raise ArchParseError("widths must be positive", start)
        return value

    def read_stoch(self):
        self.skip_ws()
        start = self.pos
        kind = self.peek()
        if kind == "B":
            self.take()
            return StochasticLayerSpec.bernoulli(self.read_int()), start
        if kind == "C":
            self.take()
            n_vars = self.read_int()
            if self.peek() != "x":
                raise ArchParseError("expected 'x' in categorical shape", self.pos)
            self.take()
            return StochasticLayerSpec.categorical(n_vars, self.read_int()), start
        raise ArchParseError("expected stochastic layer 'B<w>' or 'C<n>x<k>'",
                             start)

    def read_act(self) -> str:
        if self.peek() in _ACT_LAYERS:
            return self.take()
        return ""


def _read_chain(sc: _Scanner, stop: str):
    """Reads runs of '-INT act' separated by '~stoch' until `stop` or end.

    Returns a list of (run, stoch, stoch_pos) in encounter order; the final
    entry's stoch is None if the chain ends on a deterministic run. Each run
    is a list of (width, act, pos).
    """
    items = []
    run = []
    while True:
        sc.skip_ws()
        ch = sc.peek()
        if ch == "" or ch == stop:
            break
        if ch == "-":
            sc.take()
            pos = sc.pos
            width = sc.read_int()
            run.append((width, sc.read_act(), pos))
        elif ch == "~":
            sc.take()
            spec, pos = sc.read_stoch()
            items.append((run, spec, pos))
            run = []
        else:
            raise ArchParseError(f"unexpected character '{ch}'", sc.pos)
    if run or not items:
        items.append((run, None, sc.pos))
    return items


def _build_net_layers(in_dim: int, run, terminal, pos: int):
    """Turns a deterministic run plus its terminal stochastic layer (or the
    Bernoulli observation when terminal is None) into ndnet layers."""
    if not run:
        raise ArchParseError("a stochastic layer needs preceding linear layers",
                             pos)
    layers = []
    cur = in_dim
    for width, act, _ in run:
        layers.append(Linear(cur, width))
        if act:
            layers.append(_ACT_LAYERS[act]())
        cur = width
    last_width, last_act, last_pos = run[-1]
    if terminal is None or terminal.kind == "bernoulli":
        want = terminal.width if terminal is not None else None
        if last_act != "s":
            raise ArchParseError(
                "Bernoulli outputs must be produced by a sigmoid layer", last_pos)
        if want is not None and last_width != want:
            raise ArchParseError(
                f"layer width {last_width} does not match B{want}", pos)
    else:
        if last_act != "":
            raise ArchParseError(
                "categorical outputs must come from a plain linear layer",
                last_pos)
        if last_width != terminal.width:
            raise ArchParseError(
                f"layer width {last_width} does not match "
                f"C{terminal.n_vars}x{terminal.n_categories}", pos)
        layers.append(GroupSoftmax(terminal.n_vars, terminal.n_categories))
    return layers


def _parse_arch(text: str):
    """Parses the explicit grammar into (obs_width, layer_specs,
    enc_layer_lists, dec_layer_lists)."""
    sc = _Scanner(text)
    sc.expect("enc:")
    sc.skip_ws()
    obs_width = sc.read_int()
    enc_items = _read_chain(sc, ";")
    sc.expect(";")
    sc.expect("dec:")
    top_spec, top_pos = sc.read_stoch()
    dec_items = _read_chain(sc, "")
    sc.skip_ws()
    if sc.peek() != "":
        raise ArchParseError("trailing characters after architecture", sc.pos)

    if enc_items[-1][1] is None:
        raise ArchParseError("encoder chain must end at a stochastic layer",
                             enc_items[-1][2])
    layer_specs = [item[1] for item in enc_items]

    dec_stochs = [top_spec] + [item[1] for item in dec_items[:-1]]
    if dec_items[-1][1] is not None:
        raise ArchParseError("decoder chain must end at the observation width",
                             dec_items[-1][2])
    if dec_stochs != list(reversed(layer_specs)):
        raise ArchParseError(
            "decoder latent layers must mirror the encoder's in reverse",
            top_pos)

    # Encoder nets, bottom-up: net k maps h[k-1] (or x) to h[k]'s parameters.
    enc_layers = []
    cur = obs_width
    for run, spec, pos in enc_items:
        enc_layers.append(_build_net_layers(cur, run, spec, pos))
        cur = spec.width

    # Decoder nets: chain entry j maps latent L-1-j downward; re-index so that
    # dec_layers[k] maps h[k] to h[k-1] (k=0 maps h[0] to x).
    n_layers = len(layer_specs)
    dec_layers = [None] * n_layers
    cur = top_spec.width
    for j, (run, spec, pos) in enumerate(dec_items):
        out_spec = spec  # None for the final (observation) run
        layers = _build_net_layers(cur, run, out_spec, pos)
        if out_spec is None:
            if run[-1][0] != obs_width:
                raise ArchParseError(
                    f"decoder ends at width {run[-1][0]}, observation is "
                    f"{obs_width}", run[-1][2])
            dec_layers[0] = layers
        else:
            dec_layers[n_layers - 1 - j] = layers
            cur = out_spec.width
    return obs_width, layer_specs, enc_layers, dec_layers


def _assemble(arch, obs_width, layer_specs, enc_layer_lists, dec_layer_lists,
              seed, prior_layer_list=None, context_width=0):
    """Allocates the shared lam vector, binds all nets into it, and
    initializes parameters with one seeded generator."""
    top = layer_specs[-1]
    n_prior = (sum(l.n_params for l in prior_layer_list)
               if prior_layer_list is not None else top.width)
    n_dec = [sum(l.n_params for l in lst) for lst in dec_layer_lists]
    n_enc = [sum(l.n_params for l in lst) for lst in enc_layer_lists]
    n_theta = n_prior + sum(n_dec)
    n_phi = sum(n_enc)
    lam = np.zeros(n_theta + n_phi)
    rng = np.random.default_rng(seed)

    off = 0
    prior_net = None
    prior_logits = None
    if prior_layer_list is not None:
        prior_net = LayeredNet(prior_layer_list, rng=rng, buffer=lam[:n_prior])
    else:
        prior_logits = lam[:n_prior]  # learned free logits, start uniform
    off = n_prior
    decoder_nets = []
    for lst, n in zip(dec_layer_lists, n_dec):
        decoder_nets.append(LayeredNet(lst, rng=rng, buffer=lam[off:off + n]))
        off += n
    encoder_nets = []
    for lst, n in zip(enc_layer_lists, n_enc):
        encoder_nets.append(LayeredNet(lst, rng=rng, buffer=lam[off:off + n]))
        off += n

    gen = GenerativeModel(layer_specs, decoder_nets, obs_width,
                          params=lam[:n_theta], prior_logits=prior_logits,
                          prior_net=prior_net, context_width=context_width)
    inf = InferenceModel(layer_specs, encoder_nets, obs_width,
                         params=lam[n_theta:], context_width=context_width)
    return ModelPair(gen, inf, lam, arch)


def build_conditional(obs_width, context_width, latent_width, hidden_widths,
                      seed=0, arch=None):
    """Conditional single-layer Bernoulli model: the prior net reads the
    context, the decoder reads [h, c], the encoder reads [c, x]."""
    def mlp(in_dim, out_dim):
        layers = []
        cur = in_dim
        for w in hidden_widths:
            layers.extend([Linear(cur, w), Tanh()])
            cur = w
        layers.extend([Linear(cur, out_dim), Sigmoid()])
        return layers

    specs = [StochasticLayerSpec.bernoulli(latent_width)]
    prior = mlp(context_width, latent_width)
    dec = [mlp(latent_width + context_width, obs_width)]
    enc = [mlp(context_width + obs_width, latent_width)]
    label = arch or (f"conditional({obs_width},{context_width},{latent_width},"
                     f"{list(hidden_widths)})")
    return _assemble(label, obs_width, specs, enc, dec, seed,
                     prior_layer_list=prior, context_width=context_width)


def build_architecture(spec_string: str, seed: int = 0) -> ModelPair:
    """Builds a ModelPair from a preset name or an explicit grammar string.

    The same seed always produces bit-identical initial parameters.
    """
    name = spec_string.strip()
    if name == "structured-50":
        return build_conditional(392, 392, 50, [200, 200], seed=seed,
                                 arch="structured-50")
    text = PRESETS.get(name, name)
    obs_width, layer_specs, enc_lists, dec_lists = _parse_arch(text)
    return _assemble(name if name in PRESETS else text, obs_width, layer_specs,
                     enc_lists, dec_lists, seed)
