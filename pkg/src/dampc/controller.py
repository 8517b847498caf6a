"""LSTM policy over architecture decisions, trained with REINFORCE.

The controller emits the decisions of :func:`search_space.encode_decisions`
one at a time.  The input at step ``t`` is the embedding of the choice made
at step ``t - 1`` (a learned start token at step 0); each decision type has
its own softmax head.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .numerics import Rng, log_softmax_rows, sample_categorical
from .search_space import ArchitectureChoice, decision_arities, decision_types, decode_decisions

HEAD_TYPES = ("fc_size", "skip_from", "input_from", "pc_tap", "classifier_tap")


class StaleTraceError(RuntimeError):
    pass


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class ControllerParams:
    n_cells: int
    hidden: int = 64
    embed: int = 32
    step_size: float = 0.05
    baseline_decay: float = 0.95
    entropy_weight: float = 0.0
    baseline: Optional[float] = None
    weights: Dict[str, np.ndarray] = field(default_factory=dict)
    version: int = 0

    @classmethod
    def init(cls, n_cells: int, rng: Rng, hidden: int = 64, embed: int = 32, init_range: float = 0.1,
             **kw) -> "ControllerParams":
        p = cls(n_cells, hidden, embed, **kw)

        def u(*shape):
            n = int(np.prod(shape))
            return ((2.0 * rng.uniform_array(n) - 1.0) * init_range).reshape(shape)

        w = p.weights
        w["W_x"] = u(4 * hidden, embed)
        w["W_h"] = u(4 * hidden, hidden)
        w["b"] = np.zeros(4 * hidden)
        w["start"] = u(embed)
        for t, a in enumerate(decision_arities(n_cells)[:-1]):
            w[f"emb{t}"] = u(a, embed)
        types = decision_types(n_cells)
        arity_of = dict(zip(types, decision_arities(n_cells)))
        for h in HEAD_TYPES:
            if h in arity_of:
                w[f"head_{h}_W"] = u(arity_of[h], hidden)
                w[f"head_{h}_b"] = np.zeros(arity_of[h])
        return p

    def zero_heads(self) -> "ControllerParams":
        for k in self.weights:
            if k.startswith("head_"):
                self.weights[k][...] = 0.0
        self.version += 1
        return self

    def copy(self) -> "ControllerParams":
        out = ControllerParams(self.n_cells, self.hidden, self.embed, self.step_size, self.baseline_decay,
                               self.entropy_weight, self.baseline, {k: v.copy() for k, v in self.weights.items()},
                               self.version)
        return out

    def to_arrays(self) -> Dict[str, np.ndarray]:
        return dict(self.weights)


@dataclass
class SampleTrace:
    arch: ArchitectureChoice
    decisions: List[int]
    log_prob: float
    entropy: float
    step_log_probs: List[float]
    probs: List[np.ndarray]
    cache: list = field(repr=False, default_factory=list)
    version: int = 0


def _rollout(params: ControllerParams, rng: Optional[Rng] = None, forced=None, greedy: bool = False):
    w = params.weights
    H = params.hidden
    types = decision_types(params.n_cells)
    h = np.zeros(H)
    c = np.zeros(H)
    x = w["start"]
    decisions, step_lp, probs, cache = [], [], [], []
    log_prob = 0.0
    entropy = 0.0
    for t, kind in enumerate(types):
        z = w["W_x"] @ x + w["W_h"] @ h + w["b"]
        i_g = _sigmoid(z[:H])
        f_g = _sigmoid(z[H:2 * H])
        o_g = _sigmoid(z[2 * H:3 * H])
        g_g = np.tanh(z[3 * H:])
        c_new = f_g * c + i_g * g_g
        tc = np.tanh(c_new)
        h_new = o_g * tc
        logits = w[f"head_{kind}_W"] @ h_new + w[f"head_{kind}_b"]
        logp = log_softmax_rows(logits)[0]
        p = np.exp(logp)
        if forced is not None:
            a = int(forced[t])
        elif greedy:
            a = int(np.argmax(p))
        else:
            a = sample_categorical(rng, p)
        decisions.append(a)
        step_lp.append(float(logp[a]))
        probs.append(p)
        log_prob += float(logp[a])
        entropy -= float(np.sum(p * logp))
        cache.append((x, h, c, i_g, f_g, o_g, g_g, c_new, tc, h_new, kind, p, logp, a))
        h, c = h_new, c_new
        if t + 1 < len(types):
            x = w[f"emb{t}"][a]
    arch = decode_decisions(decisions, params.n_cells)
    return SampleTrace(arch, decisions, log_prob, entropy, step_lp, probs, cache, params.version)


def controller_sample(params: ControllerParams, rng: Rng) -> SampleTrace:
    return _rollout(params, rng=rng)


def controller_greedy(params: ControllerParams) -> ArchitectureChoice:
    return _rollout(params, greedy=True).arch


def replay(params: ControllerParams, decisions) -> SampleTrace:
    """Re-run the controller forcing the given decision indices."""
    return _rollout(params, forced=decisions)


def objective_grad(params: ControllerParams, trace: SampleTrace, coef_logp: float, coef_ent: float):
    """Gradient of ``coef_logp * log_prob + coef_ent * entropy`` by BPTT."""
    w = params.weights
    H = params.hidden
    g = {k: np.zeros_like(v) for k, v in w.items()}
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    T = len(trace.cache)
    for t in range(T - 1, -1, -1):
        x, h_prev, c_prev, i_g, f_g, o_g, g_g, c_new, tc, h_new, kind, p, logp, a = trace.cache[t]
        ent = -float(np.sum(p * logp))
        d_logits = coef_logp * (-p)
        d_logits[a] += coef_logp
        d_logits += coef_ent * (-p * (logp + ent))
        g[f"head_{kind}_W"] += np.outer(d_logits, h_new)
        g[f"head_{kind}_b"] += d_logits
        dh = w[f"head_{kind}_W"].T @ d_logits + dh_next
        do = dh * tc
        dc = dh * o_g * (1.0 - tc * tc) + dc_next
        di = dc * g_g
        df = dc * c_prev
        dg = dc * i_g
        dz = np.concatenate([di * i_g * (1 - i_g), df * f_g * (1 - f_g), do * o_g * (1 - o_g), dg * (1 - g_g * g_g)])
        g["W_x"] += np.outer(dz, x)
        g["W_h"] += np.outer(dz, h_prev)
        g["b"] += dz
        dx = w["W_x"].T @ dz
        if t == 0:
            g["start"] += dx
        else:
            g[f"emb{t - 1}"][trace.decisions[t - 1]] += dx
        dh_next = w["W_h"].T @ dz
        dc_next = dc * f_g
    return g


def reinforce_update(params: ControllerParams, trace: SampleTrace, reward: float) -> float:
    """One policy-gradient ascent step; returns the advantage used."""
    if trace.version != params.version:
        raise StaleTraceError("trace was sampled before the controller was last updated")
    if params.baseline is None:
        params.baseline = float(reward)
    advantage = float(reward) - params.baseline
    if advantage != 0.0 or params.entropy_weight != 0.0:
        grads = objective_grad(params, trace, advantage, params.entropy_weight)
        for k, gk in grads.items():
            params.weights[k] += params.step_size * gk
    d = params.baseline_decay
    params.baseline = d * params.baseline + (1.0 - d) * float(reward)
    params.version += 1
    return advantage
