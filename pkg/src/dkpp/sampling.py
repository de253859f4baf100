"""MCMC sampling via single-site heat-bath (Gibbs) moves on the N-cube.

Each move resamples one item's inclusion from its exact conditional,
sigmoid of the marginal gain, so every proposal is accepted.  A sweep
visits all sites in a fresh random order, which keeps the sweep kernel
reversible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .kernel import Subset, _check_subset
from .model import Dkpp, subset_log_weights, unnorm_logprob

__all__ = [
    "Chain",
    "gibbs_step",
    "inclusion_frequencies",
    "load_chain",
    "run_chain",
    "save_chain",
]

# Chains precompute all 2^N weights below this size; above it, each move
# costs two eigendecompositions.
_TABLE_CAP = 14


@dataclass
class Chain:
    """Recorded per-sweep states plus site-move counters.

    `proposed` counts site visits, `accepted` the visits that changed the
    state (every heat-bath move is accepted in the formal sense; the ratio
    is the flip rate, a mixing diagnostic).
    """

    states: list = field(default_factory=list)
    accepted: int = 0
    proposed: int = 0


def _inclusion_prob(t_with: float, t_without: float) -> float:
    """Heat-bath conditional for one site from the two unnormalized weights."""
    if np.isneginf(t_with) and np.isneginf(t_without):
        raise ValueError("both states of the site have probability 0")
    return float(expit(t_with - t_without))


def gibbs_step(model: Dkpp, current: Subset, i: int, rng: np.random.Generator) -> Subset:
    """Resample item i's inclusion: included with probability
    sigmoid(f(i | current minus i)).

    A -inf gain (inclusion would give a zero-probability set) excludes the
    item deterministically.
    """
    _check_subset(current, model.n)
    if not 0 <= i < model.n:
        raise ValueError(f"site {i} out of range")
    with_i = current.union(i)
    without_i = current.minus(i)
    p = _inclusion_prob(
        unnorm_logprob(model, with_i), unnorm_logprob(model, without_i)
    )
    return with_i if rng.random() < p else without_i


def run_chain(
    model: Dkpp,
    init: Subset | None = None,
    sweeps: int = 1000,
    burn_in: int = 0,
    thin: int = 1,
    seed: int = 0,
) -> Chain:
    """Run the heat-bath chain and record one state per sweep.

    Sweeps visit the sites in a uniformly random order drawn per sweep.
    The first burn_in sweeps are discarded and every thin-th retained
    after that; deterministic per seed.  The default initial state is the
    empty set, which has unnormalized weight 1 under every model.
    """
    if sweeps < 1 or burn_in < 0 or thin < 1:
        raise ValueError("need sweeps >= 1, burn_in >= 0, thin >= 1")
    n = model.n
    init = init if init is not None else Subset()
    _check_subset(init, n)
    if np.isneginf(unnorm_logprob(model, init)):
        raise ValueError("initial state has probability 0")
    table = subset_log_weights(model) if n <= _TABLE_CAP else None
    rng = np.random.default_rng(seed)
    chain = Chain()
    mask = init.mask
    for sweep in range(sweeps):
        order = rng.permutation(n)
        us = rng.random(n)
        for pos, i in enumerate(order):
            bit = 1 << int(i)
            m_with, m_without = mask | bit, mask & ~bit
            if table is not None:
                t1, t0 = table[m_with], table[m_without]
            else:
                t1 = unnorm_logprob(model, Subset.from_mask(m_with))
                t0 = unnorm_logprob(model, Subset.from_mask(m_without))
            new_mask = m_with if us[pos] < _inclusion_prob(t1, t0) else m_without
            chain.proposed += 1
            chain.accepted += new_mask != mask
            mask = new_mask
        if sweep >= burn_in and (sweep - burn_in) % thin == 0:
            chain.states.append(Subset.from_mask(mask))
    return chain


def inclusion_frequencies(chain: Chain, n: int) -> np.ndarray:
    """Per-item empirical inclusion rate over the recorded states."""
    if not chain.states:
        raise ValueError("chain has no recorded states")
    freq = np.zeros(n)
    for s in chain.states:
        freq[s.indices] += 1.0
    return freq / len(chain.states)


def save_chain(chain: Chain, path, seed=None, burn_in=None, thin=None) -> None:
    """One state per line (space-separated items); run parameters in a # header."""
    lines = [f"# seed={seed} burn_in={burn_in} thin={thin}"]
    lines += [" ".join(str(i) for i in s.items) for s in chain.states]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_chain(path) -> list:
    """Recorded states from a file written by save_chain."""
    states = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            continue
        states.append(Subset(int(t) for t in line.split()))
    return states
