"""pCN for a mildly nonlinear forward map, using the linear model as reference.

The Gaussian reference is the posterior of the linearized problem; its draws
come from the same sampler used for linear problems (run with zero data).
The acceptance ratio only sees the nonlinear remainder.

    python3 demos/pcn_toy.py
"""

import numpy as np

from splitrto import PcnTarget, Rng, pcn_chain, whiten
from splitrto.mcmc import linearization_phi, pregenerate_proposals
from splitrto.sampler import posterior_direct
from splitrto.problems import pcn_toy

N = 20_000
problem = pcn_toy(seed=0)
std = whiten(problem.model)
gbar = std.to_original(posterior_direct(std)[0])
phi = linearization_phi(problem.forward, problem.extras["A"], problem.extras["r"])
W = pregenerate_proposals(problem.model, N, Rng(0, 2))

for h in (0.02, 0.05, 0.2):
    chain = pcn_chain(PcnTarget(gbar, W, phi, h), N, Rng(0, 3))
    shift = np.linalg.norm(chain.states[N // 2:].mean(axis=0) - gbar) / np.linalg.norm(gbar)
    print(f"h = {h:<5} acceptance {chain.acceptance_rate:.0%}   mean shift from the reference {shift:.3f}")
