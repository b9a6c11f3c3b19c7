"""Locating the active block in a group-sparse toy problem.

Ten blocks of five unknowns, twenty measurements, one active block.  The
MAP estimate from the alternating scheme and the Gibbs posterior mean of the
block variances should both single out the same block.

    python3 demos/meg_blocks.py
"""

import numpy as np

from splitrto import Rng, gibbs_sample, ias_map
from splitrto.problems import blocks_meg_toy

problem = blocks_meg_toy(seed=4)
model = problem.model
print(f"true active block: {problem.extras['active']}")

res = ias_map(model)
print(f"IAS converged={res.converged} after {res.iterations} iterations")
print("MAP theta:      ", np.array2string(res.theta, precision=2, max_line_width=120))

chain = gibbs_sample(model, 2000, Rng(5), burn_in=500)
print("Gibbs mean theta:", np.array2string(chain.theta_mean(), precision=2, max_line_width=120))
print(f"argmax: IAS {np.argmax(res.theta)}, Gibbs {np.argmax(chain.theta_mean())}")
