"""
Error probabilities far in the tail
===================================

Type I and II errors of the symmetric likelihood-ratio test at a separation
of 16 noise units, i.e. both errors equal Phi(-8).
"""
from scipy.stats import norm

from mdev.infer import TestSpec
from mdev.mdp import MCConfig, estimate_error_probs
from mdev.model import get_model

model = get_model("linear-sin")
spec = TestSpec(0.0, 0.16, norm.cdf(-8), kind="neyman_pearson")

tilted = estimate_error_probs(model, spec, 0.01, MCConfig(n_rep=50_000, grid_n=64))
plain = estimate_error_probs(model, spec, 0.01, MCConfig(n_rep=50_000, grid_n=16, tilt="none"))

print("exact     ", norm.cdf(-8))
for name, (a, b) in [("tilted", tilted), ("plain", plain)]:
    print(f"{name:10s} alpha {a.p_hat:.4e} (se {a.se:.1e}, hits {a.hits})  "
          f"beta {b.p_hat:.4e} (se {b.se:.1e}, ess {b.ess:.0f})")
