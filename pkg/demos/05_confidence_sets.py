"""
Confidence-set misses against Gaussian exceedances
==================================================

"""
import math


from mdev import bounds
from mdev.geometry import ball, cube, ellipsoid, validate_a4
from mdev.infer import EstimatorSpec
from mdev.mdp import MCConfig, estimate_miss_prob, gauss_exceedance
from mdev.model import get_model

# smooth bodies pass the curvature probe, the square does not
for omega in (ball(2), ellipsoid([1, 2]), cube(2)):
    print(omega.label, "A4:", validate_a4(omega).passes)

cfg = MCConfig(n_rep=20_000, grid_n=16)
for omega in (ball(2), ellipsoid([1, 2]), cube(2)):
    print(f"P(zeta not in 3*{omega.label}) = {gauss_exceedance(omega, 3.0, cfg).p_hat:.5e}")

# efficient one-step estimator vs a copy with twice the noise, r = u / eps = 3
model = get_model("ortho-2d")
eps, r = 0.02, 3.0
den = gauss_exceedance(ball(2), r, cfg)
for inflate in (1.0, 2.0):
    est = EstimatorSpec("score_one_step", [0.0, 0.0], inflate=inflate)
    miss = estimate_miss_prob(model, est, [0.0, 0.0], r * eps, eps, cfg, omega=ball(2))
    print(f"inflate {inflate}: ratio {bounds.theorem5_ratio(miss, den):.4f}")
print("doubled-noise ratio in closed form:", math.exp(3 * r * r / 8))
