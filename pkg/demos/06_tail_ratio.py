"""
Tail ratio of a slightly perturbed Gaussian
===========================================

P(eta1 > c) / P(eta1 + eta2 > c) when var(eta2) = cov(eta1, eta2) = gamma.
The gap to 1 shrinks about fourfold per fourfold step in gamma.
"""
from mdev.mdp import lemma1_tail_ratio

prev = None
for gamma in (0.04, 0.01, 0.0025, 0.000625):
    gap = abs(lemma1_tail_ratio(gamma, gamma, 3.0) - 1)
    print(f"gamma {gamma:<9g} gap {gap:.5e}" + (f"  factor {prev / gap:.3f}" if prev else ""))
    prev = gap
print("gamma 0:", lemma1_tail_ratio(0.0, 0.0, 3.0))
