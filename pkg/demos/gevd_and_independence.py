"""
GEVD-based Wiener filters and the independence of the echo canceller
=====================================================================

A rank-1 GEVD filter is checked against the closed-form rank-1 MWF. Then,
for random correlation matrices of the extended (microphones plus
loudspeakers) model, the echo canceller that follows the extended MWF is
compared with the plain echo-path estimate.
"""

import numpy as np

from nrext_aec.estimation import gevd_mwf, verify_aec_independence
from nrext_aec.verification import random_covariance

rng = np.random.default_rng(1)
C = 4
a = rng.standard_normal(C) + 1j * rng.standard_normal(C)
R_nn = random_covariance(rng, C)
phi = 2.0
R_yy = phi * np.outer(a, a.conj()) + R_nn

W = gevd_mwf(R_yy, R_nn, rank=1).W
Rn_a = np.linalg.solve(R_nn, a)
closed = phi * np.outer(Rn_a, a.conj()) / (1 + phi * np.real(a.conj() @ Rn_a))
print("rank-1 GEVD vs closed form:", np.max(np.abs(W - closed)))

M = L = 2
report = verify_aec_independence(
    R_ss=random_covariance(rng, M, 1),
    R_nn=random_covariance(rng, M, 2 * M),
    R_lsls=random_covariance(rng, L, 2 * L),
    R_lnln=random_covariance(rng, L, 2 * L),
    H=rng.standard_normal((M, L)) + 1j * rng.standard_normal((M, L)),
)
print(report)
