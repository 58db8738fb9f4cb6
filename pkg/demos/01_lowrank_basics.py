"""
Factored matrices and rounding
==============================

A smooth function sampled on a grid is numerically low rank.  We store it
as ``U diag(s) V^T``, add a few such matrices together and recompress the
sum back to a small rank.
"""

# %%
import numpy as np

from lrbug.lowrank import FactoredMatrix, norm, round_sum, truncated_svd

x = np.linspace(-1, 1, 200)
F = np.exp(-np.subtract.outer(x, x) ** 2 / 0.3)

for eps in (1e-2, 1e-6, 1e-10):
    Y = truncated_svd(F, eps)
    gap = np.linalg.norm(F - Y.to_dense())
    print(f"eps = {eps:.0e}: rank {Y.rank:2d}, discarded {gap:.2e}")

# %%
# Sums grow the stored rank; rounding brings it back down without
# forming the dense matrix.
A = truncated_svd(F, 1e-8)
B = truncated_svd(np.outer(np.sin(np.pi * x), np.cos(x)), 1e-8)
S = round_sum([(1.0, A), (0.5, B), (-0.5, B)], 1e-12)
print(f"ranks {A.rank} + {B.rank} + {B.rank} -> {S.rank}")
print(f"|S - A| = {norm(round_sum([(1.0, S), (-1.0, A)], 0.0)):.2e}")

# %%
# The zero matrix has rank 0 and every operation handles it.
Z = FactoredMatrix.zeros((200, 200))
print("rank of zero + A:", round_sum([Z, A], 1e-8).rank)
