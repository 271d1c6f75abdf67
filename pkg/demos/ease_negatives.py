"""Fit EASE on the training interactions and draw hard negatives for a user."""

import numpy as np

from duet.corpus import k_core_filter, timestamp_split
from duet.ease import RatingMatrix, fit_ease, hard_negatives, score_user
from duet.simworld import SimConfig, build_world

# toy case: three users, three items, each user holds two of them
toy = fit_ease(RatingMatrix.from_dense([[1, 1, 0], [0, 1, 1], [1, 0, 1]]), lam=1.0)
print("toy B:\n", np.round(toy.B, 4))

world, raw = build_world(SimConfig())
split = timestamp_split(k_core_filter(raw, 5), 0.1, 0.1)
X = RatingMatrix.from_dataset(split.train)
model = fit_ease(X, lam=100.0)
print(f"\nfit on {X.n_users} users x {X.n_items} items; max |diag B| = {np.abs(np.diag(model.B)).max()}")

u = 0
scores = score_user(model, X, u)
negs = hard_negatives(model, X, u, k=5)
print(f"user {X.user_ids[u]} holds {len(X.row_items(u))} items; hardest unseen:")
for j in negs:
    print(f"  {X.item_ids[j]}  score {scores[j]:.4f}")
