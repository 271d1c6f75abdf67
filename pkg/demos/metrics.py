"""Rating metrics, tie-pessimistic NDCG and variance groups on small hand cases."""

from duet.metrics import CandidateSet, ndcg_at_k, positive_rank, rating_metrics, variance_groups

# the None prediction is a parse failure: it costs the full scale range and a wrong class
pairs = [(5, 4.6), (3, 2.5), (1, 1.2), (4, None), (2, 3.4)]
for name, value in rating_metrics(pairs).items():
    print(f"{name:<16}{value:.4f}" if isinstance(value, float) else f"{name:<16}{value}")

negs = tuple(f"n{j}" for j in range(9))
c = CandidateSet("pos", negs, {"pos": 0.5, "n0": 0.9, "n1": 0.8, **{n: 0.1 for n in negs[2:]}})
print(f"\npositive ranked {positive_rank(c)} of 10: NDCG@1 {ndcg_at_k(c, 1)}, NDCG@5 {ndcg_at_k(c, 5)}")
tied = CandidateSet("pos", ("a", "b"), {"pos": 1.0, "a": 1.0, "b": 0.0})
print(f"tie with one negative puts the positive at rank {positive_rank(tied)}")

groups = variance_groups({"steady": [4, 4, 4, 4], "mixed": [3, 4, 3, 5], "wild": [1, 5, 1, 5]})
print("\nvariance groups:", groups)
