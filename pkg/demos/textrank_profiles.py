"""Extractive history summaries: every profile word comes from the history."""

from duet.corpus import build_history_pair, k_core_filter, timestamp_split
from duet.metrics import coverage
from duet.simworld import SimConfig, build_world
from duet.textrank import split_sentences, textrank_scores, textrank_summary

history = [
    "The bass line is huge. Funk all the way through!",
    "Slow start. Then the funk groove kicks in and the bass takes over.",
    "Packaging was damaged.",
]
# sentences under three tokens ("Slow start") are dropped before ranking
sentences = split_sentences(history)
for s, score in zip(sentences, textrank_scores(sentences)):
    print(f"  {score:.3f}  {s}")
summary = textrank_summary(history, 2)
print(f"\nsummary: {summary}\ncoverage: {coverage(summary, history)}")

world, raw = build_world(SimConfig())
split = timestamp_split(k_core_filter(raw, 5), 0.1, 0.1)
covs = []
for t in split.test.interactions:
    texts = [it.text for it in build_history_pair(split, t).user_history]
    covs.append(coverage(textrank_summary(texts, 5), texts))
print(f"\nsynthetic test users: min coverage {min(covs)} over {len(covs)} summaries")
