"""Curate a synthetic review corpus: k-core filter, temporal split, history pairs."""

from duet.corpus import build_history_pair, k_core_filter, timestamp_split
from duet.simworld import SimConfig, build_world

world, raw = build_world(SimConfig())
print(f"raw corpus: {len(raw)} interactions, {len(raw.users)} users, {len(raw.items)} items")

for k in (2, 5, 8):
    core = k_core_filter(raw, k)
    print(f"  {k}-core keeps {len(core)} interactions")

split = timestamp_split(k_core_filter(raw, 5), valid_frac=0.1, test_frac=0.1)
for key, value in split.statistics().items():
    print(f"  {key:<13}{value}")

target = split.test.interactions[0]
pair = build_history_pair(split, target, L_u=5, L_i=5)
print(f"\ntarget: user {target.user_id} rated {target.item_id} {target.rating} at t={target.timestamp}")
print("user history (all strictly earlier):")
for it in pair.user_history:
    print(f"  t={it.timestamp:<4} {it.item_id} {it.rating}  {it.text[:50]}")
print("item history (other users only):")
for it in pair.item_history:
    print(f"  t={it.timestamp:<4} {it.user_id} {it.rating}  {it.text[:50]}")
