"""Walk through the spatiotemporal token layout and the logit bias it induces.

Tokens of an F x H x W latent video are flattened frame-major, so frame 0
occupies the first H*W positions. The modulation bias targets exactly that
key prefix, scaled per query frame by a schedule, and leaves frame-0 query
rows untouched.
"""

import numpy as np

from i2vlab import Schedule, TokenLayout, build_bias, schedule_weight

layout = TokenLayout(frames=3, height=2, width=2)

print("layout:", layout)
print("tokens per frame:", layout.frame_size, "total:", layout.token_count)
print("reference key indices:", layout.reference_indices())
print("frame of each token:  ", layout.frame_index_map())
for token in range(layout.token_count):
    f, r, c = layout.unflatten_index(token)
    assert layout.flatten_index(f, r, c) == token
print("flatten/unflatten agree on all", layout.token_count, "tokens")

print()
print("schedule weights phi(f) for F=3:")
for kind in Schedule:
    phi = [schedule_weight(kind, f, layout.frames) for f in range(layout.frames)]
    print(f"  {kind.value:8s}", np.round(phi, 4))

# the bias is -gamma * phi(frame) per query row, applied to reference keys
spec = build_bias(layout, gamma=0.6, kind=Schedule.LINEAR)
print()
print("per-query scale (gamma=0.6, linear):")
print(spec.per_query_scale.reshape(layout.frames, layout.frame_size))
print("key prefix length:", spec.key_prefix_len)

dense = spec.dense()
print("dense bias map (rows=queries, cols=keys):")
print(dense)
assert np.all(dense[: layout.frame_size] == 0.0), "reference queries stay biasless"
assert np.all(dense[:, layout.frame_size :] == 0.0), "only reference keys are biased"
print("frame-0 query rows and non-reference key columns are all zero")
