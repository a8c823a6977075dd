"""The encoder blocks, one at a time.

AT-Fusion turns an (acoustic, lexical) pair into one vector via softmax
attention over the two modalities; a bidirectional GRU runs over the fused
conversation; multi-head self-attention mixes its hidden states. Each stage
prints the invariant that matters about it.
"""

import numpy as np

from emodann.layers import (
    AtFusionParams, AttentionParams, GruCellParams,
    bigru_forward, fuse_sequence, self_attention_forward,
)
from emodann.tensor import Tensor

rng = np.random.default_rng(1)
d, d_a, d_t, L = 8, 12, 6, 5

# --- AT-Fusion --------------------------------------------------------------

fusion = AtFusionParams.init(rng, d, d_a, d_t)
A = Tensor(rng.standard_normal((L, d_a)))
T = Tensor(rng.standard_normal((L, d_t)))
F, alphas = fuse_sequence(A, T, fusion)

print("fused conversation shape:", F.shape)
print("modality weights per utterance (acoustic, lexical):")
for i, (wa, wt) in enumerate(alphas.data):
    print(f"  u{i}: {wa:.3f} {wt:.3f}")
assert np.allclose(alphas.data.sum(axis=1), 1.0)
print("rows sum to 1: the fused vector is a convex combination of the")
print("projected modalities, so neither can be silently dropped.\n")

# --- bidirectional GRU ------------------------------------------------------

fwd = GruCellParams.init(rng, d // 2, d)
bwd = GruCellParams.init(rng, d // 2, d)
H = bigru_forward(F, fwd, bwd)
print("bi-GRU hidden states:", H.shape, "(forward half || backward half)")

# the backward half at position 0 has seen the whole conversation
H_prefix = bigru_forward(Tensor(F.data[:1]), fwd, bwd)
fwd_same = np.allclose(H.data[0, :d // 2], H_prefix.data[0, :d // 2])
bwd_same = np.allclose(H.data[0, d // 2:], H_prefix.data[0, d // 2:])
print("dropping utterances 1..4 leaves row 0's forward half unchanged:",
      fwd_same)
print("but changes its backward half (it reads the future):", not bwd_same, "\n")

# --- multi-head self-attention ----------------------------------------------

attn = AttentionParams.init(rng, d, n_heads=2)
R = self_attention_forward(H, attn)
print("self-attention output:", R.shape)

one = self_attention_forward(Tensor(H.data[:1]), attn)
print("with L=1 attention is forced to attend to the only state:",
      np.allclose(one.data, np.concatenate(
          [H.data[:1] @ W_V.data for (_, _, W_V) in attn.heads], axis=1)))
