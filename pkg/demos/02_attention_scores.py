"""Why normalize queries and keys: magnitude invariance of cosine scoring.

Dot-product attention scores grow with the magnitude of the token
embeddings, so two spectra of the same material under different
illumination get different score rows. Squared-cosine scoring on
unit-normalized projections sees only the angle between them.
"""

import numpy as np

from angleattn import tensor as T
from angleattn.attention import AttentionConfig, score
from angleattn.tensor import Tensor

rng = np.random.default_rng(1)

tokens = rng.normal(size=(4, 8))
brighter = 3.0 * tokens  # same directions, three times the magnitude

cfg = AttentionConfig(model_dim=8, heads=1, variant="cs2")

# cosine-family scores ignore the per-pixel gain entirely
q = T.l2_normalize_rows(Tensor(tokens))
q_bright = T.l2_normalize_rows(Tensor(brighter))
s_dim = score("cs2", q, q, cfg).data
s_bright = score("cs2", q_bright, q_bright, cfg).data
print("cs2 score drift under 3x gain:", np.abs(s_dim - s_bright).max())

# dot-product scores are dominated by it
dcfg = AttentionConfig(model_dim=8, heads=1, variant="dp")
d_dim = score("dp", Tensor(tokens), Tensor(tokens), dcfg).data
d_bright = score("dp", Tensor(brighter), Tensor(brighter), dcfg).data
print("dp  score drift under 3x gain:", np.abs(d_dim - d_bright).max())

# squared cosine is also sign-invariant: a flipped spectrum scores the same
flipped = T.l2_normalize_rows(Tensor(-tokens))
s_flip = score("cs2", flipped, q, cfg).data
print("cs2 score drift under sign flip:", np.abs(s_dim - s_flip).max())

# the full variant menu
for tag in ("cs2", "cs", "abscs", "tempcs2", "dp", "sdp", "add",
            "msa-cs2", "c-sdp", "c-cs2", "c-cs", "c-add"):
    print(f"  variant {tag!r} available")
