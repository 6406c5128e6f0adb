"""What the transformer actually computes, taken apart piece by piece.

Each feature of a row becomes one d-dimensional token (an affine map
for numeric features, a table lookup for categorical ones), a learned
classification token is appended last, the token sequence runs through
pre-norm residual attention blocks, and the head reads the final state
of the classification token alone.
"""

import numpy as np

from tabformer.autodiff import Tensor
from tabformer.data import CATEGORICAL, NUMERIC, ColumnSchema, FeatureSchema
from tabformer.model import Model, ModelConfig, attention, attention_logits

schema = FeatureSchema(
    (
        ColumnSchema("age", NUMERIC),
        ColumnSchema("dose", NUMERIC),
        ColumnSchema("site", CATEGORICAL, vocabulary=("left", "right")),
    )
)
config = ModelConfig(embed_dim=8, n_heads=2, n_blocks=2, ffn_dim=16, dropout=0.0)
model = Model(config, schema, seed=4)

# --- tokens -----------------------------------------------------------
row = np.array([[0.3, -1.2, 1.0]])  # site encoded as its category code
tokens = model.tokenizer.forward_batch(row)
print("token matrix shape:", tokens.shape, "(3 features + classification token)")

# a zero numeric value leaves exactly the feature's bias row
zero_row = np.array([[0.0, 0.0, 1.0]])
zt = model.tokenizer.forward_batch(zero_row).data[0]
print("zero input reproduces the bias row:", np.array_equal(zt[0], model.tokenizer.numeric_b.data[0]))

# --- scaled dot-product attention --------------------------------------
rng = np.random.default_rng(7)
q = Tensor(rng.normal(size=(4, 4)))
k = Tensor(rng.normal(size=(4, 4)))
v = Tensor(rng.normal(size=(4, 4)))
scores = attention_logits(q, k)
print("attention score matrix (rows softmax to 1):\n", np.round(scores.data, 2))
out = attention(q, k, v)
print("attention output shape:", out.shape)

# with a single token the softmax is a 1, so attention returns V exactly
q1, k1, v1 = (Tensor(rng.normal(size=(1, 4))) for _ in range(3))
print("single token returns V exactly:", np.array_equal(attention(q1, k1, v1).data, v1.data))

# --- the full forward pass ---------------------------------------------
X = rng.normal(size=(5, 3))
X[:, 2] = rng.integers(0, 3, size=5)  # category codes incl. the unknown slot
probs = model.predict_proba(X)
print("predicted probabilities:", np.round(probs, 4))

# feature order does not matter: swapping two numeric columns together
# with their token parameters leaves every prediction unchanged
twin = Model(config, schema, seed=4)
for dst, src in zip(twin.parameters(), model.parameters()):
    dst.data[...] = src.data
for p in (twin.tokenizer.numeric_w, twin.tokenizer.numeric_b):
    p.data[[0, 1]] = p.data[[1, 0]]
X_swapped = X.copy()
X_swapped[:, [0, 1]] = X[:, [1, 0]]
dev = np.max(np.abs(model.predict_proba(X) - twin.predict_proba(X_swapped)))
print(f"permutation equivariance deviation: {dev:.2e}")
