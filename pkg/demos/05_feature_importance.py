"""Permutation feature importance on a model with known ground truth.

One feature drives the label, three are pure noise, and one is shared
with the label only through the active one (a decoy correlation).
Shuffling a column within the held-out set severs its relationship to
the label; the F1 drop measures how much the model leaned on it.
"""

import numpy as np

from tabformer.data import (
    ColumnSchema,
    FeatureSchema,
    apply_standardizer,
    fit_standardizer,
    stratified_holdout,
)
from tabformer.importance import permutation_importance
from tabformer.model import build_model
from tabformer.training import TrainConfig, train

rng = np.random.default_rng(19)
n = 2000
X = rng.normal(size=(n, 5))
X[:, 1] = 0.8 * X[:, 0] + 0.6 * rng.normal(size=n)  # decoy, correlated with x0
logits = 6.0 * X[:, 0]
y = (rng.random(n) < 1.0 / (1.0 + np.exp(-logits))).astype(np.int64)

schema = FeatureSchema(tuple(ColumnSchema(f"x{j}", "numeric") for j in range(5)))
mask = stratified_holdout(y, 0.25, seed=3)
stats = fit_standardizer(X[~mask], schema)
X_train, X_val = apply_standardizer(X[~mask], stats), apply_standardizer(X[mask], stats)

model = build_model(
    "transformer", schema, seed=1,
    config={"embed_dim": 16, "n_heads": 4, "n_blocks": 2, "ffn_dim": 32, "dropout": 0.1},
)
log = train(
    model,
    (X_train, y[~mask].astype(float)),
    (X_val, y[mask].astype(float)),
    TrainConfig(lr=0.01, batch_size=256, max_epochs=40, patience=8, seed=1),
)
print(f"trained {log.n_epochs} epochs, best validation loss {log.best_val_loss:.4f}")

report = permutation_importance(model, X_val, y[mask], repeats=5, seed=7, threshold=0.5)
print(f"baseline F1 on held-out rows: {report.baseline_f1:.4f}\n")
print("rank  feature  mean drop   std")
for f in report.features:
    print(f"{f.rank:>4d}  {f.name:<7s} {f.mean_drop:+.4f}   {f.std_drop:.4f}")

print(
    "\nThe driver x0 dominates. The decoy x1 shows only whatever weight the"
    "\nmodel actually put on it, which is the point of permuting columns in"
    "\nthe model's own input space rather than refitting without them."
)

# the identity check: forcing identity permutations must zero every drop
sanity = permutation_importance(
    model, X_val, y[mask], repeats=2, seed=7, identity_check=True
)
print("\nidentity check, all drops exactly zero:",
      all(f.mean_drop == 0.0 for f in sanity.features))
