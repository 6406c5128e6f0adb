"""Class-balanced training and stratified cross-validation, end to end.

The dataset here is deliberately adversarial for a linear model: the
label depends only on the product of two features (an XOR-like rule),
which no weighted sum can represent. The transformer's attention
blocks pick the interaction up from raw columns.
"""

from tabformer.data import GeneratorColumn, GeneratorSpec, bayes_probabilities, generate_synthetic
from tabformer.evaluation import auprc, confusion_metrics, pr_curve, run_cv
from tabformer.model import build_model
from tabformer.training import TrainConfig

spec = GeneratorSpec(
    columns=(GeneratorColumn("x0", "numeric"), GeneratorColumn("x1", "numeric")),
    weights=(0.0, 0.0),
    interactions=(((0, 1), 60.0),),  # logit = 60 * x0 * x1
    seed=23,
)
dataset = generate_synthetic(spec, 2000)
bayes = bayes_probabilities(spec, 2000)
ceiling = confusion_metrics(bayes > 0.5, dataset.labels)
print(f"Bayes-optimal F1 on this task: {ceiling.f1:.4f}")
print(f"Bayes-optimal AUPRC:           {auprc(pr_curve(bayes, dataset.labels.astype(float))):.4f}")

train_config = TrainConfig(lr=0.01, batch_size=256, max_epochs=40, patience=8, seed=0)
model_config = {"embed_dim": 16, "n_heads": 4, "n_blocks": 2, "ffn_dim": 32, "dropout": 0.1}

for kind in ("logistic", "transformer"):
    report = run_cv(
        dataset,
        lambda schema, seed: build_model(kind, schema, seed=seed, config=model_config),
        train_config,
        k=5,
        threshold=0.5,
        seed=0,
    )
    print(f"\n{kind}: 5-fold means +- sample std")
    for name in ("accuracy", "precision", "recall", "f1", "auprc"):
        print(f"  {name:<10s} {report.means[name]:.4f} +- {report.stds[name]:.4f}")
    fold0 = report.folds[0]
    print(
        f"  fold 0 trained {fold0.train_log.n_epochs} epochs "
        f"(best {fold0.train_log.best_epoch}, stop: {fold0.train_log.stop_reason})"
    )

print(
    "\nThe gap is structural: a linear scorer cannot express x0*x1, "
    "so it hovers near chance while the transformer approaches the ceiling."
)
