"""Train the combined objective on a small synthetic world and watch the log."""

from wsground.losses import LossConfig
from wsground.synthcorpus import WorldSpec, generate
from wsground.trainer import TrainConfig, train

dataset, taxonomy = generate(WorldSpec(images=200, feature_dim=32), seed=0)
cfg = TrainConfig(epochs=30, batch_size=16, hidden=64, embed_dim=32, learning_rate=1e-3,
                  loss=LossConfig(variant="nce_distill", lambda_a=20, lambda_b=3.0))
result = train(dataset, cfg)

print("step  total    L_IS     L_RP     lambda")
for step, total, l_is, l_rp, lam in result.log[::40]:
    print(f"{step:4d}  {total:.4f}  {l_is:.4f}  {l_rp:.4f}  {lam:.0f}")
print("vocabulary size:", len(result.vocab))
