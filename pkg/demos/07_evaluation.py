"""Ground test phrases, score them by IoU, and render one heatmap."""

from pathlib import Path

from wsground.evaluate import evaluate, heatmap, iou
from wsground.losses import LossConfig
from wsground.synthcorpus import WorldSpec, generate
from wsground.trainer import TrainConfig, train

print("IoU of half-overlapping squares:", iou([0, 0, 2, 2], [1, 0, 3, 2]))

dataset, _ = generate(WorldSpec(images=200, feature_dim=32), seed=1)
result = train(dataset, TrainConfig(epochs=30, batch_size=16, hidden=64, embed_dim=32, learning_rate=1e-3,
                                         loss=LossConfig(variant="nce_distill", lambda_a=20)))
report = evaluate(result.params, result.stats, result.vocab, dataset)
print(report.to_csv())
print("accuracy", report.accuracy, "recall@1", report.recall_at_1)

j = dataset.sentence_ids("test")[0]
sent = dataset.sentences[j]
hm = heatmap(result.params, result.stats, result.vocab, dataset, sent.image, sent.phrases[0], (24, 32))
out = Path("heatmap_demo.pgm")
out.write_bytes(hm.to_pgm())
print("wrote", out, "for phrase", " ".join(sent.phrases[0]))
