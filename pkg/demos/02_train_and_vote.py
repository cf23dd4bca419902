"""
Training the small network
==========================

Train the 3-level test profile for a few epochs, then compare plain
argmax labels against neighborhood voting.
"""

import numpy as np

from mcnet.harness import benchmark_scene, evaluate, predict, train
from mcnet.metrics import ConfusionMatrix, mean_iou, overall_accuracy
from mcnet.model import ModelConfig, build_model

cloud = benchmark_scene(0, points=2048)
cfg = ModelConfig.test_profile(3, patch_size=512, epochs=40, learning_rate=0.05)
model = build_model(cfg)
print(model.num_parameters(), "parameters")

report = train(model, cloud, cfg)
print("loss, first and last epochs:", np.round(report.losses[:3], 3), np.round(report.losses[-3:], 3))

voted = predict(model, cloud, cfg)
plain = predict(model, cloud, cfg.replace(ablation={"nv": False}))
for name, pred in (("argmax", plain), ("vote", voted)):
    cm = ConfusionMatrix(3)
    cm.accumulate(cloud.labels, pred)
    print(f"{name:6s} OA {overall_accuracy(cm):.4f} mIoU {mean_iou(cm):.4f}")

print(evaluate(model, cloud, cfg))
