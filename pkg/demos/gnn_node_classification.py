"""Train a two-layer GCN on a planted-community graph and watch it recover
the blocks from weak node features plus graph structure.

The features alone carry only a faint class signal (shift 0.5 against unit
noise); the propagation step averages them over neighborhoods that are
mostly intra-block, which amplifies the signal enough for a linear readout.
"""

import numpy as np

from msfnet import (
    SbmSpec,
    SplitSpec,
    TrainConfig,
    normalized_adjacency,
    split_indices,
    synth_sbm_graph,
    train_node_classifier,
)
from msfnet.model import LinearSoftmaxModel
from msfnet.train import train_loop

spec = SbmSpec(blocks=2, nodes_per_block=50, p_in=0.3, p_out=0.02,
               feature_dim=4, feature_shift=0.5, seed=0)
graph, labels = synth_sbm_graph(spec)
train_idx, test_idx = split_indices(labels, SplitSpec(seed=0))
print(f"SBM: {graph.node_count} nodes, {len(graph.edges)} edges, "
      f"{len(train_idx)} train / {len(test_idx)} held out")

# Baseline: a linear probe on the raw features, no graph.
probe = LinearSoftmaxModel(spec.feature_dim, 2, seed=0)
probe_cfg = TrainConfig(lr_initial=0.1, lr_final=0.01, decay_epoch=100,
                        epochs=200, batch_size=32, seed=0)
train_loop(probe, graph.features[train_idx], labels[train_idx], probe_cfg)
probe_acc = (probe.forward(graph.features[test_idx]).argmax(1)
             == labels[test_idx]).mean()
print(f"linear probe on raw features: {probe_acc:.1%} held-out accuracy")

# Two-layer GCN, step-decay schedule.
cfg = TrainConfig(epochs=200, decay_epoch=100, seed=0)
model = train_node_classifier(graph, labels, train_idx, hidden_dim=8,
                              config=cfg, seed=0)
anorm = normalized_adjacency(graph)
probs = model.forward(anorm, graph.features)
acc = (probs.argmax(1)[test_idx] == labels[test_idx]).mean()
print(f"2-layer GCN after {cfg.epochs} epochs: {acc:.1%} held-out accuracy")
print("-> neighborhood averaging turns a weak per-node signal into a "
      "strong community signal")
