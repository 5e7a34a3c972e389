"""What the network computes for one scan pair.

Run: python demos/02_network_forward.py
"""

import numpy as np

from radarcorr import CorrespondenceNet, ModelConfig, generate_labels, pad_cloud
from radarcorr.synth import SynthConfig, synthetic_pairs
from radarcorr.trainer import row_cross_entropy

pair = synthetic_pairs(SynthConfig(seed=5), 1)[0]
n = 40  # every cloud is padded to the longest cloud in the dataset

a, b = pad_cloud(pair.prev, n), pad_cloud(pair.curr, n)
print("padded shapes", a.matrix.shape, b.matrix.shape, "real points", a.valid_count, b.valid_count)
print("row 0 is the 'no match' slot:", a.matrix[0])

net = CorrespondenceNet(ModelConfig(n_max=n), seed=0)
print(net.params.n_params(), "parameters")

aff = net.affinity(a, b)
print("affinity", aff.g.shape, "real block", aff.green().shape)

# Random initial weights give large, confident logits, so the first loss is high.
# With every parameter at zero all logits are equal and the loss is exactly ln(N+1).
labels = generate_labels(pair.prev, pair.curr, pair.pose, 0.15)
print("initial loss", float(row_cross_entropy(aff, labels.labels).data))
zero = CorrespondenceNet(ModelConfig(n_max=n), seed=0)
for p in zero.params.params.values():
    p.data[...] = 0.0
print("all-zero loss", float(row_cross_entropy(zero.affinity(a, b), labels.labels).data),
      "ln(N+1) =", np.log(n + 1))

# Reordering the current cloud only reorders the affinity columns.
perm = np.random.default_rng(0).permutation(len(pair.curr))
g2 = net.affinity(a, pad_cloud(pair.curr.points[perm], n)).g.data
print("max column mismatch after permutation",
      np.abs(g2[:, 1:len(perm) + 1] - aff.g.data[:, 1 + perm]).max())
