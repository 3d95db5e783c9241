"""The gradient gap: how far the straight-through gradient sits from the
gradient the decoder would send back without quantization. Zero when
quantization is lossless; it grows as codeword dimension shrinks.

Run: python demos/05_gradient_gap.py
"""

import numpy as np

from aqvq.analysis import gradient_gap
from aqvq.data import DatasetSource, synth_dataset
from aqvq.experiments import run_fixed_sweep
from aqvq.model import ModelConfig, encode, init_state

dataset = synth_dataset(DatasetSource(clusters=4, dims=8, samples=1024,
                                      noise_sigma=0.05, seed=11))
probe = dataset.val[:64]
base = ModelConfig(input_shape=(8,), num_hiddens=16, learning_rate=1e-4, seed=0)

# A model whose codebook holds exact copies of its encoder outputs has a
# gap of exactly zero: quantization loses nothing.
config = ModelConfig(input_shape=(8,), num_hiddens=4, quantizer="fixed",
                     codebook_n=65, codebook_d=4, seed=3)
state = init_state(config)
layer = state.quantizer
layer.w_in.data[:] = np.eye(4)
layer.b_in.data[:] = 0.0
layer.w_out.data[:] = np.eye(4)
layer.b_out.data[:] = 0.0
layer.codebook.embeddings.data[:64] = layer.project_in(encode(probe, state)).data
print(f"gap with a lossless codebook: {gradient_gap(probe, state)}")

# Track the gap during training for each structure of capacity 64.
results = run_fixed_sweep(dataset, 64, budget=2000, seed=0, base=base,
                          gap_every=500, record_every=1)
print("\ngradient gap on a fixed probe batch (probed every 500 steps)")
header = "structure  " + "  ".join(f"step{t.step:5d}" for t in results[0].gap_trace)
print(header)
for r in results:
    row = "  ".join(f"{t.gap:9.4f}" for t in r.gap_trace)
    print(f"{r.spec.label:>9}  {row}")
print("\nquantization loss at the same probes")
for r in results:
    by_step = dict(r.quant_loss_trace)
    row = "  ".join(f"{by_step[t.step]:9.5f}" for t in r.gap_trace)
    print(f"{r.spec.label:>9}  {row}")
final_gaps = {r.spec.label: r.gap_trace[-1].gap for r in results}
print(f"\nby the end of training the one-dimensional codebook carries the "
      f"largest gap ({final_gaps['[64,1]']:.4f}) despite its low quantization loss")
