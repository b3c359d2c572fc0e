"""Sparsity-preserving discrete denoising diffusion for graph generation.

The package is organized as a numpy/scipy library:

- graphs:     sparse graph containers, pair-index arithmetic, batching
- noise:      schedules, marginal transition kernels, sparse corruption,
              vacant-slot sampling, posteriors, the sparsity tail bound
- queries:    query-edge sampling and message-graph construction
- encodings:  spectral / cycle / distance / neighborhood input features
- autodiff:   minimal reverse-mode tape over numpy float64
- network:    the sparse message-passing transformer, loss, gradients,
              optimizer step, checkpointing
- training:   per-sample corruption + epoch loop
- sampling:   chunked reverse steps and full generation
- metrics:    descriptor histograms, TV-kernel MMD, connectivity
- datasets:   synthetic generators, JSONL dataset files, corpus statistics
- reference:  dense / brute-force oracles used by verification and tests
- verify:     desk-scale self-check suites
- cli:        the command-line entry point
"""

from .graphs import (GraphBatch, GraphSpec, SparseGraph, batch, canonicalize,
                     from_dense, num_pairs, pair_from_index, pair_index,
                     permute_nodes, to_dense, unbatch)
from .noise import (LemmaBoundQuery, NoiseSchedule, apply_noise,
                    build_schedule, lemma_bound, lemma_monte_carlo,
                    posterior_distribution, prior_sample, sample_vacant_pairs,
                    transition_matrix)
from .queries import (MessageGraph, QueryEdgeSet, build_message_graph,
                      sample_query_edges, sample_query_pairs)
from .encodings import EncodedFeatures, EncodingConfig, compute_encodings
from .network import (Hyperparams, LossBreakdown, NetworkConfig,
                      NetworkWeights, Prediction, forward, forward_link_pred,
                      gradients, init_network, load_checkpoint, loss,
                      save_checkpoint, train_step)
from .sampling import ChunkPlan, SamplerConfig, denoise_step, generate, plan_chunks
from .metrics import (EvalReport, GraphDescriptors, connectivity_fraction,
                      descriptors, evaluate, mmd2)
from .datasets import dataset_stats, gen_er, gen_sbm, load, save

__version__ = "0.1.0"
