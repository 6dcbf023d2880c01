"""Latent-bottleneck attention for graphs.

Node features concatenated with random-walk positional embeddings form the
input array; a small learnable latent attends over it, refines itself with
self-attention, and is decoded by a task-shaped query carrying smoothed
node features (node/link) or a learnable vector (graph classification).
"""

from .autograd import Tensor, backward
from .encodings import SmoothingConfig, appnp_smooth, build_input_array, \
    build_output_query, compute_rwpe, fourier_pe, sgc_smooth
from .graphs import (EdgeSplit, FoldPlan, Graph, NodeSplit, load_portable,
                     load_tu, make_edge_split, make_fold_plan, make_node_split,
                     normalized_adjacency, random_walk_operator,
                     sample_negative_edges)
from .model import (ModelConfig, ModelOutput, decode_edges, forward,
                    init_params, load_checkpoint, save_checkpoint)
from .optim import AdamState, adam_step
from .training import (RunResult, TrainSchedule, accuracy, average_precision,
                       graph_ce_loss, link_recon_loss, node_ce_loss, roc_auc,
                       train_graph, train_link, train_node)

__all__ = [n for n in dir() if not n.startswith("_")]
