#!/usr/bin/env python3
# The model, one mechanism at a time: intent prototypes, relation-aware
# KG aggregation, the masked graph transformer, Gumbel top-k knowledge
# sampling, light aggregation, and the local-global contrastive loss.

import numpy as np

from kgtn import autodiff as ad
from kgtn import denoise, intents
from kgtn.config import ExperimentConfig
from kgtn.data import synthetic_dataset
from kgtn.training import ModelParameters

rng = np.random.default_rng(0)
ds = synthetic_dataset(12, 10, 16, 2, density=0.5, seed=3)
cfg = ExperimentConfig(embed_dim=8, n_intents=4, n_heads=2, depth=1, agg_depth=2,
                       k_top=2, batch_size=32).validate()
params = ModelParameters.initialize(ds.n_users, ds.n_entities, ds.n_relations, cfg, rng)

# --- intent prototypes -----------------------------------------------------
# Each node is softly assigned to K learnable prototypes; the intent-aware
# embedding is the assignment-weighted prototype mixture.
assign = intents.intent_assignment(params.user_emb, params.intent_user)
print("assignment rows sum to", assign.values.sum(axis=1)[:3])
mixed = intents.intent_mix(params.user_emb, params.intent_user)
print("intent-aware embedding shape:", mixed.values.shape)

# --- relation-aware KG aggregation ------------------------------------------
# Neighbor tails are gated elementwise by their relation embedding and
# weighted by attention; empty heads pass through unchanged.
edges = ds.kg.full_edges()
beta = intents.kg_attention(params.entity_emb, params.relation_emb, edges)
head0 = slice(edges.offsets[0], edges.offsets[1])
print("attention over item 0's KG slots:", beta.values[head0], "sum:", beta.values[head0].sum())
agg = intents.kg_aggregate(params.entity_emb, params.relation_emb, edges)
print("aggregated entities shape:", agg.values.shape)

# --- masked graph transformer -----------------------------------------------
# Attention logits exist only on observed user-item pairs; heads are
# concatenated back to dimension d. Propagation then feeds the per-layer
# intent-aware readout.
state = intents.forward_global(
    params.user_emb, params.entity_emb, params.relation_emb,
    params.intent_user, params.intent_item,
    params.layer_list(cfg.depth), ds.train_graph, edges, cfg.depth, ds.n_items,
)
print("global layers:", len(state.users), "user matrix:", state.users[-1].values.shape)

# --- Gumbel top-k knowledge sampling ----------------------------------------
# Slot scores come from the intent-aware representations; Gumbel noise on
# the raw logits randomizes the cut, and kept slots retain clean weights.
entity_vals = np.vstack([state.items[-1].values,
                         state.prop_entities.values[ds.n_items:]])
view = denoise.sample_topk(ds.kg, entity_vals, params.relation_emb.values,
                           cfg.k_top, np.random.default_rng(0))
print(f"sampled view keeps {view.n_kept} of {ds.kg.n_triples} slots")
print("dropped slots have zero weight:", (view.beta_hat[~view.kept] == 0).all())

# --- two aggregation tracks and the contrastive objective --------------------
glob = denoise.light_aggregate(state.users[-1], ad.constant(entity_vals),
                               params.relation_emb, view.edges, ds.train_graph,
                               cfg.agg_depth, ds.n_items)
local = denoise.light_aggregate(params.user_emb, params.entity_emb,
                                params.relation_emb, view.edges, ds.train_graph,
                                cfg.agg_depth, ds.n_items)
batch_users = np.arange(6)
batch_items = np.arange(6)
loss = denoise.contrastive_loss(
    glob.gather(batch_users, batch_items),
    local.gather(batch_users, batch_items),
    tau=cfg.tau,
)
print("layer-wise local-global contrastive loss:", float(loss.values))

# Prediction sums the global track's layers and takes inner products.
zu, zi = glob.summed()
print("score(u0, i0) =", float(zu.values[0] @ zi.values[0]))
