#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sblab/attention.hpp"
#include "sblab/tensor.hpp"

namespace sblab {

enum class Activation { prelu, gelu };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& s);

struct ModelConfig {
    int n_layers = 2;
    int n_heads = 2;
    int d_model = 64;
    int block_size = 128;
    int vocab_size = 256;
    Activation activation = Activation::prelu;
    double init_std = 0.02;
    bool tie_embedding = false;
    BiasProtocol bias;

    int d_head() const;
    void validate() const;
};

struct LayerParams {
    TensorPtr ln1_gain, ln1_bias;
    std::vector<AttentionHead> heads;
    // Learnable-bias mode only: per-head trained bias vectors.
    std::vector<TensorPtr> learn_b_q, learn_b_v;
    TensorPtr ln2_gain, ln2_bias;
    TensorPtr fc1, fc2;   // (C, 4C), (4C, C)
    TensorPtr slopes;     // (4C), prelu only
};

// Pre-norm decoder-only transformer. Attention projections carry no additive
// parameters of their own (gain/bias live in the layer norms); query/value
// biases come from the per-step protocol draw, or from trained parameters in
// learnable mode.
struct Model {
    ModelConfig cfg;
    TensorPtr tok_emb;   // (V, C)
    TensorPtr pos_emb;   // (block, C)
    std::vector<LayerParams> layers;
    TensorPtr lnf_gain, lnf_bias;
    TensorPtr head_w;    // (C, V); null when tied to tok_emb

    static Model init(const ModelConfig& cfg, Rng& rng);

    // Ordered parameter registry; order is fixed and defines the flat
    // parameter vector used by optimizers and checkpoints.
    std::vector<std::pair<std::string, TensorPtr>> params() const;
    int64_t param_count() const;
};

// Closed-form parameter count for a config; the registry must sum to this.
int64_t expected_param_count(const ModelConfig& cfg);

// ids: B*T tokens. Returns (B, T, V) logits. `draw` supplies the attention
// biases (ignored in learnable mode, may be empty in symmetric mode).
TensorPtr forward_logits(Tape* tape, const Model& m, const std::vector<int32_t>& ids,
                         int64_t B, int64_t T, const BiasDraw& draw);

// Mean next-token cross-entropy in nats over targets (B*T ids).
TensorPtr forward_loss(Tape* tape, const Model& m, const std::vector<int32_t>& ids,
                       const std::vector<int32_t>& targets, int64_t B, int64_t T,
                       const BiasDraw& draw);

// Applies a joint symmetry rotation to one head's query-key or value-output
// pair in place.
enum class Sector { qk, vo };
void rotate_model_head(Model& m, int layer, int head, Sector sector,
                       const std::vector<double>& rot,
                       RotationSide side = RotationSide::right);

}  // namespace sblab
