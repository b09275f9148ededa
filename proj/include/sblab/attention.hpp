#pragma once

#include <vector>

#include "sblab/tensor.hpp"

namespace sblab {

enum class BiasMode { symmetric, bq_only, bq_bv };

std::string bias_mode_name(BiasMode m);
BiasMode bias_mode_from_name(const std::string& s);

// Per-batch additive bias protocol for queries and values. Query bias
// components are drawn with a per-component stddev that ramps linearly from
// sigma_q_lo at component 0 to sigma_q_hi at component d_head-1 (both
// endpoints included); value bias components share one stddev. At inference
// the biases collapse to their exact means.
struct BiasProtocol {
    BiasMode mode = BiasMode::symmetric;
    double mu_q = 0.5;
    double sigma_q_lo = 0.05;
    double sigma_q_hi = 0.15;
    double mu_v = 0.0;
    double sigma_v = 0.02;
    bool learnable = false;           // biases become trained parameters
    bool share_across_layers = false; // one draw reused by every layer
};

double sigma_q_at(const BiasProtocol& p, int i, int d_head);
std::vector<double> sigma_q_ramp(const BiasProtocol& p, int d_head);

// One step's bias vectors, indexed [layer][head][component].
struct BiasDraw {
    std::vector<std::vector<std::vector<double>>> b_q;
    std::vector<std::vector<std::vector<double>>> b_v;
    bool empty() const { return b_q.empty(); }
};

// Fresh per-step draw. Draw order is fixed (layer-major, then head, b_q
// components before b_v) so a given (seed, step) always produces the same
// vectors. Symmetric mode consumes no randomness and returns zero vectors.
BiasDraw sample_biases(const BiasProtocol& p, int n_layers, int n_heads, int d_head, Rng& rng);

// Deterministic inference-time draw: each bias is exactly its mean.
BiasDraw inference_biases(const BiasProtocol& p, int n_layers, int n_heads, int d_head);

// One attention head. Weights are stored so the symmetry acts on the right:
// w_q, w_k, w_v are (d_model, d_head) and w_o is (d_head, d_model).
struct AttentionHead {
    TensorPtr w_q, w_k, w_v, w_o;
};

AttentionHead init_attention_head(int d_model, int d_head, double std, Rng& rng);

// Causal multi-head attention over pre-normalized input x: (B, T, C).
// biases_q/biases_v are per-head additive vectors (null entries skipped);
// scores are scaled by 1/sqrt(d_head). Returns the summed head outputs
// (B, T, C).
TensorPtr attention_block(Tape* tape, const TensorPtr& x,
                          const std::vector<AttentionHead>& heads,
                          const std::vector<TensorPtr>& biases_q,
                          const std::vector<TensorPtr>& biases_v);

// Causal attention weights (B, T, T) of a single head. b_q/b_k may be null.
// The protocol never sets a key bias; the parameter exists because a constant
// key bias shifts every score in a query row equally and cancels in the
// softmax, which callers can verify through this exact code path.
TensorPtr head_attention_weights(Tape* tape, const TensorPtr& x, const AttentionHead& head,
                                 const TensorPtr& b_q, const TensorPtr& b_k);

// Which side the rotation group acts on. `right` matches the storage
// convention above (W -> W R); `left` applies the transpose action
// (W -> W R^T), for comparing against formulations written for transposed
// weight layouts.
enum class RotationSide { right, left };

// Uniformly-ish random proper rotation (det +1), row-major d x d.
std::vector<double> random_rotation(int d, Rng& rng);

// Joint rotation of the query-key pair: w_q -> w_q R, w_k -> w_k R.
void rotate_qk(AttentionHead& head, const std::vector<double>& rot, RotationSide side = RotationSide::right);

// Joint rotation of the value-output pair: w_v -> w_v R, w_o -> R^T w_o.
void rotate_vo(AttentionHead& head, const std::vector<double>& rot, RotationSide side = RotationSide::right);

}  // namespace sblab
