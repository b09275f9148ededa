#include "sblab/attention.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace sblab {

std::string bias_mode_name(BiasMode m) {
    switch (m) {
        case BiasMode::symmetric: return "symmetric";
        case BiasMode::bq_only: return "bq_only";
        case BiasMode::bq_bv: return "bq_bv";
    }
    return "unknown";
}

BiasMode bias_mode_from_name(const std::string& s) {
    if (s == "symmetric") return BiasMode::symmetric;
    if (s == "bq_only") return BiasMode::bq_only;
    if (s == "bq_bv") return BiasMode::bq_bv;
    throw ConfigError("unknown bias mode '" + s + "' (expected symmetric|bq_only|bq_bv)");
}

double sigma_q_at(const BiasProtocol& p, int i, int d_head) {
    if (d_head <= 0) throw ConfigError("sigma_q_at: d_head must be positive");
    if (i < 0 || i >= d_head) throw ConfigError("sigma_q_at: component index out of range");
    if (d_head == 1) return p.sigma_q_lo;
    return p.sigma_q_lo +
           static_cast<double>(i) * (p.sigma_q_hi - p.sigma_q_lo) / static_cast<double>(d_head - 1);
}

std::vector<double> sigma_q_ramp(const BiasProtocol& p, int d_head) {
    std::vector<double> out(static_cast<size_t>(d_head));
    for (int i = 0; i < d_head; ++i) out[static_cast<size_t>(i)] = sigma_q_at(p, i, d_head);
    return out;
}

namespace {

void validate_protocol(const BiasProtocol& p) {
    if (p.sigma_q_lo < 0 || p.sigma_q_hi < 0 || p.sigma_v < 0) {
        throw ConfigError("bias protocol: sigmas must be non-negative");
    }
}

}  // namespace

BiasDraw sample_biases(const BiasProtocol& p, int n_layers, int n_heads, int d_head, Rng& rng) {
    validate_protocol(p);
    BiasDraw draw;
    draw.b_q.assign(static_cast<size_t>(n_layers), {});
    draw.b_v.assign(static_cast<size_t>(n_layers), {});
    bool want_q = p.mode != BiasMode::symmetric;
    bool want_v = p.mode == BiasMode::bq_bv;
    auto ramp = sigma_q_ramp(p, d_head);
    int layers_to_draw = p.share_across_layers ? 1 : n_layers;
    for (int l = 0; l < layers_to_draw; ++l) {
        auto& lq = draw.b_q[static_cast<size_t>(l)];
        auto& lv = draw.b_v[static_cast<size_t>(l)];
        lq.assign(static_cast<size_t>(n_heads), std::vector<double>(static_cast<size_t>(d_head), 0.0));
        lv.assign(static_cast<size_t>(n_heads), std::vector<double>(static_cast<size_t>(d_head), 0.0));
        for (int h = 0; h < n_heads; ++h) {
            if (want_q) {
                for (int i = 0; i < d_head; ++i) {
                    lq[static_cast<size_t>(h)][static_cast<size_t>(i)] =
                        p.mu_q + ramp[static_cast<size_t>(i)] * rng.normal();
                }
            }
            if (want_v) {
                for (int i = 0; i < d_head; ++i) {
                    lv[static_cast<size_t>(h)][static_cast<size_t>(i)] = p.mu_v + p.sigma_v * rng.normal();
                }
            }
        }
    }
    for (int l = layers_to_draw; l < n_layers; ++l) {
        draw.b_q[static_cast<size_t>(l)] = draw.b_q[0];
        draw.b_v[static_cast<size_t>(l)] = draw.b_v[0];
    }
    return draw;
}

BiasDraw inference_biases(const BiasProtocol& p, int n_layers, int n_heads, int d_head) {
    validate_protocol(p);
    BiasDraw draw;
    double q = p.mode != BiasMode::symmetric ? p.mu_q : 0.0;
    double v = p.mode == BiasMode::bq_bv ? p.mu_v : 0.0;
    draw.b_q.assign(static_cast<size_t>(n_layers),
                    std::vector<std::vector<double>>(
                        static_cast<size_t>(n_heads),
                        std::vector<double>(static_cast<size_t>(d_head), q)));
    draw.b_v.assign(static_cast<size_t>(n_layers),
                    std::vector<std::vector<double>>(
                        static_cast<size_t>(n_heads),
                        std::vector<double>(static_cast<size_t>(d_head), v)));
    return draw;
}

AttentionHead init_attention_head(int d_model, int d_head, double std, Rng& rng) {
    AttentionHead h;
    h.w_q = Tensor::gaussian({d_model, d_head}, std, rng, true);
    h.w_k = Tensor::gaussian({d_model, d_head}, std, rng, true);
    h.w_v = Tensor::gaussian({d_model, d_head}, std, rng, true);
    h.w_o = Tensor::gaussian({d_head, d_model}, std, rng, true);
    return h;
}

namespace {

TensorPtr head_output(Tape* tape, const TensorPtr& x, const AttentionHead& head,
                      const TensorPtr& b_q, const TensorPtr& b_v) {
    double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(head.w_q->dim(-1)));
    auto q = matmul(tape, x, head.w_q);
    if (b_q) q = add(tape, q, b_q);
    auto k = matmul(tape, x, head.w_k);
    auto v = matmul(tape, x, head.w_v);
    if (b_v) v = add(tape, v, b_v);
    auto scores = scale(tape, bmm(tape, q, k, true), inv_sqrt_dk);
    auto att = softmax_causal(tape, scores);
    auto mix = bmm(tape, att, v);
    return matmul(tape, mix, head.w_o);
}

}  // namespace

TensorPtr attention_block(Tape* tape, const TensorPtr& x,
                          const std::vector<AttentionHead>& heads,
                          const std::vector<TensorPtr>& biases_q,
                          const std::vector<TensorPtr>& biases_v) {
    if (heads.empty()) throw ConfigError("attention_block: need at least one head");
    if (biases_q.size() != heads.size() || biases_v.size() != heads.size()) {
        throw ShapeError("attention_block: bias lists must have one entry per head");
    }
    TensorPtr out;
    for (size_t h = 0; h < heads.size(); ++h) {
        auto y = head_output(tape, x, heads[h], biases_q[h], biases_v[h]);
        out = out ? add(tape, out, y) : y;
    }
    return out;
}

TensorPtr head_attention_weights(Tape* tape, const TensorPtr& x, const AttentionHead& head,
                                 const TensorPtr& b_q, const TensorPtr& b_k) {
    double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(head.w_q->dim(-1)));
    auto q = matmul(tape, x, head.w_q);
    if (b_q) q = add(tape, q, b_q);
    auto k = matmul(tape, x, head.w_k);
    if (b_k) k = add(tape, k, b_k);
    auto scores = scale(tape, bmm(tape, q, k, true), inv_sqrt_dk);
    return softmax_causal(tape, scores);
}

std::vector<double> random_rotation(int d, Rng& rng) {
    if (d < 1) throw ConfigError("random_rotation: d must be positive");
    Eigen::MatrixXd g(d, d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) g(i, j) = rng.normal();
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    // Fix the QR sign ambiguity, then force det = +1.
    for (int j = 0; j < d; ++j) {
        if (r(j, j) < 0) q.col(j) *= -1.0;
    }
    if (q.determinant() < 0) q.col(d - 1) *= -1.0;
    std::vector<double> out(static_cast<size_t>(d) * static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) out[static_cast<size_t>(i * d + j)] = q(i, j);
    }
    return out;
}

namespace {

// In-place W (n x d) -> W M with M = rot or rot^T.
void right_multiply(TensorPtr& w, const std::vector<double>& rot, bool transpose_rot) {
    int64_t d = w->dim(-1);
    if (static_cast<int64_t>(rot.size()) != d * d) {
        throw ShapeError("rotation matrix size does not match weight trailing dim " +
                         std::to_string(d));
    }
    int64_t n = w->numel() / d;
    std::vector<double> out(w->value.size());
    if (transpose_rot) {
        gemm_nt(n, d, d, w->value.data(), rot.data(), out.data());
    } else {
        gemm_nn(n, d, d, w->value.data(), rot.data(), out.data());
    }
    w->value = std::move(out);
}

// In-place W (d x n) -> M W with M = rot^T or rot.
void left_multiply(TensorPtr& w, const std::vector<double>& rot, bool transpose_rot) {
    int64_t d = w->dim(0);
    if (static_cast<int64_t>(rot.size()) != d * d) {
        throw ShapeError("rotation matrix size does not match weight leading dim " +
                         std::to_string(d));
    }
    int64_t n = w->numel() / d;
    std::vector<double> out(w->value.size());
    if (transpose_rot) {
        gemm_tn(d, n, d, rot.data(), w->value.data(), out.data());
    } else {
        gemm_nn(d, n, d, rot.data(), w->value.data(), out.data());
    }
    w->value = std::move(out);
}

}  // namespace

void rotate_qk(AttentionHead& head, const std::vector<double>& rot, RotationSide side) {
    bool t = side == RotationSide::left;
    right_multiply(head.w_q, rot, t);
    right_multiply(head.w_k, rot, t);
}

void rotate_vo(AttentionHead& head, const std::vector<double>& rot, RotationSide side) {
    bool t = side == RotationSide::left;
    right_multiply(head.w_v, rot, t);
    // w_o is (d_head, d_model): the inverse rotation acts from the left.
    left_multiply(head.w_o, rot, !t);
}

}  // namespace sblab
