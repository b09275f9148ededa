#include "sblab/model.hpp"

namespace sblab {

std::string activation_name(Activation a) {
    return a == Activation::prelu ? "prelu" : "gelu";
}

Activation activation_from_name(const std::string& s) {
    if (s == "prelu") return Activation::prelu;
    if (s == "gelu") return Activation::gelu;
    throw ConfigError("unknown activation '" + s + "' (expected prelu|gelu)");
}

int ModelConfig::d_head() const {
    if (n_heads <= 0 || d_model <= 0 || d_model % n_heads != 0) {
        throw ConfigError("d_model (" + std::to_string(d_model) +
                          ") must be a positive multiple of n_heads (" + std::to_string(n_heads) +
                          ")");
    }
    return d_model / n_heads;
}

void ModelConfig::validate() const {
    (void)d_head();
    if (n_layers <= 0) throw ConfigError("n_layers must be positive");
    if (block_size <= 0) throw ConfigError("block_size must be positive");
    if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
    if (init_std <= 0) throw ConfigError("init_std must be positive");
    if (bias.learnable && bias.mode == BiasMode::symmetric) {
        throw ConfigError("learnable biases require a non-symmetric bias mode");
    }
}

Model Model::init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    int C = cfg.d_model, dk = cfg.d_head();
    Model m;
    m.cfg = cfg;
    m.tok_emb = Tensor::gaussian({cfg.vocab_size, C}, cfg.init_std, rng, true);
    m.pos_emb = Tensor::gaussian({cfg.block_size, C}, cfg.init_std, rng, true);
    for (int l = 0; l < cfg.n_layers; ++l) {
        LayerParams lp;
        lp.ln1_gain = Tensor::full({C}, 1.0, true);
        lp.ln1_bias = Tensor::zeros({C}, true);
        for (int h = 0; h < cfg.n_heads; ++h) {
            lp.heads.push_back(init_attention_head(C, dk, cfg.init_std, rng));
            if (cfg.bias.learnable) {
                lp.learn_b_q.push_back(Tensor::full({dk}, cfg.bias.mu_q, true));
                bool want_v = cfg.bias.mode == BiasMode::bq_bv;
                lp.learn_b_v.push_back(want_v ? Tensor::full({dk}, cfg.bias.mu_v, true) : nullptr);
            }
        }
        lp.ln2_gain = Tensor::full({C}, 1.0, true);
        lp.ln2_bias = Tensor::zeros({C}, true);
        lp.fc1 = Tensor::gaussian({C, 4 * C}, cfg.init_std, rng, true);
        lp.fc2 = Tensor::gaussian({4 * C, C}, cfg.init_std, rng, true);
        if (cfg.activation == Activation::prelu) {
            lp.slopes = Tensor::full({4 * C}, 0.25, true);
        }
        m.layers.push_back(std::move(lp));
    }
    m.lnf_gain = Tensor::full({C}, 1.0, true);
    m.lnf_bias = Tensor::zeros({C}, true);
    if (!cfg.tie_embedding) {
        m.head_w = Tensor::gaussian({C, cfg.vocab_size}, cfg.init_std, rng, true);
    }
    return m;
}

std::vector<std::pair<std::string, TensorPtr>> Model::params() const {
    std::vector<std::pair<std::string, TensorPtr>> out;
    out.emplace_back("tok_emb", tok_emb);
    out.emplace_back("pos_emb", pos_emb);
    for (size_t l = 0; l < layers.size(); ++l) {
        auto& lp = layers[l];
        std::string pre = "layer" + std::to_string(l) + ".";
        out.emplace_back(pre + "ln1.gain", lp.ln1_gain);
        out.emplace_back(pre + "ln1.bias", lp.ln1_bias);
        for (size_t h = 0; h < lp.heads.size(); ++h) {
            std::string hp = pre + "head" + std::to_string(h) + ".";
            out.emplace_back(hp + "w_q", lp.heads[h].w_q);
            out.emplace_back(hp + "w_k", lp.heads[h].w_k);
            out.emplace_back(hp + "w_v", lp.heads[h].w_v);
            out.emplace_back(hp + "w_o", lp.heads[h].w_o);
            if (cfg.bias.learnable) {
                out.emplace_back(hp + "b_q", lp.learn_b_q[h]);
                if (lp.learn_b_v[h]) out.emplace_back(hp + "b_v", lp.learn_b_v[h]);
            }
        }
        out.emplace_back(pre + "ln2.gain", lp.ln2_gain);
        out.emplace_back(pre + "ln2.bias", lp.ln2_bias);
        out.emplace_back(pre + "fc1", lp.fc1);
        out.emplace_back(pre + "fc2", lp.fc2);
        if (lp.slopes) out.emplace_back(pre + "slopes", lp.slopes);
    }
    out.emplace_back("lnf.gain", lnf_gain);
    out.emplace_back("lnf.bias", lnf_bias);
    if (head_w) out.emplace_back("head_w", head_w);
    return out;
}

int64_t Model::param_count() const {
    int64_t n = 0;
    for (auto& [name, p] : params()) n += p->numel();
    return n;
}

int64_t expected_param_count(const ModelConfig& cfg) {
    cfg.validate();
    int64_t C = cfg.d_model, V = cfg.vocab_size, X = cfg.block_size;
    int64_t dk = cfg.d_head(), H = cfg.n_heads, L = cfg.n_layers;
    int64_t per_layer = 2 * C                    // ln1
                        + H * 4 * C * dk         // w_q, w_k, w_v, w_o
                        + 2 * C                  // ln2
                        + 8 * C * C;             // fc1 + fc2
    if (cfg.activation == Activation::prelu) per_layer += 4 * C;
    if (cfg.bias.learnable) {
        per_layer += H * dk;  // b_q
        if (cfg.bias.mode == BiasMode::bq_bv) per_layer += H * dk;
    }
    int64_t n = V * C + X * C + L * per_layer + 2 * C;
    if (!cfg.tie_embedding) n += C * V;
    return n;
}

namespace {

TensorPtr mlp_block(Tape* tape, const Model& m, const LayerParams& lp, const TensorPtr& x) {
    auto h = matmul(tape, x, lp.fc1);
    TensorPtr act;
    if (m.cfg.activation == Activation::prelu) {
        act = prelu(tape, h, lp.slopes);
    } else {
        act = gelu(tape, h);
    }
    return matmul(tape, act, lp.fc2);
}

}  // namespace

TensorPtr forward_logits(Tape* tape, const Model& m, const std::vector<int32_t>& ids,
                         int64_t B, int64_t T, const BiasDraw& draw) {
    if (T > m.cfg.block_size) {
        throw ShapeError("sequence length " + std::to_string(T) + " exceeds block size " +
                         std::to_string(m.cfg.block_size));
    }
    int C = m.cfg.d_model;
    auto x = embedding(tape, m.tok_emb, ids, B, T);
    // Positions enter as a (T, C) suffix broadcast over the batch.
    auto pos = Tensor::zeros({T, C});
    std::copy(m.pos_emb->value.begin(), m.pos_emb->value.begin() + T * C, pos->value.begin());
    if (m.pos_emb->requires_grad && tape) {
        // Route gradients back into the first T rows of the full table.
        pos->requires_grad = true;
        pos->is_leaf = false;
        auto table = m.pos_emb;
        tape->record("pos_slice", pos, [table, pos, T, C] {
            if (pos->grad.empty()) return;
            table->ensure_grad();
            for (int64_t i = 0; i < T * C; ++i) table->grad[i] += pos->grad[i];
        });
    }
    x = add(tape, x, pos);

    bool use_draw = !m.cfg.bias.learnable;
    if (use_draw && m.cfg.bias.mode != BiasMode::symmetric && draw.empty()) {
        throw ConfigError("forward: bias draw required for mode " +
                          bias_mode_name(m.cfg.bias.mode));
    }
    for (size_t l = 0; l < m.layers.size(); ++l) {
        auto& lp = m.layers[l];
        auto xn = layer_norm(tape, x, lp.ln1_gain, lp.ln1_bias);
        std::vector<TensorPtr> bq(lp.heads.size()), bv(lp.heads.size());
        for (size_t h = 0; h < lp.heads.size(); ++h) {
            if (m.cfg.bias.learnable) {
                bq[h] = lp.learn_b_q[h];
                bv[h] = lp.learn_b_v.empty() ? nullptr : lp.learn_b_v[h];
            } else if (m.cfg.bias.mode != BiasMode::symmetric) {
                bq[h] = Tensor::from({m.cfg.d_head()}, draw.b_q[l][h]);
                if (m.cfg.bias.mode == BiasMode::bq_bv) {
                    bv[h] = Tensor::from({m.cfg.d_head()}, draw.b_v[l][h]);
                }
            }
        }
        auto att = attention_block(tape, xn, lp.heads, bq, bv);
        x = add(tape, x, att);
        auto xn2 = layer_norm(tape, x, lp.ln2_gain, lp.ln2_bias);
        auto mlp = mlp_block(tape, m, lp, xn2);
        x = add(tape, x, mlp);
    }
    auto xf = layer_norm(tape, x, m.lnf_gain, m.lnf_bias);
    if (m.head_w) return matmul(tape, xf, m.head_w);
    // Tied head: logits = xf @ tok_emb^T, batched against a shared table.
    auto logits = Tensor::zeros({B, T, m.cfg.vocab_size},
                                xf->requires_grad || m.tok_emb->requires_grad);
    logits->is_leaf = false;
    int64_t rows = B * T;
    gemm_nt(rows, m.cfg.vocab_size, C, xf->value.data(), m.tok_emb->value.data(),
            logits->value.data());
    if (tape && logits->requires_grad) {
        auto emb = m.tok_emb;
        int64_t V = m.cfg.vocab_size;
        tape->record("tied_head", logits, [xf, emb, logits, rows, C, V] {
            if (logits->grad.empty()) return;
            if (xf->requires_grad) {
                xf->ensure_grad();
                gemm_nn(rows, C, V, logits->grad.data(), emb->value.data(), xf->grad.data(), 1.0,
                        1.0);
            }
            if (emb->requires_grad) {
                emb->ensure_grad();
                gemm_tn(V, C, rows, logits->grad.data(), xf->value.data(), emb->grad.data(), 1.0,
                        1.0);
            }
        });
    }
    return logits;
}

TensorPtr forward_loss(Tape* tape, const Model& m, const std::vector<int32_t>& ids,
                       const std::vector<int32_t>& targets, int64_t B, int64_t T,
                       const BiasDraw& draw) {
    auto logits = forward_logits(tape, m, ids, B, T, draw);
    return cross_entropy_mean(tape, logits, targets);
}

void rotate_model_head(Model& m, int layer, int head, Sector sector,
                       const std::vector<double>& rot, RotationSide side) {
    if (layer < 0 || layer >= static_cast<int>(m.layers.size())) {
        throw ConfigError("rotate_model_head: layer index out of range");
    }
    auto& lp = m.layers[static_cast<size_t>(layer)];
    if (head < 0 || head >= static_cast<int>(lp.heads.size())) {
        throw ConfigError("rotate_model_head: head index out of range");
    }
    if (sector == Sector::qk) {
        rotate_qk(lp.heads[static_cast<size_t>(head)], rot, side);
    } else {
        rotate_vo(lp.heads[static_cast<size_t>(head)], rot, side);
    }
}

}  // namespace sblab
