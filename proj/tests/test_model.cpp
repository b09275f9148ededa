#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sblab/gradcheck.hpp"
#include "sblab/model.hpp"

using namespace sblab;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_model = 8;
    cfg.block_size = 8;
    cfg.vocab_size = 16;
    return cfg;
}

std::vector<int32_t> ramp_ids(int64_t n, int vocab) {
    std::vector<int32_t> ids(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) ids[static_cast<size_t>(i)] = static_cast<int32_t>((i * 7 + 3) % vocab);
    return ids;
}

}  // namespace

TEST_CASE("config validation rejects bad shapes") {
    ModelConfig cfg = tiny_config();
    cfg.d_model = 9;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.vocab_size = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.bias.learnable = true;  // symmetric + learnable is contradictory
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    CHECK(cfg.d_head() == 4);
}

TEST_CASE("registry total matches the closed-form parameter count") {
    for (bool tie : {false, true}) {
        for (auto act : {Activation::prelu, Activation::gelu}) {
            ModelConfig cfg;
            cfg.n_layers = 3;
            cfg.n_heads = 4;
            cfg.d_model = 16;
            cfg.block_size = 12;
            cfg.vocab_size = 32;
            cfg.tie_embedding = tie;
            cfg.activation = act;
            Rng rng(1, Stream::init);
            auto m = Model::init(cfg, rng);
            CHECK(m.param_count() == expected_param_count(cfg));
        }
    }
    // learnable-bias variants add the bias parameters
    ModelConfig cfg = tiny_config();
    cfg.bias.mode = BiasMode::bq_bv;
    cfg.bias.learnable = true;
    Rng rng(2, Stream::init);
    auto m = Model::init(cfg, rng);
    CHECK(m.param_count() == expected_param_count(cfg));
    bool saw_bq = false, saw_bv = false;
    for (auto& [name, p] : m.params()) {
        if (name.find(".b_q") != std::string::npos) saw_bq = true;
        if (name.find(".b_v") != std::string::npos) saw_bv = true;
    }
    CHECK(saw_bq);
    CHECK(saw_bv);
}

TEST_CASE("initialization follows the stated scheme") {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 32;
    cfg.block_size = 16;
    cfg.vocab_size = 64;
    Rng rng(3, Stream::init);
    auto m = Model::init(cfg, rng);
    double sum = 0.0, sum2 = 0.0;
    int64_t n = m.tok_emb->numel();
    for (double v : m.tok_emb->value) {
        sum += v;
        sum2 += v * v;
    }
    double mean = sum / static_cast<double>(n);
    double std = std::sqrt(sum2 / static_cast<double>(n) - mean * mean);
    CHECK(std == doctest::Approx(0.02).epsilon(0.15));
    for (double v : m.layers[0].ln1_gain->value) CHECK(v == 1.0);
    for (double v : m.layers[0].ln1_bias->value) CHECK(v == 0.0);
    for (double v : m.layers[0].slopes->value) CHECK(v == 0.25);

    Rng rng2(3, Stream::init);
    auto m2 = Model::init(cfg, rng2);
    CHECK(m2.tok_emb->value == m.tok_emb->value);
    CHECK(m2.layers[1].fc2->value == m.layers[1].fc2->value);
}

TEST_CASE("loss at random init is close to log vocab") {
    ModelConfig cfg = tiny_config();
    Rng rng(4, Stream::init);
    auto m = Model::init(cfg, rng);
    int64_t B = 2, T = 8;
    auto ids = ramp_ids(B * T, cfg.vocab_size);
    auto targets = ramp_ids(B * T, cfg.vocab_size);
    auto draw = inference_biases(cfg.bias, cfg.n_layers, cfg.n_heads, cfg.d_head());
    auto loss = forward_loss(nullptr, m, ids, targets, B, T, draw);
    CHECK(std::abs(loss->value[0] - std::log(16.0)) < 0.1);

    // forward is deterministic
    auto again = forward_loss(nullptr, m, ids, targets, B, T, draw);
    CHECK(loss->value[0] == again->value[0]);
}

TEST_CASE("full model passes the finite-difference check") {
    ModelConfig cfg = tiny_config();
    cfg.bias.mode = BiasMode::bq_bv;
    Rng rng(5, Stream::init);
    auto m = Model::init(cfg, rng);
    int64_t B = 2, T = 5;
    auto ids = ramp_ids(B * T, cfg.vocab_size);
    auto targets = ramp_ids(B * T, cfg.vocab_size);
    Rng brng(6, Stream::biases);
    auto draw = sample_biases(cfg.bias, cfg.n_layers, cfg.n_heads, cfg.d_head(), brng);
    GradCheckOptions opts;
    opts.max_elems_per_param = 6;
    auto res = grad_check(
        [&](Tape* t) { return forward_loss(t, m, ids, targets, B, T, draw); }, m.params(), opts);
    INFO("max rel err ", res.max_rel_err, " ", res.failure);
    CHECK(res.pass);
}

TEST_CASE("tied head shares the embedding and still passes grad check") {
    ModelConfig cfg = tiny_config();
    cfg.tie_embedding = true;
    Rng rng(7, Stream::init);
    auto m = Model::init(cfg, rng);
    CHECK(m.head_w == nullptr);
    int64_t B = 2, T = 4;
    auto ids = ramp_ids(B * T, cfg.vocab_size);
    auto targets = ramp_ids(B * T, cfg.vocab_size);
    BiasDraw draw = inference_biases(cfg.bias, cfg.n_layers, cfg.n_heads, cfg.d_head());
    GradCheckOptions opts;
    opts.max_elems_per_param = 8;
    auto res = grad_check(
        [&](Tape* t) { return forward_loss(t, m, ids, targets, B, T, draw); }, m.params(), opts);
    INFO("max rel err ", res.max_rel_err, " ", res.failure);
    CHECK(res.pass);
}

TEST_CASE("learnable biases receive gradients") {
    ModelConfig cfg = tiny_config();
    cfg.bias.mode = BiasMode::bq_bv;
    cfg.bias.learnable = true;
    Rng rng(8, Stream::init);
    auto m = Model::init(cfg, rng);
    CHECK(m.layers[0].learn_b_q[0]->value[0] == cfg.bias.mu_q);
    int64_t B = 2, T = 4;
    auto ids = ramp_ids(B * T, cfg.vocab_size);
    auto targets = ramp_ids(B * T, cfg.vocab_size);
    Tape tape;
    auto loss = forward_loss(&tape, m, ids, targets, B, T, BiasDraw{});
    tape.backward(loss);
    double gq = 0.0, gv = 0.0;
    for (double g : m.layers[0].learn_b_q[0]->grad) gq += std::abs(g);
    for (double g : m.layers[0].learn_b_v[0]->grad) gv += std::abs(g);
    CHECK(gq > 0.0);
    CHECK(gv > 0.0);
}

TEST_CASE("symmetric model loss is invariant under joint head rotations") {
    ModelConfig cfg = tiny_config();
    cfg.n_layers = 2;
    Rng rng(9, Stream::init);
    auto m = Model::init(cfg, rng);
    int64_t B = 2, T = 6;
    auto ids = ramp_ids(B * T, cfg.vocab_size);
    auto targets = ramp_ids(B * T, cfg.vocab_size);
    BiasDraw draw;  // symmetric: unused
    double base = forward_loss(nullptr, m, ids, targets, B, T, draw)->value[0];

    Rng rot_rng(10, Stream::misc);
    for (int layer = 0; layer < cfg.n_layers; ++layer) {
        for (int head = 0; head < cfg.n_heads; ++head) {
            rotate_model_head(m, layer, head, Sector::qk, random_rotation(cfg.d_head(), rot_rng));
            rotate_model_head(m, layer, head, Sector::vo, random_rotation(cfg.d_head(), rot_rng));
        }
    }
    double after = forward_loss(nullptr, m, ids, targets, B, T, draw)->value[0];
    CHECK(std::abs(after - base) < 1e-9);
}

TEST_CASE("query-biased model loss moves under a query-key rotation") {
    ModelConfig cfg = tiny_config();
    cfg.bias.mode = BiasMode::bq_only;
    Rng rng(11, Stream::init);
    auto m = Model::init(cfg, rng);
    int64_t B = 2, T = 6;
    auto ids = ramp_ids(B * T, cfg.vocab_size);
    auto targets = ramp_ids(B * T, cfg.vocab_size);
    auto draw = inference_biases(cfg.bias, cfg.n_layers, cfg.n_heads, cfg.d_head());
    double base = forward_loss(nullptr, m, ids, targets, B, T, draw)->value[0];
    Rng rot_rng(12, Stream::misc);
    rotate_model_head(m, 0, 0, Sector::qk, random_rotation(cfg.d_head(), rot_rng));
    double after = forward_loss(nullptr, m, ids, targets, B, T, draw)->value[0];
    CHECK(std::abs(after - base) > 0.0);
}

TEST_CASE("sequence length beyond the block size is rejected") {
    ModelConfig cfg = tiny_config();
    Rng rng(13, Stream::init);
    auto m = Model::init(cfg, rng);
    auto ids = ramp_ids(2 * 9, cfg.vocab_size);
    CHECK_THROWS_AS(forward_logits(nullptr, m, ids, 2, 9, BiasDraw{}), ShapeError);
}
