#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sblab/tensor.hpp"

using namespace sblab;

namespace {

TensorPtr randn(std::vector<int64_t> shape, uint64_t seed, double std = 1.0, bool rg = true) {
    Rng rng(seed, Stream::misc);
    return Tensor::gaussian(std::move(shape), std, rng, rg);
}

}  // namespace

TEST_CASE("matmul matches hand-computed values") {
    auto a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = Tensor::from({3, 2}, {7, 8, 9, 10, 11, 12});
    auto c = matmul(nullptr, a, b);
    CHECK(c->shape == std::vector<int64_t>{2, 2});
    CHECK(c->value[0] == doctest::Approx(58).epsilon(1e-15));
    CHECK(c->value[1] == doctest::Approx(64).epsilon(1e-15));
    CHECK(c->value[2] == doctest::Approx(139).epsilon(1e-15));
    CHECK(c->value[3] == doctest::Approx(154).epsilon(1e-15));
}

TEST_CASE("matmul flattens leading dims") {
    auto a = randn({2, 3, 4}, 1);
    auto b = randn({4, 5}, 2);
    auto c = matmul(nullptr, a, b);
    CHECK(c->shape == std::vector<int64_t>{2, 3, 5});
    // row (1,2,:) computed by hand
    for (int64_t j = 0; j < 5; ++j) {
        double want = 0.0;
        for (int64_t k = 0; k < 4; ++k) want += a->value[(1 * 3 + 2) * 4 + k] * b->value[k * 5 + j];
        CHECK(c->value[(1 * 3 + 2) * 5 + j] == doctest::Approx(want).epsilon(1e-14));
    }
}

TEST_CASE("bmm plain and transposed match explicit loops") {
    auto a = randn({3, 2, 4}, 3);
    auto b = randn({3, 4, 5}, 4);
    auto c = bmm(nullptr, a, b);
    for (int64_t t = 0; t < 3; ++t) {
        for (int64_t i = 0; i < 2; ++i) {
            for (int64_t j = 0; j < 5; ++j) {
                double want = 0.0;
                for (int64_t k = 0; k < 4; ++k) {
                    want += a->value[(t * 2 + i) * 4 + k] * b->value[(t * 4 + k) * 5 + j];
                }
                CHECK(c->value[(t * 2 + i) * 5 + j] == doctest::Approx(want).epsilon(1e-13));
            }
        }
    }
    auto bt = randn({3, 5, 4}, 5);
    auto ct = bmm(nullptr, a, bt, true);
    for (int64_t t = 0; t < 3; ++t) {
        for (int64_t i = 0; i < 2; ++i) {
            for (int64_t j = 0; j < 5; ++j) {
                double want = 0.0;
                for (int64_t k = 0; k < 4; ++k) {
                    want += a->value[(t * 2 + i) * 4 + k] * bt->value[(t * 5 + j) * 4 + k];
                }
                CHECK(ct->value[(t * 2 + i) * 5 + j] == doctest::Approx(want).epsilon(1e-13));
            }
        }
    }
}

TEST_CASE("add broadcasts a suffix and reduces its gradient") {
    auto a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    auto b = Tensor::from({3}, {10, 20, 30}, true);
    Tape tape;
    auto c = add(&tape, a, b);
    CHECK(c->value == std::vector<double>{11, 22, 33, 14, 25, 36});
    auto s = sum_all(&tape, c);
    tape.backward(s);
    for (double g : a->grad) CHECK(g == 1.0);
    for (double g : b->grad) CHECK(g == 2.0);
}

TEST_CASE("softmax over a row of zeros is exactly uniform") {
    auto a = Tensor::zeros({2, 3});
    auto p = softmax_rows(nullptr, a);
    for (double v : p->value) CHECK(v == 1.0 / 3.0);
}

TEST_CASE("causal softmax zeroes future positions exactly and rows sum to one") {
    auto a = randn({2, 5, 5}, 6, 2.0, false);
    auto p = softmax_causal(nullptr, a);
    for (int64_t b = 0; b < 2; ++b) {
        for (int64_t i = 0; i < 5; ++i) {
            double row = 0.0;
            for (int64_t j = 0; j < 5; ++j) {
                double v = p->value[(b * 5 + i) * 5 + j];
                if (j > i) {
                    CHECK(v == 0.0);
                } else {
                    CHECK(v > 0.0);
                    row += v;
                }
            }
            CHECK(std::abs(row - 1.0) < 1e-15);
        }
    }
    CHECK_THROWS_AS(softmax_causal(nullptr, randn({2, 3, 4}, 7, 1.0, false)), ShapeError);
}

TEST_CASE("cross entropy of uniform logits is log V") {
    auto logits = Tensor::full({4, 7}, 0.25);
    std::vector<int32_t> targets = {0, 3, 6, 2};
    auto l = cross_entropy_mean(nullptr, logits, targets);
    CHECK(l->value[0] == doctest::Approx(std::log(7.0)).epsilon(1e-14));
}

TEST_CASE("cross entropy backward is softmax minus one-hot over N") {
    auto logits = randn({3, 5}, 8);
    std::vector<int32_t> targets = {4, 0, 2};
    Tape tape;
    auto l = cross_entropy_mean(&tape, logits, targets);
    tape.backward(l);
    for (int64_t r = 0; r < 3; ++r) {
        const double* x = logits->value.data() + r * 5;
        double mx = *std::max_element(x, x + 5);
        double denom = 0.0;
        for (int64_t j = 0; j < 5; ++j) denom += std::exp(x[j] - mx);
        for (int64_t j = 0; j < 5; ++j) {
            double p = std::exp(x[j] - mx) / denom;
            double want = (p - (targets[r] == j ? 1.0 : 0.0)) / 3.0;
            CHECK(logits->grad[r * 5 + j] == doctest::Approx(want).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(cross_entropy_mean(nullptr, logits, std::vector<int32_t>{9, 0, 1}), Error);
}

TEST_CASE("layer norm standardizes each row") {
    auto x = randn({4, 6}, 9, 3.0, false);
    auto g = Tensor::full({6}, 1.0);
    auto b = Tensor::zeros({6});
    auto y = layer_norm(nullptr, x, g, b);
    for (int64_t r = 0; r < 4; ++r) {
        double mean = 0.0, var = 0.0;
        for (int64_t j = 0; j < 6; ++j) mean += y->value[r * 6 + j];
        mean /= 6.0;
        for (int64_t j = 0; j < 6; ++j) {
            double d = y->value[r * 6 + j] - mean;
            var += d * d;
        }
        var /= 6.0;
        CHECK(std::abs(mean) < 1e-14);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // eps=1e-5 shrinks it slightly
    }
}

TEST_CASE("embedding scatters gradients only into used rows") {
    auto table = randn({6, 3}, 10);
    std::vector<int32_t> ids = {1, 4, 1, 0};
    Tape tape;
    auto e = embedding(&tape, table, ids, 2, 2);
    CHECK(e->shape == std::vector<int64_t>{2, 2, 3});
    auto s = sum_all(&tape, e);
    tape.backward(s);
    for (int64_t v = 0; v < 6; ++v) {
        double expected = (v == 1) ? 2.0 : (v == 4 || v == 0) ? 1.0 : 0.0;
        for (int64_t j = 0; j < 3; ++j) CHECK(table->grad[v * 3 + j] == expected);
    }
    CHECK_THROWS_AS(embedding(nullptr, table, std::vector<int32_t>{6, 0, 0, 0}, 2, 2), Error);
}

TEST_CASE("gelu matches the erf closed form and prelu handles zero") {
    auto x = Tensor::from({5}, {-2.0, -0.5, 0.0, 0.5, 2.0}, true);
    auto y = gelu(nullptr, x);
    for (int i = 0; i < 5; ++i) {
        double v = x->value[i];
        double want = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
        CHECK(y->value[i] == doctest::Approx(want).epsilon(1e-15));
    }

    auto slopes = Tensor::full({5}, 0.25, true);
    Tape tape;
    auto z = prelu(&tape, x, slopes);
    CHECK(z->value[0] == -0.5);
    CHECK(z->value[2] == 0.0);
    CHECK(z->value[4] == 2.0);
    auto s = sum_all(&tape, z);
    tape.backward(s);
    CHECK(x->grad[0] == 0.25);
    CHECK(x->grad[2] == 0.25);  // subgradient at 0 takes the slope branch
    CHECK(x->grad[4] == 1.0);
    CHECK(slopes->grad[0] == -2.0);
    CHECK(slopes->grad[2] == 0.0);
}

TEST_CASE("shape errors name the op and both shapes") {
    auto a = randn({2, 3}, 11, 1.0, false);
    auto b = randn({4, 2}, 12, 1.0, false);
    try {
        matmul(nullptr, a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("(2,3)") != std::string::npos);
        CHECK(msg.find("(4,2)") != std::string::npos);
    }
}

namespace {

// Two-layer MLP with every primitive a transformer needs; used by the
// determinism and double-accumulation checks.
TensorPtr mlp_loss(Tape* tape, const TensorPtr& x, const TensorPtr& w1, const TensorPtr& s1,
                   const TensorPtr& g1, const TensorPtr& b1, const TensorPtr& w2,
                   const std::vector<int32_t>& targets) {
    auto h = matmul(tape, x, w1);
    auto a = prelu(tape, h, s1);
    auto n = layer_norm(tape, a, g1, b1);
    auto act = gelu(tape, n);
    auto logits = matmul(tape, act, w2);
    return cross_entropy_mean(tape, logits, targets);
}

}  // namespace

TEST_CASE("backward is bit-deterministic and accumulates exactly on reuse") {
    auto x = randn({4, 6}, 13, 1.0, false);
    auto w1 = randn({6, 8}, 14, 0.5);
    auto s1 = Tensor::full({8}, 0.25, true);
    auto g1 = Tensor::full({8}, 1.0, true);
    auto b1 = Tensor::zeros({8}, true);
    auto w2 = randn({8, 5}, 15, 0.5);
    std::vector<int32_t> targets = {0, 1, 2, 3};

    Tape t1;
    auto l1 = mlp_loss(&t1, x, w1, s1, g1, b1, w2, targets);
    t1.backward(l1);
    auto grads1 = w1->grad;

    w1->zero_grad();
    s1->zero_grad();
    g1->zero_grad();
    b1->zero_grad();
    w2->zero_grad();
    Tape t2;
    auto l2 = mlp_loss(&t2, x, w1, s1, g1, b1, w2, targets);
    t2.backward(l2);
    CHECK(l1->value[0] == l2->value[0]);
    for (size_t i = 0; i < grads1.size(); ++i) CHECK(w1->grad[i] == grads1[i]);

    // Second backward over the same tape doubles leaf grads exactly.
    t2.backward(l2);
    for (size_t i = 0; i < grads1.size(); ++i) CHECK(w1->grad[i] == 2.0 * grads1[i]);
}

TEST_CASE("exp, scale, mul, sum compose with correct gradients") {
    auto x = Tensor::from({3}, {0.1, -0.2, 0.3}, true);
    Tape tape;
    auto y = exp_op(&tape, scale(&tape, x, 2.0));
    auto z = mul(&tape, y, y);  // exp(2x)^2 = exp(4x)
    auto s = sum_all(&tape, z);
    tape.backward(s);
    for (int i = 0; i < 3; ++i) {
        double want = 4.0 * std::exp(4.0 * x->value[i]);
        CHECK(x->grad[i] == doctest::Approx(want).epsilon(1e-13));
    }
}
