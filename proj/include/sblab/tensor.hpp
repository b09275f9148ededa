#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sblab/common.hpp"

namespace sblab {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major f64 tensor. Gradients live beside the values and are
// allocated lazily on first accumulation.
class Tensor {
  public:
    std::vector<int64_t> shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until ensure_grad()
    bool requires_grad = false;
    bool is_leaf = true;  // false for op outputs; backward() resets their grads
    std::string name;

    Tensor() = default;
    Tensor(std::vector<int64_t> shape, bool requires_grad);

    int64_t numel() const;
    int64_t ndim() const { return static_cast<int64_t>(shape.size()); }
    int64_t dim(int64_t i) const;  // negative indices count from the back
    void ensure_grad();
    void zero_grad();

    static TensorPtr zeros(std::vector<int64_t> shape, bool requires_grad = false);
    static TensorPtr full(std::vector<int64_t> shape, double v, bool requires_grad = false);
    static TensorPtr from(std::vector<int64_t> shape, std::vector<double> data,
                          bool requires_grad = false);
    static TensorPtr scalar(double v, bool requires_grad = false);
    static TensorPtr gaussian(std::vector<int64_t> shape, double std, Rng& rng,
                              bool requires_grad = false);
};

std::string shape_str(const std::vector<int64_t>& s);

// Ordered record of primitive applications. backward(loss) seeds d(loss)=1 and
// replays the recorded closures in reverse. Non-leaf gradients are cleared
// first, so calling backward twice accumulates exactly twice into leaves.
class Tape {
  public:
    void record(const char* op, TensorPtr output, std::function<void()> backward);
    void backward(const TensorPtr& loss);
    void clear();
    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        const char* op;
        TensorPtr output;
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
};

// Primitives. Forward runs eagerly; a backward closure is recorded on `tape`
// when it is non-null and some input requires grad. Passing tape == nullptr
// gives a pure forward evaluation (used by the finite-difference checker).

// a: (..., K) x b: (K, N) -> (..., N). Leading dims of a are flattened.
TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b);

// Batched matmul with identical leading batch dims.
// a: (B..., M, K) x b: (B..., K, N) -> (B..., M, N); transpose_b swaps b's
// last two dims, i.e. a: (B..., M, K) x b: (B..., N, K) -> (B..., M, N).
TensorPtr bmm(Tape* tape, const TensorPtr& a, const TensorPtr& b, bool transpose_b = false);

// Elementwise add/mul; b may be a scalar tensor or a suffix of a's shape
// (broadcast over the leading dims).
TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(Tape* tape, const TensorPtr& a, double s);
TensorPtr exp_op(Tape* tape, const TensorPtr& a);
TensorPtr sum_all(Tape* tape, const TensorPtr& a);  // -> scalar

// Softmax over the last dim.
TensorPtr softmax_rows(Tape* tape, const TensorPtr& a);

// Causal softmax over the last two dims (query, key): entries with key > query
// are excluded and their output weight is exactly 0.0.
TensorPtr softmax_causal(Tape* tape, const TensorPtr& a);

// PReLU with one learnable slope per channel of the last dim.
TensorPtr prelu(Tape* tape, const TensorPtr& a, const TensorPtr& slopes);

// Exact GELU: x * Phi(x) with the Gaussian CDF via erf.
TensorPtr gelu(Tape* tape, const TensorPtr& a);

// Layer norm over the last dim with learnable gain/bias.
TensorPtr layer_norm(Tape* tape, const TensorPtr& a, const TensorPtr& gain,
                     const TensorPtr& bias, double eps = 1e-5);

// table: (V, C), ids: B*T token ids -> (B, T, C). Throws on out-of-range ids.
TensorPtr embedding(Tape* tape, const TensorPtr& table, const std::vector<int32_t>& ids,
                    int64_t B, int64_t T);

// logits: (N, V) or (B, T, V) with N = B*T targets. Mean cross-entropy in nats,
// computed through a fused log-sum-exp.
TensorPtr cross_entropy_mean(Tape* tape, const TensorPtr& logits,
                             const std::vector<int32_t>& targets);

// Raw GEMM helpers (row-major, f64), thin wrappers over BLAS.
void gemm_nn(int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c,
             double alpha = 1.0, double beta = 0.0);
void gemm_nt(int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c,
             double alpha = 1.0, double beta = 0.0);
void gemm_tn(int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c,
             double alpha = 1.0, double beta = 0.0);

}  // namespace sblab
