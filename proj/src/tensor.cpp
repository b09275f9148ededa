#include "sblab/tensor.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace sblab {

namespace {

int64_t product(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

// b broadcasts over a when it is a scalar or its shape is a suffix of a's.
// Returns the number of leading elements of a per full copy of b.
int64_t broadcast_lead(const char* op, const Tensor& a, const Tensor& b) {
    if (b.numel() == 1) return a.numel();
    auto an = a.shape.size(), bn = b.shape.size();
    require(bn <= an, std::string(op) + ": rhs rank exceeds lhs, " + shape_str(a.shape) +
                          " vs " + shape_str(b.shape));
    for (size_t i = 0; i < bn; ++i) {
        require(a.shape[an - bn + i] == b.shape[i],
                std::string(op) + ": rhs shape " + shape_str(b.shape) +
                    " is not a suffix of lhs shape " + shape_str(a.shape));
    }
    return a.numel() / b.numel();
}

}  // namespace

Tensor::Tensor(std::vector<int64_t> s, bool rg) : shape(std::move(s)), requires_grad(rg) {
    for (auto d : shape) {
        if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
    }
    value.assign(static_cast<size_t>(product(shape)), 0.0);
}

int64_t Tensor::numel() const { return static_cast<int64_t>(value.size()); }

int64_t Tensor::dim(int64_t i) const {
    int64_t n = ndim();
    if (i < 0) i += n;
    if (i < 0 || i >= n) throw ShapeError("dim index out of range for " + shape_str(shape));
    return shape[static_cast<size_t>(i)];
}

void Tensor::ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
}

void Tensor::zero_grad() {
    std::fill(grad.begin(), grad.end(), 0.0);
}

TensorPtr Tensor::zeros(std::vector<int64_t> shape, bool rg) {
    return std::make_shared<Tensor>(std::move(shape), rg);
}

TensorPtr Tensor::full(std::vector<int64_t> shape, double v, bool rg) {
    auto t = std::make_shared<Tensor>(std::move(shape), rg);
    std::fill(t->value.begin(), t->value.end(), v);
    return t;
}

TensorPtr Tensor::from(std::vector<int64_t> shape, std::vector<double> data, bool rg) {
    auto t = std::make_shared<Tensor>(std::move(shape), rg);
    if (static_cast<int64_t>(data.size()) != t->numel()) {
        throw ShapeError("from: data size " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(t->shape));
    }
    t->value = std::move(data);
    return t;
}

TensorPtr Tensor::scalar(double v, bool rg) { return full({1}, v, rg); }

TensorPtr Tensor::gaussian(std::vector<int64_t> shape, double std, Rng& rng, bool rg) {
    auto t = std::make_shared<Tensor>(std::move(shape), rg);
    for (auto& v : t->value) v = std * rng.normal();
    return t;
}

std::string shape_str(const std::vector<int64_t>& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

void Tape::record(const char* op, TensorPtr output, std::function<void()> backward) {
    nodes_.push_back({op, std::move(output), std::move(backward)});
}

void Tape::backward(const TensorPtr& loss) {
    if (loss->numel() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss->shape));
    }
    for (auto& n : nodes_) {
        if (!n.output->grad.empty()) n.output->zero_grad();
    }
    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

void Tape::clear() { nodes_.clear(); }

void gemm_nn(int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c,
             double alpha, double beta) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(k), b,
                static_cast<int>(n), beta, c, static_cast<int>(n));
}

void gemm_nt(int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c,
             double alpha, double beta) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(k), b,
                static_cast<int>(k), beta, c, static_cast<int>(n));
}

void gemm_tn(int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c,
             double alpha, double beta) {
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(m), b,
                static_cast<int>(n), beta, c, static_cast<int>(n));
}

namespace {

TensorPtr make_output(std::vector<int64_t> shape, bool requires_grad) {
    auto t = Tensor::zeros(std::move(shape), requires_grad);
    t->is_leaf = false;
    return t;
}

bool want_grad(Tape* tape, std::initializer_list<const TensorPtr*> ins) {
    bool any = false;
    for (auto* p : ins) any = any || (*p)->requires_grad;
    return any && tape != nullptr;
}

}  // namespace

TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
    require(a->ndim() >= 1 && b->ndim() == 2,
            "matmul: need (..., K) x (K, N), got " + shape_str(a->shape) + " x " +
                shape_str(b->shape));
    int64_t k = b->shape[0], n = b->shape[1];
    require(a->dim(-1) == k, "matmul: inner dims differ, " + shape_str(a->shape) + " x " +
                                 shape_str(b->shape));
    int64_t rows = a->numel() / k;
    std::vector<int64_t> out_shape(a->shape.begin(), a->shape.end() - 1);
    out_shape.push_back(n);
    bool rg = a->requires_grad || b->requires_grad;
    auto out = make_output(std::move(out_shape), rg);
    gemm_nn(rows, n, k, a->value.data(), b->value.data(), out->value.data());
    if (want_grad(tape, {&a, &b})) {
        tape->record("matmul", out, [a, b, out, rows, k, n] {
            if (out->grad.empty()) return;
            if (a->requires_grad) {
                a->ensure_grad();
                gemm_nt(rows, k, n, out->grad.data(), b->value.data(), a->grad.data(), 1.0, 1.0);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                gemm_tn(k, n, rows, a->value.data(), out->grad.data(), b->grad.data(), 1.0, 1.0);
            }
        });
    }
    return out;
}

TensorPtr bmm(Tape* tape, const TensorPtr& a, const TensorPtr& b, bool transpose_b) {
    require(a->ndim() >= 2 && a->ndim() == b->ndim(),
            "bmm: rank mismatch, " + shape_str(a->shape) + " x " + shape_str(b->shape));
    size_t nd = a->shape.size();
    for (size_t i = 0; i + 2 < nd; ++i) {
        require(a->shape[i] == b->shape[i], "bmm: batch dims differ, " + shape_str(a->shape) +
                                                " x " + shape_str(b->shape));
    }
    int64_t m = a->dim(-2), k = a->dim(-1);
    int64_t bk = transpose_b ? b->dim(-1) : b->dim(-2);
    int64_t n = transpose_b ? b->dim(-2) : b->dim(-1);
    require(bk == k, std::string("bmm") + (transpose_b ? "(nt)" : "") +
                         ": inner dims differ, " + shape_str(a->shape) + " x " +
                         shape_str(b->shape));
    int64_t batch = a->numel() / (m * k);
    std::vector<int64_t> out_shape(a->shape.begin(), a->shape.end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    bool rg = a->requires_grad || b->requires_grad;
    auto out = make_output(std::move(out_shape), rg);
    int64_t as = m * k, bs = k * n, cs = m * n;
    for (int64_t t = 0; t < batch; ++t) {
        const double* ap = a->value.data() + t * as;
        const double* bp = b->value.data() + t * bs;
        double* cp = out->value.data() + t * cs;
        if (transpose_b) {
            gemm_nt(m, n, k, ap, bp, cp);
        } else {
            gemm_nn(m, n, k, ap, bp, cp);
        }
    }
    if (want_grad(tape, {&a, &b})) {
        tape->record("bmm", out, [a, b, out, transpose_b, batch, m, n, k, as, bs, cs] {
            if (out->grad.empty()) return;
            if (a->requires_grad) a->ensure_grad();
            if (b->requires_grad) b->ensure_grad();
            for (int64_t t = 0; t < batch; ++t) {
                const double* ap = a->value.data() + t * as;
                const double* bp = b->value.data() + t * bs;
                const double* gp = out->grad.data() + t * cs;
                if (a->requires_grad) {
                    double* gap = a->grad.data() + t * as;
                    if (transpose_b) {
                        // C = A B^T: dA = dC B
                        gemm_nn(m, k, n, gp, bp, gap, 1.0, 1.0);
                    } else {
                        // C = A B: dA = dC B^T
                        gemm_nt(m, k, n, gp, bp, gap, 1.0, 1.0);
                    }
                }
                if (b->requires_grad) {
                    double* gbp = b->grad.data() + t * bs;
                    if (transpose_b) {
                        // C = A B^T: dB = dC^T A
                        gemm_tn(n, k, m, gp, ap, gbp, 1.0, 1.0);
                    } else {
                        // C = A B: dB = A^T dC
                        gemm_tn(k, n, m, ap, gp, gbp, 1.0, 1.0);
                    }
                }
            }
        });
    }
    return out;
}

TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
    int64_t lead = broadcast_lead("add", *a, *b);
    int64_t bn = b->numel();
    bool rg = a->requires_grad || b->requires_grad;
    auto out = make_output(a->shape, rg);
    const double* ap = a->value.data();
    const double* bp = b->value.data();
    double* op = out->value.data();
    if (bn == 1) {
        double bv = bp[0];
        for (int64_t i = 0; i < a->numel(); ++i) op[i] = ap[i] + bv;
    } else {
        for (int64_t l = 0; l < lead; ++l) {
            for (int64_t j = 0; j < bn; ++j) op[l * bn + j] = ap[l * bn + j] + bp[j];
        }
    }
    if (want_grad(tape, {&a, &b})) {
        tape->record("add", out, [a, b, out, lead, bn] {
            if (out->grad.empty()) return;
            const double* g = out->grad.data();
            if (a->requires_grad) {
                a->ensure_grad();
                for (int64_t i = 0; i < a->numel(); ++i) a->grad[i] += g[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                if (bn == 1) {
                    double s = 0.0;
                    for (int64_t i = 0; i < out->numel(); ++i) s += g[i];
                    b->grad[0] += s;
                } else {
                    for (int64_t l = 0; l < lead; ++l) {
                        for (int64_t j = 0; j < bn; ++j) b->grad[j] += g[l * bn + j];
                    }
                }
            }
        });
    }
    return out;
}

TensorPtr mul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
    int64_t lead = broadcast_lead("mul", *a, *b);
    int64_t bn = b->numel();
    bool rg = a->requires_grad || b->requires_grad;
    auto out = make_output(a->shape, rg);
    const double* ap = a->value.data();
    const double* bp = b->value.data();
    double* op = out->value.data();
    if (bn == 1) {
        double bv = bp[0];
        for (int64_t i = 0; i < a->numel(); ++i) op[i] = ap[i] * bv;
    } else {
        for (int64_t l = 0; l < lead; ++l) {
            for (int64_t j = 0; j < bn; ++j) op[l * bn + j] = ap[l * bn + j] * bp[j];
        }
    }
    if (want_grad(tape, {&a, &b})) {
        tape->record("mul", out, [a, b, out, lead, bn] {
            if (out->grad.empty()) return;
            const double* g = out->grad.data();
            const double* ap = a->value.data();
            const double* bp = b->value.data();
            if (a->requires_grad) {
                a->ensure_grad();
                if (bn == 1) {
                    for (int64_t i = 0; i < a->numel(); ++i) a->grad[i] += g[i] * bp[0];
                } else {
                    for (int64_t l = 0; l < lead; ++l) {
                        for (int64_t j = 0; j < bn; ++j) {
                            a->grad[l * bn + j] += g[l * bn + j] * bp[j];
                        }
                    }
                }
            }
            if (b->requires_grad) {
                b->ensure_grad();
                if (bn == 1) {
                    double s = 0.0;
                    for (int64_t i = 0; i < a->numel(); ++i) s += g[i] * ap[i];
                    b->grad[0] += s;
                } else {
                    for (int64_t l = 0; l < lead; ++l) {
                        for (int64_t j = 0; j < bn; ++j) {
                            b->grad[j] += g[l * bn + j] * ap[l * bn + j];
                        }
                    }
                }
            }
        });
    }
    return out;
}

TensorPtr scale(Tape* tape, const TensorPtr& a, double s) {
    auto out = make_output(a->shape, a->requires_grad);
    for (int64_t i = 0; i < a->numel(); ++i) out->value[i] = a->value[i] * s;
    if (want_grad(tape, {&a})) {
        tape->record("scale", out, [a, out, s] {
            if (out->grad.empty()) return;
            a->ensure_grad();
            for (int64_t i = 0; i < a->numel(); ++i) a->grad[i] += s * out->grad[i];
        });
    }
    return out;
}

TensorPtr exp_op(Tape* tape, const TensorPtr& a) {
    auto out = make_output(a->shape, a->requires_grad);
    for (int64_t i = 0; i < a->numel(); ++i) out->value[i] = std::exp(a->value[i]);
    if (want_grad(tape, {&a})) {
        tape->record("exp", out, [a, out] {
            if (out->grad.empty()) return;
            a->ensure_grad();
            for (int64_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[i] * out->value[i];
        });
    }
    return out;
}

TensorPtr sum_all(Tape* tape, const TensorPtr& a) {
    auto out = make_output({1}, a->requires_grad);
    double s = 0.0;
    for (double v : a->value) s += v;
    out->value[0] = s;
    if (want_grad(tape, {&a})) {
        tape->record("sum", out, [a, out] {
            if (out->grad.empty()) return;
            a->ensure_grad();
            double g = out->grad[0];
            for (int64_t i = 0; i < a->numel(); ++i) a->grad[i] += g;
        });
    }
    return out;
}

namespace {

// Shared softmax-over-segment kernel: rows of length `len` starting at `base`.
void softmax_segment(const double* x, double* p, int64_t len) {
    double mx = x[0];
    for (int64_t j = 1; j < len; ++j) mx = std::max(mx, x[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < len; ++j) {
        p[j] = std::exp(x[j] - mx);
        denom += p[j];
    }
    for (int64_t j = 0; j < len; ++j) p[j] /= denom;
}

void softmax_segment_backward(const double* p, const double* g, double* dx, int64_t len) {
    double dot = 0.0;
    for (int64_t j = 0; j < len; ++j) dot += g[j] * p[j];
    for (int64_t j = 0; j < len; ++j) dx[j] += p[j] * (g[j] - dot);
}

}  // namespace

TensorPtr softmax_rows(Tape* tape, const TensorPtr& a) {
    require(a->ndim() >= 1, "softmax_rows: need at least 1-d input");
    int64_t len = a->dim(-1);
    int64_t rows = a->numel() / len;
    auto out = make_output(a->shape, a->requires_grad);
    for (int64_t r = 0; r < rows; ++r) {
        softmax_segment(a->value.data() + r * len, out->value.data() + r * len, len);
    }
    if (want_grad(tape, {&a})) {
        tape->record("softmax_rows", out, [a, out, rows, len] {
            if (out->grad.empty()) return;
            a->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                softmax_segment_backward(out->value.data() + r * len, out->grad.data() + r * len,
                                         a->grad.data() + r * len, len);
            }
        });
    }
    return out;
}

TensorPtr softmax_causal(Tape* tape, const TensorPtr& a) {
    require(a->ndim() >= 2, "softmax_causal: need (..., T, T) input, got " + shape_str(a->shape));
    int64_t T = a->dim(-2), S = a->dim(-1);
    require(T == S, "softmax_causal: last two dims must match, got " + shape_str(a->shape));
    int64_t batch = a->numel() / (T * S);
    auto out = make_output(a->shape, a->requires_grad);
    for (int64_t bt = 0; bt < batch; ++bt) {
        for (int64_t i = 0; i < T; ++i) {
            const double* x = a->value.data() + (bt * T + i) * S;
            double* p = out->value.data() + (bt * T + i) * S;
            softmax_segment(x, p, i + 1);
            // out is zero-initialized, so masked entries stay exactly 0.0
        }
    }
    if (want_grad(tape, {&a})) {
        tape->record("softmax_causal", out, [a, out, batch, T, S] {
            if (out->grad.empty()) return;
            a->ensure_grad();
            for (int64_t bt = 0; bt < batch; ++bt) {
                for (int64_t i = 0; i < T; ++i) {
                    int64_t off = (bt * T + i) * S;
                    softmax_segment_backward(out->value.data() + off, out->grad.data() + off,
                                             a->grad.data() + off, i + 1);
                }
            }
        });
    }
    return out;
}

TensorPtr prelu(Tape* tape, const TensorPtr& a, const TensorPtr& slopes) {
    require(slopes->ndim() == 1 && slopes->numel() == a->dim(-1),
            "prelu: slopes must have shape (last dim), got " + shape_str(slopes->shape) +
                " for input " + shape_str(a->shape));
    int64_t c = slopes->numel();
    int64_t rows = a->numel() / c;
    bool rg = a->requires_grad || slopes->requires_grad;
    auto out = make_output(a->shape, rg);
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < c; ++j) {
            double x = a->value[r * c + j];
            out->value[r * c + j] = x > 0.0 ? x : slopes->value[j] * x;
        }
    }
    if (want_grad(tape, {&a, &slopes})) {
        tape->record("prelu", out, [a, slopes, out, rows, c] {
            if (out->grad.empty()) return;
            if (a->requires_grad) a->ensure_grad();
            if (slopes->requires_grad) slopes->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                for (int64_t j = 0; j < c; ++j) {
                    int64_t i = r * c + j;
                    double x = a->value[i];
                    double g = out->grad[i];
                    if (a->requires_grad) {
                        a->grad[i] += (x > 0.0 ? 1.0 : slopes->value[j]) * g;
                    }
                    if (slopes->requires_grad && x <= 0.0) slopes->grad[j] += x * g;
                }
            }
        });
    }
    return out;
}

TensorPtr gelu(Tape* tape, const TensorPtr& a) {
    auto out = make_output(a->shape, a->requires_grad);
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    for (int64_t i = 0; i < a->numel(); ++i) {
        double x = a->value[i];
        out->value[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    if (want_grad(tape, {&a})) {
        tape->record("gelu", out, [a, out] {
            if (out->grad.empty()) return;
            a->ensure_grad();
            constexpr double inv_sqrt2 = 0.7071067811865475244;
            const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
            for (int64_t i = 0; i < a->numel(); ++i) {
                double x = a->value[i];
                double phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                a->grad[i] += (phi + x * pdf) * out->grad[i];
            }
        });
    }
    return out;
}

TensorPtr layer_norm(Tape* tape, const TensorPtr& a, const TensorPtr& gain,
                     const TensorPtr& bias, double eps) {
    int64_t c = a->dim(-1);
    require(gain->numel() == c && bias->numel() == c,
            "layer_norm: gain/bias must have shape (last dim " + std::to_string(c) + "), got " +
                shape_str(gain->shape) + " and " + shape_str(bias->shape));
    int64_t rows = a->numel() / c;
    bool rg = a->requires_grad || gain->requires_grad || bias->requires_grad;
    auto out = make_output(a->shape, rg);
    // Cache the normalized values and inverse stddev for backward.
    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(a->numel()));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* x = a->value.data() + r * c;
        double mean = 0.0;
        for (int64_t j = 0; j < c; ++j) mean += x[j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            double d = x[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = inv;
        for (int64_t j = 0; j < c; ++j) {
            double xh = (x[j] - mean) * inv;
            (*xhat)[static_cast<size_t>(r * c + j)] = xh;
            out->value[r * c + j] = xh * gain->value[j] + bias->value[j];
        }
    }
    if (want_grad(tape, {&a, &gain, &bias})) {
        tape->record("layer_norm", out, [a, gain, bias, out, xhat, inv_std, rows, c] {
            if (out->grad.empty()) return;
            if (a->requires_grad) a->ensure_grad();
            if (gain->requires_grad) gain->ensure_grad();
            if (bias->requires_grad) bias->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const double* g = out->grad.data() + r * c;
                const double* xh = xhat->data() + r * c;
                double inv = (*inv_std)[static_cast<size_t>(r)];
                double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                for (int64_t j = 0; j < c; ++j) {
                    double dxh = g[j] * gain->value[j];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * xh[j];
                }
                mean_dxh /= static_cast<double>(c);
                mean_dxh_xh /= static_cast<double>(c);
                for (int64_t j = 0; j < c; ++j) {
                    if (gain->requires_grad) gain->grad[j] += g[j] * xh[j];
                    if (bias->requires_grad) bias->grad[j] += g[j];
                    if (a->requires_grad) {
                        double dxh = g[j] * gain->value[j];
                        a->grad[r * c + j] += inv * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                    }
                }
            }
        });
    }
    return out;
}

TensorPtr embedding(Tape* tape, const TensorPtr& table, const std::vector<int32_t>& ids,
                    int64_t B, int64_t T) {
    require(table->ndim() == 2, "embedding: table must be (V, C), got " + shape_str(table->shape));
    require(static_cast<int64_t>(ids.size()) == B * T,
            "embedding: expected " + std::to_string(B * T) + " ids, got " +
                std::to_string(ids.size()));
    int64_t V = table->shape[0], C = table->shape[1];
    for (auto id : ids) {
        if (id < 0 || id >= V) {
            throw Error("embedding: token id " + std::to_string(id) +
                        " out of range for vocab size " + std::to_string(V));
        }
    }
    auto out = make_output({B, T, C}, table->requires_grad);
    for (int64_t i = 0; i < B * T; ++i) {
        const double* src = table->value.data() + static_cast<int64_t>(ids[i]) * C;
        std::copy(src, src + C, out->value.data() + i * C);
    }
    if (want_grad(tape, {&table})) {
        auto ids_copy = std::make_shared<std::vector<int32_t>>(ids);
        tape->record("embedding", out, [table, out, ids_copy, C] {
            if (out->grad.empty()) return;
            table->ensure_grad();
            for (size_t i = 0; i < ids_copy->size(); ++i) {
                double* dst = table->grad.data() + static_cast<int64_t>((*ids_copy)[i]) * C;
                const double* g = out->grad.data() + static_cast<int64_t>(i) * C;
                for (int64_t j = 0; j < C; ++j) dst[j] += g[j];
            }
        });
    }
    return out;
}

TensorPtr cross_entropy_mean(Tape* tape, const TensorPtr& logits,
                             const std::vector<int32_t>& targets) {
    require(logits->ndim() >= 2, "cross_entropy: logits must be (..., V), got " +
                                     shape_str(logits->shape));
    int64_t V = logits->dim(-1);
    int64_t N = logits->numel() / V;
    require(static_cast<int64_t>(targets.size()) == N,
            "cross_entropy: expected " + std::to_string(N) + " targets, got " +
                std::to_string(targets.size()));
    for (auto t : targets) {
        if (t < 0 || t >= V) {
            throw Error("cross_entropy: target id " + std::to_string(t) +
                        " out of range for vocab size " + std::to_string(V));
        }
    }
    auto out = make_output({1}, logits->requires_grad);
    // Keep per-row softmax for backward.
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(logits->numel()));
    double total = 0.0;
    for (int64_t r = 0; r < N; ++r) {
        const double* x = logits->value.data() + r * V;
        double* p = probs->data() + r * V;
        double mx = x[0];
        for (int64_t j = 1; j < V; ++j) mx = std::max(mx, x[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < V; ++j) {
            p[j] = std::exp(x[j] - mx);
            denom += p[j];
        }
        double lse = mx + std::log(denom);
        for (int64_t j = 0; j < V; ++j) p[j] /= denom;
        total += lse - x[targets[static_cast<size_t>(r)]];
    }
    out->value[0] = total / static_cast<double>(N);
    if (want_grad(tape, {&logits})) {
        auto tgt = std::make_shared<std::vector<int32_t>>(targets);
        tape->record("cross_entropy", out, [logits, out, probs, tgt, N, V] {
            if (out->grad.empty()) return;
            logits->ensure_grad();
            double g = out->grad[0] / static_cast<double>(N);
            for (int64_t r = 0; r < N; ++r) {
                const double* p = probs->data() + r * V;
                double* d = logits->grad.data() + r * V;
                int64_t t = (*tgt)[static_cast<size_t>(r)];
                for (int64_t j = 0; j < V; ++j) d[j] += g * p[j];
                d[t] -= g;
            }
        });
    }
    return out;
}

}  // namespace sblab
