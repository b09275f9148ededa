#include "sblab/optim.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>

namespace sblab {

namespace {

double nrm2(const std::vector<double>& v) {
    return cblas_dnrm2(static_cast<int>(v.size()), v.data(), 1);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    return cblas_ddot(static_cast<int>(a.size()), a.data(), 1, b.data(), 1);
}

}  // namespace

FlatParams::FlatParams(std::vector<std::pair<std::string, TensorPtr>> params)
    : params_(std::move(params)) {
    offsets_.reserve(params_.size());
    for (auto& [name, p] : params_) {
        offsets_.push_back(total_);
        total_ += p->numel();
    }
}

void FlatParams::gather_values(std::vector<double>& out) const {
    out.resize(static_cast<size_t>(total_));
    size_t k = 0;
    for (auto& [name, p] : params_) {
        std::copy(p->value.begin(), p->value.end(), out.begin() + static_cast<int64_t>(k));
        k += p->value.size();
    }
}

void FlatParams::gather_grads(std::vector<double>& out) const {
    out.assign(static_cast<size_t>(total_), 0.0);
    size_t k = 0;
    for (auto& [name, p] : params_) {
        if (!p->grad.empty()) {
            std::copy(p->grad.begin(), p->grad.end(), out.begin() + static_cast<int64_t>(k));
        }
        k += p->value.size();
    }
}

void FlatParams::scatter_values(const std::vector<double>& in) {
    if (static_cast<int64_t>(in.size()) != total_) {
        throw ShapeError("scatter_values: size mismatch");
    }
    size_t k = 0;
    for (auto& [name, p] : params_) {
        std::copy(in.begin() + static_cast<int64_t>(k),
                  in.begin() + static_cast<int64_t>(k + p->value.size()), p->value.begin());
        k += p->value.size();
    }
}

void FlatParams::add_scaled(const std::vector<double>& dir, double alpha) {
    if (static_cast<int64_t>(dir.size()) != total_) {
        throw ShapeError("add_scaled: size mismatch");
    }
    size_t k = 0;
    for (auto& [name, p] : params_) {
        for (auto& v : p->value) v += alpha * dir[k++];
    }
}

void FlatParams::zero_grads() {
    for (auto& [name, p] : params_) p->zero_grad();
}

std::pair<int64_t, int64_t> FlatParams::range_of(const std::string& name) const {
    for (size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].first == name) {
            return {offsets_[i], offsets_[i] + params_[i].second->numel()};
        }
    }
    throw ConfigError("no parameter named '" + name + "' in registry");
}

void Sgdm::step(FlatParams& params, double, Rng*) {
    std::vector<double> g;
    params.gather_grads(g);
    int64_t n = params.size();
    if (cfg_.weight_decay != 0.0) {
        std::vector<double> th;
        params.gather_values(th);
        for (int64_t i = 0; i < n; ++i) g[static_cast<size_t>(i)] += cfg_.weight_decay * th[static_cast<size_t>(i)];
    }
    if (first_) {
        buf_ = g;
        first_ = false;
    } else {
        for (int64_t i = 0; i < n; ++i) {
            buf_[static_cast<size_t>(i)] = cfg_.momentum * buf_[static_cast<size_t>(i)] + g[static_cast<size_t>(i)];
        }
    }
    if (cfg_.nesterov) {
        for (int64_t i = 0; i < n; ++i) {
            g[static_cast<size_t>(i)] += cfg_.momentum * buf_[static_cast<size_t>(i)];
        }
        params.add_scaled(g, -cfg_.lr);
    } else {
        params.add_scaled(buf_, -cfg_.lr);
    }
}

OptimizerState Sgdm::state() const {
    OptimizerState s;
    s.arrays.emplace_back("momentum", buf_);
    s.scalars["first"] = first_ ? 1.0 : 0.0;
    return s;
}

void Sgdm::load_state(const OptimizerState& s) {
    for (auto& [name, arr] : s.arrays) {
        if (name == "momentum") buf_ = arr;
    }
    auto it = s.scalars.find("first");
    first_ = it == s.scalars.end() ? buf_.empty() : it->second != 0.0;
}

const std::vector<double>* Sgdm::velocity() const {
    if (buf_.empty()) return nullptr;
    vel_ = buf_;
    double norm = nrm2(vel_);
    if (norm > 0) {
        // The buffer tracks +grad, so motion points the other way.
        for (auto& v : vel_) v = -v / norm;
    }
    return &vel_;
}

void AdamW::step(FlatParams& params, double, Rng*) {
    std::vector<double> g;
    params.gather_grads(g);
    size_t n = g.size();
    if (m_.empty()) {
        m_.assign(n, 0.0);
        v_.assign(n, 0.0);
    }
    ++t_;
    if (cfg_.weight_decay != 0.0) {
        std::vector<double> th;
        params.gather_values(th);
        for (auto& x : th) x *= 1.0 - cfg_.lr * cfg_.weight_decay;
        params.scatter_values(th);
    }
    double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::vector<double> upd(n);
    for (size_t i = 0; i < n; ++i) {
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g[i];
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        double mhat = m_[i] / c1;
        double vhat = v_[i] / c2;
        upd[i] = mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    params.add_scaled(upd, -cfg_.lr);
}

OptimizerState AdamW::state() const {
    OptimizerState s;
    s.arrays.emplace_back("m", m_);
    s.arrays.emplace_back("v", v_);
    s.scalars["t"] = static_cast<double>(t_);
    return s;
}

void AdamW::load_state(const OptimizerState& s) {
    for (auto& [name, arr] : s.arrays) {
        if (name == "m") m_ = arr;
        if (name == "v") v_ = arr;
    }
    auto it = s.scalars.find("t");
    t_ = it == s.scalars.end() ? 0 : static_cast<int64_t>(it->second);
}

bool EcdQ1::init_velocity(FlatParams& params, Rng& rng) {
    std::vector<double> g;
    params.gather_grads(g);
    double gn = nrm2(g);
    u_.assign(g.size(), 0.0);
    if (gn > 0.0) {
        for (size_t i = 0; i < g.size(); ++i) u_[i] = -g[i] / gn;
        // renormalize exactly
        double un = nrm2(u_);
        for (auto& v : u_) v /= un;
        return true;
    }
    for (auto& v : u_) v = rng.normal();
    double un = nrm2(u_);
    if (un == 0.0) {
        u_[0] = 1.0;
        return false;
    }
    for (auto& v : u_) v /= un;
    return false;
}

void EcdQ1::step(FlatParams& params, double loss, Rng* rng) {
    int64_t n = params.size();
    if (n < 2) throw ConfigError("unit-speed engine needs at least 2 parameters");
    if (u_.empty()) {
        throw ConfigError("unit-speed engine: call init_velocity before the first step");
    }
    if (!(loss > cfg_.f0)) {
        throw NumericError("loss " + std::to_string(loss) + " is at or below f0 " +
                           std::to_string(cfg_.f0) +
                           "; lower f0 so it sits strictly below every achievable loss");
    }
    std::vector<double> g;
    params.gather_grads(g);
    double gn = nrm2(g);
    double dim = static_cast<double>(n);
    double kappa = dim * cfg_.eta / (2.0 * (dim - 1.0));
    log_pi_ = -kappa * std::log(loss - cfg_.f0);
    if (gn > 0.0) {
        double log_delta = std::log(cfg_.step) + std::log(kappa) +
                           (-kappa - 1.0) * std::log(loss - cfg_.f0) + std::log(gn);
        double delta = 0.0;
        if (log_delta > std::log(cfg_.delta_max)) {
            delta = cfg_.delta_max;
        } else if (log_delta > -700.0) {
            delta = std::exp(log_delta);
        }
        if (delta > 0.0) {
            std::vector<double> e(g.size());
            for (size_t i = 0; i < g.size(); ++i) e[i] = -g[i] / gn;
            // rounding can push the dot past +-1 and wreck the update near a
            // full turn, so clamp it and fall back to e on degenerate output
            double eu = std::clamp(dot(e, u_), -1.0, 1.0);
            double sh = std::sinh(delta), ch = std::cosh(delta);
            double denom = ch + eu * sh;
            double coef = sh + eu * (ch - 1.0);
            bool ok = denom > 0.0;
            if (ok) {
                for (size_t i = 0; i < u_.size(); ++i) u_[i] = (u_[i] + coef * e[i]) / denom;
                double un = nrm2(u_);
                ok = std::isfinite(un) && un > 0.0;
                if (ok) {
                    for (auto& v : u_) v /= un;
                }
            }
            if (!ok) u_ = e;
        }
    }
    params.add_scaled(u_, cfg_.lhat * cfg_.step);
    if (cfg_.nu > 0.0) {
        if (!rng) throw ConfigError("unit-speed engine: nu > 0 needs an rng for the refresh");
        for (auto& v : u_) v += cfg_.nu * rng->normal();
        double un = nrm2(u_);
        if (un == 0.0) {
            u_[0] = 1.0;
        } else {
            for (auto& v : u_) v /= un;
        }
    }
    ++step_count_;
}

OptimizerState EcdQ1::state() const {
    OptimizerState s;
    s.arrays.emplace_back("u", u_);
    s.scalars["step_count"] = static_cast<double>(step_count_);
    s.scalars["log_pi"] = log_pi_;
    return s;
}

void EcdQ1::load_state(const OptimizerState& s) {
    for (auto& [name, arr] : s.arrays) {
        if (name == "u") u_ = arr;
    }
    auto it = s.scalars.find("step_count");
    step_count_ = it == s.scalars.end() ? 0 : static_cast<int64_t>(it->second);
    it = s.scalars.find("log_pi");
    log_pi_ = it == s.scalars.end() ? 0.0 : it->second;
}

double EcdVm::mass_power(double f) const {
    if (!(f > cfg_.f0)) {
        throw NumericError("loss " + std::to_string(f) + " is at or below f0 " +
                           std::to_string(cfg_.f0) +
                           "; lower f0 so it sits strictly below every achievable loss");
    }
    return std::pow(f - cfg_.f0, cfg_.eta);
}

EcdVm::EcdVm(EcdVmConfig cfg, std::vector<double> theta0, std::vector<double> v0,
             const LossFn& loss)
    : cfg_(cfg), theta_(std::move(theta0)) {
    if (cfg_.step <= 0) throw ConfigError("variable-mass engine: step must be positive");
    if (v0.size() != theta_.size()) throw ShapeError("v0 size must match theta0");
    grad_.assign(theta_.size(), 0.0);
    f_ = loss(theta_, grad_);
    double a = mass_power(f_);  // 1/m
    p_.resize(v0.size());
    for (size_t i = 0; i < v0.size(); ++i) p_[i] = v0[i] / a;
    energy_ = 0.5 * dot(p_, p_) * a;
    energy0_ = energy_;
}

void EcdVm::step(const LossFn& loss) {
    const double h = cfg_.step;
    const size_t n = theta_.size();
    double a0 = mass_power(f_);  // (F - F0)^eta at theta
    // force vector: dH/dtheta = |p|^2/2 * eta (F-F0)^(eta-1) grad
    std::vector<double> w(n);
    double wf = 0.5 * cfg_.eta * std::pow(f_ - cfg_.f0, cfg_.eta - 1.0);
    for (size_t i = 0; i < n; ++i) w[i] = wf * grad_[i];

    // Implicit half kick: p_half = p - (h/2) |p_half|^2 w. Only the squared
    // norm is implicit; iterate the scalar.
    double s = dot(p_, p_);
    std::vector<double> p_half(n);
    bool converged = false;
    for (int it = 0; it < cfg_.max_fp_iters; ++it) {
        for (size_t i = 0; i < n; ++i) p_half[i] = p_[i] - 0.5 * h * s * w[i];
        double s_new = dot(p_half, p_half);
        if (std::abs(s_new - s) <= cfg_.fp_tol * std::max(1.0, s)) {
            s = s_new;
            converged = true;
            break;
        }
        s = s_new;
    }
    if (!converged) {
        throw NumericError("variable-mass half-kick did not converge; reduce the step size");
    }
    for (size_t i = 0; i < n; ++i) p_half[i] = p_[i] - 0.5 * h * s * w[i];

    // Implicit drift: theta' = theta + (h/2)(a(theta) + a(theta')) p_half.
    std::vector<double> theta_new(n), gtmp(n, 0.0);
    double a1 = a0;
    double f1 = f_;
    converged = false;
    for (int it = 0; it < cfg_.max_fp_iters; ++it) {
        double c = 0.5 * h * (a0 + a1);
        double move = 0.0;
        for (size_t i = 0; i < n; ++i) {
            theta_new[i] = theta_[i] + c * p_half[i];
        }
        f1 = loss(theta_new, gtmp);
        double a_next = mass_power(f1);
        move = std::abs(a_next - a1);
        a1 = a_next;
        if (move <= cfg_.fp_tol * std::max(1.0, a1)) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        throw NumericError("variable-mass drift did not converge; reduce the step size");
    }

    // Explicit final kick at theta'.
    double wf1 = 0.5 * cfg_.eta * std::pow(f1 - cfg_.f0, cfg_.eta - 1.0);
    double s_half = dot(p_half, p_half);
    for (size_t i = 0; i < n; ++i) p_[i] = p_half[i] - 0.5 * h * s_half * wf1 * gtmp[i];

    theta_ = theta_new;
    grad_ = gtmp;
    f_ = f1;
    energy_ = 0.5 * dot(p_, p_) * a1;
}

std::vector<double> EcdVm::velocity() const {
    double a = std::pow(f_ - cfg_.f0, cfg_.eta);
    std::vector<double> v(p_.size());
    for (size_t i = 0; i < p_.size(); ++i) v[i] = p_[i] * a;
    return v;
}

HamTrajectory sgdm_hamiltonian_integrate(const LossFn& potential, std::vector<double> theta0,
                                         std::vector<double> v0, double mass, double friction,
                                         double h, int n_steps) {
    if (h <= 0) throw ConfigError("integrator: step must be positive");
    if (mass <= 0) throw ConfigError("integrator: mass must be positive");
    if (v0.size() != theta0.size()) throw ShapeError("v0 size must match theta0");
    size_t n = theta0.size();
    std::vector<double> theta = std::move(theta0);
    std::vector<double> pi(n);
    for (size_t i = 0; i < n; ++i) pi[i] = mass * v0[i];  // t = 0: e^{f t} = 1

    HamTrajectory traj;
    auto push = [&](double t) {
        traj.ts.push_back(t);
        traj.thetas.push_back(theta);
        std::vector<double> v(n);
        double decay = std::exp(-friction * t);
        for (size_t i = 0; i < n; ++i) v[i] = decay * pi[i] / mass;
        traj.velocities.push_back(v);
        std::vector<double> g(n, 0.0);
        double V = potential(theta, g);
        double ke = 0.0;
        for (size_t i = 0; i < n; ++i) ke += 0.5 * mass * v[i] * v[i];
        traj.energies.push_back(ke + V);
    };

    std::vector<double> g(n, 0.0);
    push(0.0);
    for (int stepi = 0; stepi < n_steps; ++stepi) {
        double t0 = stepi * h;
        double t1 = t0 + h;
        potential(theta, g);
        double grow0 = std::exp(friction * t0);
        for (size_t i = 0; i < n; ++i) pi[i] -= 0.5 * h * grow0 * g[i];
        double decay_mid = std::exp(-friction * (t0 + 0.5 * h));
        for (size_t i = 0; i < n; ++i) theta[i] += h * decay_mid * pi[i] / mass;
        potential(theta, g);
        double grow1 = std::exp(friction * t1);
        for (size_t i = 0; i < n; ++i) pi[i] -= 0.5 * h * grow1 * g[i];
        push(t1);
    }
    return traj;
}

}  // namespace sblab
