#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "sblab/tensor.hpp"

namespace sblab {

// Flat view over an ordered parameter registry. The concatenation order is the
// registry order and defines the layout of every optimizer state vector.
class FlatParams {
  public:
    explicit FlatParams(std::vector<std::pair<std::string, TensorPtr>> params);

    int64_t size() const { return total_; }
    const std::vector<std::pair<std::string, TensorPtr>>& entries() const { return params_; }

    void gather_values(std::vector<double>& out) const;
    void gather_grads(std::vector<double>& out) const;
    void scatter_values(const std::vector<double>& in);
    void add_scaled(const std::vector<double>& dir, double alpha);  // theta += alpha * dir
    void zero_grads();

    // Flat-offset range of a named tensor: (offset, length).
    // half-open [begin, end) span of one named parameter in the flat vector
    std::pair<int64_t, int64_t> range_of(const std::string& name) const;

  private:
    std::vector<std::pair<std::string, TensorPtr>> params_;
    std::vector<int64_t> offsets_;
    int64_t total_ = 0;
};

// Serializable optimizer state: named arrays plus scalar fields.
struct OptimizerState {
    std::vector<std::pair<std::string, std::vector<double>>> arrays;
    std::map<std::string, double> scalars;
};

class Optimizer {
  public:
    virtual ~Optimizer() = default;
    // Grads must already sit in the parameter tensors. `loss` is the current
    // objective value (used by the energy-based engines); `rng` feeds
    // stochastic refreshes and may be null when unused.
    virtual void step(FlatParams& params, double loss, Rng* rng) = 0;
    virtual std::string kind() const = 0;
    virtual OptimizerState state() const = 0;
    virtual void load_state(const OptimizerState& s) = 0;
    // Normalized descent/velocity direction in flat layout, when the engine
    // defines one (used by the conserved-current diagnostics).
    virtual const std::vector<double>* velocity() const { return nullptr; }
};

struct SgdmConfig {
    double lr = 0.03;
    double momentum = 0.95;
    double weight_decay = 0.0;
    bool nesterov = true;
};

// Stochastic gradient descent with momentum, matching the standard
// deep-learning convention: buf <- mu*buf + g (buf = g on the first step),
// update direction g + mu*buf under nesterov, else buf. Weight decay is
// classic L2 (added to the gradient before the momentum update).
class Sgdm : public Optimizer {
  public:
    explicit Sgdm(SgdmConfig cfg) : cfg_(cfg) {}
    void step(FlatParams& params, double loss, Rng* rng) override;
    std::string kind() const override { return "sgdm"; }
    OptimizerState state() const override;
    void load_state(const OptimizerState& s) override;
    const std::vector<double>* velocity() const override;
    const SgdmConfig& config() const { return cfg_; }

  private:
    SgdmConfig cfg_;
    std::vector<double> buf_;
    bool first_ = true;
    mutable std::vector<double> vel_;
};

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// AdamW with decoupled weight decay and bias correction.
class AdamW : public Optimizer {
  public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}
    void step(FlatParams& params, double loss, Rng* rng) override;
    std::string kind() const override { return "adamw"; }
    OptimizerState state() const override;
    void load_state(const OptimizerState& s) override;
    const AdamWConfig& config() const { return cfg_; }

  private:
    AdamWConfig cfg_;
    std::vector<double> m_, v_;
    int64_t t_ = 0;
};

struct EcdQ1Config {
    double step = 0.005;  // epsilon: parameter displacement per step is lhat*step
    double eta = 2.0;
    double f0 = 0.0;      // must sit strictly below every loss value seen
    double nu = 0.0;      // velocity refresh strength
    double lhat = 1.0;
    double delta_max = 30.0;  // turn-impulse clamp, keeps sinh finite
};

// Unit-speed energy-conserving descent. The velocity u lives on the unit
// sphere; each step turns it toward the normalized negative gradient e by the
// exact sphere update
//   u' = (u + (sinh d + (e.u)(cosh d - 1)) e) / (cosh d + (e.u) sinh d)
// with turn impulse d = step * kappa (F - F0)^(-kappa-1) * |grad|,
// kappa = dim*eta / (2(dim-1)). The prefactor is evaluated in log space: with
// large kappa and F - F0 > 1 it underflows to zero turn (straight-line
// motion) instead of corrupting the state.
class EcdQ1 : public Optimizer {
  public:
    explicit EcdQ1(EcdQ1Config cfg) : cfg_(cfg) {}

    // Sets u = -grad/|grad| from the gradients currently in the tensors.
    // Returns false when the gradient was exactly zero and a random unit
    // vector was used instead.
    bool init_velocity(FlatParams& params, Rng& rng);

    void step(FlatParams& params, double loss, Rng* rng) override;
    std::string kind() const override { return "ecd_q1"; }
    OptimizerState state() const override;
    void load_state(const OptimizerState& s) override;
    const std::vector<double>* velocity() const override { return u_.empty() ? nullptr : &u_; }

    // log |momentum| = -kappa log(F - F0) for the most recent step; the
    // conserved-quantity bookkeeping is kept in log space for the same
    // overflow reasons as the turn impulse.
    double log_momentum_norm() const { return log_pi_; }
    const EcdQ1Config& config() const { return cfg_; }

  private:
    EcdQ1Config cfg_;
    std::vector<double> u_;
    int64_t step_count_ = 0;
    double log_pi_ = 0.0;
};

// Loss callback for the flat dynamical systems: fills `grad` and returns F.
using LossFn = std::function<double(const std::vector<double>& theta, std::vector<double>& grad)>;

struct EcdVmConfig {
    double step = 1e-3;
    double eta = 1.0;
    double f0 = 0.0;
    int max_fp_iters = 100;
    double fp_tol = 1e-14;
};

// Variable-mass energy-conserving dynamics: H = |p|^2 (F - F0)^eta / 2, i.e.
// mass m = (F - F0)^(-eta). Integrated with the generalized (implicit)
// Stormer-Verlet scheme, which is symplectic for this non-separable
// Hamiltonian; the two implicit half-stages are solved by fixed-point
// iteration.
class EcdVm {
  public:
    EcdVm(EcdVmConfig cfg, std::vector<double> theta0, std::vector<double> v0,
          const LossFn& loss);

    void step(const LossFn& loss);

    const std::vector<double>& theta() const { return theta_; }
    const std::vector<double>& momentum() const { return p_; }
    std::vector<double> velocity() const;  // theta-dot = p (F-F0)^eta
    double energy() const { return energy_; }
    double initial_energy() const { return energy0_; }
    double loss_value() const { return f_; }

  private:
    double mass_power(double f) const;  // (F - F0)^eta with the F<=F0 guard

    EcdVmConfig cfg_;
    std::vector<double> theta_, p_, grad_;
    double f_ = 0.0;
    double energy_ = 0.0, energy0_ = 0.0;
};

struct HamTrajectory {
    std::vector<double> ts;
    std::vector<std::vector<double>> thetas;
    std::vector<std::vector<double>> velocities;
    std::vector<double> energies;  // physical energy m|v|^2/2 + V(theta)
};

// Leapfrog integration of the time-dependent Hamiltonian
//   H(t) = e^{-f t} |p|^2 / (2m) + e^{f t} V(theta),
// whose flow is heavy-ball/momentum descent in disguise: friction f damps the
// physical energy while H's phase-space flow stays volume-preserving.
HamTrajectory sgdm_hamiltonian_integrate(const LossFn& potential, std::vector<double> theta0,
                                         std::vector<double> v0, double mass, double friction,
                                         double h, int n_steps);

}  // namespace sblab
