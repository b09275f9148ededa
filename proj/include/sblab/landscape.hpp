#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "sblab/optim.hpp"

namespace sblab {

// Ring-minimum surface f = (x^2 + y^2 - 1 + z)^2; z is a per-step
// perturbation standing in for mini-batch noise and is held fixed across the
// evaluations belonging to one optimizer step.
struct SombreroPoint {
    double f = 0.0;
    double gx = 0.0;
    double gy = 0.0;
};
SombreroPoint sombrero_eval(double x, double y, double z);

enum class OptKind { sgdm, adamw, ecd_vm, ecd_q1 };
std::string opt_kind_name(OptKind k);
OptKind opt_kind_from_name(const std::string& s);

struct TrajectoryConfig {
    OptKind kind = OptKind::sgdm;
    int steps = 10000;
    double start_x = 2.0;
    double start_y = 0.0;
    double noise_std = 0.0;
    // equal seeds give every optimizer the identical surface sequence
    uint64_t noise_seed = 1;
    double divergence_radius = 1e3;
    SgdmConfig sgdm;
    AdamWConfig adamw;
    EcdVmConfig vm;        // vm.f0 must sit strictly below the surface minimum
    double vm_speed = 1.0;
    EcdQ1Config q1;
};

// Per-step rows; the loss column is the unperturbed surface value. The
// velocity feeding L_z = x v_y - y v_x is the engine's own: the momentum
// buffer for sgdm, the unit velocity for ecd_q1, theta-dot for ecd_vm, and
// the position delta for adamw, which has no velocity state.
struct Trajectory2D {
    std::vector<double> x, y, loss, r, theta, lz;  // theta unwrapped
    int steps_taken = 0;
    bool diverged = false;  // left the divergence radius, rows truncated
    bool aborted = false;   // integrator failure, rows truncated
    std::string to_tsv() const;
};

Trajectory2D run_trajectory(const TrajectoryConfig& cfg);

// 1-d loss for the stationary-density study: fills dgrad, returns F.
using Potential1D = std::function<double(double theta, double& dgrad)>;

struct LiouvilleConfig {
    double eta = 1.0;
    double f0 = 0.0;
    double step = 1e-3;
    int64_t max_steps = 2000000;
    double window_lo = 1.0;
    double window_hi = 3.0;
    int bins = 40;
    double start = 0.5;   // left of the window, moving right
    double speed = 1.0;
    int64_t min_samples = 500;
};

struct LiouvilleReport {
    int64_t steps_taken = 0;  // integrator steps over the whole traversal
    int64_t in_window = 0;
    double ks = 0.0;              // empirical visit CDF vs integrated target
    double exponent_fit = 0.0;    // fitted power of (F - F0) in the density
    double exponent_target = 0.0; // -eta d / 2 with d = 1
    std::vector<double> bin_center, bin_density, target_density;
    std::string to_tsv() const;
};

// Runs the variable-mass engine through [window_lo, window_hi] once and
// compares the visit distribution against the stationary density
// (F - F0)^(-eta/2), integrated numerically over the window. Rejects windows
// where that density is non-normalizable (the loss touching F0 inside).
LiouvilleReport liouville_1d(const Potential1D& f, const LiouvilleConfig& cfg);

// KS distance between the angular marginal of a 2-d variable-mass run and
// the uniform distribution on the circle.
double angular_ks_2d(const LossFn& f, const EcdVmConfig& cfg, std::array<double, 2> start,
                     std::array<double, 2> v0, int64_t steps);

}  // namespace sblab
