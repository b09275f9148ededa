#include "sblab/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sblab/tensor.hpp"

namespace sblab {

SombreroPoint sombrero_eval(double x, double y, double z) {
    double s = x * x + y * y - 1.0 + z;
    SombreroPoint p;
    p.f = s * s;
    p.gx = 2.0 * s * 2.0 * x;
    p.gy = 2.0 * s * 2.0 * y;
    return p;
}

std::string opt_kind_name(OptKind k) {
    switch (k) {
        case OptKind::sgdm: return "sgdm";
        case OptKind::adamw: return "adamw";
        case OptKind::ecd_vm: return "ecd_vm";
        case OptKind::ecd_q1: return "ecd_q1";
    }
    throw ConfigError("bad optimizer kind");
}

OptKind opt_kind_from_name(const std::string& s) {
    if (s == "sgdm") return OptKind::sgdm;
    if (s == "adamw") return OptKind::adamw;
    if (s == "ecd_vm") return OptKind::ecd_vm;
    if (s == "ecd_q1") return OptKind::ecd_q1;
    throw ConfigError("unknown optimizer kind '" + s + "'");
}

namespace {

void unwrap_angle(double raw, double& prev_raw, double& unwrapped) {
    double d = raw - prev_raw;
    while (d > M_PI) d -= 2.0 * M_PI;
    while (d < -M_PI) d += 2.0 * M_PI;
    unwrapped += d;
    prev_raw = raw;
}

}  // namespace

Trajectory2D run_trajectory(const TrajectoryConfig& cfg) {
    if (cfg.steps <= 0) throw ConfigError("trajectory needs steps > 0");
    Trajectory2D out;
    Rng noise(cfg.noise_seed, Stream::noise_z);
    Rng refresh(cfg.noise_seed, Stream::nu_refresh);

    TensorPtr pos = Tensor::from({2}, {cfg.start_x, cfg.start_y}, true);
    FlatParams fp({{"pos", pos}});

    double z = 0.0;
    auto eval_into_grads = [&]() {
        auto p = sombrero_eval(pos->value[0], pos->value[1], z);
        pos->ensure_grad();
        pos->grad[0] = p.gx;
        pos->grad[1] = p.gy;
        return p.f;
    };

    std::unique_ptr<Optimizer> opt;
    std::unique_ptr<EcdVm> vm;
    LossFn vm_loss = [&](const std::vector<double>& th, std::vector<double>& g) {
        auto p = sombrero_eval(th[0], th[1], z);
        g[0] = p.gx;
        g[1] = p.gy;
        return p.f;
    };

    switch (cfg.kind) {
        case OptKind::sgdm: opt = std::make_unique<Sgdm>(cfg.sgdm); break;
        case OptKind::adamw: opt = std::make_unique<AdamW>(cfg.adamw); break;
        case OptKind::ecd_q1: opt = std::make_unique<EcdQ1>(cfg.q1); break;
        case OptKind::ecd_vm: break;
    }

    z = cfg.noise_std > 0.0 ? cfg.noise_std * noise.normal() : 0.0;
    if (cfg.kind == OptKind::ecd_q1) {
        eval_into_grads();
        static_cast<EcdQ1*>(opt.get())->init_velocity(fp, refresh);
    } else if (cfg.kind == OptKind::ecd_vm) {
        auto p0 = sombrero_eval(cfg.start_x, cfg.start_y, z);
        double gn = std::hypot(p0.gx, p0.gy);
        std::vector<double> v0(2, 0.0);
        if (gn > 0.0) {
            v0 = {-cfg.vm_speed * p0.gx / gn, -cfg.vm_speed * p0.gy / gn};
        } else {
            v0 = {cfg.vm_speed, 0.0};
        }
        vm = std::make_unique<EcdVm>(cfg.vm, std::vector<double>{cfg.start_x, cfg.start_y},
                                     v0, vm_loss);
    }

    double prev_raw = std::atan2(cfg.start_y, cfg.start_x);
    double unwrapped = prev_raw;
    double px = cfg.start_x, py = cfg.start_y;

    auto record = [&](double vx, double vy) {
        double cx = cfg.kind == OptKind::ecd_vm ? vm->theta()[0] : pos->value[0];
        double cy = cfg.kind == OptKind::ecd_vm ? vm->theta()[1] : pos->value[1];
        out.x.push_back(cx);
        out.y.push_back(cy);
        out.loss.push_back(sombrero_eval(cx, cy, 0.0).f);
        out.r.push_back(std::hypot(cx, cy));
        unwrap_angle(std::atan2(cy, cx), prev_raw, unwrapped);
        out.theta.push_back(unwrapped);
        out.lz.push_back(cx * vy - cy * vx);
    };

    record(0.0, 0.0);
    for (int t = 0; t < cfg.steps; ++t) {
        if (t > 0) z = cfg.noise_std > 0.0 ? cfg.noise_std * noise.normal() : 0.0;
        px = out.x.back();
        py = out.y.back();
        if (cfg.kind == OptKind::ecd_vm) {
            try {
                vm->step(vm_loss);
            } catch (const NumericError&) {
                out.aborted = true;
                break;
            }
            auto v = vm->velocity();
            record(v[0], v[1]);
        } else {
            double f = eval_into_grads();
            opt->step(fp, f, &refresh);
            const auto* v = opt->velocity();
            if (v) {
                record((*v)[0], (*v)[1]);
            } else {
                record(pos->value[0] - px, pos->value[1] - py);
            }
        }
        out.steps_taken = t + 1;
        if (out.r.back() > cfg.divergence_radius) {
            out.diverged = true;
            break;
        }
    }
    return out;
}

std::string Trajectory2D::to_tsv() const {
    std::ostringstream os;
    os << "step\tx\ty\tloss\tr\ttheta\tlz\n";
    os.precision(17);
    for (size_t i = 0; i < x.size(); ++i) {
        os << i << '\t' << x[i] << '\t' << y[i] << '\t' << loss[i] << '\t' << r[i] << '\t'
           << theta[i] << '\t' << lz[i] << '\n';
    }
    return os.str();
}

LiouvilleReport liouville_1d(const Potential1D& f, const LiouvilleConfig& cfg) {
    if (cfg.window_hi <= cfg.window_lo) throw ConfigError("window_hi must exceed window_lo");
    if (cfg.bins < 4) throw ConfigError("need at least 4 bins");
    if (cfg.start >= cfg.window_lo) {
        throw ConfigError("start must lie left of the window for a single traversal");
    }

    // integrate the target density over the window; reject non-normalizable
    const int grid_n = 20001;
    double width = cfg.window_hi - cfg.window_lo;
    double dg = width / (grid_n - 1);
    std::vector<double> gtheta(grid_n), gdens(grid_n), gcdf(grid_n, 0.0);
    for (int i = 0; i < grid_n; ++i) {
        double th = cfg.window_lo + dg * i;
        double slope = 0.0;
        double fv = f(th, slope);
        double excess = fv - cfg.f0;
        if (!(excess > 0.0)) {
            throw NumericError(
                "stationary density is non-normalizable: the loss touches F0 inside the "
                "window");
        }
        gtheta[i] = th;
        gdens[i] = std::pow(excess, -cfg.eta / 2.0);
        if (!std::isfinite(gdens[i])) {
            throw NumericError("stationary density overflowed inside the window");
        }
    }
    for (int i = 1; i < grid_n; ++i) {
        gcdf[i] = gcdf[i - 1] + 0.5 * (gdens[i] + gdens[i - 1]) * dg;
    }
    double total = gcdf.back();
    for (auto& c : gcdf) c /= total;

    LossFn loss1 = [&](const std::vector<double>& th, std::vector<double>& g) {
        double slope = 0.0;
        double fv = f(th[0], slope);
        g[0] = slope;
        return fv;
    };
    EcdVmConfig vmc;
    vmc.step = cfg.step;
    vmc.eta = cfg.eta;
    vmc.f0 = cfg.f0;
    EcdVm vm(vmc, {cfg.start}, {cfg.speed}, loss1);

    std::vector<double> visits;
    int64_t taken = 0;
    for (int64_t t = 0; t < cfg.max_steps; ++t) {
        vm.step(loss1);
        ++taken;
        double th = vm.theta()[0];
        if (th >= cfg.window_hi) break;
        if (th >= cfg.window_lo) visits.push_back(th);
    }
    LiouvilleReport rep;
    rep.steps_taken = taken;
    rep.in_window = static_cast<int64_t>(visits.size());
    rep.exponent_target = -cfg.eta / 2.0;
    if (rep.in_window < cfg.min_samples) {
        throw NumericError("window traversal produced too few samples; reduce the step "
                           "size or widen the window");
    }

    // one-sample KS against the integrated target
    std::sort(visits.begin(), visits.end());
    double n = static_cast<double>(visits.size());
    double ks = 0.0;
    for (size_t i = 0; i < visits.size(); ++i) {
        double pos = (visits[i] - cfg.window_lo) / dg;
        int lo = std::clamp(static_cast<int>(pos), 0, grid_n - 2);
        double frac = pos - lo;
        double cdf = gcdf[static_cast<size_t>(lo)] * (1.0 - frac) +
                     gcdf[static_cast<size_t>(lo) + 1] * frac;
        ks = std::max(ks, std::abs(static_cast<double>(i) / n - cdf));
        ks = std::max(ks, std::abs(static_cast<double>(i + 1) / n - cdf));
    }
    rep.ks = ks;

    // log-log fit of the per-bin visit density against F - F0
    double bw = width / cfg.bins;
    std::vector<int64_t> counts(static_cast<size_t>(cfg.bins), 0);
    for (double th : visits) {
        int b = std::min(static_cast<int>((th - cfg.window_lo) / bw), cfg.bins - 1);
        counts[static_cast<size_t>(b)]++;
    }
    std::vector<double> lx, ly;
    for (int b = 0; b < cfg.bins; ++b) {
        double center = cfg.window_lo + bw * (b + 0.5);
        double slope = 0.0;
        double excess = f(center, slope) - cfg.f0;
        double dens = static_cast<double>(counts[static_cast<size_t>(b)]) / (n * bw);
        rep.bin_center.push_back(center);
        rep.bin_density.push_back(dens);
        rep.target_density.push_back(std::pow(excess, -cfg.eta / 2.0) / (total));
        if (counts[static_cast<size_t>(b)] > 0) {
            lx.push_back(std::log(excess));
            ly.push_back(std::log(dens));
        }
    }
    if (lx.size() < 3) throw NumericError("too few occupied bins for an exponent fit");
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i];
        my += ly[i];
    }
    mx /= static_cast<double>(lx.size());
    my /= static_cast<double>(lx.size());
    double sxx = 0.0, sxy = 0.0;
    for (size_t i = 0; i < lx.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    if (sxx == 0.0) throw NumericError("loss is constant across the window; exponent "
                                       "fit is undefined");
    rep.exponent_fit = sxy / sxx;
    return rep;
}

std::string LiouvilleReport::to_tsv() const {
    std::ostringstream os;
    os << "bin_center\tvisit_density\ttarget_density\n";
    os.precision(17);
    for (size_t i = 0; i < bin_center.size(); ++i) {
        os << bin_center[i] << '\t' << bin_density[i] << '\t' << target_density[i] << '\n';
    }
    return os.str();
}

double angular_ks_2d(const LossFn& f, const EcdVmConfig& cfg, std::array<double, 2> start,
                     std::array<double, 2> v0, int64_t steps) {
    EcdVm vm(cfg, {start[0], start[1]}, {v0[0], v0[1]}, f);
    std::vector<double> angles;
    angles.reserve(static_cast<size_t>(steps));
    for (int64_t t = 0; t < steps; ++t) {
        vm.step(f);
        angles.push_back(std::atan2(vm.theta()[1], vm.theta()[0]));
    }
    std::sort(angles.begin(), angles.end());
    double n = static_cast<double>(angles.size());
    double ks = 0.0;
    for (size_t i = 0; i < angles.size(); ++i) {
        double cdf = (angles[i] + M_PI) / (2.0 * M_PI);
        ks = std::max(ks, std::abs(static_cast<double>(i) / n - cdf));
        ks = std::max(ks, std::abs(static_cast<double>(i + 1) / n - cdf));
    }
    return ks;
}

}  // namespace sblab
