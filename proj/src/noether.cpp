#include "sblab/noether.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>

#include <json.hpp>

namespace sblab {

namespace {

double sq_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

std::vector<double> transpose(const std::vector<double>& a, int64_t rows, int64_t cols) {
    std::vector<double> t(a.size());
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j) t[static_cast<size_t>(j * rows + i)] = a[static_cast<size_t>(i * cols + j)];
    return t;
}

std::vector<double> slice(const FlatParams& fp, const std::vector<double>& flat,
                          const std::string& name) {
    auto [begin, end] = fp.range_of(name);
    if (end > static_cast<int64_t>(flat.size())) {
        throw ShapeError("velocity vector is shorter than the parameter registry");
    }
    return std::vector<double>(flat.begin() + begin, flat.begin() + end);
}

}  // namespace

void SectorSnapshot::validate() const {
    if (rows <= 0 || cols <= 0) throw ShapeError("sector snapshot needs positive dims");
    size_t want = static_cast<size_t>(rows * cols);
    if (w_a.size() != want || w_b.size() != want || u_a.size() != want || u_b.size() != want) {
        throw ShapeError("sector snapshot members must all be rows x cols");
    }
}

std::vector<double> l_tensor(const SectorSnapshot& s) {
    s.validate();
    size_t d = static_cast<size_t>(s.cols);
    std::vector<double> m(d * d, 0.0);
    gemm_tn(s.cols, s.cols, s.rows, s.w_a.data(), s.u_a.data(), m.data());
    gemm_tn(s.cols, s.cols, s.rows, s.w_b.data(), s.u_b.data(), m.data(), 1.0, 1.0);
    std::vector<double> l(d * d);
    for (size_t i = 0; i < d; ++i)
        for (size_t j = 0; j < d; ++j) l[i * d + j] = m[i * d + j] - m[j * d + i];
    return l;
}

double jtilde(const SectorSnapshot& s) {
    auto l = l_tensor(s);
    return std::sqrt(sq_norm(l) / 2.0);
}

double j_physical(const SectorSnapshot& s) { return s.mass * jtilde(s); }

std::optional<double> f_rot(const SectorSnapshot& s) {
    double w2 = sq_norm(s.w_a) + sq_norm(s.w_b);
    double u2 = sq_norm(s.u_a) + sq_norm(s.u_b);
    if (w2 == 0.0 || u2 == 0.0) return std::nullopt;
    double j = jtilde(s);
    double f2 = static_cast<double>(s.cols) * j * j / (2.0 * w2 * u2);
    return std::sqrt(std::clamp(f2, 0.0, 1.0));
}

std::optional<double> f_meaningful(const SectorSnapshot& s) {
    auto fr = f_rot(s);
    if (!fr) return std::nullopt;
    return std::sqrt(std::clamp(1.0 - *fr * *fr, 0.0, 1.0));
}

DriftRatio weight_drift_ratio(int64_t rows, int64_t cols, const std::vector<double>& w_a0,
                              const std::vector<double>& w_b0, const std::vector<double>& w_a1,
                              const std::vector<double>& w_b1) {
    size_t want = static_cast<size_t>(rows * cols);
    if (w_a0.size() != want || w_b0.size() != want || w_a1.size() != want ||
        w_b1.size() != want) {
        throw ShapeError("drift ratio needs four rows x cols matrices");
    }
    double da2 = 0.0, db2 = 0.0;
    for (size_t i = 0; i < want; ++i) {
        da2 += (w_a1[i] - w_a0[i]) * (w_a1[i] - w_a0[i]);
        db2 += (w_b1[i] - w_b0[i]) * (w_b1[i] - w_b0[i]);
    }
    size_t rr = static_cast<size_t>(rows * rows);
    std::vector<double> inv0(rr, 0.0), inv1(rr, 0.0);
    gemm_nt(rows, rows, cols, w_a0.data(), w_b0.data(), inv0.data());
    gemm_nt(rows, rows, cols, w_a1.data(), w_b1.data(), inv1.data());
    double dinv2 = 0.0;
    for (size_t i = 0; i < rr; ++i) dinv2 += (inv1[i] - inv0[i]) * (inv1[i] - inv0[i]);

    DriftRatio out;
    out.weight_change = std::sqrt(da2) + std::sqrt(db2);
    out.invariant_change = std::sqrt(dinv2);
    // gauge motion leaves the invariant changed only by round-off, so the
    // guard is relative to the invariant's own scale rather than exact zero
    double n0 = 0.0, n1 = 0.0;
    for (size_t i = 0; i < rr; ++i) {
        n0 += inv0[i] * inv0[i];
        n1 += inv1[i] * inv1[i];
    }
    double floor = 1e-12 * std::max(1.0, std::sqrt(std::max(n0, n1)));
    if (out.invariant_change < floor) {
        out.infinite = true;
        out.ratio = std::numeric_limits<double>::infinity();
    } else {
        out.ratio = out.weight_change / out.invariant_change;
    }
    return out;
}

namespace {

std::pair<std::vector<double>, std::vector<double>> head_pair(const Model& m, int layer,
                                                              int head, Sector sector) {
    if (layer < 0 || layer >= m.cfg.n_layers || head < 0 || head >= m.cfg.n_heads) {
        throw ConfigError("layer/head out of range");
    }
    const auto& hd = m.layers[static_cast<size_t>(layer)].heads[static_cast<size_t>(head)];
    int64_t C = m.cfg.d_model, dk = m.cfg.d_head();
    if (sector == Sector::qk) return {hd.w_q->value, hd.w_k->value};
    return {hd.w_v->value, transpose(hd.w_o->value, dk, C)};
}

}  // namespace

DriftRatio weight_drift_ratio(const Model& a, const Model& b, int layer, int head,
                              Sector sector) {
    auto [a0, b0] = head_pair(a, layer, head, sector);
    auto [a1, b1] = head_pair(b, layer, head, sector);
    return weight_drift_ratio(a.cfg.d_model, a.cfg.d_head(), a0, b0, a1, b1);
}

SectorSnapshot extract_sector(const Model& m, const FlatParams& fp,
                              const std::vector<double>& velocity, int layer, int head,
                              Sector sector, int64_t step) {
    SectorSnapshot s;
    s.sector = sector;
    s.rows = m.cfg.d_model;
    s.cols = m.cfg.d_head();
    s.step = step;
    s.layer = layer;
    s.head = head;
    std::string pre = "layer" + std::to_string(layer) + ".head" + std::to_string(head) + ".";
    auto [wa, wb] = head_pair(m, layer, head, sector);
    s.w_a = std::move(wa);
    s.w_b = std::move(wb);
    if (static_cast<int64_t>(velocity.size()) != fp.size()) {
        throw ShapeError("velocity vector does not match the parameter registry size");
    }
    if (sector == Sector::qk) {
        s.u_a = slice(fp, velocity, pre + "w_q");
        s.u_b = slice(fp, velocity, pre + "w_k");
    } else {
        s.u_a = slice(fp, velocity, pre + "w_v");
        // transposing both the output projection and its velocity slice also
        // flips the sign its generator enters with, so the same-pairing
        // l tensor already yields the sector's true charge
        s.u_b = transpose(slice(fp, velocity, pre + "w_o"), s.cols, s.rows);
    }
    s.validate();
    return s;
}

std::vector<SectorSnapshot> snapshot_all(const Model& m, const FlatParams& fp,
                                         const std::vector<double>& velocity, int64_t step) {
    std::vector<SectorSnapshot> out;
    for (int l = 0; l < m.cfg.n_layers; ++l) {
        for (int h = 0; h < m.cfg.n_heads; ++h) {
            out.push_back(extract_sector(m, fp, velocity, l, h, Sector::qk, step));
            out.push_back(extract_sector(m, fp, velocity, l, h, Sector::vo, step));
        }
    }
    return out;
}

std::string sector_name(Sector s) { return s == Sector::qk ? "qk" : "vo"; }

NoetherReport build_report(const std::vector<SectorSnapshot>& snaps) {
    NoetherReport rep;
    rep.series.reserve(snaps.size());
    for (const auto& s : snaps) {
        NoetherSample row;
        row.step = s.step;
        row.layer = s.layer;
        row.head = s.head;
        row.sector = s.sector;
        row.jtilde = jtilde(s);
        row.j_physical = s.mass * row.jtilde;
        row.f_rot = f_rot(s);
        row.f_meaningful = f_meaningful(s);
        rep.series.push_back(std::move(row));
    }
    return rep;
}

double NoetherReport::max_jtilde(Sector sector) const {
    double best = 0.0;
    for (const auto& r : series)
        if (r.sector == sector) best = std::max(best, std::abs(r.jtilde));
    return best;
}

double NoetherReport::max_departure(Sector sector) const {
    // first and last jtilde per (layer, head)
    std::map<std::pair<int, int>, std::pair<const NoetherSample*, const NoetherSample*>> ends;
    for (const auto& r : series) {
        if (r.sector != sector) continue;
        auto& e = ends[{r.layer, r.head}];
        if (!e.first || r.step < e.first->step) e.first = &r;
        if (!e.second || r.step >= e.second->step) e.second = &r;
    }
    double best = 0.0;
    for (auto& [key, e] : ends) {
        best = std::max(best, std::abs(e.second->jtilde - e.first->jtilde));
    }
    return best;
}

std::string NoetherReport::to_tsv() const {
    std::ostringstream os;
    os << "step\tlayer\thead\tsector\tjtilde\tf_rot\tf_meaningful\n";
    os.precision(17);
    for (const auto& r : series) {
        os << r.step << '\t' << r.layer << '\t' << r.head << '\t' << sector_name(r.sector)
           << '\t' << r.jtilde << '\t';
        if (r.f_rot) {
            os << *r.f_rot;
        } else {
            os << "absent";
        }
        os << '\t';
        if (r.f_meaningful) {
            os << *r.f_meaningful;
        } else {
            os << "absent";
        }
        os << '\n';
    }
    return os.str();
}

std::string NoetherReport::summary_json() const {
    nlohmann::json heads = nlohmann::json::array();
    std::map<std::tuple<int, int, std::string>,
             std::pair<const NoetherSample*, const NoetherSample*>>
        ends;
    for (const auto& r : series) {
        auto& e = ends[{r.layer, r.head, sector_name(r.sector)}];
        if (!e.first || r.step < e.first->step) e.first = &r;
        if (!e.second || r.step >= e.second->step) e.second = &r;
    }
    for (auto& [key, e] : ends) {
        auto [layer, head, sector] = key;
        double first = e.first->jtilde, last = e.second->jtilde;
        nlohmann::json h = {
            {"layer", layer},       {"head", head},
            {"sector", sector},     {"jtilde_first", first},
            {"jtilde_last", last},  {"drift_abs", std::abs(last - first)},
        };
        h["drift_pct"] =
            std::abs(first) > 0.0 ? 100.0 * std::abs(last - first) / std::abs(first) : 0.0;
        if (e.second->f_rot) h["f_rot_last"] = *e.second->f_rot;
        heads.push_back(std::move(h));
    }
    nlohmann::json out = {
        {"heads", heads},
        {"max_jtilde_qk", max_jtilde(Sector::qk)},
        {"max_jtilde_vo", max_jtilde(Sector::vo)},
        {"max_departure_qk", max_departure(Sector::qk)},
        {"max_departure_vo", max_departure(Sector::vo)},
    };
    return out.dump(2);
}

}  // namespace sblab
