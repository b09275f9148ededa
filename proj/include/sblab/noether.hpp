#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sblab/model.hpp"
#include "sblab/optim.hpp"

namespace sblab {

// One head's weight pair plus the matching velocity slices, all oriented
// (rows, cols) with cols = d_head. For the value-output sector the output
// matrix and its velocity are stored transposed so both members share the
// orientation that the rotation acts on from the right; the transposition
// also absorbs the sign flip of the transposed rotation, so the same-pairing
// l tensor below yields the sector's true charge for both sectors.
struct SectorSnapshot {
    Sector sector = Sector::qk;
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<double> w_a, w_b;
    std::vector<double> u_a, u_b;
    double mass = 1.0;
    int64_t step = 0;
    int layer = 0;
    int head = 0;

    void validate() const;
};

// Antisymmetric cols x cols generator-space image of the velocity:
// sum over members of (W^T u - u^T W).
std::vector<double> l_tensor(const SectorSnapshot& s);

// Aggregate angular momentum |L|_F / sqrt(2); equals the root sum of squares
// of the per-generator charges over the antisymmetric basis e_i e_j^T - e_j e_i^T.
double jtilde(const SectorSnapshot& s);

// Physical current magnitude: mass times the velocity-based aggregate.
double j_physical(const SectorSnapshot& s);

// Fraction of the velocity lying along symmetry orbits,
//   f_rot^2 = cols * jtilde^2 / (2 (|W_a|^2 + |W_b|^2)(|u_a|^2 + |u_b|^2)),
// clamped to [0, 1]. Absent when the weights or the velocity vanish.
std::optional<double> f_rot(const SectorSnapshot& s);

// sqrt(1 - f_rot^2); absent whenever f_rot is.
std::optional<double> f_meaningful(const SectorSnapshot& s);

// (|dW_a| + |dW_b|) / |d(W_a W_b^T)| between two checkpoints of one head.
// A vanishing invariant change (pure gauge motion, or no motion at all)
// makes the ratio infinite.
struct DriftRatio {
    double weight_change = 0.0;
    double invariant_change = 0.0;
    double ratio = 0.0;
    bool infinite = false;
};
DriftRatio weight_drift_ratio(int64_t rows, int64_t cols, const std::vector<double>& w_a0,
                              const std::vector<double>& w_b0, const std::vector<double>& w_a1,
                              const std::vector<double>& w_b1);
DriftRatio weight_drift_ratio(const Model& a, const Model& b, int layer, int head,
                              Sector sector);

// Pulls one head's sector snapshot out of a model plus a flat velocity vector
// aligned with the parameter registry order.
SectorSnapshot extract_sector(const Model& m, const FlatParams& fp,
                              const std::vector<double>& velocity, int layer, int head,
                              Sector sector, int64_t step);

// Both sectors of every head at one step.
std::vector<SectorSnapshot> snapshot_all(const Model& m, const FlatParams& fp,
                                         const std::vector<double>& velocity, int64_t step);

struct NoetherSample {
    int64_t step = 0;
    int layer = 0;
    int head = 0;
    Sector sector = Sector::qk;
    double jtilde = 0.0;
    double j_physical = 0.0;
    std::optional<double> f_rot;
    std::optional<double> f_meaningful;
};

struct NoetherReport {
    std::vector<NoetherSample> series;

    // Largest |jtilde| seen in one sector across the whole series.
    double max_jtilde(Sector sector) const;
    // Largest |jtilde(last) - jtilde(first)| across heads of one sector.
    double max_departure(Sector sector) const;

    // step, layer, head, sector, jtilde, f_rot, f_meaningful; tab separated.
    std::string to_tsv() const;
    // Per-head first/last/drift summary plus sector aggregates.
    std::string summary_json() const;
};

NoetherReport build_report(const std::vector<SectorSnapshot>& snaps);

std::string sector_name(Sector s);

}  // namespace sblab
