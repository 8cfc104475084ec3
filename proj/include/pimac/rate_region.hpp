// Rate-profile Pareto boundary through the semidefinite relaxation.
#pragma once

#include "pimac/model.hpp"
#include "pimac/sweep.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace pimac {

struct SdrData {
    std::array<Vec, 4> a, b;
    std::array<CVec, 4> at, bt;
    std::array<Mat, 4> W, Z;
    std::array<CMat, 4> At, Bt;  // conj(x) x^T so that Tr(A c c^H) = |x^T c|^2
    std::array<Mat, 3> M, Nm;
    std::array<Mat, 3> E;
    Vec caps;
    double sigma2 = 1.0;
};

SdrData build_sdr_data(const ChannelInstance& ch);

struct SdrSolution {
    Mat C;
    CMat Ct;
    double R = 0.0;  // nats
    int rank_C = 0;
    int rank_Ct = 0;
};

// thresholds[q] in nats for row q (L1, L2, L3, L4); nullopt drops the row.
using RowThresholds = std::array<std::optional<double>, 4>;

std::optional<SdrSolution> sdr_feasible_rows(const RowThresholds& thr, const SdrData& d, bool proper_only,
                                             const SolverConfig& cfg);
std::optional<SdrSolution> sdr_feasible(double R, const RateProfile& alpha, const SdrData& d, bool proper_only,
                                        const SolverConfig& cfg);

// Upper end for the bisection: sum of interference-free single-link capacities, nats.
double bisection_upper(const ChannelInstance& ch);

struct RegionPoint {
    bool ok = false;
    std::string error;
    double sum_rate = 0.0;         // bits, achieved by the recovered covariances
    std::array<double, 3> rates{};  // alpha * sum_rate
    double relaxation = 0.0;       // bits, largest feasible R of the relaxation
    Vec c;
    CVec ct;
    RateBounds audit;
    int rank_C = 0;
    int rank_Ct = 0;
    int rand_index = -1;
    double rand_objective = 0.0;  // best randomized candidate before polishing, bits
};

struct RegionOptions {
    bool proper_only = false;
    bool polish = true;       // local refinement of the randomized candidates
    bool nest_proper = true;  // improper runs also start from the proper solution
};

RegionPoint max_sum_rate(const RateProfile& alpha, const ChannelInstance& ch, const SolverConfig& cfg,
                         const RegionOptions& opt = {});

struct P2pPoint {
    bool ok = false;
    std::string error;
    double r3 = 0.0;  // bits
    double relaxation = 0.0;
    Vec c;
    CVec ct;
    RateBounds audit;
};

P2pPoint max_p2p_given_mac(double r_mac, const ChannelInstance& ch, const SolverConfig& cfg,
                           const RegionOptions& opt = {});

std::vector<RegionPoint> pareto_sweep(const ChannelInstance& ch, const std::vector<RateProfile>& grid,
                                      const SolverConfig& cfg, const RegionOptions& opt = {},
                                      Exec exec = Exec::Parallel);

// Every (i, j, n-i-j)/n on the simplex, n = resolution.
std::vector<RateProfile> simplex_grid(int resolution);

}  // namespace pimac
