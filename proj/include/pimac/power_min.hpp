// Power minimisation under SINR or rate demands.
#pragma once

#include "pimac/model.hpp"
#include "pimac/rate_region.hpp"

#include <optional>
#include <string>
#include <vector>

namespace pimac {

enum class PowerStatus { Converged, Infeasible, IterLimit };
const char* to_string(PowerStatus s);

// gamma[j][k]: SINR target of real stream k of user j.
using StreamTargets = std::vector<std::vector<double>>;
StreamTargets uniform_targets(int J, int streams, double gamma);

// Improper curves read gamma per real stream; PerUser converts a per-user
// target to the per-stream value with the same rate, sqrt(1 + g) - 1.
enum class SinrSemantics { PerStream, PerUser };
double stream_target(double gamma, SinrSemantics s);

struct PowerResult {
    PowerStatus status = PowerStatus::Infeasible;
    double total = 0.0;  // watts per channel use
    Vec per_user;
    StreamLayout layout;       // SINR problems
    std::vector<Mat> Q;        // rate problems, 2N x 2N each
    std::vector<int> ranks;    // joint SDP: rank of each Q_jk, user-major
    int iterations = 0;
    std::vector<double> trace;  // total power after each feasible iterate
    std::string note;
};

struct PowerOptions {
    Decoding decoding = Decoding::Parallel;
    std::vector<int> mac_order;  // empty: natural order
    double design_power = 1.0;   // per-stream power while designing beamformers
    int max_iter = 200;
    double tol = 1e-6;
    int starts = 4;  // deterministic start 0 plus random unit beamformers
    std::uint64_t seed = 1;
};

Vec mmse_receiver(const Mat& F, const Mat& G, const Vec& v);

// Alternating forward/reciprocal MMSE at fixed powers. change_trace, if
// given, receives the max beamformer change of every iteration.
StreamLayout algorithm1_beamformers(const ChannelInstance& ch, const StreamLayout& init, int maxiter, double tol,
                                    std::vector<double>* change_trace = nullptr);

PowerResult power_lp(const ChannelInstance& ch, const StreamLayout& layout, const StreamTargets& gamma,
                     const SolverConfig& cfg = {});

StreamLayout initial_layout(const ChannelInstance& ch, const PowerOptions& opt, int start);

PowerResult separate_min_power(const ChannelInstance& ch, const StreamTargets& gamma, const PowerOptions& opt,
                               const SolverConfig& cfg = {});

// seeds: extra starting layouts (e.g. the separate solution); the best
// achievable point over every start is returned.
PowerResult joint_min_power(const ChannelInstance& ch, const StreamTargets& gamma, const PowerOptions& opt,
                            const SolverConfig& cfg = {}, const std::vector<StreamLayout>& seeds = {});

// Complex scalar power control, one SINR target per user.
PowerResult proper_min_power_sinr(const ChannelInstance& ch, const Vec& gamma, Decoding decoding,
                                  const std::vector<int>& mac_order = {}, const SolverConfig& cfg = {});

struct FenchelTerm {
    Mat A;
    Mat X;
};
// log|G| + Tr(G^-1 (sum A X A' + I)) - a, an upper bound on log|sum A X A' + I|.
double fenchel_upper_bound(const Mat& Gamma, const std::vector<FenchelTerm>& terms, int a);

struct CcpOptions {
    std::vector<std::vector<Mat>> seeds;  // per-channel-use covariances, 2N x 2N
    bool seed_proper = true;
    int random_starts = 6;  // random covariance starts on top of the default one
    int max_iter = 300;
    double tau0 = 1.0;
    double tau_mu = 2.0;
    double tau_max = 1e4;
    int stall_iter = 20;  // penalty iterations at tau_max without slack progress
};

PowerResult ccp_min_power_rates(const ChannelInstance& ch, const Vec& beta, int N, const std::vector<int>& order,
                                const SolverConfig& cfg = {}, const CcpOptions& opt = {});

PowerResult proper_min_power_rates(const ChannelInstance& ch, const Vec& beta, const std::vector<int>& order,
                                   const SolverConfig& cfg = {});

// Block replication I_N (x) Q of a per-symbol covariance.
Mat replicate(const Mat& Q, int N);

struct SuccessiveResult {
    RegionPoint point;
    std::array<double, 3> rates{};
    double p_prime = 0.0;
    double p1 = 0.0;
    double pN = 0.0;
    int N = 1;
    std::optional<double> saving1;  // 1 - p1 / p_prime
    std::optional<double> savingN;  // 1 - pN / p1
    std::vector<Mat> Q1, QN;
    std::vector<int> order1, orderN;
    std::string error;
};

SuccessiveResult successive_opt(const RateProfile& alpha, const ChannelInstance& ch, int N,
                                const SolverConfig& cfg = {});

}  // namespace pimac
