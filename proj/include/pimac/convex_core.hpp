// Small dense convex kernel: LP, barrier SDP with log-det rows, bisection,
// rank-1 extraction and Gaussian randomization.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pimac {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;

struct SolverConfig {
    double t0 = 1.0;
    double mu = 10.0;
    int max_newton = 200;
    double newton_tol = 1e-9;
    double tol_feas = 1e-7;
    double tol_bis = 1e-4;  // nats
    int k_rand = 200;
    std::uint64_t seed = 1;
    double gamma_scale = 100.0;
    double eps_ccp = 1e-4;
    int reinit = 10;

    void validate() const;
};

enum class Status { Optimal, Infeasible, Unbounded, NumericFailure };
const char* to_string(Status s);

class InfeasibleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class RandomizationFailed : public std::runtime_error {
public:
    RandomizationFailed(const std::string& what, double bound)
        : std::runtime_error(what), relaxation_bound(bound) {}
    double relaxation_bound;
};

// ---------------------------------------------------------------------------
// Generic barrier program over a vector x:
//   min c'x  s.t.  A_in x <= b_in,  A_eq x = b_eq,
//                  F0 + sum x_k F_k >= 0           (each LMI block)
//                  logdet(M0 + sum x_k M_k) >= d'x + e
// Sparse term lists keep per-user blocks cheap.

using Terms = std::vector<std::pair<int, Mat>>;

struct LmiBlock {
    Mat F0;
    Terms terms;
};

struct LogDetRow {
    Mat M0;
    Terms terms;
    Vec d;  // length n, may be empty (= zero)
    double e = 0.0;
};

struct ConvexProgram {
    int n = 0;
    Vec c;
    Mat A_in;
    Vec b_in;
    Mat A_eq;
    Vec b_eq;
    std::vector<LmiBlock> lmis;
    std::vector<LogDetRow> logdets;
    Vec x_start;  // used when strictly feasible, skipping phase 1
};

struct ConvexResult {
    Status status = Status::NumericFailure;
    Vec x;
    double value = std::numeric_limits<double>::quiet_NaN();
    double dual_bound = -std::numeric_limits<double>::infinity();
    int newton_steps = 0;
    std::string diag;
};

// feasibility_only stops after phase 1 with a strictly feasible x.
ConvexResult solve_barrier(const ConvexProgram& p, const SolverConfig& cfg,
                           bool feasibility_only = false);

// ---------------------------------------------------------------------------
// LP: min c'x  s.t. A x <= b, x >= lb (lb entries may be -inf).

struct LinearProgram {
    Vec c;
    Mat A;
    Vec b;
    Vec lb;
};

struct LpResult {
    Status status = Status::NumericFailure;
    Vec x;
    double value = std::numeric_limits<double>::quiet_NaN();
    double dual_bound = -std::numeric_limits<double>::infinity();
};

LpResult solve_lp(const LinearProgram& lp, const SolverConfig& cfg = {});

// ---------------------------------------------------------------------------
// SDP over symmetric or Hermitian PSD blocks. A trace form is
// sum_b Re Tr(A_b X_b); Hermitian blocks are handled through their real
// 2n x 2n embedding.

struct SdpBlock {
    int dim = 1;
    bool hermitian = false;
};

using TraceForm = std::vector<std::pair<int, CMat>>;

enum class Sense { Le, Ge, Eq };

struct SdpConstraint {
    TraceForm form;
    Sense sense = Sense::Ge;
    double bound = 0.0;
};

// logdet(M0 + sum_j A_j X_{b_j} A_j') >= rhs(X) + rhs_const, real blocks only.
struct SdpLogDet {
    Mat M0;
    std::vector<std::pair<int, Mat>> congruences;
    TraceForm rhs;
    double rhs_const = 0.0;
};

struct SemidefiniteProgram {
    std::vector<SdpBlock> blocks;
    TraceForm objective;
    std::vector<SdpConstraint> constraints;
    std::vector<SdpLogDet> logdets;
};

struct SdpResult {
    Status status = Status::NumericFailure;
    std::vector<CMat> X;
    double value = std::numeric_limits<double>::quiet_NaN();
    double dual_bound = -std::numeric_limits<double>::infinity();
    int newton_steps = 0;
    std::string diag;

    Mat real_block(int b) const { return X.at(b).real(); }
};

SdpResult solve_sdp(const SemidefiniteProgram& sdp, const SolverConfig& cfg = {},
                    bool feasibility_only = false);

// ---------------------------------------------------------------------------

// Largest R in [lo, hi] with oracle(R) true, to within tol.
double bisect(const std::function<bool(double)>& oracle, double lo, double hi, double tol);

struct Rank1 {
    double lambda = 0.0;
    Vec w;
};
Rank1 dominant_rank1(const Mat& M);

struct CRank1 {
    double lambda = 0.0;
    CVec w;
};
CRank1 dominant_rank1(const CMat& M);

// Numerical rank relative to the largest eigenvalue.
int numeric_rank(const Mat& M, double rel_tol = 1e-6);

// Counter-based generator: output k is splitmix64(key + k * golden).
class CounterRng {
public:
    using result_type = std::uint64_t;
    explicit CounterRng(std::uint64_t key, std::uint64_t stream = 0);
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }
    result_type operator()();
    double uniform();  // [0,1)
    double normal();

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index);

struct Candidate {
    Vec xi;
    CVec zeta;
};

struct RandomizeResult {
    Candidate best;
    double objective = -std::numeric_limits<double>::infinity();
    int index = -1;  // -1: eigen candidate
    int feasible_count = 0;
};

// project maps a raw sample onto the original constraint set; evaluate
// returns the objective or nullopt to reject.
RandomizeResult gaussian_randomize(
    const Mat& C, const CMat& Ct, const std::function<Candidate(const Candidate&)>& project,
    const std::function<std::optional<double>(const Candidate&)>& evaluate, int k_rand,
    std::uint64_t seed, double relaxation_bound = std::numeric_limits<double>::infinity());

}  // namespace pimac
