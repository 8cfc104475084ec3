#include "pimac/convex_core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace pimac {

namespace {

// Parameterisation of one block: basis matrices (complex) and their real
// embedding for the PSD constraint.
struct BlockBasis {
    int offset = 0;
    std::vector<CMat> E;
    std::vector<Mat> Er;
};

BlockBasis make_basis(const SdpBlock& b, int offset) {
    BlockBasis out;
    out.offset = offset;
    const int d = b.dim;
    using C = std::complex<double>;
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
            CMat E = CMat::Zero(d, d);
            E(i, j) = 1.0;
            E(j, i) = 1.0;
            out.E.push_back(E);
        }
    if (b.hermitian)
        for (int i = 0; i < d; ++i)
            for (int j = i + 1; j < d; ++j) {
                CMat E = CMat::Zero(d, d);
                E(i, j) = C(0, 1);
                E(j, i) = C(0, -1);
                out.E.push_back(E);
            }
    for (const auto& E : out.E) {
        if (!b.hermitian) {
            out.Er.push_back(E.real());
        } else {
            Mat R(2 * d, 2 * d);
            R << E.real(), -E.imag(), E.imag(), E.real();
            out.Er.push_back(R);
        }
    }
    return out;
}

Vec trace_coeffs(const TraceForm& f, const std::vector<BlockBasis>& bases, int n) {
    Vec a = Vec::Zero(n);
    for (const auto& [b, A] : f) {
        const auto& B = bases.at(b);
        for (size_t k = 0; k < B.E.size(); ++k) a(B.offset + k) += (A * B.E[k]).trace().real();
    }
    return a;
}

}  // namespace

SdpResult solve_sdp(const SemidefiniteProgram& sdp, const SolverConfig& cfg, bool feasibility_only) {
    std::vector<BlockBasis> bases;
    int n = 0;
    for (const auto& b : sdp.blocks) {
        if (b.dim < 1 || b.dim > 16) throw std::invalid_argument("SDP block dimension out of range");
        bases.push_back(make_basis(b, n));
        n += static_cast<int>(bases.back().E.size());
    }
    ConvexProgram p;
    p.n = n;
    p.c = trace_coeffs(sdp.objective, bases, n);

    std::vector<Vec> in_rows, eq_rows;
    std::vector<double> in_b, eq_b;
    for (const auto& c : sdp.constraints) {
        for (const auto& [b, A] : c.form)
            if (b < 0 || b >= static_cast<int>(sdp.blocks.size()))
                throw std::invalid_argument("constraint references undeclared block");
        Vec a = trace_coeffs(c.form, bases, n);
        switch (c.sense) {
            case Sense::Le: in_rows.push_back(a); in_b.push_back(c.bound); break;
            case Sense::Ge: in_rows.push_back(-a); in_b.push_back(-c.bound); break;
            case Sense::Eq: eq_rows.push_back(a); eq_b.push_back(c.bound); break;
        }
    }
    p.A_in.resize(in_rows.size(), n);
    p.b_in.resize(in_rows.size());
    for (size_t i = 0; i < in_rows.size(); ++i) {
        p.A_in.row(i) = in_rows[i].transpose();
        p.b_in(i) = in_b[i];
    }
    p.A_eq.resize(eq_rows.size(), n);
    p.b_eq.resize(eq_rows.size());
    for (size_t i = 0; i < eq_rows.size(); ++i) {
        p.A_eq.row(i) = eq_rows[i].transpose();
        p.b_eq(i) = eq_b[i];
    }

    for (size_t b = 0; b < sdp.blocks.size(); ++b) {
        LmiBlock L;
        int d = sdp.blocks[b].hermitian ? 2 * sdp.blocks[b].dim : sdp.blocks[b].dim;
        L.F0 = Mat::Zero(d, d);
        for (size_t k = 0; k < bases[b].Er.size(); ++k)
            L.terms.emplace_back(bases[b].offset + static_cast<int>(k), bases[b].Er[k]);
        p.lmis.push_back(std::move(L));
    }

    for (const auto& ld : sdp.logdets) {
        LogDetRow R;
        R.M0 = ld.M0;
        const int d = static_cast<int>(ld.M0.rows());
        for (const auto& [b, A] : ld.congruences) {
            if (sdp.blocks.at(b).hermitian)
                throw std::invalid_argument("log-det rows take real blocks only");
            const auto& B = bases[b];
            for (size_t k = 0; k < B.Er.size(); ++k) {
                Mat T = A * B.Er[k] * A.transpose();
                int idx = B.offset + static_cast<int>(k);
                auto it = std::find_if(R.terms.begin(), R.terms.end(),
                                       [&](const auto& t) { return t.first == idx; });
                if (it == R.terms.end())
                    R.terms.emplace_back(idx, T);
                else
                    it->second += T;
            }
        }
        if (d == 0) throw std::invalid_argument("empty log-det row");
        R.d = trace_coeffs(ld.rhs, bases, n);
        R.e = ld.rhs_const;
        p.logdets.push_back(std::move(R));
    }

    auto r = solve_barrier(p, cfg, feasibility_only);
    SdpResult out;
    out.status = r.status;
    out.newton_steps = r.newton_steps;
    out.diag = r.diag;
    if (r.status != Status::Optimal) return out;
    out.value = r.value;
    out.dual_bound = r.dual_bound;
    for (size_t b = 0; b < sdp.blocks.size(); ++b) {
        int d = sdp.blocks[b].dim;
        CMat X = CMat::Zero(d, d);
        for (size_t k = 0; k < bases[b].E.size(); ++k) X += r.x(bases[b].offset + k) * bases[b].E[k];
        out.X.push_back(X);
    }
    return out;
}

double bisect(const std::function<bool(double)>& oracle, double lo, double hi, double tol) {
    if (!(tol > 0) || hi < lo) throw std::invalid_argument("bisect: bad interval or tolerance");
    if (!oracle(lo)) throw InfeasibleError("bisect: lower end infeasible");
    if (oracle(hi)) return hi;
    const double lo0 = lo;
    while (hi - lo > tol) {
        double mid = 0.5 * (lo + hi);
        if (oracle(mid))
            lo = mid;
        else
            hi = mid;
    }
    // One interior probe: a monotone oracle must accept it.
    if (lo > lo0 + tol) {
        double probe = 0.5 * (lo0 + lo);
        if (!oracle(probe)) throw ContractViolation("bisect: oracle is not monotone");
    }
    return lo;
}

namespace {

template <class V>
void fix_sign(V& w) {
    for (int i = 0; i < w.size(); ++i)
        if (std::abs(w(i)) > 1e-12) {
            if constexpr (std::is_same_v<typename V::Scalar, double>) {
                if (w(i) < 0) w = -w;
            } else {
                w *= std::conj(w(i)) / std::abs(w(i));
            }
            return;
        }
}

// Top eigenspace basis; ties resolved by projecting unit vectors in order.
template <class M, class V>
V top_vector(const M& A, double& lambda) {
    Eigen::SelfAdjointEigenSolver<M> es(A);
    const auto& ev = es.eigenvalues();
    const int n = static_cast<int>(A.rows());
    lambda = ev(n - 1);
    double tol = 1e-10 * std::max(1.0, std::abs(lambda));
    int k = 0;
    while (k + 1 < n && lambda - ev(n - 2 - k) <= tol) ++k;
    if (k == 0) return es.eigenvectors().col(n - 1);
    M U = es.eigenvectors().rightCols(k + 1);
    for (int i = 0; i < n; ++i) {
        V p = U * U.row(i).adjoint();
        if (p.norm() > 1e-8) return p / p.norm();
    }
    return es.eigenvectors().col(n - 1);
}

}  // namespace

Rank1 dominant_rank1(const Mat& M) {
    Rank1 r;
    Mat S = 0.5 * (M + M.transpose());
    r.w = top_vector<Mat, Vec>(S, r.lambda);
    fix_sign(r.w);
    return r;
}

CRank1 dominant_rank1(const CMat& M) {
    CRank1 r;
    CMat S = 0.5 * (M + M.adjoint());
    r.w = top_vector<CMat, CVec>(S, r.lambda);
    fix_sign(r.w);
    return r;
}

int numeric_rank(const Mat& M, double rel_tol) {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (M + M.transpose()));
    const auto& ev = es.eigenvalues();
    double top = ev.cwiseAbs().maxCoeff();
    if (top <= 0) return 0;
    int r = 0;
    for (int i = 0; i < ev.size(); ++i)
        if (ev(i) > rel_tol * top) ++r;
    return r;
}

namespace {
std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
}  // namespace

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index) { return splitmix(base ^ splitmix(index)); }

CounterRng::CounterRng(std::uint64_t key, std::uint64_t stream) : key_(splitmix(key) ^ splitmix(~stream)) {}

CounterRng::result_type CounterRng::operator()() { return splitmix(key_ + 0x9e3779b97f4a7c15ULL * counter_++); }

double CounterRng::uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

double CounterRng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double th = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(th);
    have_spare_ = true;
    return r * std::cos(th);
}

RandomizeResult gaussian_randomize(
    const Mat& C, const CMat& Ct, const std::function<Candidate(const Candidate&)>& project,
    const std::function<std::optional<double>(const Candidate&)>& evaluate, int k_rand,
    std::uint64_t seed, double relaxation_bound) {
    RandomizeResult out;
    auto consider = [&](const Candidate& raw, int idx) {
        Candidate c = project(raw);
        auto v = evaluate(c);
        if (!v) return;
        ++out.feasible_count;
        if (*v > out.objective) {
            out.objective = *v;
            out.best = c;
            out.index = idx;
        }
    };

    Candidate eig;
    auto r = dominant_rank1(C);
    eig.xi = std::sqrt(std::max(r.lambda, 0.0)) * r.w;
    if (Ct.size() > 0) {
        auto rc = dominant_rank1(Ct);
        eig.zeta = std::sqrt(std::max(rc.lambda, 0.0)) * rc.w;
    }
    consider(eig, -1);

    // Square roots through eigen-decomposition so singular covariances work.
    auto sqrt_psd = [](const auto& A) {
        using M = std::decay_t<decltype(A)>;
        Eigen::SelfAdjointEigenSolver<M> es(0.5 * (A + A.adjoint()));
        Vec s = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        return M(es.eigenvectors() * s.asDiagonal());
    };
    Mat Lr = sqrt_psd(C);
    CMat Lc = Ct.size() > 0 ? sqrt_psd(Ct) : CMat();
    CounterRng rng(seed);
    for (int k = 0; k < k_rand; ++k) {
        Vec g(C.rows());
        for (int i = 0; i < g.size(); ++i) g(i) = rng.normal();
        Candidate s;
        s.xi = Lr * g;
        if (Ct.size() > 0) {
            CVec gc(Ct.rows());
            for (int i = 0; i < gc.size(); ++i)
                gc(i) = std::complex<double>(rng.normal(), rng.normal()) / std::sqrt(2.0);
            s.zeta = Lc * gc;
        }
        consider(s, k);
    }
    if (out.feasible_count == 0)
        throw RandomizationFailed("no feasible randomization candidate", relaxation_bound);
    return out;
}

}  // namespace pimac
