#include "pimac/convex_core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pimac {

namespace {

// Problem in the reduced coordinates y (x = xp + Z y), plus an optional
// phase-1 slack appended as the last coordinate.
struct Reduced {
    int m = 0;
    Vec c;
    Mat G;
    Vec h;
    std::vector<LmiBlock> lmis;
    std::vector<LogDetRow> logdets;
    int barrier_weight = 0;
};

Terms reduce_terms(const Terms& terms, const Mat& Z, bool identity, int dim) {
    if (identity) return terms;
    Terms out;
    for (int j = 0; j < Z.cols(); ++j) {
        Mat acc = Mat::Zero(dim, dim);
        bool any = false;
        for (const auto& [k, F] : terms) {
            double z = Z(k, j);
            if (z != 0.0) {
                acc.noalias() += z * F;
                any = true;
            }
        }
        if (any && acc.cwiseAbs().maxCoeff() > 0.0) out.emplace_back(j, std::move(acc));
    }
    return out;
}

Mat offset(const Mat& M0, const Terms& terms, const Vec& xp) {
    Mat M = M0;
    for (const auto& [k, F] : terms)
        if (xp.size() > 0 && xp(k) != 0.0) M.noalias() += xp(k) * F;
    return M;
}

// Whitened term matrices L^-1 F_j L^-T for the factor of M.
void whiten(const Eigen::LLT<Mat>& llt, const Terms& terms, std::vector<Mat>& out) {
    out.resize(terms.size());
    for (size_t a = 0; a < terms.size(); ++a) {
        Mat t = llt.matrixL().solve(terms[a].second);
        out[a] = llt.matrixL().solve(t.transpose()).transpose();
    }
}

Mat assemble(const Mat& M0, const Terms& terms, const Vec& z) {
    Mat M = M0;
    for (const auto& [k, F] : terms) M.noalias() += z(k) * F;
    return M;
}

double log_det_chol(const Eigen::LLT<Mat>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

// Barrier objective t c'z + phi(z). Returns false outside the domain.
bool evaluate(const Reduced& P, const Vec& z, double t, double& val, Vec* grad, Mat* hess) {
    const int m = P.m;
    val = t * P.c.dot(z);
    if (grad) *grad = t * P.c;
    if (hess) hess->setZero(m, m);

    if (P.G.rows() > 0) {
        Vec r = P.h - P.G * z;
        if ((r.array() <= 0.0).any()) return false;
        val -= r.array().log().sum();
        if (grad) grad->noalias() += P.G.transpose() * r.cwiseInverse();
        if (hess) {
            Mat Gs = r.cwiseInverse().asDiagonal() * P.G;
            hess->noalias() += Gs.transpose() * Gs;
        }
    }

    std::vector<Mat> W;
    for (const auto& B : P.lmis) {
        Mat F = assemble(B.F0, B.terms, z);
        Eigen::LLT<Mat> llt(F);
        if (llt.info() != Eigen::Success) return false;
        double ld = log_det_chol(llt);
        if (!std::isfinite(ld)) return false;
        val -= ld;
        if (!grad && !hess) continue;
        whiten(llt, B.terms, W);
        for (size_t a = 0; a < W.size(); ++a) {
            int ja = B.terms[a].first;
            if (grad) (*grad)(ja) -= W[a].trace();
            if (hess)
                for (size_t b = 0; b < W.size(); ++b)
                    (*hess)(ja, B.terms[b].first) += W[a].cwiseProduct(W[b]).sum();
        }
    }

    for (const auto& R : P.logdets) {
        Mat M = assemble(R.M0, R.terms, z);
        Eigen::LLT<Mat> llt(M);
        if (llt.info() != Eigen::Success) return false;
        double ld = log_det_chol(llt);
        double f = R.e - ld;
        if (R.d.size() > 0) f += R.d.dot(z);
        if (!(f < 0.0) || !std::isfinite(f)) return false;
        val -= std::log(-f);
        if (!grad && !hess) continue;
        whiten(llt, R.terms, W);
        Vec gf = R.d.size() > 0 ? Vec(R.d) : Vec(Vec::Zero(m));
        for (size_t a = 0; a < W.size(); ++a) gf(R.terms[a].first) -= W[a].trace();
        if (grad) grad->noalias() += gf / (-f);
        if (hess) {
            hess->noalias() += gf * gf.transpose() / (f * f);
            for (size_t a = 0; a < W.size(); ++a)
                for (size_t b = 0; b < W.size(); ++b)
                    (*hess)(R.terms[a].first, R.terms[b].first) +=
                        W[a].cwiseProduct(W[b]).sum() / (-f);
        }
    }
    return std::isfinite(val);
}

struct CenterStats {
    int steps = 0;
    bool ok = true;
    bool centered = false;
};

// stop_below >= 0: return as soon as that coordinate turns negative.
CenterStats center(const Reduced& P, Vec& z, double t, const SolverConfig& cfg, int stop_below = -1) {
    CenterStats st;
    Vec g;
    Mat H;
    double val = 0.0;
    for (int it = 0; it < cfg.max_newton; ++it) {
        if (!evaluate(P, z, t, val, &g, &H)) {
            st.ok = false;
            return st;
        }
        double scale = std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
        Eigen::LDLT<Mat> ldlt(H + 1e-14 * scale * Mat::Identity(P.m, P.m));
        Vec dz = -ldlt.solve(g);
        if (!dz.allFinite()) {
            st.ok = false;
            return st;
        }
        double dec = -g.dot(dz);
        ++st.steps;
        if (dec / 2.0 <= cfg.newton_tol) {
            st.centered = true;
            break;
        }
        double step = 1.0, trial = 0.0;
        bool moved = false;
        while (step > 1e-14) {
            Vec zn = z + step * dz;
            if (evaluate(P, zn, t, trial, nullptr, nullptr) && trial <= val - 0.25 * step * dec) {
                z = zn;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if (!moved) break;
        if (stop_below >= 0 && z(stop_below) < 0.0) break;
    }
    return st;
}

bool strictly_inside(const Reduced& P, const Vec& z) {
    double v;
    return evaluate(P, z, 0.0, v, nullptr, nullptr);
}

}  // namespace

const char* to_string(Status s) {
    switch (s) {
        case Status::Optimal: return "optimal";
        case Status::Infeasible: return "infeasible";
        case Status::Unbounded: return "unbounded";
        case Status::NumericFailure: return "numeric-failure";
    }
    return "?";
}

void SolverConfig::validate() const {
    if (!(t0 > 0 && mu > 1 && newton_tol > 0 && tol_feas > 0 && tol_bis > 0))
        throw std::invalid_argument("solver tolerances must be positive");
    if (k_rand < 0) throw std::invalid_argument("k_rand must be >= 0");
    if (gamma_scale < 1) throw std::invalid_argument("gamma_scale must be >= 1");
    if (max_newton < 1) throw std::invalid_argument("max_newton must be >= 1");
}

ConvexResult solve_barrier(const ConvexProgram& p, const SolverConfig& cfg, bool feasibility_only) {
    ConvexResult res;
    const int n = p.n;

    Vec xp = Vec::Zero(n);
    Mat Z;
    bool identity = p.A_eq.rows() == 0;
    if (identity) {
        Z = Mat::Identity(n, n);
    } else {
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(p.A_eq);
        xp = cod.solve(p.b_eq);
        double resid = (p.A_eq * xp - p.b_eq).norm();
        if (resid > 1e-8 * (1.0 + p.b_eq.norm())) {
            res.status = Status::Infeasible;
            res.diag = "inconsistent equalities";
            return res;
        }
        Eigen::JacobiSVD<Mat> svd(p.A_eq, Eigen::ComputeFullV);
        const auto& sv = svd.singularValues();
        int rank = 0;
        for (int i = 0; i < sv.size(); ++i)
            if (sv(i) > 1e-12 * std::max(1.0, sv(0))) ++rank;
        Z = svd.matrixV().rightCols(n - rank);
    }
    const int m = static_cast<int>(Z.cols());

    Reduced P;
    P.m = m;
    Vec c = p.c.size() == n ? p.c : Vec(Vec::Zero(n));
    P.c = Z.transpose() * c;
    if (p.A_in.rows() > 0) {
        P.G = p.A_in * Z;
        P.h = p.b_in - p.A_in * xp;
    }
    for (const auto& B : p.lmis) {
        LmiBlock r;
        r.F0 = offset(B.F0, B.terms, xp);
        r.terms = reduce_terms(B.terms, Z, identity, static_cast<int>(B.F0.rows()));
        P.lmis.push_back(std::move(r));
        P.barrier_weight += static_cast<int>(B.F0.rows());
    }
    for (const auto& R : p.logdets) {
        LogDetRow r;
        r.M0 = offset(R.M0, R.terms, xp);
        r.terms = reduce_terms(R.terms, Z, identity, static_cast<int>(R.M0.rows()));
        r.e = R.e;
        if (R.d.size() == n) {
            r.e += R.d.dot(xp);
            r.d = Z.transpose() * R.d;
        }
        P.logdets.push_back(std::move(r));
        P.barrier_weight += 1;
    }
    P.barrier_weight += static_cast<int>(P.G.rows());

    Vec z = Vec::Zero(m);
    bool have_start = false;
    if (p.x_start.size() == n) {
        Vec zs = Z.transpose() * (p.x_start - xp);
        if (strictly_inside(P, zs)) {
            z = zs;
            have_start = true;
        }
    }

    if (!have_start && !strictly_inside(P, z)) {
        // Phase 1: minimize s with every constraint relaxed by s.
        Reduced Q;
        Q.m = m + 1;
        Q.c = Vec::Zero(m + 1);
        Q.c(m) = 1.0;
        Q.G = Mat::Zero(P.G.rows() + 1, m + 1);
        Q.h = Vec::Zero(P.G.rows() + 1);
        if (P.G.rows() > 0) {
            Q.G.topLeftCorner(P.G.rows(), m) = P.G;
            Q.G.col(m).head(P.G.rows()).setConstant(-1.0);
            Q.h.head(P.G.rows()) = P.h;
        }
        Q.G(P.G.rows(), m) = -1.0;  // s >= -1
        Q.h(P.G.rows()) = 1.0;
        // A wide box keeps the phase-1 barrier bounded below when the
        // feasible set is not.
        {
            const int r0 = static_cast<int>(Q.G.rows());
            const double B = 1e4 * (1.0 + (z.size() ? z.cwiseAbs().maxCoeff() : 0.0));
            Q.G.conservativeResize(r0 + 2 * m, Eigen::NoChange);
            Q.h.conservativeResize(r0 + 2 * m);
            Q.G.bottomRows(2 * m).setZero();
            for (int i = 0; i < m; ++i) {
                Q.G(r0 + 2 * i, i) = 1.0;
                Q.G(r0 + 2 * i + 1, i) = -1.0;
                Q.h(r0 + 2 * i) = z(i) + B;
                Q.h(r0 + 2 * i + 1) = -z(i) + B;
            }
        }
        double s0 = P.G.rows() > 0 ? (P.G * z - P.h).maxCoeff() : -1.0;
        for (const auto& B : P.lmis) {
            LmiBlock r = B;
            int d = static_cast<int>(B.F0.rows());
            r.terms.emplace_back(m, Mat::Identity(d, d));
            Eigen::SelfAdjointEigenSolver<Mat> es(B.F0);
            s0 = std::max(s0, -es.eigenvalues()(0));
            Q.lmis.push_back(std::move(r));
        }
        for (const auto& R : P.logdets) {
            LogDetRow r = R;
            int d = static_cast<int>(R.M0.rows());
            r.terms.emplace_back(m, Mat::Identity(d, d));
            Vec dd = Vec::Zero(m + 1);
            if (R.d.size() == m) dd.head(m) = R.d;
            dd(m) = -1.0;
            r.d = dd;
            Eigen::SelfAdjointEigenSolver<Mat> es(R.M0);
            s0 = std::max(s0, -es.eigenvalues()(0));
            Q.logdets.push_back(std::move(r));
        }
        Q.barrier_weight = P.barrier_weight + 1 + 2 * m;
        Vec w(m + 1);
        w.head(m) = z;
        w(m) = std::max(s0, -0.5) + 1.0;
        int guard = 0;
        while (!strictly_inside(Q, w) && guard++ < 200) w(m) += std::max(1.0, std::abs(w(m)));
        if (!strictly_inside(Q, w)) {
            res.status = Status::NumericFailure;
            res.diag = "phase-1 start not found";
            return res;
        }
        double t = cfg.t0;
        bool found = false;
        for (int outer = 0; outer < 80; ++outer) {
            auto st = center(Q, w, t, cfg, m);
            res.newton_steps += st.steps;
            if (!st.ok) {
                res.status = Status::NumericFailure;
                res.diag = "phase-1 Newton breakdown";
                return res;
            }
            if (w(m) < 0.0) {
                found = true;
                break;
            }
            double gap = Q.barrier_weight / t;
            if ((st.centered && w(m) - gap > 0.0) || gap < cfg.tol_feas) break;
            t *= cfg.mu;
        }
        if (!found) {
            res.status = Status::Infeasible;
            std::ostringstream os;
            os << "phase-1 slack " << w(m);
            res.diag = os.str();
            return res;
        }
        z = w.head(m);
    }

    if (feasibility_only) {
        res.status = Status::Optimal;
        res.x = xp + Z * z;
        res.value = c.dot(res.x);
        return res;
    }

    double t = cfg.t0;
    const double c_off = c.dot(xp);
    for (int outer = 0; outer < 100; ++outer) {
        auto st = center(P, z, t, cfg);
        res.newton_steps += st.steps;
        if (!st.ok) {
            res.status = Status::NumericFailure;
            res.diag = "Newton breakdown";
            return res;
        }
        if (z.norm() > 1e10) {
            res.status = Status::Unbounded;
            return res;
        }
        double obj = P.c.dot(z) + c_off;
        double gap = P.barrier_weight / t;
        if (gap <= cfg.tol_feas * (1.0 + std::abs(obj)) || P.barrier_weight == 0) break;
        t *= cfg.mu;
    }
    res.x = xp + Z * z;
    res.value = c.dot(res.x);
    res.dual_bound = res.value - P.barrier_weight / t;
    res.status = Status::Optimal;
    return res;
}

LpResult solve_lp(const LinearProgram& lp, const SolverConfig& cfg) {
    const int n = static_cast<int>(lp.c.size());
    ConvexProgram p;
    p.n = n;
    p.c = lp.c;
    int rows = static_cast<int>(lp.A.rows());
    int nb = 0;
    for (int i = 0; i < lp.lb.size(); ++i)
        if (std::isfinite(lp.lb(i))) ++nb;
    p.A_in = Mat::Zero(rows + nb, n);
    p.b_in = Vec::Zero(rows + nb);
    if (rows > 0) {
        p.A_in.topRows(rows) = lp.A;
        p.b_in.head(rows) = lp.b;
    }
    int r = rows;
    for (int i = 0; i < lp.lb.size(); ++i)
        if (std::isfinite(lp.lb(i))) {
            p.A_in(r, i) = -1.0;
            p.b_in(r) = -lp.lb(i);
            ++r;
        }
    auto res = solve_barrier(p, cfg);
    LpResult out;
    out.status = res.status;
    if (res.status == Status::Optimal) {
        out.x = res.x;
        out.value = res.value;
        out.dual_bound = res.dual_bound;
    }
    return out;
}

}  // namespace pimac
