#include "pimac/rate_region.hpp"

#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace pimac {

namespace {

constexpr double kLn2 = 0.69314718055994530942;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

CMat cplx(const Mat& m) { return m.cast<cd>(); }

Mat outer1(double s2, const Vec& a) {
    Vec v(4);
    v << s2, a;
    return v * v.transpose();
}

}  // namespace

SdrData build_sdr_data(const ChannelInstance& ch) {
    if (ch.J() != 3) throw std::invalid_argument("the relaxation is written for J = 3");
    ch.validate();
    SdrData d;
    d.sigma2 = ch.noise_variance;
    d.caps = ch.power_caps;
    auto g = [&](int i, int j) { return std::norm(ch.gains(i, j)); };
    auto h2 = [&](int i, int j) { return ch.gains(i, j) * ch.gains(i, j); };
    d.a[0] = Vec(3);
    d.a[0] << g(0, 0), 0, g(0, 2);
    d.a[1] = Vec(3);
    d.a[1] << 0, g(0, 1), g(0, 2);
    d.a[2] = Vec(3);
    d.a[2] << g(1, 0), g(1, 1), g(1, 2);
    d.a[3] = Vec(3);
    d.a[3] << g(0, 0), g(0, 1), g(0, 2);
    Vec b13(3);
    b13 << 0, 0, g(0, 2);
    d.b[0] = d.b[1] = d.b[3] = b13;
    d.b[2] = Vec(3);
    d.b[2] << g(1, 0), g(1, 1), 0;

    d.at[0] = CVec(3);
    d.at[0] << h2(0, 0), 0.0, h2(0, 2);
    d.at[1] = CVec(3);
    d.at[1] << 0.0, h2(0, 1), h2(0, 2);
    d.at[2] = CVec(3);
    d.at[2] << h2(1, 0), h2(1, 1), h2(1, 2);
    d.at[3] = CVec(3);
    d.at[3] << h2(0, 0), h2(0, 1), h2(0, 2);
    CVec bt13(3);
    bt13 << 0.0, 0.0, h2(0, 2);
    d.bt[0] = d.bt[1] = d.bt[3] = bt13;
    d.bt[2] = CVec(3);
    d.bt[2] << h2(1, 0), h2(1, 1), 0.0;

    for (int q = 0; q < 4; ++q) {
        d.W[q] = outer1(d.sigma2, d.a[q]);
        d.Z[q] = outer1(d.sigma2, d.b[q]);
        d.At[q] = d.at[q].conjugate() * d.at[q].transpose();
        d.Bt[q] = d.bt[q].conjugate() * d.bt[q].transpose();
    }
    for (int j = 0; j < 3; ++j) {
        d.E[j] = Mat::Zero(3, 3);
        d.E[j](j, j) = 1.0;
        d.M[j] = Mat::Zero(4, 4);
        d.M[j](j + 1, j + 1) = 1.0;
        d.Nm[j] = Mat::Zero(4, 4);
        d.Nm[j](0, j + 1) = d.Nm[j](j + 1, 0) = 0.5;
    }
    return d;
}

std::optional<SdrSolution> sdr_feasible_rows(const RowThresholds& thr, const SdrData& d, bool proper_only,
                                             const SolverConfig& cfg) {
    SemidefiniteProgram p;
    p.blocks.push_back({4, false});
    if (!proper_only) p.blocks.push_back({3, true});

    // Rows are normalised by their largest coefficient; the feasible set is unchanged.
    auto add = [&](const Mat& Wc, const CMat& Ac, Sense s, double bound) {
        double scale = std::max(Wc.cwiseAbs().maxCoeff(), proper_only ? 0.0 : Ac.cwiseAbs().maxCoeff());
        scale = std::max(scale, std::abs(bound));
        if (scale <= 0) scale = 1.0;
        SdpConstraint c;
        c.form.push_back({0, cplx(Wc / scale)});
        if (!proper_only) c.form.push_back({1, -Ac / scale});
        c.sense = s;
        c.bound = bound / scale;
        p.constraints.push_back(c);
    };

    Mat E11 = Mat::Zero(4, 4);
    E11(0, 0) = 1.0;
    p.constraints.push_back({{{0, cplx(E11)}}, Sense::Eq, 1.0});
    for (int j = 0; j < 3; ++j) {
        p.constraints.push_back({{{0, cplx(d.M[j])}}, Sense::Le, d.caps(j) * d.caps(j)});
        p.constraints.push_back({{{0, cplx(d.Nm[j])}}, Sense::Ge, 0.0});
        if (!proper_only)
            p.constraints.push_back({{{1, cplx(d.E[j])}, {0, cplx(-d.M[j])}}, Sense::Le, 0.0});
    }
    const double s4 = d.sigma2 * d.sigma2;
    for (int q = 0; q < 4; ++q) {
        add(d.W[q], d.At[q], Sense::Ge, s4);
        add(d.Z[q], d.Bt[q], Sense::Ge, s4);
        if (thr[q]) {
            double e = std::exp(2.0 * *thr[q]);
            add(d.W[q] - e * d.Z[q], d.At[q] - e * d.Bt[q], Sense::Ge, 0.0);
        }
    }
    auto r = solve_sdp(p, cfg, true);
    if (r.status != Status::Optimal) return std::nullopt;
    SdrSolution s;
    s.C = r.real_block(0);
    s.Ct = proper_only ? CMat(CMat::Zero(3, 3)) : r.X[1];
    s.rank_C = numeric_rank(s.C);
    {
        Eigen::SelfAdjointEigenSolver<CMat> es(s.Ct);
        double top = es.eigenvalues().cwiseAbs().maxCoeff();
        s.rank_Ct = 0;
        for (int i = 0; i < 3; ++i)
            if (top > 0 && es.eigenvalues()(i) > 1e-6 * top) ++s.rank_Ct;
    }
    return s;
}

std::optional<SdrSolution> sdr_feasible(double R, const RateProfile& alpha, const SdrData& d, bool proper_only,
                                        const SolverConfig& cfg) {
    if (R < 0) throw std::invalid_argument("R must be >= 0");
    RowThresholds thr;
    for (int q = 0; q < 4; ++q)
        if (alpha.row(q) > 0) thr[q] = alpha.row(q) * R;
    auto s = sdr_feasible_rows(thr, d, proper_only, cfg);
    if (s) s->R = R;
    return s;
}

double bisection_upper(const ChannelInstance& ch) {
    auto g = [&](int i, int j) { return std::norm(ch.gains(i, j)); };
    double s2 = ch.noise_variance;
    const auto& P = ch.power_caps;
    return std::log1p(g(0, 0) * P(0) / s2) + std::log1p(g(0, 1) * P(1) / s2) + std::log1p(g(1, 2) * P(2) / s2);
}

namespace {

struct Point {
    Vec c;
    CVec ct;
};

std::vector<AugmentedCovariance> to_sig(const Point& p) {
    std::vector<AugmentedCovariance> s(3);
    for (int j = 0; j < 3; ++j) s[j] = {p.c(j), p.ct.size() ? p.ct(j) : cd(0.0)};
    return s;
}

Point project_candidate(const Candidate& cand, const Vec& caps, bool proper_only) {
    Point p;
    Vec xi = cand.xi;
    if (xi(0) < 0) xi = -xi;
    double t = std::max(xi(0), 1e-300);
    p.c = Vec(3);
    for (int j = 0; j < 3; ++j) p.c(j) = std::clamp(xi(j + 1) / t, 0.0, caps(j));
    p.ct = CVec::Zero(3);
    if (!proper_only && cand.zeta.size() == 3)
        for (int j = 0; j < 3; ++j) {
            cd z = cand.zeta(j);
            double m = std::abs(z);
            p.ct(j) = m > p.c(j) ? z * (p.c(j) / m) : z;
        }
    return p;
}

Candidate to_candidate(const Point& p) {
    Candidate c;
    c.xi = Vec(4);
    c.xi << 1.0, p.c;
    c.zeta = p.ct;
    return c;
}

// Box-clamped parameterisation: u in [0,1] scales the cap, r in [0,1] the
// pseudo-variance modulus, phi its phase.
struct Param {
    Vec caps;
    bool proper;
    int dim() const { return proper ? 3 : 9; }
    Point decode(const double* x) const {
        Point p;
        p.c = Vec(3);
        p.ct = CVec::Zero(3);
        for (int j = 0; j < 3; ++j) {
            p.c(j) = caps(j) * std::clamp(x[j], 0.0, 1.0);
            if (!proper) p.ct(j) = std::polar(p.c(j) * std::clamp(x[3 + j], 0.0, 1.0), x[6 + j]);
        }
        return p;
    }
    std::vector<double> encode(const Point& p) const {
        std::vector<double> x(dim(), 0.0);
        for (int j = 0; j < 3; ++j) {
            x[j] = caps(j) > 0 ? p.c(j) / caps(j) : 0.0;
            if (!proper) {
                double m = p.ct.size() ? std::abs(p.ct(j)) : 0.0;
                x[3 + j] = p.c(j) > 0 ? std::min(1.0, m / p.c(j)) : 0.0;
                x[6 + j] = m > 0 ? std::arg(p.ct(j)) : 0.0;
            }
        }
        return x;
    }
};

using Objective = std::function<double(const Point&)>;

struct NmCtx {
    const Param* param;
    const Objective* obj;
};

double nm_f(const gsl_vector* v, void* params) {
    auto* ctx = static_cast<NmCtx*>(params);
    double val = (*ctx->obj)(ctx->param->decode(v->data));
    return std::isfinite(val) ? -val : 1e30;
}

// Nelder-Mead simplex with restarts; never returns a worse point than the start.
Point polish(const Point& start, const Param& param, const Objective& obj) {
    const int n = param.dim();
    NmCtx ctx{&param, &obj};
    gsl_multimin_function f{&nm_f, static_cast<size_t>(n), &ctx};
    auto x0 = param.encode(start);
    gsl_vector* x = gsl_vector_alloc(n);
    gsl_vector* step = gsl_vector_alloc(n);
    for (int i = 0; i < n; ++i) gsl_vector_set(x, i, x0[i]);
    double best = -nm_f(x, &ctx);
    const gsl_multimin_fminimizer_type* T = gsl_multimin_fminimizer_nmsimplex2;
    for (int restart = 0; restart < 4; ++restart) {
        for (int i = 0; i < n; ++i) gsl_vector_set(step, i, i >= 6 ? 0.4 : 0.1);
        gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(T, n);
        gsl_multimin_fminimizer_set(s, &f, x, step);
        for (int it = 0; it < 4000; ++it) {
            if (gsl_multimin_fminimizer_iterate(s)) break;
            if (gsl_multimin_fminimizer_size(s) < 1e-11) break;
        }
        double v = -s->fval;
        bool improved = v > best + 1e-13;
        if (v >= best) {
            best = v;
            gsl_vector_memcpy(x, s->x);
        }
        gsl_multimin_fminimizer_free(s);
        if (!improved && restart > 0) break;
    }
    Point out = param.decode(x->data);
    gsl_vector_free(x);
    gsl_vector_free(step);
    return out;
}

double rate_objective(const ChannelInstance& ch, const RateProfile& a, const Point& p) {
    try {
        auto L = rate_bounds_improper(ch, to_sig(p));
        double v = std::numeric_limits<double>::infinity();
        for (int q = 0; q < 4; ++q)
            if (a.row(q) > 0) v = std::min(v, L[q] / a.row(q));
        return v;
    } catch (const std::exception&) {
        return kNegInf;
    }
}

// Best few distinct candidates seen during randomization.
struct Pool {
    std::vector<std::pair<double, Point>> items;
    void add(double v, const Point& p) {
        for (auto& it : items)
            if ((it.second.c - p.c).norm() + (it.second.ct - p.ct).norm() < 1e-9) return;
        items.emplace_back(v, p);
        std::stable_sort(items.begin(), items.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
        if (items.size() > 3) items.pop_back();
    }
};

}  // namespace

RegionPoint max_sum_rate(const RateProfile& alpha, const ChannelInstance& ch, const SolverConfig& cfg,
                         const RegionOptions& opt) {
    RegionPoint out;
    try {
        cfg.validate();
        auto d = build_sdr_data(ch);
        std::optional<SdrSolution> last;
        auto oracle = [&](double R) {
            auto s = sdr_feasible(R, alpha, d, opt.proper_only, cfg);
            if (s && (!last || R >= last->R)) last = s;
            return s.has_value();
        };
        double R = bisect(oracle, 0.0, bisection_upper(ch), cfg.tol_bis);
        if (!last || last->R != R) last = sdr_feasible(R, alpha, d, opt.proper_only, cfg);
        if (!last) throw NumericFailure("relaxation lost feasibility at the bisection point");
        out.relaxation = R / kLn2;
        out.rank_C = last->rank_C;
        out.rank_Ct = last->rank_Ct;

        Objective obj = [&](const Point& p) { return rate_objective(ch, alpha, p); };
        Pool pool;
        auto project = [&](const Candidate& c) { return to_candidate(project_candidate(c, ch.power_caps, opt.proper_only)); };
        auto eval = [&](const Candidate& c) -> std::optional<double> {
            Point p{c.xi.tail(3), c.zeta.size() ? c.zeta : CVec(CVec::Zero(3))};
            double v = obj(p);
            if (!std::isfinite(v)) return std::nullopt;
            pool.add(v, p);
            return v;
        };
        auto rr = gaussian_randomize(last->C, opt.proper_only ? CMat() : last->Ct, project, eval, cfg.k_rand,
                                     cfg.seed, out.relaxation);
        out.rand_index = rr.index;
        out.rand_objective = rr.objective;

        std::vector<Point> starts;
        for (auto& it : pool.items) starts.push_back(it.second);
        if (!opt.proper_only && opt.nest_proper) {
            RegionOptions po = opt;
            po.proper_only = true;
            auto prop = max_sum_rate(alpha, ch, cfg, po);
            if (prop.ok) starts.push_back({prop.c, CVec::Zero(3)});
        }
        Point best = starts.front();
        double bestv = obj(best);
        Param param{ch.power_caps, opt.proper_only};
        for (const auto& s : starts) {
            Point p = opt.polish ? polish(s, param, obj) : s;
            double v = obj(p);
            if (v > bestv) {
                bestv = v;
                best = p;
            }
        }
        out.c = best.c;
        out.ct = best.ct;
        out.audit = rate_bounds_improper(ch, to_sig(best));
        out.sum_rate = bestv;
        for (int k = 0; k < 3; ++k) out.rates[k] = alpha.alpha[k] * bestv;
        out.ok = true;
    } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
    }
    return out;
}

P2pPoint max_p2p_given_mac(double r_mac, const ChannelInstance& ch, const SolverConfig& cfg,
                           const RegionOptions& opt) {
    if (r_mac < 0) throw std::invalid_argument("r_mac must be >= 0");
    P2pPoint out;
    cfg.validate();
    auto d = build_sdr_data(ch);
    const double rn = r_mac * kLn2;
    std::optional<SdrSolution> last;
    auto rows = [&](double R3) {
        RowThresholds t;
        if (r_mac > 0) {
            t[0] = rn;
            t[1] = rn;
            t[3] = 2 * rn;
        }
        t[2] = R3;
        return t;
    };
    auto oracle = [&](double R3) {
        auto s = sdr_feasible_rows(rows(R3), d, opt.proper_only, cfg);
        if (s) {
            s->R = R3;
            if (!last || R3 >= last->R) last = s;
        }
        return s.has_value();
    };
    double R3;
    try {
        R3 = bisect(oracle, 0.0, bisection_upper(ch), cfg.tol_bis);
    } catch (const InfeasibleError&) {
        out.error = "MAC demand infeasible";
        return out;
    }
    if (!last || last->R != R3) {
        last = sdr_feasible_rows(rows(R3), d, opt.proper_only, cfg);
        if (last) last->R = R3;
    }
    if (!last) {
        out.error = "relaxation lost feasibility at the bisection point";
        return out;
    }
    out.relaxation = R3 / kLn2;

    auto violation = [&](const RateBounds& L) {
        return std::max(0.0, r_mac - L.L1) + std::max(0.0, r_mac - L.L2) + std::max(0.0, 2 * r_mac - L.L4);
    };
    Objective obj = [&](const Point& p) {
        try {
            auto L = rate_bounds_improper(ch, to_sig(p));
            return L.L3 - 1e3 * violation(L);
        } catch (const std::exception&) {
            return kNegInf;
        }
    };
    Pool pool;
    auto project = [&](const Candidate& c) { return to_candidate(project_candidate(c, ch.power_caps, opt.proper_only)); };
    auto eval = [&](const Candidate& c) -> std::optional<double> {
        Point p{c.xi.tail(3), c.zeta.size() ? c.zeta : CVec(CVec::Zero(3))};
        double v = obj(p);
        if (!std::isfinite(v)) return std::nullopt;
        pool.add(v, p);
        return v;
    };
    try {
        gaussian_randomize(last->C, opt.proper_only ? CMat() : last->Ct, project, eval, cfg.k_rand, cfg.seed,
                           out.relaxation);
    } catch (const RandomizationFailed& e) {
        out.error = e.what();
        return out;
    }
    std::vector<Point> starts;
    for (auto& it : pool.items) starts.push_back(it.second);
    if (!opt.proper_only && opt.nest_proper) {
        RegionOptions po = opt;
        po.proper_only = true;
        auto prop = max_p2p_given_mac(r_mac, ch, cfg, po);
        if (prop.ok) starts.push_back({prop.c, CVec::Zero(3)});
    }
    Param param{ch.power_caps, opt.proper_only};
    bool found = false;
    Point best;
    double bestv = kNegInf;
    for (const auto& s : starts) {
        Point p = opt.polish ? polish(s, param, obj) : s;
        // Repair a residual MAC shortfall by shrinking the P2P signal.
        auto L = rate_bounds_improper(ch, to_sig(p));
        if (violation(L) > 0) {
            double lo = 0.0, hi = 1.0;
            Point q = p;
            for (int it = 0; it < 60; ++it) {
                double m = 0.5 * (lo + hi);
                q.c(2) = p.c(2) * m;
                q.ct(2) = p.ct(2) * m;
                if (violation(rate_bounds_improper(ch, to_sig(q))) > 0)
                    hi = m;
                else
                    lo = m;
            }
            q.c(2) = p.c(2) * lo;
            q.ct(2) = p.ct(2) * lo;
            p = q;
            L = rate_bounds_improper(ch, to_sig(p));
            if (violation(L) > 0) continue;
        }
        if (L.L3 > bestv) {
            bestv = L.L3;
            best = p;
            found = true;
        }
    }
    if (!found) {
        out.error = "no candidate met the MAC demand";
        return out;
    }
    out.ok = true;
    out.c = best.c;
    out.ct = best.ct;
    out.audit = rate_bounds_improper(ch, to_sig(best));
    out.r3 = out.audit.L3;
    return out;
}

std::vector<RegionPoint> pareto_sweep(const ChannelInstance& ch, const std::vector<RateProfile>& grid,
                                      const SolverConfig& cfg, const RegionOptions& opt, Exec exec) {
    return sweep_map<RegionPoint>(
        static_cast<int>(grid.size()),
        [&](int i) {
            SolverConfig c = cfg;
            c.seed = cfg.seed ^ static_cast<std::uint64_t>(i);
            return max_sum_rate(grid[i], ch, c, opt);
        },
        exec);
}

std::vector<RateProfile> simplex_grid(int resolution) {
    if (resolution < 1) throw std::invalid_argument("resolution must be >= 1");
    std::vector<RateProfile> g;
    for (int i = 0; i <= resolution; ++i)
        for (int j = 0; i + j <= resolution; ++j) {
            double a1 = double(i) / resolution, a2 = double(j) / resolution;
            g.push_back(RateProfile::make(a1, a2, (resolution - i - j) / double(resolution)));
        }
    return g;
}

}  // namespace pimac
