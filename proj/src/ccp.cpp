#include "pimac/power_min.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pimac {

namespace {

double logdet_spd(const Mat& M) {
    Eigen::LLT<Mat> llt(M);
    if (llt.info() != Eigen::Success) throw DegenerateError("matrix is not positive definite");
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

constexpr double kLn2 = 0.69314718055994530942;

}  // namespace

double fenchel_upper_bound(const Mat& Gamma, const std::vector<FenchelTerm>& terms, int a) {
    if (Gamma.rows() != a || Gamma.cols() != a) throw std::invalid_argument("Gamma must be a x a");
    Mat M = Mat::Identity(a, a);
    for (const auto& t : terms) M.noalias() += t.A * t.X * t.A.transpose();
    Eigen::LLT<Mat> llt(Gamma);
    if (llt.info() != Eigen::Success) throw DegenerateError("Gamma is not positive definite");
    return logdet_spd(Gamma) + llt.solve(M).trace() - a;
}

Mat replicate(const Mat& Q, int N) {
    if (N < 1) throw std::invalid_argument("N must be >= 1");
    const int d = static_cast<int>(Q.rows());
    Mat R = Mat::Zero(d * N, d * N);
    for (int b = 0; b < N; ++b) R.block(b * d, b * d, d, d) = Q;
    return R;
}

PowerResult proper_min_power_rates(const ChannelInstance& ch, const Vec& beta, const std::vector<int>& order,
                                   const SolverConfig& cfg) {
    if (beta.size() != ch.J()) throw std::invalid_argument("one rate demand per user");
    if ((beta.array() < 0).any()) throw std::invalid_argument("rate demands must be >= 0");
    Vec gamma = (beta.array() * kLn2).exp() - 1.0;
    return proper_min_power_sinr(ch, gamma, Decoding::Successive, order, cfg);
}

namespace {

struct Ccp {
    const ChannelInstance& ch;
    int N, n, J;
    double gs, ns;
    std::vector<std::vector<Mat>> S;
    std::vector<RateSets> rows;
    std::vector<double> target;  // nats, on the 2N-dimensional log-det difference
    const SolverConfig& cfg;
    const CcpOptions& opt;

    Mat cov(int i, const std::vector<int>& set, const std::vector<Mat>& Q) const {
        Mat R = ns * Mat::Identity(n, n);
        for (int l : set) R.noalias() += S[i][l] * Q[l] * S[i][l].transpose();
        return R;
    }

    bool feasible(const std::vector<Mat>& Q) const {
        for (size_t r = 0; r < rows.size(); ++r) {
            double d = logdet_spd(cov(rows[r].rx, rows[r].num, Q)) - logdet_spd(cov(rows[r].rx, rows[r].den, Q));
            if (d < target[r] - cfg.tol_feas * (1.0 + target[r])) return false;
        }
        return true;
    }

    double power(const std::vector<Mat>& Q) const {
        double s = 0.0;
        for (const auto& q : Q) s += q.trace();
        return s;
    }

    double gap(const std::vector<Mat>& Gam, const std::vector<Mat>& Q) const {
        double e = 0.0;
        for (size_t r = 0; r < rows.size(); ++r) {
            Mat D = cov(rows[r].rx, rows[r].den, Q);
            Eigen::LLT<Mat> llt(Gam[r]);
            e += logdet_spd(Gam[r]) + llt.solve(D).trace() - n - logdet_spd(D);
        }
        return e;
    }

    struct Step {
        bool ok = false;
        std::vector<Mat> Q;
        double slack = 0.0;
    };

    // Convexified subproblem at the linearisation points Gam; tau > 0 adds
    // nonnegative slacks on the rate rows with weight tau.
    Step solve(const std::vector<Mat>& Gam, double tau) const {
        SemidefiniteProgram p;
        for (int j = 0; j < J; ++j) {
            p.blocks.push_back({n, false});
            p.objective.push_back({j, CMat::Identity(n, n)});
        }
        const int R = static_cast<int>(rows.size());
        if (tau > 0)
            for (int r = 0; r < R; ++r) {
                p.blocks.push_back({1, false});
                p.objective.push_back({J + r, CMat::Constant(1, 1, tau)});
            }
        for (int j = 0; j < J; ++j) {
            double cap = ch.power_caps(j) * N / gs;
            if (cap > 0)
                p.constraints.push_back({{{j, CMat::Identity(n, n) / cap}}, Sense::Le, 1.0});
            else
                p.constraints.push_back({{{j, CMat::Identity(n, n)}}, Sense::Le, 0.0});
        }
        for (int r = 0; r < R; ++r) {
            const auto& rs = rows[r];
            Eigen::LLT<Mat> llt(Gam[r]);
            Mat Gi = llt.solve(Mat::Identity(n, n));
            SdpLogDet ld;
            ld.M0 = ns * Mat::Identity(n, n);
            for (int l : rs.num) ld.congruences.push_back({l, S[rs.rx][l]});
            for (int l : rs.den) {
                Mat A = S[rs.rx][l].transpose() * Gi * S[rs.rx][l];
                ld.rhs.push_back({l, (0.5 * (A + A.transpose())).cast<cd>()});
            }
            if (tau > 0) ld.rhs.push_back({J + r, CMat::Constant(1, 1, -1.0)});
            ld.rhs_const = logdet_spd(Gam[r]) + ns * Gi.trace() - n + target[r];
            p.logdets.push_back(ld);
        }
        auto res = solve_sdp(p, cfg);
        Step st;
        if (res.status != Status::Optimal) return st;
        st.ok = true;
        for (int j = 0; j < J; ++j) {
            Mat Q = res.real_block(j);
            st.Q.push_back(0.5 * (Q + Q.transpose()));
        }
        if (tau > 0)
            for (int r = 0; r < R; ++r) st.slack += std::max(0.0, res.real_block(J + r)(0, 0));
        return st;
    }

    std::vector<Mat> gammas(const std::vector<Mat>& Q) const {
        std::vector<Mat> G;
        for (const auto& rs : rows) G.push_back(cov(rs.rx, rs.den, Q));
        return G;
    }

    struct Run {
        bool ok = false;
        std::vector<Mat> Q;  // scaled units
        double power = 0.0;
        int iterations = 0;
        bool converged = false;
        std::vector<double> trace;
    };

    // Penalty phase until the true rate rows hold, then plain CCP.
    Run run(std::vector<Mat> Gam, std::optional<std::vector<Mat>> feasible_start) const {
        Run out;
        double tau = opt.tau0;
        std::vector<Mat> Q;
        bool pure = false;
        double best_slack = std::numeric_limits<double>::infinity();
        int stalled = 0;
        if (feasible_start) {
            Q = *feasible_start;
            pure = true;
            out.ok = true;
            out.Q = Q;
            out.power = power(Q);
            out.trace.push_back(out.power * gs / N);
        }
        for (int t = 0; t < opt.max_iter; ++t) {
            out.iterations = t + 1;
            Step st = solve(Gam, pure ? 0.0 : tau);
            if (!st.ok) break;
            double eps = gap(Gam, st.Q);
            Gam = gammas(st.Q);
            if (!pure) {
                tau = std::min(tau * opt.tau_mu, opt.tau_max);
                // Give up on a start whose slacks stopped shrinking at full penalty.
                if (st.slack < best_slack * (1.0 - 1e-3)) {
                    best_slack = st.slack;
                    stalled = 0;
                } else if (tau >= opt.tau_max && ++stalled >= opt.stall_iter) {
                    break;
                }
                if (feasible(st.Q)) {
                    pure = true;
                    out.ok = true;
                    out.Q = st.Q;
                    out.power = power(st.Q);
                    out.trace.push_back(out.power * gs / N);
                }
                continue;
            }
            double pw = power(st.Q);
            // Keep the previous iterate on ties or solver noise.
            if (!(pw < out.power) || !feasible(st.Q)) {
                out.converged = true;
                break;
            }
            out.Q = st.Q;
            out.power = pw;
            out.trace.push_back(pw * gs / N);
            if (eps < cfg.eps_ccp) {
                out.converged = true;
                break;
            }
        }
        return out;
    }
};

}  // namespace

PowerResult ccp_min_power_rates(const ChannelInstance& ch, const Vec& beta, int N, const std::vector<int>& order,
                                const SolverConfig& cfg, const CcpOptions& opt) {
    ch.validate();
    cfg.validate();
    const int J = ch.J();
    if (N < 1) throw std::invalid_argument("N must be >= 1");
    if (beta.size() != J) throw std::invalid_argument("one rate demand per user");
    if ((beta.array() < 0).any()) throw std::invalid_argument("rate demands must be >= 0");
    const int n = 2 * N;

    Ccp c{ch, N, n, J, cfg.gamma_scale, 0.5 * ch.noise_variance / cfg.gamma_scale, lifted_channels(ch, N), {}, {},
          cfg, opt};
    for (const auto& rs : rate_sets(J, order))
        if (beta(rs.user) > 0) {
            c.rows.push_back(rs);
            c.target.push_back(2.0 * N * beta(rs.user) * kLn2);
        }

    PowerResult out;
    if (c.rows.empty()) {
        out.status = PowerStatus::Converged;
        out.per_user = Vec::Zero(J);
        out.Q.assign(J, Mat::Zero(n, n));
        return out;
    }

    std::optional<Ccp::Run> best;
    auto take = [&](Ccp::Run r) {
        if (r.ok && (!best || r.power < best->power)) best = std::move(r);
    };
    auto scaled = [&](std::vector<Mat> Q) {
        for (auto& q : Q) q /= cfg.gamma_scale;
        return Q;
    };
    auto from_point = [&](const std::vector<Mat>& Qs) {
        auto f = c.feasible(Qs) ? std::optional<std::vector<Mat>>(Qs) : std::nullopt;
        take(c.run(c.gammas(Qs), f));
    };

    for (const auto& s : opt.seeds) {
        if (static_cast<int>(s.size()) != J) throw std::invalid_argument("seed must hold one covariance per user");
        from_point(scaled(s));
    }
    {
        std::vector<Mat> Q0;
        for (int j = 0; j < J; ++j) Q0.push_back(0.5 * std::min(1.0, ch.power_caps(j)) * Mat::Identity(n, n));
        from_point(scaled(Q0));
    }
    auto random_point = [&](CounterRng& rng) {
        std::vector<Mat> Q;
        for (int j = 0; j < J; ++j) {
            Mat B(n, n);
            for (int x = 0; x < n; ++x)
                for (int y = 0; y < n; ++y) B(x, y) = rng.normal();
            Mat W = B * B.transpose();
            double pw = std::pow(10.0, -2.0 + 3.0 * rng.uniform()) * std::min(1.0, ch.power_caps(j));
            Q.push_back(W * (pw * N / W.trace()));
        }
        return Q;
    };
    for (int s = 0; s < opt.random_starts; ++s) {
        CounterRng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(s)), 0x57a);
        from_point(scaled(random_point(rng)));
    }
    if (opt.seed_proper) {
        auto pr = proper_min_power_rates(ch, beta, order, cfg);
        if (pr.status == PowerStatus::Converged) {
            std::vector<Mat> Q;
            for (int j = 0; j < J; ++j) Q.push_back(replicate(pr.Q[j], N));
            from_point(scaled(Q));
        }
    }
    // Random linearisation points, as many as the re-initialisation budget allows.
    for (int a = 0; !best && a < cfg.reinit; ++a) {
        CounterRng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(a)), 0xcc9);
        std::vector<Mat> Gam;
        for (size_t r = 0; r < c.rows.size(); ++r) {
            Mat B(n, n);
            for (int x = 0; x < n; ++x)
                for (int y = 0; y < n; ++y) B(x, y) = rng.normal();
            Mat W = B * B.transpose();
            W /= W.norm();
            Gam.push_back(c.ns * Mat::Identity(n, n) + W / cfg.gamma_scale);
        }
        take(c.run(Gam, std::nullopt));
    }

    if (!best) {
        out.status = PowerStatus::Infeasible;
        out.note = "no feasible iterate after re-initialisation";
        return out;
    }
    out.status = best->converged ? PowerStatus::Converged : PowerStatus::IterLimit;
    out.iterations = best->iterations;
    out.trace = best->trace;
    out.per_user = Vec(J);
    for (int j = 0; j < J; ++j) {
        out.Q.push_back(best->Q[j] * cfg.gamma_scale);
        out.per_user(j) = out.Q[j].trace() / N;
    }
    out.total = out.per_user.sum();
    return out;
}

SuccessiveResult successive_opt(const RateProfile& alpha, const ChannelInstance& ch, int N,
                                const SolverConfig& cfg) {
    SuccessiveResult out;
    out.N = N;
    out.point = max_sum_rate(alpha, ch, cfg);
    if (!out.point.ok) {
        out.error = out.point.error;
        return out;
    }
    out.rates = out.point.rates;
    out.p_prime = out.point.c.sum();
    Vec beta(3);
    beta << out.rates[0], out.rates[1], out.rates[2];
    if (beta.maxCoeff() <= 0) return out;

    // The region covariances start the search; they reach r' under at least
    // one order when the point is a corner of the MAC pentagon.
    CcpOptions o1;
    o1.seeds.emplace_back();
    for (int j = 0; j < 3; ++j) {
        const double c = out.point.c(j);
        const cd t = out.point.ct(j);
        Mat q(2, 2);
        q << c + t.real(), t.imag(), t.imag(), c - t.real();
        o1.seeds.back().push_back(0.5 * q);
    }
    std::optional<PowerResult> best1, bestN;
    for (int which : {1, 2}) {
        auto order = named_order(3, which);
        auto r1 = ccp_min_power_rates(ch, beta, 1, order, cfg, o1);
        if (r1.status == PowerStatus::Infeasible) continue;
        if (!best1 || r1.total < best1->total) {
            best1 = r1;
            out.order1 = order;
        }
        if (N > 1) {
            // The replicated solution bounds the result but can sit where the
            // subproblem has no interior, so the random starts stay on.
            CcpOptions o;
            o.seed_proper = false;
            std::vector<Mat> seed;
            for (const auto& q : r1.Q) seed.push_back(replicate(q, N));
            o.seeds.push_back(seed);
            auto rN = ccp_min_power_rates(ch, beta, N, order, cfg, o);
            if (rN.status != PowerStatus::Infeasible && (!bestN || rN.total < bestN->total)) {
                bestN = rN;
                out.orderN = order;
            }
        }
    }
    if (!best1) {
        out.error = "power minimisation infeasible at the region point";
        return out;
    }
    out.p1 = best1->total;
    out.Q1 = best1->Q;
    if (N > 1 && bestN) {
        out.pN = bestN->total;
        out.QN = bestN->Q;
    } else {
        out.pN = out.p1;
        out.QN = out.Q1;
        out.orderN = out.order1;
    }
    if (out.p_prime > 1e-12) out.saving1 = 1.0 - out.p1 / out.p_prime;
    if (out.p1 > 1e-12) out.savingN = 1.0 - out.pN / out.p1;
    return out;
}

}  // namespace pimac
