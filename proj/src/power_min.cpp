#include "pimac/power_min.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pimac {

const char* to_string(PowerStatus s) {
    switch (s) {
        case PowerStatus::Converged: return "converged";
        case PowerStatus::Infeasible: return "infeasible";
        case PowerStatus::IterLimit: return "iter_limit";
    }
    return "?";
}

StreamTargets uniform_targets(int J, int streams, double gamma) {
    if (gamma < 0) throw std::invalid_argument("SINR targets must be >= 0");
    return StreamTargets(J, std::vector<double>(streams, gamma));
}

double stream_target(double gamma, SinrSemantics s) {
    if (gamma < 0) throw std::invalid_argument("SINR targets must be >= 0");
    return s == SinrSemantics::PerStream ? gamma : std::sqrt(1.0 + gamma) - 1.0;
}

Vec mmse_receiver(const Mat& F, const Mat& G, const Vec& v) {
    Eigen::LLT<Mat> llt(F);
    if (llt.info() != Eigen::Success) throw DegenerateError("interference-plus-noise covariance is singular");
    Vec u = llt.solve(G * v);
    double n = u.norm();
    if (!(n > 0) || !std::isfinite(n)) throw DegenerateError("MMSE direction vanished");
    return u / n;
}

namespace {

CMat cplx(const Mat& m) { return m.cast<cd>(); }

void forward_mmse(const ChannelInstance& ch, StreamLayout& L) {
    auto S = lifted_channels(ch, 1);
    for (const auto& sc : stream_covariances(ch, L, 1))
        L.u[sc.j][sc.k] = mmse_receiver(sc.F, S[sc.i][sc.j], L.v[sc.j][sc.k]);
}

// Reciprocal network: receive filters transmit back with the same powers;
// stream (j,k) hears every stream it would interfere with in the forward link.
void reverse_mmse(const ChannelInstance& ch, StreamLayout& L) {
    const int J = ch.J();
    auto S = lifted_channels(ch, 1);
    Mat noise = lifted_noise(ch, 1);
    auto next = L.v;
    for (int j = 0; j < J; ++j)
        for (int k = 0; k < L.streams(j); ++k) {
            Mat F = noise;
            for (int l = 0; l < J; ++l)
                for (int m = 0; m < L.streams(l); ++m)
                    if (interferes(L, J, l, m, j, k)) {
                        Vec b = S[ch.rx_of(l)][j].transpose() * L.u[l][m];
                        F.noalias() += L.p[l][m] * b * b.transpose();
                    }
            next[j][k] = mmse_receiver(F, S[ch.rx_of(j)][j].transpose(), L.u[j][k]);
        }
    L.v = next;
}

double max_change(const StreamLayout& a, const StreamLayout& b) {
    double c = 0.0;
    for (int j = 0; j < a.users(); ++j)
        for (int k = 0; k < a.streams(j); ++k)
            c = std::max(c, std::min((a.v[j][k] - b.v[j][k]).norm(), (a.v[j][k] + b.v[j][k]).norm()));
    return c;
}

void check_targets(const ChannelInstance& ch, const StreamLayout& L, const StreamTargets& g) {
    if (static_cast<int>(g.size()) != ch.J() || L.users() != ch.J())
        throw std::invalid_argument("one target row and one layout row per transmitter");
    for (int j = 0; j < ch.J(); ++j) {
        if (static_cast<int>(g[j].size()) != L.streams(j)) throw std::invalid_argument("one target per stream");
        for (double x : g[j])
            if (!(x >= 0)) throw std::invalid_argument("SINR targets must be >= 0");
    }
}

double user_power(const StreamLayout& L, int j) {
    double s = 0.0;
    for (double p : L.p[j]) s += p;
    return s;
}

PowerResult finish_layout(const StreamLayout& L) {
    PowerResult r;
    r.status = PowerStatus::Converged;
    r.layout = L;
    r.per_user = Vec(L.users());
    for (int j = 0; j < L.users(); ++j) r.per_user(j) = user_power(L, j);
    r.total = r.per_user.sum();
    return r;
}

}  // namespace

StreamLayout algorithm1_beamformers(const ChannelInstance& ch, const StreamLayout& init, int maxiter, double tol,
                                    std::vector<double>* change_trace) {
    StreamLayout L = init;
    if (maxiter <= 0) return L;
    for (int it = 0; it < maxiter; ++it) {
        StreamLayout prev = L;
        forward_mmse(ch, L);
        reverse_mmse(ch, L);
        double c = max_change(prev, L);
        if (change_trace) change_trace->push_back(c);
        if (c < tol) break;
    }
    forward_mmse(ch, L);
    return L;
}

PowerResult power_lp(const ChannelInstance& ch, const StreamLayout& L, const StreamTargets& gamma,
                     const SolverConfig& cfg) {
    check_targets(ch, L, gamma);
    const int J = ch.J();
    auto S = lifted_channels(ch, 1);
    const double s2 = 0.5 * ch.noise_variance;
    std::vector<std::pair<int, int>> idx;
    for (int j = 0; j < J; ++j)
        for (int k = 0; k < L.streams(j); ++k) idx.push_back({j, k});
    const int n = static_cast<int>(idx.size());
    auto at = [&](int j, int k) {
        return static_cast<int>(std::find(idx.begin(), idx.end(), std::make_pair(j, k)) - idx.begin());
    };
    LinearProgram lp;
    lp.c = Vec::Ones(n);
    lp.lb = Vec::Zero(n);
    std::vector<Vec> rows;
    std::vector<double> rhs;
    for (auto [j, k] : idx) {
        const int i = ch.rx_of(j);
        const double g = gamma[j][k];
        Vec row = Vec::Zero(n);
        double self = L.u[j][k].dot(S[i][j] * L.v[j][k]);
        row(at(j, k)) = -self * self;
        for (int l = 0; l < J; ++l)
            for (int m = 0; m < L.streams(l); ++m)
                if (interferes(L, J, j, k, l, m)) {
                    double x = L.u[j][k].dot(S[i][l] * L.v[l][m]);
                    row(at(l, m)) += g * x * x;
                }
        double b = -g * s2;
        double sc = std::max(row.cwiseAbs().maxCoeff(), std::abs(b));
        if (sc > 0) {
            row /= sc;
            b /= sc;
        }
        rows.push_back(row);
        rhs.push_back(b);
    }
    for (int j = 0; j < J; ++j) {
        Vec row = Vec::Zero(n);
        for (int k = 0; k < L.streams(j); ++k) row(at(j, k)) = 1.0;
        rows.push_back(row);
        rhs.push_back(ch.power_caps(j));
    }
    lp.A = Mat(rows.size(), n);
    lp.b = Vec(rows.size());
    for (size_t r = 0; r < rows.size(); ++r) {
        lp.A.row(r) = rows[r].transpose();
        lp.b(r) = rhs[r];
    }
    auto res = solve_lp(lp, cfg);
    if (res.status != Status::Optimal) {
        PowerResult r;
        r.status = PowerStatus::Infeasible;
        r.note = to_string(res.status);
        return r;
    }
    StreamLayout out = L;
    for (int q = 0; q < n; ++q) out.p[idx[q].first][idx[q].second] = std::max(0.0, res.x(q));
    return finish_layout(out);
}

StreamLayout initial_layout(const ChannelInstance& ch, const PowerOptions& opt, int start) {
    const int J = ch.J();
    StreamLayout L;
    L.decoding = opt.decoding;
    L.mac_order = opt.mac_order.empty() ? default_order(J) : opt.mac_order;
    L.v.assign(J, std::vector<Vec>(2));
    L.u.assign(J, std::vector<Vec>(2));
    L.p.assign(J, std::vector<double>(2));
    CounterRng rng(mix_seed(opt.seed, static_cast<std::uint64_t>(start)), 0x5eed);
    for (int j = 0; j < J; ++j)
        for (int k = 0; k < 2; ++k) {
            Vec v(2);
            if (start == 0) {
                v << 1.0, k == 0 ? 1.0 : -1.0;
            } else {
                do {
                    v << rng.normal(), rng.normal();
                } while (v.norm() < 1e-8);
            }
            L.v[j][k] = v.normalized();
            L.u[j][k] = L.v[j][k];
            L.p[j][k] = std::min(opt.design_power, 0.5 * ch.power_caps(j));
        }
    return L;
}

PowerResult separate_min_power(const ChannelInstance& ch, const StreamTargets& gamma, const PowerOptions& opt,
                               const SolverConfig& cfg) {
    ch.validate();
    PowerResult best;
    best.status = PowerStatus::Infeasible;
    for (int s = 0; s < std::max(1, opt.starts); ++s) {
        std::vector<double> changes;
        StreamLayout L = algorithm1_beamformers(ch, initial_layout(ch, opt, s), opt.max_iter, opt.tol, &changes);
        PowerResult r = power_lp(ch, L, gamma, cfg);
        r.iterations = static_cast<int>(changes.size());
        if (r.status != PowerStatus::Infeasible && !changes.empty() && changes.back() >= opt.tol)
            r.status = PowerStatus::IterLimit;
        if (r.status != PowerStatus::Infeasible &&
            (best.status == PowerStatus::Infeasible || r.total < best.total))
            best = r;
    }
    return best;
}

namespace {

struct JointRun {
    std::optional<PowerResult> best;
    int iterations = 0;
};

// One run of the alternating joint design from a starting layout.
JointRun joint_run(const ChannelInstance& ch, StreamLayout L, const StreamTargets& gamma, const PowerOptions& opt,
                   const SolverConfig& cfg) {
    const int J = ch.J();
    auto S = lifted_channels(ch, 1);
    const double s2 = 0.5 * ch.noise_variance;
    JointRun run;
    auto consider = [&](PowerResult r, int it) {
        if (r.status == PowerStatus::Infeasible) return;
        r.iterations = it;
        if (!run.best || r.total < run.best->total) run.best = r;
    };
    double prev = std::numeric_limits<double>::infinity();
    for (int it = 0; it < opt.max_iter; ++it) {
        run.iterations = it + 1;
        forward_mmse(ch, L);
        SemidefiniteProgram p;
        std::vector<int> block(J * 2);
        for (int j = 0; j < J; ++j)
            for (int k = 0; k < L.streams(j); ++k) {
                block[j * 2 + k] = static_cast<int>(p.blocks.size());
                p.blocks.push_back({2, false});
                p.objective.push_back({block[j * 2 + k], CMat::Identity(2, 2)});
            }
        for (int j = 0; j < J; ++j) {
            const int i = ch.rx_of(j);
            for (int k = 0; k < L.streams(j); ++k) {
                const double g = gamma[j][k];
                const Vec& u = L.u[j][k];
                std::vector<std::pair<int, Mat>> terms;
                Vec a = S[i][j].transpose() * u;
                terms.push_back({block[j * 2 + k], a * a.transpose()});
                for (int l = 0; l < J; ++l)
                    for (int m = 0; m < L.streams(l); ++m)
                        if (interferes(L, J, j, k, l, m)) {
                            Vec b = S[i][l].transpose() * u;
                            terms.push_back({block[l * 2 + m], -g * b * b.transpose()});
                        }
                double sc = g * s2;
                for (auto& t : terms) sc = std::max(sc, t.second.cwiseAbs().maxCoeff());
                if (!(sc > 0)) sc = 1.0;
                SdpConstraint c;
                for (auto& t : terms) c.form.push_back({t.first, cplx(t.second / sc)});
                c.sense = Sense::Ge;
                c.bound = g * s2 / sc;
                p.constraints.push_back(c);
            }
            SdpConstraint cap;
            for (int k = 0; k < L.streams(j); ++k) cap.form.push_back({block[j * 2 + k], CMat::Identity(2, 2)});
            cap.sense = Sense::Le;
            cap.bound = ch.power_caps(j);
            p.constraints.push_back(cap);
        }
        auto res = solve_sdp(p, cfg);
        if (res.status != Status::Optimal) {
            reverse_mmse(ch, L);
            continue;
        }
        std::vector<int> ranks;
        for (int j = 0; j < J; ++j)
            for (int k = 0; k < L.streams(j); ++k) {
                Mat Q = res.real_block(block[j * 2 + k]);
                Q = 0.5 * (Q + Q.transpose());
                auto r1 = dominant_rank1(Q);
                ranks.push_back(numeric_rank(Q));
                L.p[j][k] = std::max(r1.lambda, 0.0);
                L.v[j][k] = r1.w;
            }
        // Score the rank-one layout by what it really achieves.
        StreamLayout A = L;
        forward_mmse(ch, A);
        PowerResult r = power_lp(ch, A, gamma, cfg);
        r.ranks = ranks;
        consider(r, it + 1);
        if (std::abs(res.value - prev) < opt.tol * std::max(1.0, std::abs(prev))) break;
        prev = res.value;
    }
    return run;
}

}  // namespace

PowerResult joint_min_power(const ChannelInstance& ch, const StreamTargets& gamma, const PowerOptions& opt,
                            const SolverConfig& cfg, const std::vector<StreamLayout>& seeds) {
    ch.validate();
    std::optional<PowerResult> best;
    auto take = [&](const PowerResult& r) {
        if (r.status != PowerStatus::Infeasible && (!best || r.total < best->total)) best = r;
    };
    std::vector<StreamLayout> starts = seeds;
    for (const auto& s : seeds) take(power_lp(ch, s, gamma, cfg));
    for (int s = 0; s < std::max(1, opt.starts); ++s) starts.push_back(initial_layout(ch, opt, s));
    for (auto& s : starts) {
        s.decoding = opt.decoding;
        if (s.mac_order.empty()) s.mac_order = opt.mac_order.empty() ? default_order(ch.J()) : opt.mac_order;
        auto run = joint_run(ch, s, gamma, opt, cfg);
        if (run.best) take(*run.best);
    }
    if (!best) {
        PowerResult r;
        r.status = PowerStatus::Infeasible;
        return r;
    }
    return *best;
}

PowerResult proper_min_power_sinr(const ChannelInstance& ch, const Vec& gamma, Decoding decoding,
                                  const std::vector<int>& mac_order, const SolverConfig& cfg) {
    ch.validate();
    const int J = ch.J();
    if (gamma.size() != J) throw std::invalid_argument("one SINR target per user");
    if ((gamma.array() < 0).any()) throw std::invalid_argument("SINR targets must be >= 0");
    auto order = mac_order.empty() ? default_order(J) : mac_order;
    auto pos = [&](int u) { return static_cast<int>(std::find(order.begin(), order.end(), u) - order.begin()); };
    auto g2 = [&](int i, int j) { return std::norm(ch.gains(i, j)); };
    LinearProgram lp;
    lp.c = Vec::Ones(J);
    lp.lb = Vec::Zero(J);
    lp.A = Mat::Zero(2 * J, J);
    lp.b = Vec::Zero(2 * J);
    for (int j = 0; j < J; ++j) {
        const int i = ch.rx_of(j);
        Vec row = Vec::Zero(J);
        row(j) = -g2(i, j);
        for (int l = 0; l < J; ++l) {
            if (l == j) continue;
            bool hit = true;
            if (j == ch.p2p())
                hit = true;
            else if (decoding == Decoding::Successive && l != ch.p2p())
                hit = pos(l) > pos(j);
            if (hit) row(l) += gamma(j) * g2(i, l);
        }
        double b = -gamma(j) * ch.noise_variance;
        double sc = std::max(row.cwiseAbs().maxCoeff(), std::abs(b));
        lp.A.row(j) = row.transpose() / sc;
        lp.b(j) = b / sc;
        lp.A(J + j, j) = 1.0;
        lp.b(J + j) = ch.power_caps(j);
    }
    auto res = solve_lp(lp, cfg);
    PowerResult r;
    if (res.status != Status::Optimal) {
        r.status = PowerStatus::Infeasible;
        r.note = to_string(res.status);
        return r;
    }
    r.status = PowerStatus::Converged;
    r.per_user = res.x.cwiseMax(0.0);
    r.total = r.per_user.sum();
    for (int j = 0; j < J; ++j) r.Q.push_back(proper_covariance(r.per_user(j), 1));
    return r;
}

}  // namespace pimac
