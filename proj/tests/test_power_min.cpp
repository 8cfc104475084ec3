#include <doctest.h>

#include "pimac/power_min.hpp"

#include <cmath>
#include <random>

using namespace pimac;

namespace {

ChannelInstance make(const double (&e)[6][2], double cap = 1e6) {
    ChannelInstance ch;
    ch.gains.resize(2, 3);
    for (int k = 0; k < 6; ++k) ch.gains(k / 3, k % 3) = std::polar(e[k][0], e[k][1]);
    ch.noise_variance = 1.0;
    ch.power_caps = Vec::Constant(3, cap);
    return ch;
}

const double kH1[6][2] = {{2.03, -0.68}, {2.1, 2.64}, {3.2, 1.48}, {4.7, 1.97}, {4.5, -0.66}, {2.85, 2.41}};
const double kH2[6][2] = {{3.2, -0.72}, {2.3, 2.52}, {1.9, 1.35}, {2.8, 1.68}, {2.5, -0.76}, {3.4, 2.23}};

Mat random_psd(std::mt19937& g, int n) {
    std::normal_distribution<double> N;
    Mat A(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) A(i, j) = N(g);
    return A * A.transpose() / n;
}

// Fixed-point power control p <- gamma * (noise + interference) / gain.
std::optional<Vec> fixed_point(const ChannelInstance& ch, const Vec& gamma, Decoding dec,
                               const std::vector<int>& order) {
    const int J = ch.J();
    Vec p = Vec::Zero(J);
    for (int it = 0; it < 200000; ++it) {
        Vec q(J);
        for (int j = 0; j < J; ++j) {
            const int i = j == J - 1 ? 1 : 0;
            double den = ch.noise_variance;
            for (int l = 0; l < J; ++l) {
                if (l == j) continue;
                bool hears = true;
                if (i == 0 && l != J - 1 && dec == Decoding::Successive) {
                    int pj = 0, pl = 0;
                    for (int k = 0; k < static_cast<int>(order.size()); ++k) {
                        if (order[k] == j) pj = k;
                        if (order[k] == l) pl = k;
                    }
                    hears = pl > pj;
                }
                if (hears) den += std::norm(ch.gains(i, l)) * p(l);
            }
            q(j) = gamma(j) * den / std::norm(ch.gains(i, j));
        }
        if (q.maxCoeff() > 1e8) return std::nullopt;
        if ((q - p).cwiseAbs().maxCoeff() < 1e-13) return q;
        p = q;
    }
    return std::nullopt;
}

double min_stream_margin(const ChannelInstance& ch, const PowerResult& r, const StreamTargets& g) {
    double m = 1e300;
    for (const auto& sc : stream_covariances(ch, r.layout, 1))
        m = std::min(m, sinr(sc.T, sc.F, r.layout.u[sc.j][sc.k]) - g[sc.j][sc.k]);
    return m;
}

}  // namespace

TEST_CASE("stream target semantics") {
    CHECK(stream_target(0.5, SinrSemantics::PerStream) == 0.5);
    double s = stream_target(0.5, SinrSemantics::PerUser);
    CHECK(2 * std::log2(1 + s) == doctest::Approx(std::log2(1.5)));
    CHECK_THROWS(stream_target(-0.1, SinrSemantics::PerStream));
    auto t = uniform_targets(3, 2, 0.3);
    CHECK(t.size() == 3);
    CHECK(t[2][1] == 0.3);
}

TEST_CASE("mmse receiver beats random directions") {
    std::mt19937 g(11);
    std::normal_distribution<double> N;
    for (int trial = 0; trial < 5; ++trial) {
        const int n = 2 + trial % 3;
        Mat F = random_psd(g, n) + 0.1 * Mat::Identity(n, n);
        Mat G(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) G(i, j) = N(g);
        Vec v = Vec::NullaryExpr(n, [&](Eigen::Index) { return N(g); }).normalized();
        Mat T = G * v * v.transpose() * G.transpose();
        Vec u = mmse_receiver(F, G, v);
        CHECK(u.norm() == doctest::Approx(1.0));
        const double best = sinr(T, F, u);
        // Generalised Rayleigh quotient maximum.
        CHECK(best == doctest::Approx((G * v).dot(F.ldlt().solve(G * v))).epsilon(1e-10));
        for (int k = 0; k < 2000; ++k) {
            Vec d = Vec::NullaryExpr(n, [&](Eigen::Index) { return N(g); });
            CHECK(sinr(T, F, d) <= best * (1 + 1e-12));
        }
    }
}

TEST_CASE("power lp: one stream against the closed form") {
    ChannelInstance ch;
    ch.gains = CMat::Zero(2, 3);
    ch.gains(0, 0) = cd(2.0, 0.0);
    ch.gains(1, 2) = cd(1.0, 0.0);
    ch.gains(0, 1) = cd(1.0, 0.0);
    ch.power_caps = Vec::Constant(3, 1e6);
    PowerOptions opt;
    auto L = initial_layout(ch, opt, 0);
    // Only user 1's first stream carries a target.
    StreamTargets t = uniform_targets(3, 2, 0.0);
    t[0][0] = 0.5;
    for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 2; ++k) L.u[j][k] = L.v[j][k];
    auto r = power_lp(ch, L, t, {});
    REQUIRE(r.status == PowerStatus::Converged);
    // Lifted gain 2 on each real dimension, noise sigma^2/2.
    CHECK(r.total == doctest::Approx(0.5 * 0.5 / 4.0).epsilon(1e-5));
}

TEST_CASE("proper sinr baseline matches fixed-point iteration") {
    auto h1 = make(kH1);
    auto h2 = make(kH2);
    struct Case {
        const ChannelInstance* ch;
        double g;
        Decoding d;
        int which;
    };
    for (const auto& c : {Case{&h1, 0.1, Decoding::Parallel, 1}, Case{&h1, 0.2, Decoding::Successive, 1},
                          Case{&h2, 0.5, Decoding::Successive, 1}, Case{&h2, 0.4, Decoding::Successive, 2},
                          Case{&h2, 0.3, Decoding::Parallel, 1}}) {
        Vec gamma = Vec::Constant(3, c.g);
        auto order = named_order(3, c.which);
        auto r = proper_min_power_sinr(*c.ch, gamma, c.d, order);
        auto fp = fixed_point(*c.ch, gamma, c.d, order);
        REQUIRE(fp.has_value());
        REQUIRE(r.status == PowerStatus::Converged);
        CHECK(r.total == doctest::Approx(fp->sum()).epsilon(1e-5));
    }
    CHECK(proper_min_power_sinr(h1, Vec::Constant(3, 0.1), Decoding::Parallel).total ==
          doctest::Approx(0.09837).epsilon(0.02));
    CHECK(proper_min_power_sinr(h2, Vec::Constant(3, 0.5), Decoding::Successive).total ==
          doctest::Approx(0.35154).epsilon(0.02));
    CHECK(proper_min_power_sinr(h1, Vec::Constant(3, 0.3), Decoding::Parallel).status == PowerStatus::Infeasible);
    CHECK_FALSE(fixed_point(h1, Vec::Constant(3, 0.3), Decoding::Parallel, default_order(3)).has_value());
}

TEST_CASE("proper rate baseline is the sinr baseline at 2^beta - 1") {
    auto h2 = make(kH2);
    for (double b : {0.2, 0.6}) {
        Vec beta = Vec::Constant(3, b);
        auto r = proper_min_power_rates(h2, beta, named_order(3, 1));
        auto s = proper_min_power_sinr(h2, Vec::Constant(3, std::exp2(b) - 1), Decoding::Successive,
                                       named_order(3, 1));
        REQUIRE(r.status == PowerStatus::Converged);
        CHECK(r.total == doctest::Approx(s.total).epsilon(1e-9));
        auto rates = vector_rates(h2, r.Q, 1, named_order(3, 1));
        for (double x : rates) CHECK(x >= b - 1e-6);
    }
}

TEST_CASE("alternating MMSE settles") {
    auto ch = make(kH1);
    PowerOptions opt;
    opt.decoding = Decoding::Successive;
    std::vector<double> tr;
    auto L = algorithm1_beamformers(ch, initial_layout(ch, opt, 0), 500, 1e-8, &tr);
    REQUIRE_FALSE(tr.empty());
    CHECK(tr.back() < 1e-6);
    L.check_units();
}

TEST_CASE("separate and joint designs meet their targets") {
    auto ch = make(kH1);
    for (double g : {0.2, 0.5}) {
        PowerOptions opt;
        opt.decoding = Decoding::Successive;
        auto t = uniform_targets(3, 2, g);
        auto s = separate_min_power(ch, t, opt);
        REQUIRE(s.status != PowerStatus::Infeasible);
        CHECK(min_stream_margin(ch, s, t) >= -1e-6 * (1 + g));
        auto j = joint_min_power(ch, t, opt, {}, {s.layout});
        REQUIRE(j.status != PowerStatus::Infeasible);
        CHECK(min_stream_margin(ch, j, t) >= -1e-6 * (1 + g));
        CHECK(j.total <= s.total + 1e-9);
        CHECK(j.total == doctest::Approx(j.per_user.sum()));
    }
}

TEST_CASE("fenchel bound dominates log det") {
    std::mt19937 g(5);
    for (int trial = 0; trial < 1000; ++trial) {
        const int a = 2 + trial % 5;
        std::vector<FenchelTerm> terms;
        Mat M = Mat::Identity(a, a);
        for (int t = 0; t < 1 + trial % 3; ++t) {
            FenchelTerm f{random_psd(g, a), random_psd(g, a)};
            M += f.A * f.X * f.A.transpose();
            terms.push_back(f);
        }
        const double ld = std::log(M.determinant());
        Mat Gam = random_psd(g, a) + 0.05 * Mat::Identity(a, a);
        CHECK(fenchel_upper_bound(Gam, terms, a) >= ld - 1e-10);
        CHECK(fenchel_upper_bound(M, terms, a) == doctest::Approx(ld).epsilon(1e-10));
    }
    CHECK_THROWS(fenchel_upper_bound(Mat::Identity(2, 2), {}, 3));
}

TEST_CASE("replicate") {
    Mat Q(2, 2);
    Q << 1, 0.5, 0.5, 2;
    Mat R = replicate(Q, 3);
    CHECK(R.rows() == 6);
    CHECK(R.block(2, 2, 2, 2) == Q);
    CHECK(R.block(0, 2, 2, 2).isZero());
    CHECK(R.trace() == doctest::Approx(9.0));
    CHECK_THROWS(replicate(Q, 0));
}

TEST_CASE("ccp: rates met, monotone trace, nesting") {
    auto ch = make(kH1);
    Vec beta = Vec::Constant(3, 0.4);
    auto order = named_order(3, 2);
    auto r1 = ccp_min_power_rates(ch, beta, 1, order);
    REQUIRE(r1.status != PowerStatus::Infeasible);
    for (double x : vector_rates(ch, r1.Q, 1, order)) CHECK(x >= 0.4 - 1e-6);
    for (size_t k = 1; k < r1.trace.size(); ++k) CHECK(r1.trace[k] <= r1.trace[k - 1] + 1e-7);
    CHECK(r1.total == doctest::Approx(r1.trace.back()));

    auto pr = proper_min_power_rates(ch, beta, order);
    if (pr.status == PowerStatus::Converged) CHECK(r1.total <= pr.total + 1e-6);

    CcpOptions o;
    std::vector<Mat> seed;
    for (const auto& q : r1.Q) seed.push_back(replicate(q, 2));
    o.seeds.push_back(seed);
    auto r2 = ccp_min_power_rates(ch, beta, 2, order, {}, o);
    REQUIRE(r2.status != PowerStatus::Infeasible);
    CHECK(r2.total <= r1.total + 1e-6);
    for (double x : vector_rates(ch, r2.Q, 2, order)) CHECK(x >= 0.4 - 1e-6);
    for (size_t k = 1; k < r2.trace.size(); ++k) CHECK(r2.trace[k] <= r2.trace[k - 1] + 1e-7);
}

TEST_CASE("ccp: zero demand and bad input") {
    auto ch = make(kH2);
    auto z = ccp_min_power_rates(ch, Vec::Zero(3), 1, default_order(3));
    CHECK(z.status == PowerStatus::Converged);
    CHECK(z.total == 0.0);
    CHECK_THROWS(ccp_min_power_rates(ch, Vec::Constant(2, 0.1), 1, default_order(3)));
    CHECK_THROWS(ccp_min_power_rates(ch, Vec::Constant(3, -0.1), 1, default_order(3)));
    CHECK_THROWS(ccp_min_power_rates(ch, Vec::Constant(3, 0.1), 0, default_order(3)));
}

TEST_CASE("ccp respects power caps") {
    auto ch = make(kH1, 0.3);
    Vec beta = Vec::Constant(3, 0.2);
    auto r = ccp_min_power_rates(ch, beta, 1, named_order(3, 2));
    REQUIRE(r.status != PowerStatus::Infeasible);
    for (int j = 0; j < 3; ++j) CHECK(r.per_user(j) <= 0.3 * (1 + 1e-6));
    auto big = ccp_min_power_rates(ch, Vec::Constant(3, 3.0), 1, named_order(3, 2));
    CHECK(big.status == PowerStatus::Infeasible);
}
