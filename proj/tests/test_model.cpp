#include <doctest.h>

#include "pimac/model.hpp"

#include <cmath>
#include <random>

using namespace pimac;

namespace {

cd polar(double m, double ph) { return std::polar(m, ph); }

ChannelInstance h1() {
    ChannelInstance ch;
    ch.gains.resize(2, 3);
    ch.gains << polar(2.03, -0.68), polar(2.1, 2.64), polar(3.2, 1.48), polar(4.7, 1.97), polar(4.5, -0.66),
        polar(2.85, 2.41);
    ch.noise_variance = 1.0;
    ch.power_caps = Vec::Ones(3);
    return ch;
}

ChannelInstance random_channel(std::mt19937& g, int J = 3) {
    std::normal_distribution<double> N;
    ChannelInstance ch;
    ch.gains.resize(2, J);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < J; ++j) ch.gains(i, j) = cd(N(g), N(g));
    ch.noise_variance = 0.5 + std::abs(N(g));
    ch.power_caps = Vec::Ones(J);
    return ch;
}

Mat random_psd(std::mt19937& g, int n, double scale = 1.0) {
    std::normal_distribution<double> N;
    Mat A(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) A(i, j) = N(g);
    return scale * A * A.transpose() / n;
}

}  // namespace

TEST_CASE("lift_channel examples") {
    auto I = lift_channel(cd(1, 0)).entries();
    CHECK((I - Eigen::Matrix2d::Identity()).norm() == 0.0);
    auto R = lift_channel(cd(0, 1)).entries();
    CHECK(R(0, 0) == 0.0);
    CHECK(R(0, 1) == -1.0);
    CHECK(R(1, 0) == 1.0);
    auto G = lift_channel(polar(2.03, -0.68)).entries();
    // calculator: 2.03 cos 0.68 = 1.578473, 2.03 sin 0.68 = 1.276450
    CHECK(G(0, 0) == doctest::Approx(1.578473).epsilon(1e-6));
    CHECK(G(0, 1) == doctest::Approx(1.276450).epsilon(1e-6));
    CHECK(G(1, 0) == doctest::Approx(-1.276450).epsilon(1e-6));
    CHECK_THROWS(RealChannelMatrix(Eigen::Matrix2d::Ones()));
}

TEST_CASE("lift is a ring homomorphism") {
    std::mt19937 g(11);
    std::normal_distribution<double> N;
    for (int t = 0; t < 200; ++t) {
        cd a(N(g), N(g)), b(N(g), N(g));
        auto A = lift_channel(a).entries(), B = lift_channel(b).entries();
        CHECK((lift_channel(a * b).entries() - A * B).norm() < 1e-12);
        CHECK((lift_channel(a + b).entries() - (A + B)).norm() < 1e-12);
        Eigen::Vector2d x(N(g), N(g));
        cd y = a * cd(x(0), x(1));
        Eigen::Vector2d Ax = A * x;
        CHECK(std::abs(Ax(0) - y.real()) < 1e-12);
        CHECK(std::abs(Ax(1) - y.imag()) < 1e-12);
    }
}

TEST_CASE("extend_channel") {
    auto G = lift_channel(polar(1.3, 0.4));
    CHECK((extend_channel(G, 1).entries - G.entries()).norm() == 0.0);
    auto S = extend_channel(lift_channel(cd(1, 0)), 3);
    CHECK((S.entries - Mat::Identity(6, 6)).norm() == 0.0);
    auto R = extend_channel(lift_channel(cd(0, 1)), 2).entries;
    Mat expect = Mat::Zero(4, 4);
    expect(0, 1) = -1;
    expect(1, 0) = 1;
    expect(2, 3) = -1;
    expect(3, 2) = 1;
    CHECK((R - expect).norm() == 0.0);
    CHECK_THROWS_AS(extend_channel(G, 0), std::invalid_argument);
}

TEST_CASE("rate_bounds_improper: endpoint and zero") {
    auto ch = h1();
    std::vector<AugmentedCovariance> sig(3);
    sig[2].variance = 1.0;
    auto r = rate_bounds_improper(ch, sig);
    CHECK(r.L3 == doctest::Approx(std::log2(1 + 2.85 * 2.85)).epsilon(1e-12));
    CHECK(r.L3 == doctest::Approx(3.1894).epsilon(1e-4));

    std::vector<AugmentedCovariance> zero(3);
    auto z = rate_bounds_improper(ch, zero);
    CHECK(z.L1 == 0.0);
    CHECK(z.L2 == 0.0);
    CHECK(z.L3 == 0.0);
    CHECK(z.L4 == 0.0);
}

TEST_CASE("rate_bounds_improper: all proper unit power by hand") {
    auto ch = h1();
    std::vector<AugmentedCovariance> sig(3, AugmentedCovariance{1.0, 0.0});
    auto r = rate_bounds_improper(ch, sig);
    double g11 = 2.03 * 2.03, g12 = 2.1 * 2.1, g13 = 3.2 * 3.2;
    double g21 = 4.7 * 4.7, g22 = 4.5 * 4.5, g23 = 2.85 * 2.85;
    CHECK(r.L1 == doctest::Approx(std::log2((1 + g11 + g13) / (1 + g13))));
    CHECK(r.L2 == doctest::Approx(std::log2((1 + g12 + g13) / (1 + g13))));
    CHECK(r.L3 == doctest::Approx(std::log2((1 + g21 + g22 + g23) / (1 + g21 + g22))));
    CHECK(r.L4 == doctest::Approx(std::log2((1 + g11 + g12 + g13) / (1 + g13))));
}

TEST_CASE("rate_bounds_improper: proper reduces to log2(1+SINR)") {
    std::mt19937 g(5);
    std::uniform_real_distribution<double> U(0, 2);
    for (int t = 0; t < 100; ++t) {
        auto ch = random_channel(g);
        double p[3] = {U(g), U(g), U(g)};
        std::vector<AugmentedCovariance> sig;
        for (double x : p) sig.push_back({x, 0.0});
        auto r = rate_bounds_improper(ch, sig);
        auto gg = [&](int i, int j) { return std::norm(ch.gains(i, j)); };
        double s2 = ch.noise_variance;
        double i1 = s2 + gg(0, 2) * p[2];
        CHECK(r.L1 == doctest::Approx(std::log2(1 + gg(0, 0) * p[0] / i1)));
        CHECK(r.L2 == doctest::Approx(std::log2(1 + gg(0, 1) * p[1] / i1)));
        CHECK(r.L4 == doctest::Approx(std::log2(1 + (gg(0, 0) * p[0] + gg(0, 1) * p[1]) / i1)));
        double i2 = s2 + gg(1, 0) * p[0] + gg(1, 1) * p[1];
        CHECK(r.L3 == doctest::Approx(std::log2(1 + gg(1, 2) * p[2] / i2)));
    }
}

TEST_CASE("rate_bounds_improper: interferer variance is monotone") {
    std::mt19937 g(17);
    std::uniform_real_distribution<double> U(0, 1);
    for (int t = 0; t < 200; ++t) {
        auto ch = random_channel(g);
        std::vector<AugmentedCovariance> sig(3);
        for (auto& s : sig) {
            s.variance = U(g) + 0.01;
            s.pseudo_variance = std::polar(s.variance * U(g), 6.28 * U(g));
        }
        auto base = rate_bounds_improper(ch, sig);
        // MAC users interfere with L3; P2P interferes with L1, L2.
        auto bumped = sig;
        bumped[0].variance += 0.5 * U(g);
        CHECK(rate_bounds_improper(ch, bumped).L3 <= base.L3 + 1e-12);
        bumped = sig;
        bumped[2].variance += 0.5 * U(g);
        auto b2 = rate_bounds_improper(ch, bumped);
        CHECK(b2.L1 <= base.L1 + 1e-12);
        CHECK(b2.L2 <= base.L2 + 1e-12);
    }
}

TEST_CASE("rate_bounds_improper: preconditions") {
    auto ch = h1();
    std::vector<AugmentedCovariance> bad(3);
    bad[0] = {1.0, cd(2.0, 0.0)};
    CHECK_THROWS(rate_bounds_improper(ch, bad));
    auto c0 = ch;
    c0.noise_variance = 0.0;
    CHECK_THROWS(rate_bounds_improper(c0, std::vector<AugmentedCovariance>(3)));
    AugmentedCovariance a{1.0, 0.0};
    CHECK(a.proper());
    a.pseudo_variance = cd(0, 0.5);
    CHECK_FALSE(a.proper());
}

TEST_CASE("vector_rates") {
    auto ch = h1();
    std::vector<Mat> Q(3, Mat::Zero(2, 2));
    auto z = vector_rates(ch, Q, 1, default_order(3));
    for (double r : z) CHECK(r == 0.0);

    Q[2] = 0.5 * Mat::Identity(2, 2);
    auto e = vector_rates(ch, Q, 1, default_order(3));
    CHECK(e[2] == doctest::Approx(3.1894).epsilon(1e-4));

    // all proper unit power: 2x2 determinants by hand, decode user 1 first
    std::vector<Mat> P(3, 0.5 * Mat::Identity(2, 2));
    auto r = vector_rates(ch, P, 1, default_order(3));
    double g11 = 2.03 * 2.03, g12 = 2.1 * 2.1, g13 = 3.2 * 3.2;
    double g21 = 4.7 * 4.7, g22 = 4.5 * 4.5, g23 = 2.85 * 2.85;
    auto det = [](double v) { return (v / 2) * (v / 2); };  // (s/2 + sum g/2)^2 per 2x2 scaled identity
    CHECK(r[0] == doctest::Approx(0.5 * std::log2(det(1 + g11 + g12 + g13) / det(1 + g12 + g13))));
    CHECK(r[1] == doctest::Approx(0.5 * std::log2(det(1 + g12 + g13) / det(1 + g13))));
    CHECK(r[2] == doctest::Approx(0.5 * std::log2(det(1 + g21 + g22 + g23) / det(1 + g21 + g22))));

    auto r2 = vector_rates(ch, P, 1, named_order(3, 2));
    CHECK(r2[1] == doctest::Approx(0.5 * std::log2(det(1 + g11 + g12 + g13) / det(1 + g11 + g13))));
}

TEST_CASE("vector_rates: block replication keeps per-channel-use rates") {
    std::mt19937 g(23);
    for (int t = 0; t < 20; ++t) {
        auto ch = random_channel(g, 3 + t % 3);
        std::vector<Mat> Q;
        for (int j = 0; j < ch.J(); ++j) Q.push_back(random_psd(g, 2));
        auto order = default_order(ch.J());
        auto base = vector_rates(ch, Q, 1, order);
        for (int N : {2, 3}) {
            std::vector<Mat> QN;
            for (const auto& q : Q) {
                Mat b = Mat::Zero(2 * N, 2 * N);
                for (int k = 0; k < N; ++k) b.block(2 * k, 2 * k, 2, 2) = q;
                QN.push_back(b);
            }
            auto r = vector_rates(ch, QN, N, order);
            for (size_t j = 0; j < r.size(); ++j) CHECK(std::abs(r[j] - base[j]) < 1e-9);
        }
    }
}

namespace {
StreamLayout random_layout(std::mt19937& g, int J, Decoding d) {
    std::normal_distribution<double> N;
    std::uniform_real_distribution<double> U(0.1, 1.0);
    StreamLayout L;
    L.decoding = d;
    L.v.resize(J);
    L.p.resize(J);
    for (int j = 0; j < J; ++j)
        for (int k = 0; k < 2; ++k) {
            Vec v(2);
            v << N(g), N(g);
            L.v[j].push_back(v.normalized());
            L.p[j].push_back(U(g));
        }
    return L;
}
}  // namespace

TEST_CASE("stream_covariances") {
    // single stream, identity channel, sigma^2 = 2 so the lifted noise is I
    ChannelInstance ch;
    ch.gains = CMat::Zero(2, 3);
    ch.gains(0, 0) = 1.0;
    ch.noise_variance = 2.0;
    ch.power_caps = Vec::Ones(3);
    StreamLayout L;
    L.v = {{Vec::Unit(2, 0)}, {Vec::Unit(2, 0)}, {Vec::Unit(2, 0)}};
    L.p = {{1.0}, {0.0}, {0.0}};
    auto sc = stream_covariances(ch, L, 1);
    CHECK((sc[0].T - Vec::Unit(2, 0) * Vec::Unit(2, 0).transpose()).norm() < 1e-15);
    CHECK((sc[0].F - Mat::Identity(2, 2)).norm() < 1e-15);

    // two equal streams at one receiver
    L.v[0] = {Vec::Unit(2, 0), Vec::Unit(2, 1)};
    L.p[0] = {1.0, 1.0};
    auto par = stream_covariances(ch, L, 1);
    CHECK(par[0].F(1, 1) == doctest::Approx(2.0));
    L.decoding = Decoding::Successive;
    auto suc = stream_covariances(ch, L, 1);
    CHECK(suc[0].F(1, 1) == doctest::Approx(2.0));
    CHECK(suc[1].F(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("stream_covariances: F + T = R under parallel decoding") {
    std::mt19937 g(31);
    auto ch = h1();
    auto L = random_layout(g, 3, Decoding::Parallel);
    auto S = lifted_channels(ch, 1);
    Mat R[2];
    for (int i = 0; i < 2; ++i) {
        R[i] = lifted_noise(ch, 1);
        for (int l = 0; l < 3; ++l)
            for (int m = 0; m < 2; ++m) {
                Vec a = S[i][l] * L.v[l][m];
                R[i] += L.p[l][m] * a * a.transpose();
            }
    }
    for (const auto& s : stream_covariances(ch, L, 1)) CHECK((s.F + s.T - R[s.i]).norm() < 1e-12);
}

TEST_CASE("stream_covariances: successive cancellation sets") {
    std::mt19937 g(37);
    auto ch = h1();
    auto L = random_layout(g, 3, Decoding::Successive);
    // rx 1 decodes (1,1), (1,2), (2,1), (2,2); the P2P pair is never removed there
    CHECK(interferes(L, 3, 0, 0, 0, 1));
    CHECK_FALSE(interferes(L, 3, 0, 1, 0, 0));
    CHECK(interferes(L, 3, 0, 1, 1, 0));
    CHECK_FALSE(interferes(L, 3, 1, 0, 0, 1));
    CHECK(interferes(L, 3, 1, 1, 2, 0));
    // rx 2 peels only its own first stream
    CHECK(interferes(L, 3, 2, 1, 0, 0));
    CHECK_FALSE(interferes(L, 3, 2, 1, 2, 0));
    L.mac_order = {1, 0};
    CHECK(interferes(L, 3, 1, 1, 0, 0));
    CHECK_FALSE(interferes(L, 3, 0, 0, 1, 1));
}

TEST_CASE("sinr") {
    Mat T = Vec::Unit(2, 0) * Vec::Unit(2, 0).transpose();
    Mat F = Mat::Identity(2, 2);
    CHECK(sinr(T, F, Vec::Unit(2, 0)) == doctest::Approx(1.0));
    CHECK(sinr(T, F, Vec::Unit(2, 1)) == 0.0);
    CHECK(sinr(T, F, Vec(3.0 * Vec::Unit(2, 0))) == doctest::Approx(1.0));
    CHECK_THROWS_AS(sinr(T, Mat::Zero(2, 2), Vec::Unit(2, 0)), DegenerateError);

    std::mt19937 g(41);
    std::normal_distribution<double> N;
    for (int t = 0; t < 20; ++t) {
        Vec a(2), u(2);
        a << N(g), N(g);
        u << N(g), N(g);
        Mat Ft = random_psd(g, 2) + 0.1 * Mat::Identity(2, 2);
        double direct = std::pow(u.dot(a), 2) / (u.dot(Ft * u));
        CHECK(sinr(a * a.transpose(), Ft, u) == doctest::Approx(direct));
    }
}

TEST_CASE("sinr is maximised by the MMSE direction") {
    std::mt19937 g(43);
    std::normal_distribution<double> N;
    for (int t = 0; t < 5; ++t) {
        Vec gv(2);
        gv << N(g), N(g);
        Mat T = gv * gv.transpose();
        Mat F = random_psd(g, 2) + 0.05 * Mat::Identity(2, 2);
        Vec ustar = F.ldlt().solve(gv).normalized();
        double best = sinr(T, F, ustar);
        for (int s = 0; s < 10000; ++s) {
            Vec u(2);
            u << N(g), N(g);
            CHECK(sinr(T, F, u) <= best * (1 + 1e-12));
        }
    }
}

TEST_CASE("rate profile and channel validation") {
    auto p = RateProfile::make(0.25, 0.25, 0.5);
    CHECK(p.alpha4 == 0.5);
    CHECK_THROWS(RateProfile::make(0.5, 0.5, 0.5));
    CHECK_THROWS(RateProfile::make(-0.1, 0.6, 0.5));
    auto ch = h1();
    CHECK_NOTHROW(ch.validate());
    ch.power_caps = Vec::Ones(2);
    CHECK_THROWS(ch.validate());
    TransmitCovariance q{0.5 * Mat::Identity(2, 2), 0};
    CHECK_NOTHROW(q.check(1.0));
    CHECK_THROWS(q.check(0.5));
}
