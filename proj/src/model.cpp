#include "pimac/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pimac {

void ChannelInstance::validate() const {
    if (gains.rows() != 2) throw std::invalid_argument("channel gains must have 2 rows");
    if (J() < 3) throw std::invalid_argument("channel needs J >= 3 transmitters");
    if (power_caps.size() != J()) throw std::invalid_argument("power_caps length must equal J");
    if ((power_caps.array() < 0).any()) throw std::invalid_argument("power caps must be >= 0");
    if (!(noise_variance > 0)) throw std::invalid_argument("noise variance must be > 0");
}

ChannelInstance ChannelInstance::with_caps(double cap) const {
    ChannelInstance c = *this;
    c.power_caps = Vec::Constant(J(), cap);
    return c;
}

RealChannelMatrix::RealChannelMatrix(const Eigen::Matrix2d& m) : m_(m) {
    double s = std::max(1.0, m.cwiseAbs().maxCoeff());
    if (std::abs(m(0, 0) - m(1, 1)) > 1e-12 * s || std::abs(m(0, 1) + m(1, 0)) > 1e-12 * s)
        throw std::invalid_argument("not a rotation-scaling matrix");
}

void TransmitCovariance::check(double cap, double tol_feas, double tol_psd) const {
    if ((matrix - matrix.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, matrix.cwiseAbs().maxCoeff()))
        throw std::invalid_argument("transmit covariance not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(matrix);
    double tr = std::max(matrix.trace(), 1.0);
    if (es.eigenvalues()(0) < -tol_psd * tr) throw std::invalid_argument("transmit covariance not PSD");
    if (matrix.trace() > cap + tol_feas) throw std::invalid_argument("transmit covariance exceeds cap");
}

RateProfile RateProfile::make(double a1, double a2, double a3) {
    if (a1 < 0 || a2 < 0 || a3 < 0) throw std::invalid_argument("rate profile entries must be >= 0");
    if (std::abs(a1 + a2 + a3 - 1.0) > 1e-12) throw std::invalid_argument("rate profile must sum to 1");
    RateProfile r;
    r.alpha = {a1, a2, a3};
    r.alpha4 = a1 + a2;
    return r;
}

void StreamLayout::check_units(double tol) const {
    for (size_t j = 0; j < v.size(); ++j)
        for (size_t k = 0; k < v[j].size(); ++k) {
            if (std::abs(v[j][k].norm() - 1.0) > tol) throw std::invalid_argument("beamformer not unit norm");
            if (!u.empty() && std::abs(u[j][k].norm() - 1.0) > tol)
                throw std::invalid_argument("receive filter not unit norm");
            if (p[j][k] < 0) throw std::invalid_argument("negative stream power");
        }
}

RealChannelMatrix lift_channel(cd h) {
    Eigen::Matrix2d m;
    m << h.real(), -h.imag(), h.imag(), h.real();
    return RealChannelMatrix(m);
}

ExtendedChannelMatrix extend_channel(const RealChannelMatrix& G, int N) {
    if (N < 1) throw std::invalid_argument("extension length must be >= 1");
    ExtendedChannelMatrix S;
    S.extension_length = N;
    S.entries = Mat::Zero(2 * N, 2 * N);
    for (int b = 0; b < N; ++b) S.entries.block<2, 2>(2 * b, 2 * b) = G.entries();
    return S;
}

std::vector<std::vector<Mat>> lifted_channels(const ChannelInstance& ch, int N) {
    std::vector<std::vector<Mat>> S(2);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < ch.J(); ++j) S[i].push_back(extend_channel(lift_channel(ch.gains(i, j)), N).entries);
    return S;
}

namespace {

// (C_y)^2 - |C~_y|^2 for the received signal at rx i over transmitter set js.
double moment_det(const ChannelInstance& ch, const std::vector<AugmentedCovariance>& sig, int i,
                  std::initializer_list<int> js) {
    double v = ch.noise_variance;
    cd pv = 0.0;
    for (int j : js) {
        cd h = ch.gains(i, j);
        v += std::norm(h) * sig[j].variance;
        pv += h * h * sig[j].pseudo_variance;
    }
    return v * v - std::norm(pv);
}

double half_log2_ratio(double num, double den) {
    double s = std::max(1.0, std::abs(den));
    if (den <= 1e-14 * s) throw DegenerateError("degenerate rate denominator");
    if (num <= 0) throw DegenerateError("degenerate rate numerator");
    return 0.5 * std::log2(num / den);
}

}  // namespace

RateBounds rate_bounds_improper(const ChannelInstance& ch, const std::vector<AugmentedCovariance>& sig) {
    if (ch.J() != 3 || sig.size() != 3) throw std::invalid_argument("rate bounds are defined for J = 3");
    if (!(ch.noise_variance > 0)) throw std::invalid_argument("noise variance must be > 0");
    for (const auto& s : sig)
        if (!s.valid(1e-9)) throw std::invalid_argument("invalid augmented covariance");
    RateBounds r;
    double d13 = moment_det(ch, sig, 0, {2});
    r.L1 = half_log2_ratio(moment_det(ch, sig, 0, {0, 2}), d13);
    r.L2 = half_log2_ratio(moment_det(ch, sig, 0, {1, 2}), d13);
    r.L3 = half_log2_ratio(moment_det(ch, sig, 1, {0, 1, 2}), moment_det(ch, sig, 1, {0, 1}));
    r.L4 = half_log2_ratio(moment_det(ch, sig, 0, {0, 1, 2}), d13);
    return r;
}

std::vector<int> default_order(int J) {
    std::vector<int> o(J - 1);
    std::iota(o.begin(), o.end(), 0);
    return o;
}

std::vector<int> named_order(int J, int which) {
    auto o = default_order(J);
    if (which == 2 && J >= 3) std::swap(o[0], o[1]);
    return o;
}

Mat lifted_noise(const ChannelInstance& ch, int N) { return 0.5 * ch.noise_variance * Mat::Identity(2 * N, 2 * N); }

std::vector<RateSets> rate_sets(int J, const std::vector<int>& order) {
    if (static_cast<int>(order.size()) != J - 1) throw std::invalid_argument("order must list every MAC user");
    std::vector<RateSets> out;
    for (size_t pos = 0; pos < order.size(); ++pos) {
        RateSets s;
        s.user = order[pos];
        s.rx = 0;
        for (size_t q = pos + 1; q < order.size(); ++q) s.den.push_back(order[q]);
        s.den.push_back(J - 1);
        s.num = s.den;
        s.num.insert(s.num.begin(), order[pos]);
        out.push_back(s);
    }
    RateSets p;
    p.user = J - 1;
    p.rx = 1;
    for (int j = 0; j < J - 1; ++j) p.den.push_back(j);
    p.num = p.den;
    p.num.push_back(J - 1);
    out.push_back(p);
    return out;
}

std::vector<double> vector_rates(const ChannelInstance& ch, const std::vector<Mat>& Q, int N,
                                 const std::vector<int>& order) {
    const int J = ch.J();
    if (static_cast<int>(Q.size()) != J) throw std::invalid_argument("one covariance per transmitter");
    for (const auto& q : Q)
        if (q.rows() != 2 * N || q.cols() != 2 * N) throw std::invalid_argument("covariance size must be 2N");
    auto S = lifted_channels(ch, N);
    Mat noise = lifted_noise(ch, N);
    auto cov = [&](int i, const std::vector<int>& set) {
        Mat R = noise;
        for (int l : set) R.noalias() += S[i][l] * Q[l] * S[i][l].transpose();
        return R;
    };
    auto logdet = [](const Mat& M) {
        Eigen::LLT<Mat> llt(M);
        if (llt.info() != Eigen::Success) throw DegenerateError("singular noise-plus-interference matrix");
        return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    };
    std::vector<double> rates(J, 0.0);
    for (const auto& s : rate_sets(J, order))
        rates[s.user] = 0.5 * (logdet(cov(s.rx, s.num)) - logdet(cov(s.rx, s.den))) / std::log(2.0) / N;
    return rates;
}

bool interferes(const StreamLayout& L, int J, int j, int k, int l, int m) {
    if (l == j && m == k) return false;
    if (L.decoding == Decoding::Parallel) return true;
    const int p2p = J - 1;
    if (j == p2p) {
        // rx 2 peels its own earlier streams only.
        return !(l == p2p && m < k);
    }
    if (l == p2p) return true;
    auto order = L.mac_order.empty() ? default_order(J) : L.mac_order;
    auto pos = [&](int user) {
        return static_cast<int>(std::find(order.begin(), order.end(), user) - order.begin());
    };
    // Stream-wise successive decoding: user-major through the MAC order.
    if (pos(l) != pos(j)) return pos(l) > pos(j);
    return m > k;
}

std::vector<StreamCovariance> stream_covariances(const ChannelInstance& ch, const StreamLayout& L, int N) {
    const int J = ch.J();
    if (L.users() != J) throw std::invalid_argument("layout must cover every transmitter");
    auto S = lifted_channels(ch, N);
    Mat noise = lifted_noise(ch, N);
    std::vector<StreamCovariance> out;
    for (int j = 0; j < J; ++j) {
        int i = ch.rx_of(j);
        for (int k = 0; k < L.streams(j); ++k) {
            StreamCovariance sc;
            sc.i = i;
            sc.j = j;
            sc.k = k;
            Vec a = S[i][j] * L.v[j][k];
            sc.T = L.p[j][k] * a * a.transpose();
            sc.F = noise;
            for (int l = 0; l < J; ++l)
                for (int m = 0; m < L.streams(l); ++m)
                    if (interferes(L, J, j, k, l, m)) {
                        Vec b = S[i][l] * L.v[l][m];
                        sc.F.noalias() += L.p[l][m] * b * b.transpose();
                    }
            out.push_back(std::move(sc));
        }
    }
    return out;
}

double sinr(const Mat& T, const Mat& F, const Vec& u) {
    double den = u.dot(F * u);
    if (!(den > 1e-300)) throw DegenerateError("interference-plus-noise quadratic form not positive");
    Eigen::LLT<Mat> llt(F);
    if (llt.info() != Eigen::Success) throw DegenerateError("F is singular");
    return u.dot(T * u) / den;
}

Mat proper_covariance(double p, int N) { return 0.5 * p * Mat::Identity(2 * N, 2 * N); }

}  // namespace pimac
