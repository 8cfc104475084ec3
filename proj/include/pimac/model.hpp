// Channel types and closed-form rate / SINR algebra.
#pragma once

#include "pimac/convex_core.hpp"

#include <array>
#include <complex>
#include <stdexcept>
#include <vector>

namespace pimac {

using cd = std::complex<double>;

class DegenerateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Row i = receiver i, column j = transmitter j. Columns 0..J-2 are the MAC
// users (receiver 0), column J-1 is the point-to-point pair (receiver 1).
struct ChannelInstance {
    CMat gains;
    double noise_variance = 1.0;
    Vec power_caps;

    int J() const { return static_cast<int>(gains.cols()); }
    int p2p() const { return J() - 1; }
    int rx_of(int j) const { return j == p2p() ? 1 : 0; }
    void validate() const;
    ChannelInstance with_caps(double cap) const;
};

struct AugmentedCovariance {
    double variance = 0.0;
    cd pseudo_variance = 0.0;

    bool proper() const { return pseudo_variance == cd(0.0); }
    bool valid(double tol = 1e-12) const {
        return variance >= -tol && std::abs(pseudo_variance) <= variance + tol;
    }
};

class RealChannelMatrix {
public:
    explicit RealChannelMatrix(const Eigen::Matrix2d& m);
    const Eigen::Matrix2d& entries() const { return m_; }

private:
    Eigen::Matrix2d m_;
};

struct ExtendedChannelMatrix {
    Mat entries;
    int extension_length = 1;
};

struct TransmitCovariance {
    Mat matrix;
    int user = 0;

    void check(double cap, double tol_feas = 1e-7, double tol_psd = 1e-9) const;
};

struct RateProfile {
    std::array<double, 3> alpha{};
    double alpha4 = 0.0;

    static RateProfile make(double a1, double a2, double a3);
    // Rows q = 0..3 (L1, L2, L3, L4).
    double row(int q) const { return q < 3 ? alpha[q] : alpha4; }
};

struct RateBounds {
    double L1 = 0, L2 = 0, L3 = 0, L4 = 0;
    double operator[](int q) const { return q == 0 ? L1 : q == 1 ? L2 : q == 2 ? L3 : L4; }
};

enum class Decoding { Parallel, Successive };

// v[j][k], p[j][k], u[j][k]: beamformer, power and receive filter of
// stream k of user j. mac_order lists MAC users in decoding order.
struct StreamLayout {
    std::vector<std::vector<Vec>> v;
    std::vector<std::vector<double>> p;
    std::vector<std::vector<Vec>> u;
    Decoding decoding = Decoding::Parallel;
    std::vector<int> mac_order;

    int users() const { return static_cast<int>(v.size()); }
    int streams(int j) const { return static_cast<int>(v[j].size()); }
    void check_units(double tol = 1e-10) const;
};

RealChannelMatrix lift_channel(cd h);
ExtendedChannelMatrix extend_channel(const RealChannelMatrix& G, int N);
// S_ij for every pair, indexed [i][j].
std::vector<std::vector<Mat>> lifted_channels(const ChannelInstance& ch, int N);

RateBounds rate_bounds_improper(const ChannelInstance& ch, const std::vector<AugmentedCovariance>& sig);

// Natural-order MAC decoding {0, 1, ..., J-2}.
std::vector<int> default_order(int J);
// order1: user 1 first; order2: user 2 first (J = 3 naming).
std::vector<int> named_order(int J, int which);

// Per-user rates in bits/channel use; entry J-1 is the P2P rate.
std::vector<double> vector_rates(const ChannelInstance& ch, const std::vector<Mat>& Q, int N,
                                 const std::vector<int>& order);

// Lifted noise covariance (sigma^2/2) I_{2N}.
Mat lifted_noise(const ChannelInstance& ch, int N);

// Transmitter sets entering the numerator / denominator log-dets of user j.
struct RateSets {
    int user = 0;
    int rx = 0;
    std::vector<int> num;
    std::vector<int> den;
};
std::vector<RateSets> rate_sets(int J, const std::vector<int>& order);

struct StreamCovariance {
    int i = 0, j = 0, k = 0;
    Mat T;
    Mat F;
};

// Whether stream (l,m) interferes with stream (j,k) under the layout's decoding.
bool interferes(const StreamLayout& L, int J, int j, int k, int l, int m);

std::vector<StreamCovariance> stream_covariances(const ChannelInstance& ch, const StreamLayout& L, int N);

double sinr(const Mat& T, const Mat& F, const Vec& u);

// Canonical proper covariance (p/2) I_{2N}.
Mat proper_covariance(double p, int N);

}  // namespace pimac
