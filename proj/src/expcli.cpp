#include "pimac/expcli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <regex>
#include <sstream>

namespace pimac {

ChannelParseError::ChannelParseError(int line, int column, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what),
      line_(line),
      column_(column) {}

namespace {

struct Entry {
    double mag, phase;
};

// Row-major, receiver 1 then receiver 2.
const Entry kH1[2][3] = {{{2.03, -0.68}, {2.1, 2.64}, {3.2, 1.48}}, {{4.7, 1.97}, {4.5, -0.66}, {2.85, 2.41}}};
const Entry kH2[2][3] = {{{3.2, -0.72}, {2.3, 2.52}, {1.9, 1.35}}, {{2.8, 1.68}, {2.5, -0.76}, {3.4, 2.23}}};
const Entry kHprime[2][4] = {{{0.40, 1.3972}, {1.12, 0.7737}, {0.43, 1.2874}, {0.84, 0.3067}},
                             {{1.24, -0.9872}, {1.70, 0.9784}, {0.83, -0.2156}, {0.67, -1.6414}}};

ChannelInstance unit_channel(int J) {
    ChannelInstance ch;
    ch.gains.resize(2, J);
    ch.noise_variance = 1.0;
    ch.power_caps = Vec::Ones(J);
    return ch;
}

const std::regex kHprimeName(R"(H1\+Hprime\((\d+)\))");

}  // namespace

bool is_builtin_channel(const std::string& name) {
    return name == "H1" || name == "H2" || std::regex_match(name, kHprimeName);
}

ChannelInstance load_channel(const std::string& name) {
    if (name == "H1" || name == "H2") {
        const auto& H = name == "H1" ? kH1 : kH2;
        auto ch = unit_channel(3);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 3; ++j) ch.gains(i, j) = std::polar(H[i][j].mag, H[i][j].phase);
        return ch;
    }
    std::smatch m;
    if (std::regex_match(name, m, kHprimeName)) {
        const int J = std::stoi(m[1]);
        if (J < 3 || J > 7) throw ConfigError("H1+Hprime(J) needs 3 <= J <= 7");
        // First J columns of [H1 H'], the last of them being the P2P link.
        auto ch = unit_channel(J);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < J; ++j) {
                const Entry& e = j < 3 ? kH1[i][j] : kHprime[i][j - 3];
                ch.gains(i, j) = std::polar(e.mag, e.phase);
            }
        return ch;
    }
    std::ifstream in(name);
    if (!in) throw ConfigError("cannot open channel file '" + name + "'");
    return parse_channel(in);
}

namespace {

struct Token {
    std::string text;
    int column;
};

std::vector<Token> tokens(const std::string& line) {
    std::vector<Token> out;
    size_t i = 0;
    const size_t end = std::min(line.find('#'), line.size());
    while (i < end) {
        while (i < end && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        size_t s = i;
        while (i < end && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        if (i > s) out.push_back({line.substr(s, i - s), static_cast<int>(s) + 1});
    }
    return out;
}

double number(const std::string& s, int line, int col) {
    size_t used = 0;
    double v;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw ChannelParseError(line, col, "expected a number, got '" + s + "'");
    }
    if (used != s.size()) throw ChannelParseError(line, col + static_cast<int>(used), "trailing characters in '" + s + "'");
    if (!std::isfinite(v)) throw ChannelParseError(line, col, "non-finite number");
    return v;
}

int integer(const std::string& s, int line, int col) {
    double v = number(s, line, col);
    if (v != std::floor(v)) throw ChannelParseError(line, col, "expected an integer, got '" + s + "'");
    return static_cast<int>(v);
}

}  // namespace

ChannelInstance parse_channel(std::istream& in) {
    std::string line;
    int ln = 0;
    bool header = false;
    int J = 0;
    ChannelInstance ch;
    std::vector<std::vector<bool>> seen;
    while (std::getline(in, line)) {
        ++ln;
        auto tk = tokens(line);
        if (tk.empty()) continue;
        if (!header) {
            bool hasJ = false, hasS = false, hasC = false;
            std::vector<double> caps;
            int caps_col = 1;
            for (const auto& t : tk) {
                auto eq = t.text.find('=');
                if (eq == std::string::npos) throw ChannelParseError(ln, t.column, "expected key=value in header");
                std::string key = t.text.substr(0, eq), val = t.text.substr(eq + 1);
                int vc = t.column + static_cast<int>(eq) + 1;
                if (key == "J") {
                    J = integer(val, ln, vc);
                    if (J < 3) throw ChannelParseError(ln, vc, "J must be >= 3");
                    hasJ = true;
                } else if (key == "sigma2") {
                    ch.noise_variance = number(val, ln, vc);
                    if (ch.noise_variance <= 0) throw ChannelParseError(ln, vc, "sigma2 must be > 0");
                    hasS = true;
                } else if (key == "caps") {
                    caps_col = vc;
                    size_t p = 0;
                    while (p <= val.size()) {
                        size_t q = val.find(',', p);
                        if (q == std::string::npos) q = val.size();
                        caps.push_back(number(val.substr(p, q - p), ln, vc + static_cast<int>(p)));
                        if (caps.back() < 0) throw ChannelParseError(ln, vc + static_cast<int>(p), "caps must be >= 0");
                        p = q + 1;
                    }
                    hasC = true;
                } else {
                    throw ChannelParseError(ln, t.column, "unknown header key '" + key + "'");
                }
            }
            if (!hasJ || !hasS || !hasC) throw ChannelParseError(ln, 1, "header needs J=, sigma2= and caps=");
            if (static_cast<int>(caps.size()) == 1) caps.assign(J, caps[0]);
            if (static_cast<int>(caps.size()) != J)
                throw ChannelParseError(ln, caps_col, "caps needs 1 or J values");
            ch.power_caps = Eigen::Map<Vec>(caps.data(), J);
            ch.gains = CMat::Zero(2, J);
            seen.assign(2, std::vector<bool>(J, false));
            header = true;
            continue;
        }
        if (tk.size() != 4)
            throw ChannelParseError(ln, tk.size() > 4 ? tk[4].column : static_cast<int>(line.size()) + 1,
                                    "expected 'i j magnitude phase'");
        int i = integer(tk[0].text, ln, tk[0].column);
        int j = integer(tk[1].text, ln, tk[1].column);
        if (i < 1 || i > 2) throw ChannelParseError(ln, tk[0].column, "receiver index must be 1 or 2");
        if (j < 1 || j > J) throw ChannelParseError(ln, tk[1].column, "transmitter index out of range");
        double mag = number(tk[2].text, ln, tk[2].column);
        if (mag < 0) throw ChannelParseError(ln, tk[2].column, "magnitude must be >= 0");
        double ph = number(tk[3].text, ln, tk[3].column);
        if (seen[i - 1][j - 1]) throw ChannelParseError(ln, tk[0].column, "duplicate entry");
        seen[i - 1][j - 1] = true;
        ch.gains(i - 1, j - 1) = std::polar(mag, ph);
    }
    if (!header) throw ChannelParseError(ln + 1, 1, "missing header");
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < J; ++j)
            if (!seen[i][j])
                throw ChannelParseError(ln + 1, 1,
                                        "missing entry " + std::to_string(i + 1) + " " + std::to_string(j + 1));
    ch.validate();
    return ch;
}

std::vector<double> parse_grid(const std::string& text) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string p;
    while (std::getline(ss, p, ':')) parts.push_back(p);
    auto num = [&](const std::string& s) {
        size_t used = 0;
        double v;
        try {
            v = std::stod(s, &used);
        } catch (const std::exception&) {
            throw ConfigError("bad grid value '" + s + "'");
        }
        if (used != s.size() || !std::isfinite(v)) throw ConfigError("bad grid value '" + s + "'");
        return v;
    };
    if (text.empty()) return {};
    if (parts.size() == 1) return {num(parts[0])};
    if (parts.size() != 3) throw ConfigError("grid must be lo:hi:step or a single value");
    double lo = num(parts[0]), hi = num(parts[1]), step = num(parts[2]);
    if (!(step > 0)) throw ConfigError("grid step must be > 0");
    std::vector<double> out;
    const long n = std::lround(std::floor((hi - lo) / step + 1e-9));
    for (long k = 0; k <= n; ++k) out.push_back(lo + k * step);
    return out;
}

RateProfile parse_alpha(const std::string& text) {
    std::vector<double> a;
    std::stringstream ss(text);
    std::string p;
    while (std::getline(ss, p, ',')) {
        try {
            a.push_back(std::stod(p));
        } catch (const std::exception&) {
            throw ConfigError("bad alpha entry '" + p + "'");
        }
    }
    if (a.size() != 3) throw ConfigError("alpha needs three entries");
    // Accept a profile that sums to one up to print rounding.
    double s = a[0] + a[1] + a[2];
    if (std::abs(s - 1.0) > 1e-6) throw ConfigError("alpha must sum to 1");
    try {
        return RateProfile::make(a[0] / s, a[1] / s, 1.0 - a[0] / s - a[1] / s);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

namespace {

const std::vector<std::string> kExperiments = {"rate-region", "p2p-vs-mac", "power-sinr",
                                               "power-rate",  "table1",     "multiuser"};

bool uses_alphas(const std::string& e) { return e == "rate-region" || e == "table1"; }

}  // namespace

void ExperimentConfig::validate() const {
    if (std::find(kExperiments.begin(), kExperiments.end(), experiment) == kExperiments.end())
        throw ConfigError("unknown experiment '" + experiment + "'");
    if (mode != "proper" && mode != "improper" && mode != "both") throw ConfigError("mode must be proper|improper|both");
    if (algorithm != "separate" && algorithm != "joint" && algorithm != "both")
        throw ConfigError("algorithm must be separate|joint|both");
    if (order != 1 && order != 2) throw ConfigError("order must be 1 or 2");
    if (extension < 1) throw ConfigError("extension must be >= 1");
    if (uses_alphas(experiment)) {
        if (alphas.empty()) throw ConfigError("empty alpha grid");
    } else if (grid.empty()) {
        throw ConfigError("empty grid");
    }
    for (double g : grid)
        if (!(g >= 0)) throw ConfigError("grid values must be >= 0");
    if (experiment == "multiuser") {
        if (users.empty()) throw ConfigError("empty user list");
        for (int J : users)
            if (J < 3 || J > 7) throw ConfigError("multiuser J must be in 3..7");
    }
    if (power_cap && !(*power_cap > 0)) throw ConfigError("power cap must be > 0");
    try {
        solver.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

ExperimentConfig default_config(const std::string& experiment) {
    ExperimentConfig c;
    c.experiment = experiment;
    if (experiment == "rate-region") {
        c.alphas = simplex_grid(4);
    } else if (experiment == "p2p-vs-mac") {
        c.grid = parse_grid("0:1.6:0.2");
    } else if (experiment == "power-sinr") {
        c.grid = parse_grid("0.1:1:0.1");
    } else if (experiment == "power-rate") {
        c.grid = parse_grid("0.2:1:0.2");
        c.extension = 3;
    } else if (experiment == "table1") {
        for (const char* a : {"0.6,0.2,0.2", "0.4,0.1,0.5", "0.4,0.4,0.2", "0.2,0.6,0.2"}) c.alphas.push_back(parse_alpha(a));
        c.extension = 3;
    } else if (experiment == "multiuser") {
        c.channel = "H1+Hprime";
        c.grid = parse_grid("0.1:0.7:0.2");
        c.users = {3, 7};
    }
    if (const char* s = std::getenv("PIMAC_SEED")) {
        try {
            c.solver.seed = std::stoull(s);
        } catch (const std::exception&) {
            throw ConfigError("PIMAC_SEED is not an integer");
        }
    }
    return c;
}

ExperimentConfig apply_json(ExperimentConfig c, const nlohmann::json& j) {
    try {
        if (j.contains("experiment")) c.experiment = j["experiment"].get<std::string>();
        if (j.contains("channel")) c.channel = j["channel"].get<std::string>();
        if (j.contains("mode")) c.mode = j["mode"].get<std::string>();
        if (j.contains("decoding")) {
            auto d = j["decoding"].get<std::string>();
            if (d == "parallel")
                c.decoding = Decoding::Parallel;
            else if (d == "successive")
                c.decoding = Decoding::Successive;
            else
                throw ConfigError("decoding must be parallel|successive");
        }
        if (j.contains("algorithm")) c.algorithm = j["algorithm"].get<std::string>();
        if (j.contains("sinr")) {
            auto s = j["sinr"].get<std::string>();
            if (s == "per-stream")
                c.improper_sinr = SinrSemantics::PerStream;
            else if (s == "per-user")
                c.improper_sinr = SinrSemantics::PerUser;
            else
                throw ConfigError("sinr must be per-stream|per-user");
        }
        if (j.contains("order")) c.order = j["order"].get<int>();
        if (j.contains("extension")) c.extension = j["extension"].get<int>();
        if (j.contains("grid")) {
            if (j["grid"].is_array())
                c.grid = j["grid"].get<std::vector<double>>();
            else
                c.grid = parse_grid(j["grid"].get<std::string>());
        }
        if (j.contains("alpha")) {
            c.alphas.clear();
            for (const auto& a : j["alpha"]) {
                auto v = a.get<std::vector<double>>();
                std::string s;
                for (size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + std::to_string(v[k]);
                c.alphas.push_back(parse_alpha(s));
            }
        }
        if (j.contains("alpha_resolution")) c.alphas = simplex_grid(j["alpha_resolution"].get<int>());
        if (j.contains("users")) c.users = j["users"].get<std::vector<int>>();
        if (j.contains("power_cap")) c.power_cap = j["power_cap"].get<double>();
        if (j.contains("seed")) c.solver.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("out")) c.out = j["out"].get<std::string>();
        if (j.contains("serial") && j["serial"].get<bool>()) c.exec = Exec::Serial;
        if (j.contains("solver")) {
            const auto& s = j["solver"];
            auto& v = c.solver;
            if (s.contains("t0")) v.t0 = s["t0"];
            if (s.contains("mu")) v.mu = s["mu"];
            if (s.contains("max_newton")) v.max_newton = s["max_newton"];
            if (s.contains("newton_tol")) v.newton_tol = s["newton_tol"];
            if (s.contains("tol_feas")) v.tol_feas = s["tol_feas"];
            if (s.contains("tol_bis")) v.tol_bis = s["tol_bis"];
            if (s.contains("k_rand")) v.k_rand = s["k_rand"];
            if (s.contains("gamma_scale")) v.gamma_scale = s["gamma_scale"];
            if (s.contains("eps_ccp")) v.eps_ccp = s["eps_ccp"];
            if (s.contains("reinit")) v.reinit = s["reinit"];
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

bool GoldenCheck::pass() const { return got && std::abs(*got - target) <= rel_tol * std::abs(target); }

namespace {

std::string fmt(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.10g", v);
    return b;
}

std::string demand_label(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.6g", v);
    return b;
}

std::string alpha_label(const RateProfile& a) {
    return demand_label(a.alpha[0]) + ";" + demand_label(a.alpha[1]) + ";" + demand_label(a.alpha[2]);
}

const char* status_of(PowerStatus s) { return to_string(s); }

std::vector<double> to_std(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

CurvePoint base_row(const ExperimentConfig& cfg, const std::string& channel, const std::string& mode,
                    const std::string& demand) {
    CurvePoint r;
    r.experiment = cfg.experiment;
    r.channel = channel;
    r.mode = mode;
    r.demand = demand;
    r.seed = cfg.solver.seed;
    r.status = "error";
    return r;
}

std::array<double, 3> first3(const Vec& b) { return {b(0), b(1), b(b.size() - 1)}; }

// Least margin of the bounds over the rates they must cover, in bits.
double region_slack(const RateBounds& L, const std::array<double, 3>& r) {
    return std::min({L.L1 - r[0], L.L2 - r[1], L.L3 - r[2], L.L4 - r[0] - r[1]});
}

double rate_slack(const ChannelInstance& ch, const std::vector<Mat>& Q, int N, const std::vector<int>& order,
                  const Vec& beta) {
    auto r = vector_rates(ch, Q, N, order);
    double s = std::numeric_limits<double>::infinity();
    for (int j = 0; j < ch.J(); ++j) s = std::min(s, r[j] - beta(j));
    return s;
}

// Scalar SINRs of complex powers p under the decoding rule, recomputed from the gains.
double proper_sinr_slack(const ChannelInstance& ch, const Vec& p, const Vec& gamma, Decoding dec,
                         const std::vector<int>& order) {
    const int J = ch.J();
    double s = std::numeric_limits<double>::infinity();
    for (int j = 0; j < J; ++j) {
        const int i = ch.rx_of(j);
        double den = ch.noise_variance;
        for (int l = 0; l < J; ++l) {
            if (l == j) continue;
            bool hears = true;
            if (j != ch.p2p() && l != ch.p2p() && dec == Decoding::Successive) {
                auto pj = std::find(order.begin(), order.end(), j), pl = std::find(order.begin(), order.end(), l);
                hears = pl > pj;
            }
            if (hears) den += std::norm(ch.gains(i, l)) * p(l);
        }
        double sinr = std::norm(ch.gains(i, j)) * p(j) / den;
        s = std::min(s, std::log2(1.0 + sinr) - std::log2(1.0 + gamma(j)));
    }
    return s;
}

double layout_sinr_slack(const ChannelInstance& ch, const StreamLayout& L, const StreamTargets& g) {
    double s = std::numeric_limits<double>::infinity();
    for (const auto& sc : stream_covariances(ch, L, 1))
        s = std::min(s, std::log2(1.0 + sinr(sc.T, sc.F, L.u[sc.j][sc.k])) - std::log2(1.0 + g[sc.j][sc.k]));
    return s;
}

void fill_power(CurvePoint& r, const PowerResult& p) {
    r.status = status_of(p.status);
    r.iterations = p.iterations;
    if (p.status == PowerStatus::Infeasible) return;
    r.p_total = p.total;
    r.p_per_user = to_std(p.per_user);
}

std::vector<std::string> modes_of(const ExperimentConfig& cfg) {
    if (cfg.mode == "both") return {"proper", "improper"};
    return {cfg.mode};
}

template <class F>
std::vector<CurvePoint> guarded(const ExperimentConfig& cfg, const std::string& channel, const std::string& mode,
                                const std::string& demand, F&& f) {
    try {
        return f();
    } catch (const std::exception& e) {
        auto r = base_row(cfg, channel, mode, demand);
        r.status = std::string("error: ") + e.what();
        return {r};
    }
}

std::vector<CurvePoint> flatten(std::vector<std::vector<CurvePoint>> parts) {
    std::vector<CurvePoint> out;
    for (auto& p : parts)
        for (auto& r : p) out.push_back(std::move(r));
    return out;
}

ChannelInstance power_channel(const ExperimentConfig& cfg, const std::string& name) {
    auto ch = load_channel(name);
    if (cfg.power_cap) return ch.with_caps(*cfg.power_cap);
    // Builtin channels come with unit caps for the rate region; the power
    // curves are drawn without an active cap.
    if (is_builtin_channel(name)) return ch.with_caps(1e6);
    return ch;
}

std::vector<CurvePoint> rate_region_rows(const ExperimentConfig& cfg) {
    auto ch = load_channel(cfg.channel);
    if (cfg.power_cap) ch = ch.with_caps(*cfg.power_cap);
    if (ch.J() != 3) throw ConfigError("rate-region needs a 3-transmitter channel");
    std::vector<std::vector<CurvePoint>> parts;
    for (const auto& mode : modes_of(cfg)) {
        RegionOptions opt;
        opt.proper_only = mode == "proper";
        auto pts = pareto_sweep(ch, cfg.alphas, cfg.solver, opt, cfg.exec);
        for (size_t k = 0; k < pts.size(); ++k) {
            const auto& p = pts[k];
            auto r = base_row(cfg, cfg.channel, mode, alpha_label(cfg.alphas[k]));
            if (!p.ok) {
                r.status = p.error.find("nfeasible") != std::string::npos ? "infeasible" : "error: " + p.error;
            } else {
                r.status = "converged";
                r.rates = p.rates;
                r.p_total = p.c.sum();
                r.p_per_user = to_std(p.c);
                r.audit_slack = region_slack(p.audit, p.rates);
            }
            r.seed = cfg.solver.seed ^ k;
            parts.push_back({r});
        }
    }
    return flatten(std::move(parts));
}

std::vector<CurvePoint> p2p_rows(const ExperimentConfig& cfg) {
    auto ch = load_channel(cfg.channel);
    if (cfg.power_cap) ch = ch.with_caps(*cfg.power_cap);
    if (ch.J() != 3) throw ConfigError("p2p-vs-mac needs a 3-transmitter channel");
    auto modes = modes_of(cfg);
    const int n = static_cast<int>(modes.size() * cfg.grid.size());
    auto parts = sweep_map<std::vector<CurvePoint>>(
        n,
        [&](int idx) {
            const auto& mode = modes[idx / cfg.grid.size()];
            const double rm = cfg.grid[idx % cfg.grid.size()];
            return guarded(cfg, cfg.channel, mode, demand_label(rm), [&] {
                RegionOptions opt;
                opt.proper_only = mode == "proper";
                auto p = max_p2p_given_mac(rm, ch, cfg.solver, opt);
                auto r = base_row(cfg, cfg.channel, mode, demand_label(rm));
                if (!p.ok) {
                    r.status = p.error.find("nfeasible") != std::string::npos ? "infeasible" : "error: " + p.error;
                } else {
                    r.status = "converged";
                    r.rates = std::array<double, 3>{rm, rm, p.r3};
                    r.p_total = p.c.sum();
                    r.p_per_user = to_std(p.c);
                    r.audit_slack = region_slack(p.audit, *r.rates);
                }
                return std::vector<CurvePoint>{r};
            });
        },
        cfg.exec);
    return flatten(std::move(parts));
}

std::vector<CurvePoint> power_sinr_rows(const ExperimentConfig& cfg) {
    auto ch = power_channel(cfg, cfg.channel);
    const int J = ch.J();
    auto order = J == 3 ? named_order(J, cfg.order) : default_order(J);
    const std::string dec = cfg.decoding == Decoding::Parallel ? "parallel" : "successive";
    auto modes = modes_of(cfg);
    auto parts = sweep_map<std::vector<CurvePoint>>(
        static_cast<int>(cfg.grid.size()),
        [&](int idx) {
            const double g = cfg.grid[idx];
            const std::string dl = demand_label(g);
            std::vector<CurvePoint> rows;
            for (const auto& mode : modes) {
                if (mode == "proper") {
                    auto more = guarded(cfg, cfg.channel, "proper-" + dec, dl, [&] {
                        Vec gamma = Vec::Constant(J, g);
                        auto p = proper_min_power_sinr(ch, gamma, cfg.decoding, order, cfg.solver);
                        auto r = base_row(cfg, cfg.channel, "proper-" + dec, dl);
                        fill_power(r, p);
                        if (p.status != PowerStatus::Infeasible)
                            r.audit_slack = proper_sinr_slack(ch, p.per_user, gamma, cfg.decoding, order);
                        return std::vector<CurvePoint>{r};
                    });
                    rows.insert(rows.end(), more.begin(), more.end());
                    continue;
                }
                auto more = guarded(cfg, cfg.channel, "improper-" + dec, dl, [&] {
                    std::vector<CurvePoint> out;
                    auto tg = uniform_targets(J, 2, stream_target(g, cfg.improper_sinr));
                    PowerOptions opt;
                    opt.decoding = cfg.decoding;
                    opt.mac_order = order;
                    opt.seed = cfg.solver.seed;
                    auto sep = separate_min_power(ch, tg, opt, cfg.solver);
                    auto emit = [&](const std::string& m, const PowerResult& p) {
                        auto r = base_row(cfg, cfg.channel, m, dl);
                        fill_power(r, p);
                        if (p.status != PowerStatus::Infeasible) r.audit_slack = layout_sinr_slack(ch, p.layout, tg);
                        out.push_back(r);
                    };
                    if (cfg.algorithm != "joint") emit("improper-separate-" + dec, sep);
                    if (cfg.algorithm != "separate") {
                        std::vector<StreamLayout> seeds;
                        if (sep.status != PowerStatus::Infeasible) seeds.push_back(sep.layout);
                        emit("improper-joint-" + dec, joint_min_power(ch, tg, opt, cfg.solver, seeds));
                    }
                    return out;
                });
                rows.insert(rows.end(), more.begin(), more.end());
            }
            return rows;
        },
        cfg.exec);
    return flatten(std::move(parts));
}

std::vector<CurvePoint> power_rate_rows(const ExperimentConfig& cfg) {
    auto ch = power_channel(cfg, cfg.channel);
    const int J = ch.J();
    auto order = J == 3 ? named_order(J, cfg.order) : default_order(J);
    const std::string os = "order" + std::to_string(cfg.order);
    auto modes = modes_of(cfg);
    auto parts = sweep_map<std::vector<CurvePoint>>(
        static_cast<int>(cfg.grid.size()),
        [&](int idx) {
            const double b = cfg.grid[idx];
            const std::string dl = demand_label(b);
            Vec beta = Vec::Constant(J, b);
            std::vector<CurvePoint> rows;
            for (const auto& mode : modes) {
                if (mode == "proper") {
                    auto more = guarded(cfg, cfg.channel, "proper-" + os, dl, [&] {
                        auto p = proper_min_power_rates(ch, beta, order, cfg.solver);
                        auto r = base_row(cfg, cfg.channel, "proper-" + os, dl);
                        fill_power(r, p);
                        if (p.status != PowerStatus::Infeasible) {
                            r.rates = first3(beta);
                            r.audit_slack = rate_slack(ch, p.Q, 1, order, beta);
                        }
                        return std::vector<CurvePoint>{r};
                    });
                    rows.insert(rows.end(), more.begin(), more.end());
                    continue;
                }
                auto more = guarded(cfg, cfg.channel, "improper-N1-" + os, dl, [&] {
                    std::vector<CurvePoint> out;
                    auto emit = [&](const std::string& m, const PowerResult& p, int N) {
                        auto r = base_row(cfg, cfg.channel, m, dl);
                        fill_power(r, p);
                        if (p.status != PowerStatus::Infeasible) {
                            r.rates = first3(beta);
                            r.audit_slack = rate_slack(ch, p.Q, N, order, beta);
                        }
                        out.push_back(r);
                    };
                    auto p1 = ccp_min_power_rates(ch, beta, 1, order, cfg.solver);
                    emit("improper-N1-" + os, p1, 1);
                    if (cfg.extension > 1) {
                        CcpOptions o;
                        if (p1.status != PowerStatus::Infeasible) {
                            std::vector<Mat> s;
                            for (const auto& q : p1.Q) s.push_back(replicate(q, cfg.extension));
                            o.seeds.push_back(s);
                        }
                        const int N = cfg.extension;
                        emit("improper-N" + std::to_string(N) + "-" + os,
                             ccp_min_power_rates(ch, beta, N, order, cfg.solver, o), N);
                    }
                    return out;
                });
                rows.insert(rows.end(), more.begin(), more.end());
            }
            return rows;
        },
        cfg.exec);
    return flatten(std::move(parts));
}

std::vector<CurvePoint> table1_rows(const ExperimentConfig& cfg) {
    auto ch = load_channel(cfg.channel);
    if (cfg.power_cap) ch = ch.with_caps(*cfg.power_cap);
    if (ch.J() != 3) throw ConfigError("table1 needs a 3-transmitter channel");
    const int N = cfg.extension;
    auto parts = sweep_map<std::vector<CurvePoint>>(
        static_cast<int>(cfg.alphas.size()),
        [&](int idx) {
            const auto& a = cfg.alphas[idx];
            const std::string dl = alpha_label(a);
            return guarded(cfg, cfg.channel, "region", dl, [&] {
                auto s = successive_opt(a, ch, N, cfg.solver);
                std::vector<CurvePoint> out;
                auto r0 = base_row(cfg, cfg.channel, "region", dl);
                if (!s.point.ok) {
                    r0.status = "error: " + s.point.error;
                    return std::vector<CurvePoint>{r0};
                }
                r0.status = "converged";
                r0.rates = s.rates;
                r0.p_total = s.p_prime;
                r0.p_per_user = to_std(s.point.c);
                r0.audit_slack = region_slack(s.point.audit, s.rates);
                out.push_back(r0);
                Vec beta(3);
                beta << s.rates[0], s.rates[1], s.rates[2];
                auto emit = [&](const std::string& m, double p, const std::vector<Mat>& Q, int n,
                                const std::vector<int>& order, std::optional<double> ratio) {
                    auto r = base_row(cfg, cfg.channel, m, dl);
                    if (!s.error.empty()) {
                        r.status = "infeasible";
                    } else {
                        r.status = "converged";
                        r.rates = s.rates;
                        r.p_total = p;
                        for (const auto& q : Q) r.p_per_user.push_back(q.trace() / n);
                        r.audit_slack = rate_slack(ch, Q, n, order, beta);
                        r.ratio = ratio;
                    }
                    out.push_back(r);
                };
                emit("eta1", s.p1, s.Q1, 1, s.order1, s.saving1);
                if (N > 1) emit("eta" + std::to_string(N), s.pN, s.QN, N, s.orderN, s.savingN);
                return out;
            });
        },
        cfg.exec);
    return flatten(std::move(parts));
}

std::vector<CurvePoint> multiuser_rows(const ExperimentConfig& cfg) {
    struct Job {
        std::string name;
        double beta;
    };
    std::vector<std::string> names;
    if (cfg.channel == "H1+Hprime" || cfg.channel == "H1")
        for (int J : cfg.users) names.push_back("H1+Hprime(" + std::to_string(J) + ")");
    else
        names.push_back(cfg.channel);
    std::vector<Job> jobs;
    for (const auto& n : names)
        for (double b : cfg.grid) jobs.push_back({n, b});
    auto parts = sweep_map<std::vector<CurvePoint>>(
        static_cast<int>(jobs.size()),
        [&](int idx) {
            const auto& jb = jobs[idx];
            const std::string dl = demand_label(jb.beta);
            return guarded(cfg, jb.name, "improper", dl, [&] {
                auto ch = power_channel(cfg, jb.name);
                const int J = ch.J();
                auto order = default_order(J);
                Vec beta = Vec::Constant(J, jb.beta);
                std::vector<CurvePoint> out;
                std::optional<double> proper_total;
                bool want_p = cfg.mode != "improper", want_i = cfg.mode != "proper";
                PowerResult pr;
                if (want_p || want_i) {
                    pr = proper_min_power_rates(ch, beta, order, cfg.solver);
                    if (pr.status != PowerStatus::Infeasible) proper_total = pr.total;
                }
                if (want_p) {
                    auto r = base_row(cfg, jb.name, "proper", dl);
                    fill_power(r, pr);
                    if (pr.status != PowerStatus::Infeasible) {
                        r.rates = first3(beta);
                        r.audit_slack = rate_slack(ch, pr.Q, 1, order, beta);
                    }
                    out.push_back(r);
                }
                if (want_i) {
                    auto p = ccp_min_power_rates(ch, beta, 1, order, cfg.solver);
                    auto r = base_row(cfg, jb.name, "improper", dl);
                    fill_power(r, p);
                    if (p.status != PowerStatus::Infeasible) {
                        r.rates = first3(beta);
                        r.audit_slack = rate_slack(ch, p.Q, 1, order, beta);
                        // Zero when the proper problem has no solution.
                        r.ratio = proper_total && *proper_total > 0 ? p.total / *proper_total : 0.0;
                    }
                    out.push_back(r);
                }
                return out;
            });
        },
        cfg.exec);
    return flatten(std::move(parts));
}

enum class Metric { SumRate, R3, Total, PerUserMean };

struct Golden {
    const char* experiment;
    const char* channel;
    const char* mode;
    const char* demand;
    Metric metric;
    double target;
    double tol;
};

const Golden kGolden[] = {
    {"rate-region", "H1", "improper", "0;0;1", Metric::SumRate, 3.1894, 0.005},
    {"rate-region", "H2", "improper", "0;0;1", Metric::SumRate, 3.6508, 0.005},
    {"p2p-vs-mac", "H1", "improper", "0", Metric::R3, 3.1894, 0.005},
    {"p2p-vs-mac", "H1", "improper", "0.899741", Metric::R3, 1.7995, 0.1},
    {"p2p-vs-mac", "H1", "proper", "0.899741", Metric::R3, 0.0654, 0.1},
    {"power-sinr", "H1", "proper-parallel", "0.1", Metric::Total, 0.09837, 0.02},
    {"power-sinr", "H2", "proper-successive", "0.5", Metric::Total, 0.35154, 0.02},
    {"power-sinr", "H1", "improper-joint-successive", "0.5", Metric::Total, 0.7398, 0.1},
    {"power-sinr", "H1", "improper-joint-successive", "1", Metric::Total, 2.6165, 0.1},
    {"power-rate", "H1", "improper-N1-order1", "0.5", Metric::Total, 0.4176, 0.1},
    {"power-rate", "H1", "improper-N3-order2", "1", Metric::Total, 1.3649, 0.1},
    {"power-rate", "H2", "proper-order1", "0.2", Metric::Total, 0.0646, 0.02},
    {"power-rate", "H2", "proper-order1", "1", Metric::Total, 5.40065, 0.05},
    {"table1", "H1", "eta1", "0.6;0.2;0.2", Metric::Total, 2.31, 0.1},
    {"table1", "H1", "eta3", "0.6;0.2;0.2", Metric::Total, 1.23, 0.1},
    {"table1", "H1", "eta1", "0.4;0.1;0.5", Metric::Total, 2.57, 0.1},
    {"table1", "H1", "eta3", "0.4;0.1;0.5", Metric::Total, 1.78, 0.1},
    {"table1", "H1", "eta1", "0.4;0.4;0.2", Metric::Total, 2.15, 0.1},
    {"table1", "H1", "eta3", "0.4;0.4;0.2", Metric::Total, 1.19, 0.1},
    {"table1", "H1", "eta1", "0.2;0.6;0.2", Metric::Total, 2.02, 0.1},
    {"table1", "H1", "eta3", "0.2;0.6;0.2", Metric::Total, 1.21, 0.1},
    {"multiuser", "H1+Hprime(3)", "improper", "0.7", Metric::PerUserMean, 1.2663, 0.1},
    {"multiuser", "H1+Hprime(3)", "proper", "0.3", Metric::PerUserMean, 0.3729, 0.1},
    {"multiuser", "H1+Hprime(7)", "improper", "0.5", Metric::PerUserMean, 1.535, 0.1},
};

std::optional<double> metric_of(const CurvePoint& r, Metric m) {
    switch (m) {
        case Metric::SumRate:
            if (r.rates) return (*r.rates)[0] + (*r.rates)[1] + (*r.rates)[2];
            return std::nullopt;
        case Metric::R3:
            if (r.rates) return (*r.rates)[2];
            return std::nullopt;
        case Metric::Total:
            return r.p_total;
        case Metric::PerUserMean:
            if (r.p_total && !r.p_per_user.empty()) return *r.p_total / r.p_per_user.size();
            return std::nullopt;
    }
    return std::nullopt;
}

std::vector<GoldenCheck> golden_checks(const std::vector<CurvePoint>& rows) {
    std::vector<GoldenCheck> out;
    for (const auto& g : kGolden)
        for (const auto& r : rows)
            if (r.experiment == g.experiment && r.channel == g.channel && r.mode == g.mode && r.demand == g.demand) {
                GoldenCheck c;
                c.what = std::string(g.experiment) + " " + g.channel + " " + g.mode + " @ " + g.demand;
                c.target = g.target;
                c.rel_tol = g.tol;
                c.got = metric_of(r, g.metric);
                out.push_back(c);
            }
    return out;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    ExperimentResult res;
    const auto& e = cfg.experiment;
    if (e == "rate-region")
        res.rows = rate_region_rows(cfg);
    else if (e == "p2p-vs-mac")
        res.rows = p2p_rows(cfg);
    else if (e == "power-sinr")
        res.rows = power_sinr_rows(cfg);
    else if (e == "power-rate")
        res.rows = power_rate_rows(cfg);
    else if (e == "table1")
        res.rows = table1_rows(cfg);
    else
        res.rows = multiuser_rows(cfg);
    res.checks = golden_checks(res.rows);
    return res;
}

const char* const kCsvHeader =
    "experiment,channel,mode,demand,R1,R2,R3,P_total,P_per_user,status,iters,audit_slack,seed,ratio";

std::string to_csv(const std::vector<CurvePoint>& rows) {
    std::ostringstream os;
    os << kCsvHeader << '\n';
    auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
    auto quote = [](const std::string& s) {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string q = "\"";
        for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
        return q + "\"";
    };
    for (const auto& r : rows) {
        os << quote(r.experiment) << ',' << quote(r.channel) << ',' << quote(r.mode) << ',' << quote(r.demand);
        for (int k = 0; k < 3; ++k) os << ',' << (r.rates ? fmt((*r.rates)[k]) : "");
        os << ',' << opt(r.p_total) << ',';
        for (size_t k = 0; k < r.p_per_user.size(); ++k) os << (k ? ";" : "") << fmt(r.p_per_user[k]);
        os << ',' << quote(r.status) << ',' << r.iterations << ',' << opt(r.audit_slack) << ',' << r.seed << ','
           << opt(r.ratio) << '\n';
    }
    return os.str();
}

nlohmann::json to_json(const ExperimentConfig& cfg, const ExperimentResult& res) {
    using nlohmann::json;
    json j;
    j["experiment"] = cfg.experiment;
    j["channel"] = cfg.channel;
    j["seed"] = cfg.solver.seed;
    json rows = json::array();
    for (const auto& r : res.rows) {
        json o;
        o["experiment"] = r.experiment;
        o["channel"] = r.channel;
        o["mode"] = r.mode;
        o["demand"] = r.demand;
        o["rates"] = r.rates ? json(std::vector<double>(r.rates->begin(), r.rates->end())) : json(nullptr);
        o["P_total"] = r.p_total ? json(*r.p_total) : json(nullptr);
        o["P_per_user"] = r.p_per_user;
        o["status"] = r.status;
        o["iters"] = r.iterations;
        o["audit_slack"] = r.audit_slack ? json(*r.audit_slack) : json(nullptr);
        o["seed"] = r.seed;
        o["ratio"] = r.ratio ? json(*r.ratio) : json(nullptr);
        rows.push_back(o);
    }
    j["rows"] = rows;
    json checks = json::array();
    for (const auto& c : res.checks)
        checks.push_back({{"what", c.what},
                          {"target", c.target},
                          {"got", c.got ? json(*c.got) : json(nullptr)},
                          {"rel_tol", c.rel_tol},
                          {"pass", c.pass()}});
    j["checks"] = checks;
    return j;
}

std::string summary(const ExperimentResult& res) {
    std::ostringstream os;
    int feasible = 0, worst_n = 0;
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& r : res.rows)
        if (r.audit_slack) {
            ++feasible;
            ++worst_n;
            worst = std::min(worst, *r.audit_slack);
        }
    os << res.rows.size() << " rows, " << feasible << " with an audited point";
    if (worst_n) os << ", least audit slack " << fmt(worst);
    os << '\n';
    for (const auto& c : res.checks) {
        os << (c.pass() ? "PASS " : "FAIL ") << c.what << ": target " << fmt(c.target) << ", got "
           << (c.got ? fmt(*c.got) : std::string("none"));
        if (c.got) os << ", delta " << fmt(*c.got - c.target);
        os << '\n';
    }
    return os.str();
}

void write_outputs(const ExperimentConfig& cfg, const ExperimentResult& res) {
    const std::string csv = to_csv(res.rows);
    if (cfg.out.empty()) {
        std::cout << csv;
        return;
    }
    std::filesystem::path p(cfg.out);
    std::ofstream f(p, std::ios::binary);
    if (!f) throw ConfigError("cannot write '" + cfg.out + "'");
    f << csv;
    if (!f) throw ConfigError("cannot write '" + cfg.out + "'");
    auto jp = p;
    jp.replace_extension(".json");
    if (jp == p) jp += ".json";
    std::ofstream g(jp, std::ios::binary);
    if (!g) throw ConfigError("cannot write '" + jp.string() + "'");
    g << to_json(cfg, res).dump(2) << '\n';
}

}  // namespace pimac
