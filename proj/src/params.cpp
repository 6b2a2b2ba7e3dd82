#include "p2dnet/params.hpp"

#include "p2dnet/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace p2dnet {

using nlohmann::json;

Table1D::Table1D(std::vector<std::pair<double, double>> points) : points_(std::move(points)) {}

std::size_t Table1D::segment(double x) const {
    // index i such that points_[i].first <= x < points_[i+1].first, clamped
    auto it = std::upper_bound(points_.begin(), points_.end(), x,
                               [](double v, const auto& p) { return v < p.first; });
    auto i = static_cast<std::size_t>(std::distance(points_.begin(), it));
    if (i == 0) return 0;
    return std::min(i - 1, points_.size() - 2);
}

double Table1D::operator()(double x) const {
    if (points_.size() == 1) return points_.front().second;
    if (x <= points_.front().first) return points_.front().second;
    if (x >= points_.back().first) return points_.back().second;
    const auto i = segment(x);
    const auto& [x0, y0] = points_[i];
    const auto& [x1, y1] = points_[i + 1];
    return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
}

double Table1D::slope(double x) const {
    if (points_.size() < 2) return 0.0;
    if (x < points_.front().first || x > points_.back().first) return 0.0;
    const auto i = segment(x);
    const auto& [x0, y0] = points_[i];
    const auto& [x1, y1] = points_[i + 1];
    return (y1 - y0) / (x1 - x0);
}

namespace {

void require(bool ok, const char* field, const char* what) {
    if (!ok) throw ParameterError(field, what);
}

void require_positive(double v, const char* field) {
    require(std::isfinite(v) && v > 0.0, field, "must be finite and strictly positive");
}

void require_open_unit(double v, const char* field) {
    require(std::isfinite(v) && v > 0.0 && v < 1.0, field, "must lie in (0, 1)");
}

void require_table(const Table1D& t, const char* field, double lo, double hi) {
    require(t.points().size() >= 2, field, "needs at least two points");
    for (std::size_t i = 0; i < t.points().size(); ++i) {
        const auto& [x, y] = t.points()[i];
        require(std::isfinite(x) && std::isfinite(y), field, "contains a non-finite value");
        if (i > 0) require(x > t.points()[i - 1].first, field, "abscissae must be strictly increasing");
    }
    require(t.x_min() <= lo && t.x_max() >= hi, field, "does not cover the required range");
}

// Open-circuit potential fits for MCMB 2528 graphite and LiCoO2 (Dualfoil).
double graphite_ocp(double sto) {
    return 0.194 + 1.5 * std::exp(-120.0 * sto) + 0.0351 * std::tanh((sto - 0.286) / 0.083) -
           0.0045 * std::tanh((sto - 0.849) / 0.119) - 0.035 * std::tanh((sto - 0.9233) / 0.05) -
           0.0147 * std::tanh((sto - 0.5) / 0.034) - 0.102 * std::tanh((sto - 0.194) / 0.142) -
           0.022 * std::tanh((sto - 0.9) / 0.0164) - 0.011 * std::tanh((sto - 0.124) / 0.0226) +
           0.0155 * std::tanh((sto - 0.105) / 0.029);
}

double lico2_ocp(double sto) {
    const double s = 1.062 * sto;
    return 2.16216 + 0.07645 * std::tanh(30.834 - 54.4806 * s) + 2.1581 * std::tanh(52.294 - 50.294 * s) -
           0.14169 * std::tanh(11.0923 - 19.8543 * s) + 0.2051 * std::tanh(1.4684 - 5.4888 * s) +
           0.2531 * std::tanh((-s + 0.56478) / 0.1316) - 0.02167 * std::tanh((s - 0.525) / 0.006);
}

// Capiglia et al. conductivity fit, c in mol/m^3.
double capiglia_conductivity(double c) {
    const double m = c / 1000.0;
    return 0.0911 + 1.9101 * m - 1.052 * m * m + 0.1554 * m * m * m;
}

template <class F>
Table1D tabulate(F f, double lo, double hi, int n) {
    std::vector<std::pair<double, double>> pts;
    pts.reserve(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) {
        const double x = lo + (hi - lo) * i / n;
        pts.emplace_back(x, f(x));
    }
    return Table1D(std::move(pts));
}

json table_to_json(const Table1D& t) {
    json arr = json::array();
    for (const auto& [x, y] : t.points()) arr.push_back({x, y});
    return arr;
}

Table1D table_from_json(const json& j, const char* field) {
    if (!j.is_array()) throw ParameterError(field, "must be an array of [x, y] pairs");
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : j) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
            throw ParameterError(field, "must be an array of [x, y] pairs");
        pts.emplace_back(p[0].get<double>(), p[1].get<double>());
    }
    return Table1D(std::move(pts));
}

#define P2DNET_SCALAR_FIELDS(X)                                                              \
    X(L_n) X(L_sep) X(L_p) X(R_n) X(R_p) X(c_max_n) X(c_max_p) X(x_n0) X(x_p0) X(D_n) X(D_p) \
    X(D_e) X(c_e0) X(t_plus) X(eps_n) X(eps_sep) X(eps_p) X(b) X(k_n) X(k_p) X(sigma_n)      \
    X(sigma_p) X(a_n) X(a_p) X(T) X(V_cut) X(Q) X(area)

} // namespace

void ParameterSet::validate() const {
    require_positive(L_n, "L_n");
    require_positive(L_sep, "L_sep");
    require_positive(L_p, "L_p");
    require_positive(R_n, "R_n");
    require_positive(R_p, "R_p");
    require_positive(c_max_n, "c_max_n");
    require_positive(c_max_p, "c_max_p");
    require(std::isfinite(x_n0) && x_n0 >= 0.0 && x_n0 <= 1.0, "x_n0", "must lie in [0, 1]");
    require(std::isfinite(x_p0) && x_p0 >= 0.0 && x_p0 <= 1.0, "x_p0", "must lie in [0, 1]");
    require_positive(D_n, "D_n");
    require_positive(D_p, "D_p");
    require_positive(D_e, "D_e");
    require_positive(c_e0, "c_e0");
    require_open_unit(t_plus, "t_plus");
    require_open_unit(eps_n, "eps_n");
    // a separator may be pure electrolyte
    require(std::isfinite(eps_sep) && eps_sep > 0.0 && eps_sep <= 1.0, "eps_sep", "must lie in (0, 1]");
    require_open_unit(eps_p, "eps_p");
    require_positive(b, "b");
    require_positive(k_n, "k_n");
    require_positive(k_p, "k_p");
    require_positive(sigma_n, "sigma_n");
    require_positive(sigma_p, "sigma_p");
    require_positive(a_n, "a_n");
    require_positive(a_p, "a_p");
    require(solid_fraction_n() < 1.0 - eps_n, "a_n", "implies a solid fraction above 1 - eps_n");
    require(solid_fraction_p() < 1.0 - eps_p, "a_p", "implies a solid fraction above 1 - eps_p");
    require_positive(T, "T");
    require_positive(Q, "Q");
    require_positive(area, "area");
    require_table(U_n, "U_n", 0.0, 1.0);
    require_table(U_p, "U_p", 0.0, 1.0);
    require_table(kappa, "kappa", 0.0, c_e0);
    for (const auto& [c, k] : kappa.points()) require(k > 0.0, "kappa", "conductivity must be positive");
    require(std::isfinite(V_cut) && V_cut > 0.0, "V_cut", "must be finite and positive");
    require(V_cut < ocv_full(), "V_cut", "must lie below the fully charged open-circuit voltage");
}

ParameterSet default_parameters() {
    ParameterSet p;
    p.L_n = 100e-6;
    p.L_sep = 25e-6;
    p.L_p = 100e-6;
    p.R_n = 1e-5;
    p.R_p = 1e-5;
    p.c_max_n = 24983.2619938437;
    p.c_max_p = 51217.9257309275;
    p.x_n0 = 0.8;
    p.x_p0 = 0.6;
    p.D_n = 3.9e-14;
    p.D_p = 1e-13;
    p.D_e = 5.34e-10 * std::exp(-0.65);
    p.c_e0 = 1000.0;
    p.t_plus = 0.4;
    p.eps_n = 0.3;
    p.eps_sep = 1.0;
    p.eps_p = 0.3;
    p.b = 1.5;
    p.k_n = 2e-5;
    p.k_p = 6e-7;
    p.sigma_n = 100.0;
    p.sigma_p = 10.0;
    p.kappa = tabulate(capiglia_conductivity, 0.0, 4000.0, 80);
    p.U_n = tabulate(graphite_ocp, 0.0, 1.0, 1000);
    p.U_p = tabulate(lico2_ocp, 0.0, 1.0, 1000);
    p.a_n = 3.0 * 0.6 / p.R_n;
    p.a_p = 3.0 * 0.5 / p.R_p;
    p.T = 298.15;
    // V_cut and Q are tuned together: the 100-s constant-current ceiling
    // sits near 7C (7.89C) while 1C still lasts about an hour (1.04C max).
    p.V_cut = 3.40;
    p.Q = 0.635;
    p.area = 0.137 * 0.207;
    return p;
}

std::string parameters_to_json(const ParameterSet& p) {
    json j;
#define X(name) j[#name] = p.name;
    P2DNET_SCALAR_FIELDS(X)
#undef X
    j["kappa"] = table_to_json(p.kappa);
    j["U_n"] = table_to_json(p.U_n);
    j["U_p"] = table_to_json(p.U_p);
    return j.dump(1);
}

ParameterSet parameters_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("parameter file is not valid JSON: ") + e.what(), e.byte);
    }
    if (!j.is_object()) throw FormatError("parameter file must hold a JSON object", 0);
    ParameterSet p;
#define X(name)                                                                 \
    if (!j.contains(#name)) throw ParameterError(#name, "missing");             \
    if (!j[#name].is_number()) throw ParameterError(#name, "must be a number"); \
    p.name = j[#name].get<double>();
    P2DNET_SCALAR_FIELDS(X)
#undef X
    for (const char* name : {"kappa", "U_n", "U_p"})
        if (!j.contains(name)) throw ParameterError(name, "missing");
    p.kappa = table_from_json(j["kappa"], "kappa");
    p.U_n = table_from_json(j["U_n"], "U_n");
    p.U_p = table_from_json(j["U_p"], "U_p");
    p.validate();
    return p;
}

ParameterSet load_parameters(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open parameter file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parameters_from_json(ss.str());
}

void save_parameters(const ParameterSet& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write parameter file " + path.string());
    out << parameters_to_json(params) << '\n';
}

} // namespace p2dnet
