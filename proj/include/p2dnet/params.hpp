#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace p2dnet {

/// Piecewise-linear function given by sorted breakpoints. Evaluation clamps
/// outside the tabulated range.
class Table1D {
public:
    Table1D() = default;
    explicit Table1D(std::vector<std::pair<double, double>> points);

    double operator()(double x) const;
    /// Slope of the segment containing x (zero outside the range).
    double slope(double x) const;

    const std::vector<std::pair<double, double>>& points() const noexcept { return points_; }
    bool empty() const noexcept { return points_.empty(); }
    double x_min() const { return points_.front().first; }
    double x_max() const { return points_.back().first; }

    bool operator==(const Table1D&) const = default;

private:
    std::size_t segment(double x) const;

    std::vector<std::pair<double, double>> points_;
};

/// Physical and geometric constants of the simulated cell.
///
/// Units are SI unless noted. Concentrations are mol/m^3, stoichiometries
/// are dimensionless, `k_n`/`k_p` are Butler-Volmer rate constants in
/// A/m^2 (m^3/mol)^1.5 so that i0 = k * sqrt(c_e * c_s * (c_max - c_s)).
/// `Q` is the nominal capacity (A h) defining 1C and `area` the electrode
/// plate area (m^2) used to turn a C-rate into a current density.
struct ParameterSet {
    double L_n = 0, L_sep = 0, L_p = 0;
    double R_n = 0, R_p = 0;
    double c_max_n = 0, c_max_p = 0;
    double x_n0 = 0, x_p0 = 0;
    double D_n = 0, D_p = 0;
    double D_e = 0, c_e0 = 0, t_plus = 0;
    double eps_n = 0, eps_sep = 0, eps_p = 0, b = 0;
    double k_n = 0, k_p = 0;
    double sigma_n = 0, sigma_p = 0;
    Table1D kappa;  ///< electrolyte conductivity (S/m) vs c_e (mol/m^3)
    Table1D U_n, U_p;  ///< open-circuit potentials (V) vs stoichiometry
    double a_n = 0, a_p = 0;
    double T = 0;
    double V_cut = 0;
    double Q = 0;
    double area = 0;

    /// Throws ParameterError naming the first offending field.
    void validate() const;

    /// Open-circuit voltage of the fully charged cell.
    double ocv_full() const { return U_p(x_p0) - U_n(x_n0); }
    /// Current density (A/m^2) corresponding to a C-rate.
    double current_density(double c_rate) const { return c_rate * Q / area; }
    /// Active-material volume fractions implied by a = 3 eps_s / R.
    double solid_fraction_n() const { return a_n * R_n / 3.0; }
    double solid_fraction_p() const { return a_p * R_p / 3.0; }

    bool operator==(const ParameterSet&) const = default;
};

/// Graphite / LiCoO2 pouch cell with dual-foil OCV and electrolyte fits.
ParameterSet default_parameters();

ParameterSet load_parameters(const std::filesystem::path& path);
void save_parameters(const ParameterSet& params, const std::filesystem::path& path);

std::string parameters_to_json(const ParameterSet& params);
ParameterSet parameters_from_json(const std::string& text);

} // namespace p2dnet
