#include "p2dnet/electrochem.hpp"

#include "p2dnet/errors.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <string>

namespace p2dnet {

namespace {

constexpr double kFaraday = 96485.33212;
constexpr double kGasConstant = 8.314462618;

constexpr int N = kGrid;
constexpr int kThetaN = 0;
constexpr int kThetaP = kThetaN + kGridCells;
constexpr int kCe = kThetaP + kGridCells;
constexpr int kPhiE = kCe + kElectrolyteCells;
constexpr int kPhiSN = kPhiE + kElectrolyteCells;
constexpr int kPhiSP = kPhiSN + N;
constexpr int kIN = kPhiSP + N;
constexpr int kIP = kIN + N;
constexpr int kUnknowns = kIP + N;

constexpr int kSepBegin = N;
constexpr int kPosBegin = N + kSeparatorCells;

// Per-electrode constants of the spherical shell discretization.
struct Particle {
    std::array<double, N> w{};     // shell volume fractions
    std::array<double, N> cond{};  // interface k|k+1 transfer coefficient A_k D / dr (1/s)
    double surface_rate = 0;       // d(theta)/dt per unit interfacial current, outer boundary
    double dsurf_di = 0;           // d(theta_surf)/d(i)
    double c_max = 0;
    double k_rate = 0;
    const Table1D* ocp = nullptr;
};

Particle make_particle(double R, double D, double c_max, double k_rate, const Table1D& ocp) {
    Particle p;
    const double dr = R / N;
    const double R3 = R * R * R;
    for (int k = 0; k < N; ++k) {
        const double ri = k * dr, ro = (k + 1) * dr;
        p.w[k] = (ro * ro * ro - ri * ri * ri) / R3;
        p.cond[k] = (k < N - 1) ? 3.0 * ro * ro / R3 * D / dr : 0.0;
    }
    p.surface_rate = 3.0 / (R * kFaraday * c_max);
    p.dsurf_di = -dr / (2.0 * kFaraday * c_max * D);
    p.c_max = c_max;
    p.k_rate = k_rate;
    p.ocp = &ocp;
    return p;
}

} // namespace

double DriveCycle::current_at(double t) const {
    if (currents.empty()) return 0.0;
    if (currents.size() == 1 || t <= 0.0) return currents.front();
    const double pos = t / kWindowSeconds;
    const auto last = currents.size() - 1;
    if (pos >= static_cast<double>(last)) return currents.back();
    const auto k = static_cast<std::size_t>(pos);
    const double f = pos - static_cast<double>(k);
    return currents[k] + (currents[k + 1] - currents[k]) * f;
}

struct Simulator::Workspace {
    // geometry
    std::array<double, kElectrolyteCells> h{}, eps{}, a{}, brug{};
    std::array<double, kElectrolyteCells - 1> G{};  // electrolyte diffusion face conductance
    double S_n = 0, S_p = 0;                        // effective solid conductivities
    double h_n = 0, h_p = 0;
    double i_ref = 0;
    double beta = 0;   // 2 R T (1 - t+) / F
    double alpha = 0;  // F / (2 R T)
    Particle pn, pp;

    // Newton state
    Eigen::VectorXd x, r, dx;
    Eigen::VectorXd old;
    std::vector<Eigen::Triplet<double>> triplets;
    std::vector<int> slot;
    int seq = 0;
    bool pattern_ready = false;
    Eigen::SparseMatrix<double> J;
    Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
    double last_residual = 0;

    void begin() {
        seq = 0;
        if (pattern_ready) std::fill(J.valuePtr(), J.valuePtr() + J.nonZeros(), 0.0);
        else triplets.clear();
    }
    void add(int row, int col, double v) {
        if (pattern_ready) J.valuePtr()[slot[seq++]] += v;
        else triplets.emplace_back(row, col, v);
    }
    void finish_pattern() {
        if (pattern_ready) return;
        J.resize(kUnknowns, kUnknowns);
        // Sentinel values make every triplet distinguishable for slot lookup.
        std::vector<Eigen::Triplet<double>> marked;
        marked.reserve(triplets.size());
        for (const auto& t : triplets) marked.emplace_back(t.row(), t.col(), 0.0);
        J.setFromTriplets(marked.begin(), marked.end());
        J.makeCompressed();
        slot.resize(triplets.size());
        for (std::size_t s = 0; s < triplets.size(); ++s) {
            const double* p = &J.coeffRef(triplets[s].row(), triplets[s].col());
            slot[s] = static_cast<int>(p - J.valuePtr());
        }
        for (std::size_t s = 0; s < triplets.size(); ++s) J.valuePtr()[slot[s]] += triplets[s].value();
        lu.analyzePattern(J);
        pattern_ready = true;
    }
};

namespace {

void pack(const CellState& s, double c_e0, Eigen::VectorXd& x) {
    x.resize(kUnknowns);
    for (int q = 0; q < kGridCells; ++q) {
        x[kThetaN + q] = s.c_n[q];
        x[kThetaP + q] = s.c_p[q];
    }
    for (int m = 0; m < kElectrolyteCells; ++m) {
        x[kCe + m] = s.c_e[m] / c_e0;
        x[kPhiE + m] = s.phi_e[m];
    }
    for (int k = 0; k < N; ++k) {
        x[kPhiSN + k] = s.phi_s_n[k];
        x[kPhiSP + k] = s.phi_s_p[k];
        x[kIN + k] = s.j_n[k];
        x[kIP + k] = s.j_p[k];
    }
}

void unpack(const Eigen::VectorXd& x, double c_e0, CellState& s) {
    for (int q = 0; q < kGridCells; ++q) {
        s.c_n[q] = x[kThetaN + q];
        s.c_p[q] = x[kThetaP + q];
    }
    for (int m = 0; m < kElectrolyteCells; ++m) {
        s.c_e[m] = x[kCe + m] * c_e0;
        s.phi_e[m] = x[kPhiE + m];
    }
    for (int k = 0; k < N; ++k) {
        s.phi_s_n[k] = x[kPhiSN + k];
        s.phi_s_p[k] = x[kPhiSP + k];
        s.j_n[k] = x[kIN + k];
        s.j_p[k] = x[kIP + k];
    }
}

CellState blend(const CellState& a, const CellState& b, double s) {
    auto mix = [s](double u, double v) { return u + s * (v - u); };
    CellState out;
    for (int q = 0; q < kGridCells; ++q) {
        out.c_n[q] = mix(a.c_n[q], b.c_n[q]);
        out.c_p[q] = mix(a.c_p[q], b.c_p[q]);
    }
    for (int m = 0; m < kElectrolyteCells; ++m) {
        out.c_e[m] = mix(a.c_e[m], b.c_e[m]);
        out.phi_e[m] = mix(a.phi_e[m], b.phi_e[m]);
    }
    for (int k = 0; k < N; ++k) {
        out.phi_s_n[k] = mix(a.phi_s_n[k], b.phi_s_n[k]);
        out.phi_s_p[k] = mix(a.phi_s_p[k], b.phi_s_p[k]);
        out.j_n[k] = mix(a.j_n[k], b.j_n[k]);
        out.j_p[k] = mix(a.j_p[k], b.j_p[k]);
    }
    out.V = mix(a.V, b.V);
    out.t = mix(a.t, b.t);
    out.I = mix(a.I, b.I);
    return out;
}

struct NewtonFailure {
    double residual;
};

} // namespace

Simulator::Simulator(ParameterSet params, SimOptions options)
    : params_(std::move(params)), options_(options), ws_(std::make_unique<Workspace>()) {
    params_.validate();
    auto& w = *ws_;
    const auto& p = params_;
    w.h_n = p.L_n / N;
    w.h_p = p.L_p / N;
    const double h_s = p.L_sep / kSeparatorCells;
    for (int m = 0; m < kElectrolyteCells; ++m) {
        if (m < kSepBegin) {
            w.h[m] = w.h_n, w.eps[m] = p.eps_n, w.a[m] = p.a_n;
        } else if (m < kPosBegin) {
            w.h[m] = h_s, w.eps[m] = p.eps_sep, w.a[m] = 0.0;
        } else {
            w.h[m] = w.h_p, w.eps[m] = p.eps_p, w.a[m] = p.a_p;
        }
        w.brug[m] = std::pow(w.eps[m], p.b);
    }
    for (int f = 0; f < kElectrolyteCells - 1; ++f) {
        const double d_l = p.D_e * w.brug[f], d_r = p.D_e * w.brug[f + 1];
        w.G[f] = 1.0 / (0.5 * w.h[f] / d_l + 0.5 * w.h[f + 1] / d_r);
    }
    w.S_n = p.sigma_n * std::pow(1.0 - p.eps_n, p.b);
    w.S_p = p.sigma_p * std::pow(1.0 - p.eps_p, p.b);
    w.i_ref = p.current_density(1.0);
    w.beta = 2.0 * kGasConstant * p.T * (1.0 - p.t_plus) / kFaraday;
    w.alpha = kFaraday / (2.0 * kGasConstant * p.T);
    w.pn = make_particle(p.R_n, p.D_n, p.c_max_n, p.k_n, params_.U_n);
    w.pp = make_particle(p.R_p, p.D_p, p.c_max_p, p.k_p, params_.U_p);
}

Simulator::~Simulator() = default;
Simulator::Simulator(Simulator&&) noexcept = default;
Simulator& Simulator::operator=(Simulator&&) noexcept = default;

CellState Simulator::init_full_charge() const {
    const auto& p = params_;
    CellState s;
    s.c_n.fill(p.x_n0);
    s.c_p.fill(p.x_p0);
    s.c_e.fill(p.c_e0);
    const double un = p.U_n(p.x_n0), up = p.U_p(p.x_p0);
    // reference: solid potential at the negative current collector is zero
    s.phi_e.fill(-un);
    s.phi_s_n.fill(0.0);
    s.phi_s_p.fill(up - un);
    s.V = up - un;
    return s;
}

CellState Simulator::solve_step(const CellState& state, double i_app, double dt) {
    auto& w = *ws_;
    const auto& p = params_;
    pack(state, p.c_e0, w.old);
    w.x = w.old;
    w.r.resize(kUnknowns);

    const double inv_ref = 1.0 / w.i_ref;
    const double c_e0 = p.c_e0;
    const double kappa_scale = c_e0;  // d c_e / d chat

    auto assemble = [&]() {
        w.begin();
        auto& x = w.x;
        auto& r = w.r;

        // --- particles
        auto particle_rows = [&](const Particle& pt, int th_off, int i_off) {
            for (int q = 0; q < N; ++q) {
                const int base = th_off + q * N;
                for (int k = 0; k < N; ++k) {
                    const int row = base + k;
                    const double sc = dt / pt.w[k];
                    double flux = 0.0;
                    double diag = 1.0;
                    if (k < N - 1) {
                        flux += pt.cond[k] * (x[row + 1] - x[row]);
                        diag += sc * pt.cond[k];
                    }
                    if (k > 0) {
                        flux -= pt.cond[k - 1] * (x[row] - x[row - 1]);
                        diag += sc * pt.cond[k - 1];
                    }
                    if (k == N - 1) flux -= pt.surface_rate * x[i_off + q];
                    r[row] = x[row] - w.old[row] - sc * flux;
                    if (k > 0) w.add(row, row - 1, -sc * pt.cond[k - 1]);
                    w.add(row, row, diag);
                    if (k < N - 1) w.add(row, row + 1, -sc * pt.cond[k]);
                    if (k == N - 1) w.add(row, i_off + q, sc * pt.surface_rate);
                }
            }
        };
        particle_rows(w.pn, kThetaN, kIN);
        particle_rows(w.pp, kThetaP, kIP);

        // --- electrolyte conductivities and face coefficients
        std::array<double, kElectrolyteCells> kap{}, dkap{}, lnc{};
        for (int m = 0; m < kElectrolyteCells; ++m) {
            const double c = x[kCe + m] * c_e0;
            kap[m] = p.kappa(c) * w.brug[m];
            dkap[m] = p.kappa.slope(c) * kappa_scale * w.brug[m];
            lnc[m] = std::log(x[kCe + m]);
        }
        std::array<double, kElectrolyteCells - 1> K{}, dK_l{}, dK_r{}, ie{}, die_dphi{}, die_dc_l{}, die_dc_r{};
        for (int f = 0; f < kElectrolyteCells - 1; ++f) {
            const double hl = 0.5 * w.h[f], hr = 0.5 * w.h[f + 1];
            const double denom = hl / kap[f] + hr / kap[f + 1];
            K[f] = 1.0 / denom;
            dK_l[f] = K[f] * K[f] * hl / (kap[f] * kap[f]) * dkap[f];
            dK_r[f] = K[f] * K[f] * hr / (kap[f + 1] * kap[f + 1]) * dkap[f + 1];
            const double drive = -(x[kPhiE + f + 1] - x[kPhiE + f]) + w.beta * (lnc[f + 1] - lnc[f]);
            ie[f] = K[f] * drive;
            die_dphi[f] = K[f];  // d ie / d phi_l ; d/d phi_r = -K
            die_dc_l[f] = dK_l[f] * drive - K[f] * w.beta / x[kCe + f];
            die_dc_r[f] = dK_r[f] * drive + K[f] * w.beta / x[kCe + f + 1];
        }

        auto i_index = [](int m) { return m < kSepBegin ? kIN + m : kIP + (m - kPosBegin); };

        // --- electrolyte mass balance
        for (int m = 0; m < kElectrolyteCells; ++m) {
            const int row = kCe + m;
            const double sc = dt / (w.eps[m] * w.h[m]);
            double flux = 0.0, diag = 1.0;
            if (m < kElectrolyteCells - 1) {
                flux += w.G[m] * (x[row + 1] - x[row]);
                diag += sc * w.G[m];
            }
            if (m > 0) {
                flux -= w.G[m - 1] * (x[row] - x[row - 1]);
                diag += sc * w.G[m - 1];
            }
            const bool electrode = w.a[m] > 0.0;
            const double src = electrode ? (1.0 - p.t_plus) * w.a[m] * w.h[m] / (kFaraday * c_e0) : 0.0;
            if (electrode) flux += src * x[i_index(m)];
            r[row] = x[row] - w.old[row] - sc * flux;
            if (m > 0) w.add(row, row - 1, -sc * w.G[m - 1]);
            w.add(row, row, diag);
            if (m < kElectrolyteCells - 1) w.add(row, row + 1, -sc * w.G[m]);
            if (electrode) w.add(row, i_index(m), -sc * src);
        }

        // --- electrolyte charge balance; cell 0 carries the potential reference
        {
            const int row = kPhiE;
            r[row] = x[kPhiSN] + 0.5 * w.h_n * i_app / w.S_n;
            w.add(row, kPhiSN, 1.0);
        }
        for (int m = 1; m < kElectrolyteCells; ++m) {
            const int row = kPhiE + m;
            const bool right = m < kElectrolyteCells - 1;
            const double ie_r = right ? ie[m] : 0.0;
            const double ie_l = ie[m - 1];
            const bool electrode = w.a[m] > 0.0;
            double val = ie_r - ie_l;
            if (electrode) val -= w.a[m] * w.h[m] * x[i_index(m)];
            r[row] = val * inv_ref;
            // left face (m-1 | m)
            w.add(row, kPhiE + m - 1, -die_dphi[m - 1] * inv_ref);
            w.add(row, kCe + m - 1, -die_dc_l[m - 1] * inv_ref);
            double dphi_m = -(-die_dphi[m - 1]);
            double dc_m = -die_dc_r[m - 1];
            if (right) {
                dphi_m += die_dphi[m];
                dc_m += die_dc_l[m];
            }
            w.add(row, kPhiE + m, dphi_m * inv_ref);
            w.add(row, kCe + m, dc_m * inv_ref);
            if (right) {
                w.add(row, kPhiE + m + 1, -die_dphi[m] * inv_ref);
                w.add(row, kCe + m + 1, die_dc_r[m] * inv_ref);
            }
            if (electrode) w.add(row, i_index(m), -w.a[m] * w.h[m] * inv_ref);
        }

        // --- solid charge balance
        auto solid_rows = [&](int phi_off, int i_off, double S, double h, double a, double left_bc, double right_bc) {
            const double g = S / h;
            for (int k = 0; k < N; ++k) {
                const int row = phi_off + k;
                const double is_r = (k < N - 1) ? -g * (x[row + 1] - x[row]) : right_bc;
                const double is_l = (k > 0) ? -g * (x[row] - x[row - 1]) : left_bc;
                r[row] = (is_r - is_l + a * h * x[i_off + k]) * inv_ref;
                double diag = 0.0;
                if (k > 0) {
                    w.add(row, row - 1, -g * inv_ref);
                    diag += g;
                }
                if (k < N - 1) diag += g;
                w.add(row, row, diag * inv_ref);
                if (k < N - 1) w.add(row, row + 1, -g * inv_ref);
                w.add(row, i_off + k, a * h * inv_ref);
            }
        };
        solid_rows(kPhiSN, kIN, w.S_n, w.h_n, p.a_n, i_app, 0.0);
        solid_rows(kPhiSP, kIP, w.S_p, w.h_p, p.a_p, 0.0, i_app);

        // --- Butler-Volmer
        auto bv_rows = [&](const Particle& pt, int th_off, int phi_off, int i_off, int cell0) {
            constexpr double lo = 1e-9, hi = 1.0 - 1e-9;
            for (int k = 0; k < N; ++k) {
                const int row = i_off + k;
                const int m = cell0 + k;
                const double ii = x[row];
                const double ch = x[kCe + m];
                const int outer = th_off + k * N + (N - 1);
                const double ts = x[outer] + pt.dsurf_di * ii;
                const bool inside = ts > lo && ts < hi;
                const double tc = std::clamp(ts, lo, hi);
                const double g = std::sqrt(tc * (1.0 - tc));
                const double sq = std::sqrt(c_e0 * ch);
                const double i0 = pt.k_rate * pt.c_max * sq * g;
                const double di0_dts = inside ? pt.k_rate * pt.c_max * sq * (1.0 - 2.0 * tc) / (2.0 * g) : 0.0;
                const double di0_dc = i0 / (2.0 * ch);
                const double U = (*pt.ocp)(tc);
                const double dU = inside ? pt.ocp->slope(tc) : 0.0;
                const double eta = x[phi_off + k] - x[kPhiE + m] - U;
                const double sh = std::sinh(w.alpha * eta), co = std::cosh(w.alpha * eta);
                r[row] = (ii - 2.0 * i0 * sh) * inv_ref;
                const double d_eta = 2.0 * i0 * co * w.alpha;  // d(2 i0 sinh)/d eta
                const double d_ts = 2.0 * sh * di0_dts - d_eta * dU;  // d(2 i0 sinh)/d theta_surf
                w.add(row, row, (1.0 - d_ts * pt.dsurf_di) * inv_ref);
                w.add(row, outer, -d_ts * inv_ref);
                w.add(row, phi_off + k, -d_eta * inv_ref);
                w.add(row, kPhiE + m, d_eta * inv_ref);
                w.add(row, kCe + m, -2.0 * sh * di0_dc * inv_ref);
            }
        };
        bv_rows(w.pn, kThetaN, kPhiSN, kIN, 0);
        bv_rows(w.pp, kThetaP, kPhiSP, kIP, kPosBegin);

        w.finish_pattern();
    };

    double res = 0.0;
    for (int it = 0;; ++it) {
        assemble();
        res = w.r.lpNorm<Eigen::Infinity>();
        w.last_residual = res;
        if (!std::isfinite(res)) throw NewtonFailure{res};
        if (res < options_.newton_tol) break;
        if (it >= options_.max_newton_iterations) throw NewtonFailure{res};
        w.lu.factorize(w.J);
        if (w.lu.info() != Eigen::Success) throw NewtonFailure{res};
        w.dx = w.lu.solve(-w.r);
        if (!w.dx.allFinite()) throw NewtonFailure{res};

        double step = 1.0;
        for (int m = 0; m < kElectrolyteCells; ++m) {
            const double c = w.x[kCe + m], d = w.dx[kCe + m];
            if (d < 0.0 && c + d < 0.1 * c) step = std::min(step, 0.9 * c / -d);
        }
        for (int q = kPhiE; q < kIN; ++q) {
            const double d = std::abs(w.dx[q]);
            if (d > 0.5) step = std::min(step, 0.5 / d);
        }
        w.x += step * w.dx;
    }

    CellState out;
    unpack(w.x, p.c_e0, out);
    out.V = w.x[kPhiSP + N - 1] - 0.5 * w.h_p * i_app / w.S_p - (w.x[kPhiSN] + 0.5 * w.h_n * i_app / w.S_n);
    out.t = state.t + dt;
    return out;
}

StepResult Simulator::step_adaptive(const CellState& state, double I_start, double I_end, double dt) {
    CellState next;
    try {
        next = solve_step(state, params_.current_density(0.5 * (I_start + I_end)), dt);
    } catch (const NewtonFailure& nf) {
        if (0.5 * dt < options_.min_dt * (1.0 - 1e-12))
            throw SolverError("Newton iteration did not converge (residual " + std::to_string(nf.residual) +
                                  ", dt " + std::to_string(dt) + " s)",
                              nf.residual, state.t);
        const double I_mid = 0.5 * (I_start + I_end);
        auto first = step_adaptive(state, I_start, I_mid, 0.5 * dt);
        if (std::holds_alternative<FailureEvent>(first)) return first;
        return step_adaptive(std::get<CellState>(first), I_mid, I_end, 0.5 * dt);
    }
    next.I = I_end;

    const double tol = options_.physical_tol;
    auto check_physical = [&](const CellState& s) {
        for (int q = 0; q < kGridCells; ++q) {
            if (s.c_n[q] < -tol || s.c_n[q] > 1.0 + tol || s.c_p[q] < -tol || s.c_p[q] > 1.0 + tol)
                throw PhysicalityError("solid stoichiometry left [0, 1] at t = " + std::to_string(s.t) + " s");
        }
        for (double c : s.c_e)
            if (!(c > 0.0)) throw PhysicalityError("electrolyte depleted at t = " + std::to_string(s.t) + " s");
    };

    const double V_cut = params_.V_cut;
    if (next.V <= V_cut) {
        const double denom = state.V - next.V;
        const double s = denom > 0.0 ? std::clamp((state.V - V_cut) / denom, 0.0, 1.0) : 1.0;
        FailureEvent ev;
        ev.state = blend(state, next, s);
        ev.state.V = V_cut;
        ev.time = ev.state.t;
        check_physical(ev.state);
        return ev;
    }
    check_physical(next);
    return next;
}

StepResult Simulator::step(const CellState& state, double I_start, double I_end, double dt) {
    if (!(dt > 0.0)) throw Error("step: dt must be positive");
    if (state.V <= params_.V_cut) throw Error("step: state is already at or below the voltage cutoff");
    return step_adaptive(state, I_start, I_end, dt);
}

SimOutcome Simulator::simulate(const DriveCycle& cycle) {
    if (cycle.windows() < 1) throw Error("simulate_cycle: cycle needs at least two breakpoints");
    SimOutcome out;
    CellState s = init_full_charge();
    s.I = cycle.currents.front();
    out.trajectory.push_back(s);
    const int n_sub = std::max(1, static_cast<int>(std::lround(kWindowSeconds / options_.dt)));
    for (int win = 0; win < cycle.windows(); ++win) {
        for (int k = 0; k < n_sub; ++k) {
            const double t0 = kWindowSeconds * (win + static_cast<double>(k) / n_sub);
            const double t1 = kWindowSeconds * (win + static_cast<double>(k + 1) / n_sub);
            StepResult res;
            try {
                res = step(s, cycle.current_at(t0), cycle.current_at(t1), t1 - t0);
            } catch (const SolverError& e) {
                throw SolverError(std::string(e.what()) + " at t = " + std::to_string(t0) + " s", e.residual(), t0);
            } catch (const PhysicalityError& e) {
                throw PhysicalityError(std::string(e.what()) + " (window starting " +
                                       std::to_string(win * kWindowSeconds) + " s)");
            }
            if (auto* ev = std::get_if<FailureEvent>(&res)) {
                out.failed = true;
                out.failure_time = ev->time;
                out.failure_window = std::max(0, static_cast<int>(std::ceil(ev->time / kWindowSeconds)) - 1);
                out.trajectory.push_back(ev->state);
                return out;
            }
            s = std::get<CellState>(res);
            s.t = t1;
        }
        out.trajectory.push_back(s);
    }
    return out;
}

double Simulator::lithium_inventory(const CellState& s) const {
    const auto& w = *ws_;
    const auto& p = params_;
    auto solid = [&](const Grid& g, const Particle& pt, double eps_s, double h) {
        double total = 0.0;
        for (int q = 0; q < N; ++q) {
            double m = 0.0;
            for (int k = 0; k < N; ++k) m += pt.w[k] * g[q * N + k];
            total += m;
        }
        return total * h * eps_s * pt.c_max;
    };
    double li = solid(s.c_n, w.pn, p.solid_fraction_n(), w.h_n) + solid(s.c_p, w.pp, p.solid_fraction_p(), w.h_p);
    for (int m = 0; m < kElectrolyteCells; ++m) li += w.eps[m] * w.h[m] * s.c_e[m];
    return li;
}

double Simulator::negative_solid_charge(const CellState& s) const {
    const auto& w = *ws_;
    double total = 0.0;
    for (int q = 0; q < N; ++q)
        for (int k = 0; k < N; ++k) total += w.pn.w[k] * s.c_n[q * N + k];
    const double mol_per_m2 = total * w.h_n * params_.solid_fraction_n() * params_.c_max_n;
    return mol_per_m2 * params_.area * kFaraday / 3600.0;
}

double Simulator::ocv_at_mean_stoichiometry(const CellState& s) const {
    const auto& w = *ws_;
    auto mean = [&](const Grid& g, const Particle& pt) {
        double total = 0.0;
        for (int q = 0; q < N; ++q)
            for (int k = 0; k < N; ++k) total += pt.w[k] * g[q * N + k];
        return total / N;
    };
    return params_.U_p(mean(s.c_p, w.pp)) - params_.U_n(mean(s.c_n, w.pn));
}

CellState init_full_charge(const ParameterSet& params) { return Simulator(params).init_full_charge(); }

StepResult step(const CellState& state, double I_start, double I_end, double dt, const ParameterSet& params) {
    Simulator sim(params);
    return sim.step(state, I_start, I_end, dt);
}

SimOutcome simulate_cycle(const ParameterSet& params, const DriveCycle& cycle, SimOptions options) {
    Simulator sim(params, options);
    return sim.simulate(cycle);
}

namespace {

bool survives_constant(Simulator& sim, double crate, double duration) {
    CellState s = sim.init_full_charge();
    s.I = crate;
    const int n = std::max(1, static_cast<int>(std::ceil(duration / sim.options().dt - 1e-9)));
    for (int k = 0; k < n; ++k) {
        const double t0 = duration * k / n, t1 = duration * (k + 1) / n;
        auto res = sim.step(s, crate, crate, t1 - t0);
        if (std::holds_alternative<FailureEvent>(res)) return false;
        s = std::get<CellState>(res);
        s.t = t1;
    }
    return true;
}

} // namespace

double max_sustained_crate(const ParameterSet& params, double duration, double tolerance) {
    if (!(duration > 0.0)) throw Error("max_sustained_crate: duration must be positive");
    Simulator sim(params);
    double lo = 0.0, hi = 8.0;
    while (survives_constant(sim, hi, duration)) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e4) return lo;
    }
    while (hi - lo > tolerance) {
        const double mid = 0.5 * (lo + hi);
        if (survives_constant(sim, mid, duration)) lo = mid;
        else hi = mid;
    }
    return lo;
}

void write_outcome_csv(const SimOutcome& outcome, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "t,V";
    for (int q = 0; q < kGridCells; ++q) out << ",c_n_" << q / kGrid << '_' << q % kGrid;
    for (int q = 0; q < kGridCells; ++q) out << ",c_p_" << q / kGrid << '_' << q % kGrid;
    out << '\n' << std::setprecision(17);
    for (const auto& s : outcome.trajectory) {
        out << s.t << ',' << s.V;
        for (double v : s.c_n) out << ',' << v;
        for (double v : s.c_p) out << ',' << v;
        out << '\n';
    }
}

} // namespace p2dnet
