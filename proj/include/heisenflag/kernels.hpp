#pragma once

// Heat and Poisson kernels for L on H^nu and for Delta on the centre, the
// flag Poisson kernel, and the explicit singular kernels.
//
// The heat kernel is produced by explicit Euler stepping of d_u h = -L h from
// a discrete delta, with the step chosen from a measured spectral radius.
// The Poisson kernel comes from the subordination formula
//   e^{-r sqrt(L)} = pi^{-1/2} Int e^{-v} v^{-1/2} e^{-r^2 L / 4v} dv,
// evaluated with Gauss-Hermite nodes (v = u^2 turns the v^{-1/2} weight into
// a plain Gaussian), so one sweep of the heat engine serves all nodes.

#include <map>
#include <mutex>

#include "field_ops.hpp"

namespace heisenflag {

struct KernelEstimate {
    int m = 0, n = 0;
    double constant = 0.0;
    enum class Form { HeatGaussian, PoissonRational } form = Form::HeatGaussian;
};

// ---------------------------------------------------------------------------
// Gauss-Hermite nodes (Golub-Welsch on the Jacobi matrix), for subordination.

struct QuadratureRule {
    std::vector<double> nodes, weights;
};

inline QuadratureRule gauss_hermite(int n);  // defined below via Eigen-free QL

namespace detail {

// symmetric tridiagonal eigenvalues+first components by implicit QL (small n)
inline void tridiag_eigen(std::vector<double>& d, std::vector<double>& e,
                          std::vector<double>& first_comp) {
    const int n = static_cast<int>(d.size());
    first_comp.assign(n, 0.0);
    std::vector<std::vector<double>> z(n, std::vector<double>(n, 0.0));
    for (int i = 0; i < n; ++i) z[i][i] = 1.0;
    e.push_back(0.0);
    for (int l = 0; l < n; ++l) {
        int iter = 0;
        int m;
        do {
            for (m = l; m < n - 1; ++m) {
                double dd = std::abs(d[m]) + std::abs(d[m + 1]);
                if (std::abs(e[m]) <= 1e-300 + 1e-15 * dd) break;
            }
            if (m != l) {
                if (iter++ == 50) throw std::runtime_error("tridiag_eigen: no convergence");
                double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                double r = std::hypot(g, 1.0);
                g = d[m] - d[l] + e[l] / (g + (g >= 0 ? std::abs(r) : -std::abs(r)));
                double s = 1.0, c = 1.0, p = 0.0;
                for (int i = m - 1; i >= l; --i) {
                    double f = s * e[i], b = c * e[i];
                    r = std::hypot(f, g);
                    e[i + 1] = r;
                    if (r == 0.0) {
                        d[i + 1] -= p;
                        e[m] = 0.0;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[i + 1] - p;
                    r = (d[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[i + 1] = g + p;
                    g = c * r - b;
                    for (int k = 0; k < n; ++k) {
                        double fz = z[k][i + 1];
                        z[k][i + 1] = s * z[k][i] + c * fz;
                        z[k][i] = c * z[k][i] - s * fz;
                    }
                }
                if (r == 0.0 && m - 1 >= l) continue;
                d[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        } while (m != l);
    }
    // sort ascending, carry first row of z
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return d[a] < d[b]; });
    std::vector<double> ds(n);
    for (int i = 0; i < n; ++i) {
        ds[i] = d[order[i]];
        first_comp[i] = z[0][order[i]];
    }
    d = ds;
}

}  // namespace detail

inline QuadratureRule gauss_hermite(int n) {
    std::vector<double> d(n, 0.0), e(n - 1);
    for (int k = 1; k < n; ++k) e[k - 1] = std::sqrt(k / 2.0);
    std::vector<double> fc;
    detail::tridiag_eigen(d, e, fc);
    QuadratureRule q;
    q.nodes = d;
    q.weights.resize(n);
    const double mu0 = std::sqrt(M_PI);  // integral of exp(-x^2)
    for (int i = 0; i < n; ++i) q.weights[i] = mu0 * fc[i] * fc[i];
    return q;
}

// ---------------------------------------------------------------------------
// Heat engine

class HeatEngine {
  public:
    explicit HeatEngine(const GridSpec& spec, std::uint64_t seed = 1234) : spec_(spec) {
        lambda_max_ = estimate_spectral_radius(seed);
        step_ = 1.9 / lambda_max_;
        state_ = delta_field(spec_);
        time_ = 0.0;
    }

    double spectral_radius() const { return lambda_max_; }
    double step() const { return step_; }
    double time() const { return time_; }

    // advance the delta evolution to the given time (must be >= current)
    const GridField& advance_to(double t) {
        if (t < time_ - 1e-12) throw std::invalid_argument("HeatEngine: cannot step backwards");
        GridField lap(spec_);
        double l2_prev = l2_norm(state_);
        long iter_since_check = 0;
        while (time_ < t - 1e-15) {
            double h = std::min(step_, t - time_);
            sublaplacian_apply(state_, lap);
            for (std::size_t i = 0; i < state_.values.size(); ++i)
                state_.values[i] -= h * lap.values[i];
            time_ += h;
            if (++iter_since_check >= 512) {
                iter_since_check = 0;
                double l2 = l2_norm(state_);
                if (l2 > l2_prev * (1.0 + 1e-6)) {
                    std::ostringstream os;
                    os << "heat_kernel: instability detected (L2 grew from " << l2_prev << " to "
                       << l2 << "); retry with step below " << step_ / 2.0;
                    throw std::runtime_error(os.str());
                }
                l2_prev = l2;
            }
        }
        return state_;
    }

  private:
    double estimate_spectral_radius(std::uint64_t seed) {
        Rng rng(seed);
        GridField v(spec_);
        for (auto& x : v.values) x = cplx(rng.normal(), 0.0);
        double nrm = l2_norm(v);
        for (auto& x : v.values) x /= nrm;
        GridField w(spec_);
        double lam = 1.0;
        for (int it = 0; it < 30; ++it) {
            sublaplacian_apply(v, w);
            lam = l2_norm(w);
            if (lam < 1e-300) break;
            for (std::size_t i = 0; i < v.values.size(); ++i) v.values[i] = w.values[i] / lam;
        }
        return lam * 1.05;
    }

    GridSpec spec_;
    GridField state_;
    double time_ = 0.0, step_ = 0.0, lambda_max_ = 0.0;
};

namespace detail {

struct KernelCache {
    std::mutex mu;
    std::map<std::pair<std::uint64_t, long long>, GridField> heat;   // (spec, r*1e12)
    std::map<std::tuple<std::uint64_t, long long, int>, GridField> poisson;
};

inline KernelCache& kernel_cache() {
    static KernelCache c;
    return c;
}

}  // namespace detail

struct HeatDiagnostics {
    double mass = 0.0;            // integral of the kernel
    double mass_drift = 0.0;      // |mass - 1|
    double step = 0.0;
    double spectral_radius = 0.0;
};

inline GridField heat_kernel(double r, const GridSpec& spec, HeatDiagnostics* diag = nullptr) {
    if (!(r > 0.0)) throw std::domain_error("heat_kernel: r > 0 required");
    auto key = std::make_pair(spec.hash(), static_cast<long long>(std::llround(r * 1e12)));
    {
        std::lock_guard<std::mutex> lk(detail::kernel_cache().mu);
        auto it = detail::kernel_cache().heat.find(key);
        if (it != detail::kernel_cache().heat.end()) {
            if (diag) {
                diag->mass = integral(it->second).real();
                diag->mass_drift = std::abs(diag->mass - 1.0);
            }
            return it->second;
        }
    }
    HeatEngine eng(spec);
    GridField h = eng.advance_to(r);
    if (diag) {
        diag->mass = integral(h).real();
        diag->mass_drift = std::abs(diag->mass - 1.0);
        diag->step = eng.step();
        diag->spectral_radius = eng.spectral_radius();
    }
    std::lock_guard<std::mutex> lk(detail::kernel_cache().mu);
    detail::kernel_cache().heat.emplace(key, h);
    return h;
}

// several times from one sweep
inline std::vector<GridField> heat_trajectory(const GridSpec& spec, std::vector<double> times) {
    std::sort(times.begin(), times.end());
    HeatEngine eng(spec);
    std::vector<GridField> out;
    out.reserve(times.size());
    for (double t : times) out.push_back(eng.advance_to(t));
    return out;
}

struct PoissonDiagnostics {
    double mass = 0.0;
    int nodes = 0;
    double node_doubling_l2 = -1.0;  // relative change 64 -> 128 when checked
};

// Subordinated Poisson kernel of e^{-r sqrt(L)}.
inline GridField poisson_kernel(double r, const GridSpec& spec, int nodes = 64,
                                PoissonDiagnostics* diag = nullptr) {
    if (!(r > 0.0)) throw std::domain_error("poisson_kernel: r > 0 required");
    auto key = std::make_tuple(spec.hash(), static_cast<long long>(std::llround(r * 1e12)), nodes);
    {
        std::lock_guard<std::mutex> lk(detail::kernel_cache().mu);
        auto it = detail::kernel_cache().poisson.find(key);
        if (it != detail::kernel_cache().poisson.end()) {
            if (diag) {
                diag->mass = integral(it->second).real();
                diag->nodes = nodes;
            }
            return it->second;
        }
    }
    QuadratureRule gh = gauss_hermite(nodes);
    // v = u^2 over positive nodes; heat times r^2/(4 v)
    std::vector<double> times;
    std::vector<double> weights;
    for (int i = 0; i < nodes; ++i) {
        if (gh.nodes[i] <= 0.0) continue;
        double v = gh.nodes[i] * gh.nodes[i];
        times.push_back(r * r / (4.0 * v));
        weights.push_back(2.0 * gh.weights[i] / std::sqrt(M_PI));
    }
    // one sweep, ascending times; weights follow the same order
    std::vector<std::size_t> order(times.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return times[a] < times[b];
    });
    HeatEngine eng(spec);
    GridField acc(spec);
    for (std::size_t oi : order) {
        const GridField& h = eng.advance_to(times[oi]);
        double w = weights[oi];
        for (std::size_t i = 0; i < acc.values.size(); ++i) acc.values[i] += w * h.values[i];
    }
    if (diag) {
        diag->mass = integral(acc).real();
        diag->nodes = nodes;
    }
    std::lock_guard<std::mutex> lk(detail::kernel_cache().mu);
    detail::kernel_cache().poisson.emplace(key, acc);
    return acc;
}

// classical Poisson kernel s / (pi (s^2 + t^2)) on a line
inline Line poisson_1d(double s, double half_extent, int n, bool periodic = false) {
    if (!(s > 0.0)) throw std::domain_error("poisson_1d: s > 0 required");
    Line k(half_extent, n, periodic);
    for (int i = 0; i < n; ++i) {
        double t = k.coord(i);
        k.values[i] = cplx(s / (M_PI * (s * s + t * t)), 0.0);
    }
    return k;
}

// p_{r,s} = p^{(1)}_r *2 p^{(2)}_s
inline GridField flag_poisson(double r, double s, const GridSpec& spec, int nodes = 64) {
    GridField p1 = poisson_kernel(r, spec, nodes);
    Line p2 = poisson_1d(s, spec.T, spec.n_t, spec.t_periodic);
    return conv2(p1, p2);
}

// ---------------------------------------------------------------------------
// Singular kernels (origin cell zeroed; principal-value sense)

// k_PS(z,t) = omega(z) / ((|z|^2+t^2)^nu (|z|^2+it)), omega homogeneous of
// degree 0 with mean zero on the unit sphere (checked by quadrature).
inline GridField phong_stein_kernel(const GridSpec& spec,
                                    const std::function<cplx(const std::vector<double>&)>& omega,
                                    double mean_tol = 1e-6, int zero_cells = 1) {
    // sphere mean-zero check
    cplx mean(0.0);
    if (spec.nu == 1) {
        const int nq = 512;
        for (int i = 0; i < nq; ++i) {
            double th = 2.0 * M_PI * i / nq;
            mean += omega({std::cos(th), std::sin(th)});
        }
        mean /= static_cast<double>(nq);
    } else {
        Rng rng(99);
        const int nq = 100000;
        for (int i = 0; i < nq; ++i) {
            std::vector<double> u(2 * spec.nu);
            double nrm = 0.0;
            for (auto& v : u) {
                v = rng.normal();
                nrm += v * v;
            }
            nrm = std::sqrt(nrm);
            for (auto& v : u) v /= nrm;
            mean += omega(u);
        }
        mean /= static_cast<double>(100000);
    }
    if (std::abs(mean) > mean_tol)
        throw std::runtime_error("phong_stein_kernel: omega sphere mean exceeds tolerance");

    GridField k(spec);
    k.fill([&](const HPoint& p) -> cplx {
        double z2 = 0.0;
        std::vector<double> dir(2 * spec.nu);
        for (int a = 0; a < spec.nu; ++a) {
            z2 += p.x[a] * p.x[a] + p.y[a] * p.y[a];
            dir[a] = p.x[a];
            dir[a + spec.nu] = p.y[a];
        }
        double zn = std::sqrt(z2);
        if (zn == 0.0) return cplx(0.0);
        for (auto& v : dir) v /= zn;
        cplx om = omega(dir);
        cplx denom = std::pow(z2 + p.t * p.t, static_cast<double>(spec.nu)) * cplx(z2, p.t);
        return om / denom;
    });
    // zero a (2*zero_cells-1)-wide cube of cells around the origin
    detail::ZTable zt(spec);
    const int c = spec.n_z / 2, ct = spec.n_t / 2;
    for (std::size_t z = 0; z < spec.n_z_total(); ++z) {
        bool near = true;
        for (int a = 0; a < spec.z_axes(); ++a)
            if (std::abs(zt.idx[z][a] - c) >= zero_cells) near = false;
        if (!near) continue;
        for (int t = ct - zero_cells + 1; t <= ct + zero_cells - 1; ++t)
            if (t >= 0 && t < spec.n_t) k.values[z * spec.n_t + t] = 0.0;
    }
    return k;
}

// k_CS(z,t) = c / (|z|^2 + it)^{nu+1}
inline GridField cauchy_szego_kernel(const GridSpec& spec, double c = 1.0, int zero_cells = 1) {
    GridField k(spec);
    k.fill([&](const HPoint& p) -> cplx {
        double z2 = 0.0;
        for (int a = 0; a < spec.nu; ++a) z2 += p.x[a] * p.x[a] + p.y[a] * p.y[a];
        if (z2 == 0.0 && p.t == 0.0) return cplx(0.0);
        return c / std::pow(cplx(z2, p.t), spec.nu + 1.0);
    });
    detail::ZTable zt(spec);
    const int cc = spec.n_z / 2, ct = spec.n_t / 2;
    for (std::size_t z = 0; z < spec.n_z_total(); ++z) {
        bool near = true;
        for (int a = 0; a < spec.z_axes(); ++a)
            if (std::abs(zt.idx[z][a] - cc) >= zero_cells) near = false;
        if (!near) continue;
        for (int t = ct - zero_cells + 1; t <= ct + zero_cells - 1; ++t)
            if (t >= 0 && t < spec.n_t) k.values[z * spec.n_t + t] = 0.0;
    }
    return k;
}

}  // namespace heisenflag
