#pragma once

// Joint functional calculus for (L, iT) on a periodic-t grid: Fourier
// transform in t, then a dense Hermitian eigendecomposition of the twisted
// operator per t-frequency. The twisted matrices are the exact t-Fourier
// conjugates of the sublaplacian stencil, so polynomial identities between
// the calculus and the stencil hold to rounding.
//
// Mode conventions (index m, frequency integer mt = m <= n_t/2 ? m : m - n_t):
//   lambda  = pi * mt / T                     physical frequency of i d/dt
//   sigma   = sin(2 pi m / n_t) / dt          symbol of the centred D_t
//   omega2  = (2 - 2 cos(2 pi m / n_t))/dt^2  symbol of -Delta_t (compact)
// Multiplier evaluators receive (mu, lambda); the lambda = 0 fibre of flag
// multipliers m(L/|T|, iT) is mapped to 0.

#include <filesystem>
#include <functional>
#include <memory>

#include <Eigen/Dense>

#include "field_ops.hpp"

namespace heisenflag {

struct Multiplier2D {
    std::function<cplx(double mu, double lambda)> eval;
    std::string name = "multiplier";
    double sobolev_alpha = -1.0;  // metadata when known
    double sobolev_beta = -1.0;

    cplx operator()(double mu, double lambda) const { return eval(mu, lambda); }
};

inline Multiplier2D make_multiplier(std::function<cplx(double, double)> fn, std::string name) {
    Multiplier2D m;
    m.eval = std::move(fn);
    m.name = std::move(name);
    return m;
}

// m(L/|T|, iT): evaluator called at (mu/|lambda|, lambda); 0 on the lambda=0 fibre
inline Multiplier2D flag_multiplier(const Multiplier2D& m) {
    Multiplier2D out;
    out.name = m.name + "(L/|T|,iT)";
    auto inner = m.eval;
    out.eval = [inner](double mu, double lambda) -> cplx {
        if (lambda == 0.0) return cplx(0.0);
        return inner(mu / std::abs(lambda), lambda);
    };
    return out;
}

class SpectralCalculus {
  public:
    struct Mode {
        double lambda = 0.0;   // physical frequency
        double sigma = 0.0;    // centred first-difference symbol
        double omega2 = 0.0;   // compact second-difference symbol
        Eigen::VectorXd evals;
        Eigen::MatrixXcd evecs;  // columns orthonormal
        bool conjugate_of_prev = false;  // mode n_t - m reuses mode m conjugated
        int source_mode = -1;
    };

    GridSpec spec;
    std::vector<Mode> modes;  // size n_t

    static constexpr std::size_t kMaxDim = 4096;

    double max_eigenvalue() const {
        double m = 0.0;
        for (const auto& md : modes)
            if (md.evals.size()) m = std::max(m, md.evals.maxCoeff());
        return m;
    }
    double min_positive_eigenvalue() const {
        double m = std::numeric_limits<double>::infinity();
        for (const auto& md : modes)
            for (Eigen::Index i = 0; i < md.evals.size(); ++i)
                if (md.evals[i] > 1e-12) m = std::min(m, md.evals[i]);
        return m;
    }
};

namespace detail {

// dense twisted matrix for one t-frequency
inline Eigen::MatrixXcd twisted_matrix(const GridSpec& s, double sigma, double omega2) {
    const std::size_t n = s.n_z_total();
    Eigen::MatrixXcd A = Eigen::MatrixXcd::Zero(n, n);
    ZTable zt(s);
    const double dz = s.dz();
    const double inv_h2 = 1.0 / (dz * dz), inv_2h = 1.0 / (2.0 * dz);
    const double c8 = 8.0 * s.nu, c16 = 16.0 * s.nu * s.nu;

    for (std::size_t row = 0; row < n; ++row) {
        // -Delta_z, Dirichlet
        for (int a = 0; a < s.z_axes(); ++a) {
            std::size_t stride = 1;
            for (int b = s.z_axes() - 1; b > a; --b) stride *= s.n_z;
            int pos = zt.idx[row][a];
            A(row, row) += 2.0 * inv_h2;
            if (pos + 1 < s.n_z) A(row, row + stride) -= inv_h2;
            if (pos > 0) A(row, row - stride) -= inv_h2;
        }
        // potential 16 nu^2 omega2 |z|^2
        double r2 = 0.0;
        for (int a = 0; a < s.z_axes(); ++a) r2 += zt.coord[row][a] * zt.coord[row][a];
        A(row, row) += c16 * omega2 * r2;
        // cross term -8 nu (y D_x - x D_y) (i sigma)
        if (sigma != 0.0) {
            for (int j = 0; j < s.nu; ++j) {
                std::size_t sx = 1, sy = 1;
                for (int b = s.z_axes() - 1; b > j; --b) sx *= s.n_z;
                for (int b = s.z_axes() - 1; b > j + s.nu; --b) sy *= s.n_z;
                double yj = zt.coord[row][j + s.nu], xj = zt.coord[row][j];
                cplx coeff_x = cplx(0.0, -c8 * sigma * yj) * inv_2h;
                int px = zt.idx[row][j];
                if (px + 1 < s.n_z) A(row, row + sx) += coeff_x;
                if (px > 0) A(row, row - sx) -= coeff_x;
                cplx coeff_y = cplx(0.0, c8 * sigma * xj) * inv_2h;
                int py = zt.idx[row][j + s.nu];
                if (py + 1 < s.n_z) A(row, row + sy) += coeff_y;
                if (py > 0) A(row, row - sy) -= coeff_y;
            }
        }
    }
    return A;
}

inline std::string eigcache_path(const std::string& dir, std::uint64_t hash, int mode) {
    return dir + "/eig_" + std::to_string(hash) + "_" + std::to_string(mode) + ".bin";
}

inline bool load_mode(const std::string& path, std::uint64_t hash, int mode_idx,
                      SpectralCalculus::Mode& md, std::size_t n) {
    std::ifstream is(path, std::ios::binary);
    if (!is) return false;
    std::string header;
    if (!std::getline(is, header)) return false;
    char expect[160];
    std::snprintf(expect, sizeof expect, "{\"spec_hash\":%llu,\"lambda_index\":%d,\"n\":%zu}",
                  static_cast<unsigned long long>(hash), mode_idx, n);
    if (header != expect) return false;
    md.evals.resize(static_cast<Eigen::Index>(n));
    md.evecs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    is.read(reinterpret_cast<char*>(md.evals.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    is.read(reinterpret_cast<char*>(md.evecs.data()),
            static_cast<std::streamsize>(n * n * sizeof(cplx)));
    return static_cast<bool>(is);
}

inline void store_mode(const std::string& path, std::uint64_t hash, int mode_idx,
                       const SpectralCalculus::Mode& md, std::size_t n) {
    std::ofstream os(path, std::ios::binary);
    if (!os) return;  // cache is best-effort
    char header[160];
    std::snprintf(header, sizeof header, "{\"spec_hash\":%llu,\"lambda_index\":%d,\"n\":%zu}",
                  static_cast<unsigned long long>(hash), mode_idx, n);
    os << header << '\n';
    os.write(reinterpret_cast<const char*>(md.evals.data()),
             static_cast<std::streamsize>(n * sizeof(double)));
    os.write(reinterpret_cast<const char*>(md.evecs.data()),
             static_cast<std::streamsize>(n * n * sizeof(cplx)));
}

}  // namespace detail

inline SpectralCalculus build_calculus(const GridSpec& spec, const std::string& cache_dir = "") {
    if (!spec.t_periodic) throw std::invalid_argument("build_calculus: t_periodic required");
    if (spec.n_t & (spec.n_t - 1))
        throw std::invalid_argument("build_calculus: n_t must be a power of two");
    const std::size_t n = spec.n_z_total();
    if (n > SpectralCalculus::kMaxDim)
        throw std::invalid_argument("build_calculus: z-grid too large for dense eigensolve");

    SpectralCalculus calc;
    calc.spec = spec;
    calc.modes.resize(spec.n_t);
    const double dt = spec.dt();
    if (!cache_dir.empty()) std::filesystem::create_directories(cache_dir);

    for (int m = 0; m <= spec.n_t / 2; ++m) {
        auto& md = calc.modes[m];
        int mt = m;  // signed frequency for m <= n_t/2
        md.lambda = M_PI * mt / spec.T;
        double theta = 2.0 * M_PI * m / spec.n_t;
        md.sigma = std::sin(theta) / dt;
        md.omega2 = (2.0 - 2.0 * std::cos(theta)) / (dt * dt);
        bool loaded = false;
        std::string path;
        if (!cache_dir.empty()) {
            path = detail::eigcache_path(cache_dir, spec.hash(), m);
            loaded = detail::load_mode(path, spec.hash(), m, md, n);
        }
        if (!loaded) {
            Eigen::MatrixXcd A = detail::twisted_matrix(spec, md.sigma, md.omega2);
            double asym = (A - A.adjoint()).cwiseAbs().maxCoeff();
            if (asym > 1e-9)
                throw std::runtime_error("build_calculus: twisted matrix not Hermitian");
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(A);
            if (es.info() != Eigen::Success)
                throw std::runtime_error("build_calculus: eigensolve failed");
            md.evals = es.eigenvalues();
            md.evecs = es.eigenvectors();
            if (!path.empty()) detail::store_mode(path, spec.hash(), m, md, n);
        }
    }
    // negative frequencies: conjugate modes
    for (int m = spec.n_t / 2 + 1; m < spec.n_t; ++m) {
        auto& md = calc.modes[m];
        int mt = m - spec.n_t;
        md.lambda = M_PI * mt / spec.T;
        double theta = 2.0 * M_PI * m / spec.n_t;
        md.sigma = std::sin(theta) / dt;
        md.omega2 = (2.0 - 2.0 * std::cos(theta)) / (dt * dt);
        md.conjugate_of_prev = true;
        md.source_mode = spec.n_t - m;
    }
    return calc;
}

namespace detail {

// FFT of all t-columns (forward or inverse)
inline void fft_columns(const GridSpec& s, std::vector<cplx>& v, bool inverse) {
    const int nt = s.n_t;
    const std::size_t nz = s.n_z_total();
    parallel_for(nz, [&](std::size_t lo, std::size_t hi) {
        std::vector<cplx> buf(nt);
        for (std::size_t z = lo; z < hi; ++z) {
            std::copy(v.begin() + z * nt, v.begin() + (z + 1) * nt, buf.begin());
            fft_pow2(buf, inverse);
            std::copy(buf.begin(), buf.end(), v.begin() + z * nt);
        }
    });
}

}  // namespace detail

// Apply a scalar function of the mode data: fn(eigenvalue, mode) -> cplx.
inline GridField apply_mode_multiplier(
    const SpectralCalculus& calc,
    const std::function<cplx(double, const SpectralCalculus::Mode&)>& fn, const GridField& f) {
    if (f.spec != calc.spec) throw std::invalid_argument("apply_multiplier: spec mismatch");
    const GridSpec& s = calc.spec;
    const int nt = s.n_t;
    const std::size_t nz = s.n_z_total();
    std::vector<cplx> v = f.values;
    detail::fft_columns(s, v, false);

    // gather per-mode vectors, multiply in the eigenbasis, scatter back
    std::vector<int> mode_order(nt);
    for (int m = 0; m < nt; ++m) mode_order[m] = m;
    parallel_for(static_cast<std::size_t>(nt), [&](std::size_t lo, std::size_t hi) {
        Eigen::VectorXcd u(static_cast<Eigen::Index>(nz)), c;
        for (std::size_t mi = lo; mi < hi; ++mi) {
            int m = mode_order[mi];
            const auto& md = calc.modes[m];
            const auto& src = md.conjugate_of_prev ? calc.modes[md.source_mode] : md;
            for (std::size_t z = 0; z < nz; ++z) u[static_cast<Eigen::Index>(z)] = v[z * nt + m];
            if (!md.conjugate_of_prev) {
                c = src.evecs.adjoint() * u;
                for (Eigen::Index i = 0; i < c.size(); ++i) c[i] *= fn(src.evals[i], md);
                u = src.evecs * c;
            } else {
                // A_m = conj(A_src): eigenvectors conjugate, eigenvalues equal
                c = src.evecs.transpose() * u;
                for (Eigen::Index i = 0; i < c.size(); ++i) c[i] *= fn(src.evals[i], md);
                u = src.evecs.conjugate() * c;
            }
            for (std::size_t z = 0; z < nz; ++z) v[z * nt + m] = u[static_cast<Eigen::Index>(z)];
        }
    });
    detail::fft_columns(s, v, true);
    GridField out(s);
    out.values = std::move(v);
    return out;
}

inline GridField apply_multiplier(const SpectralCalculus& calc, const Multiplier2D& m,
                                  const GridField& f) {
    GridField out = apply_mode_multiplier(
        calc,
        [&m](double mu, const SpectralCalculus::Mode& md) { return m.eval(mu, md.lambda); }, f);
    for (const auto& v : out.values)
        if (std::isnan(v.real()) || std::isnan(v.imag()))
            throw std::runtime_error("apply_multiplier: NaN from evaluator");
    return out;
}

// per-mode Parseval energies: sum_i |<v_i, u_m>|^2 weighted like l2_norm
inline double parseval_energy(const SpectralCalculus& calc, const GridField& f) {
    const GridSpec& s = calc.spec;
    const int nt = s.n_t;
    std::vector<cplx> v = f.values;
    detail::fft_columns(s, v, false);
    std::vector<double> terms(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) terms[i] = std::norm(v[i]);
    // Parseval: (1/nt) sum_m |hat|^2 = sum_t |f|^2
    return pairwise_sum(terms) * s.cell_volume() / nt;
}

// ---------------------------------------------------------------------------
// Dyadic partitions of unity

// Smooth step: 0 for x <= 1/2, 1 for x >= 1, C^inf monotone between.
inline double smooth_step(double x) {
    if (x <= 0.5) return 0.0;
    if (x >= 1.0) return 1.0;
    auto bump = [](double u) { return u > 0.0 ? std::exp(-1.0 / u) : 0.0; };
    double u = 2.0 * x - 1.0;
    double a = bump(u), b = bump(1.0 - u);
    return a / (a + b);
}

// eta(x) = theta(x) - theta(x/ratio); supp in [1/2, ratio];
// sum_j eta(x / ratio^j) telescopes to 1 on the covered band.
struct DyadicPartition {
    double ratio = 2.0;
    int j_lo = 0, j_hi = 0;
    bool squared = false;  // when set, pieces satisfy sum_j piece^2 = 1

    double eta(double x) const { return smooth_step(x) - smooth_step(x / ratio); }

    double G(double x) const {  // sum of eta_j^2 over all j (multiplicatively periodic)
        double g = 0.0;
        // only O(1) terms are nonzero near x
        double lg = std::log(x) / std::log(ratio);
        int j0 = static_cast<int>(std::floor(lg));
        for (int j = j0 - 2; j <= j0 + 2; ++j) {
            double e = eta(x / std::pow(ratio, j));
            g += e * e;
        }
        return g;
    }

    double piece(int j, double x) const {
        if (x <= 0.0) return 0.0;
        double e = eta(x / std::pow(ratio, j));
        if (!squared) return e;
        if (e == 0.0) return 0.0;
        double g = G(x);
        return g > 1e-300 ? e / std::sqrt(g) : 0.0;
    }

    // band on which the (plain) telescoping sum is exactly 1
    std::pair<double, double> covered_band() const {
        return {std::pow(ratio, j_lo), std::pow(ratio, j_hi + 1) / 2.0};
    }
};

inline DyadicPartition dyadic_partition(int j_lo, int j_hi, double ratio = 2.0,
                                        bool squared = false) {
    DyadicPartition p;
    p.ratio = ratio;
    p.j_lo = j_lo;
    p.j_hi = j_hi;
    p.squared = squared;
    return p;
}

// ---------------------------------------------------------------------------
// Marcinkiewicz machinery

// K_{j,l}: kernel of m(L/|T|, iT) Psi1(2^{-j} L/|T|) Psi2(2^{-l} iT)
inline GridField multiplier_piece(const SpectralCalculus& calc, const Multiplier2D& m, int j,
                                  int ell, const std::function<double(double)>& psi1,
                                  const std::function<double(double)>& psi2) {
    GridField d = delta_field(calc.spec);
    auto inner = m.eval;
    double tj = std::pow(2.0, -j), tl = std::pow(2.0, -ell);
    return apply_mode_multiplier(
        calc,
        [&](double mu, const SpectralCalculus::Mode& md) -> cplx {
            double lam = md.lambda;
            if (lam == 0.0) return cplx(0.0);
            double ratio = mu / std::abs(lam);
            return inner(ratio, lam) * psi1(tj * ratio) * psi2(tl * lam);
        },
        d);
}

// w^eps_{j,l}(z,t) = 2^{-nu(j+l)} (1+2^{j+l}|z|^2)^{nu(1+eps)} 2^{-l} (1+2^l |t|)^{1+eps}
inline GridField mrs_weight(int j, int ell, double eps, const GridSpec& spec) {
    if (!(eps > 0.0)) throw std::domain_error("mrs_weight: eps > 0 required");
    GridField w(spec);
    const double cjl = std::pow(2.0, j + ell), cl = std::pow(2.0, ell);
    const double njl = std::pow(2.0, -static_cast<double>(spec.nu) * (j + ell));
    const double nl = std::pow(2.0, -static_cast<double>(ell));
    w.fill([&](const HPoint& p) {
        double z2 = 0.0;
        for (int a = 0; a < spec.nu; ++a) z2 += p.x[a] * p.x[a] + p.y[a] * p.y[a];
        double w1 = njl * std::pow(1.0 + cjl * z2, spec.nu * (1.0 + eps));
        double w2 = nl * std::pow(1.0 + cl * std::abs(p.t), 1.0 + eps);
        return cplx(w1 * w2, 0.0);
    });
    return w;
}

inline double weighted_kernel_norm(const GridField& K, const GridField& w) {
    if (K.spec != w.spec) throw std::invalid_argument("weighted_kernel_norm: spec mismatch");
    std::vector<double> terms(K.values.size());
    for (std::size_t i = 0; i < terms.size(); ++i)
        terms[i] = std::norm(K.values[i]) * w.values[i].real();
    return std::sqrt(pairwise_sum(terms) * K.spec.cell_volume());
}

// Two-parameter Sobolev norm of a compactly supported symbol on
// [-L1,L1]x[-L2,L2], by FFT quadrature.
inline double sobolev_norm(const std::function<cplx(double, double)>& m, double alpha, double beta,
                           double L1, double L2, int n = 256) {
    if (n & (n - 1)) throw std::invalid_argument("sobolev_norm: n must be a power of two");
    std::vector<cplx> grid(static_cast<std::size_t>(n) * n);
    double d1 = 2.0 * L1 / n, d2 = 2.0 * L2 / n;
    for (int i = 0; i < n; ++i) {
        double x1 = -L1 + i * d1;
        for (int k = 0; k < n; ++k) {
            double x2 = -L2 + k * d2;
            grid[static_cast<std::size_t>(i) * n + k] = m(x1, x2);
        }
    }
    // 2D FFT
    std::vector<cplx> buf(n);
    for (int i = 0; i < n; ++i) {
        std::copy(grid.begin() + static_cast<std::size_t>(i) * n,
                  grid.begin() + static_cast<std::size_t>(i + 1) * n, buf.begin());
        fft_pow2(buf, false);
        std::copy(buf.begin(), buf.end(), grid.begin() + static_cast<std::size_t>(i) * n);
    }
    for (int k = 0; k < n; ++k) {
        for (int i = 0; i < n; ++i) buf[i] = grid[static_cast<std::size_t>(i) * n + k];
        fft_pow2(buf, false);
        for (int i = 0; i < n; ++i) grid[static_cast<std::size_t>(i) * n + k] = buf[i];
    }
    // hat m(xi) ~ FFT * d1*d2; frequencies xi = 2 pi f / (2L), f signed
    std::vector<double> terms(grid.size());
    for (int i = 0; i < n; ++i) {
        int fi = i <= n / 2 ? i : i - n;
        double xi1 = M_PI * fi / L1;
        for (int k = 0; k < n; ++k) {
            int fk = k <= n / 2 ? k : k - n;
            double xi2 = M_PI * fk / L2;
            double w = std::pow(1.0 + std::abs(xi1), alpha) *
                       std::pow(1.0 + std::abs(xi1) + std::abs(xi2), beta);
            terms[static_cast<std::size_t>(i) * n + k] =
                w * std::norm(grid[static_cast<std::size_t>(i) * n + k] * d1 * d2 /
                              (2.0 * M_PI));
        }
    }
    // dxi = 2 pi / (2L)
    double dxi1 = M_PI / L1, dxi2 = M_PI / L2;
    return std::sqrt(pairwise_sum(terms) * dxi1 * dxi2);
}

// Measured operator norm of 1_F eta(2^{-j} L) 1_E, with the off-diagonal
// reference value (2^{j/2} d_K(E,F))^{-s}.
struct OffDiagonalResult {
    double op_norm = 0.0;
    double gap = 0.0;
    double reference = 0.0;  // (2^{j/2} gap)^{-s}
    bool vacuous = false;    // E and F intersect
};

inline OffDiagonalResult off_diagonal_check(const SpectralCalculus& calc,
                                            const std::function<double(double)>& eta, int j,
                                            const GridSet& E, const GridSet& F, double s_order,
                                            int iterations = 40, std::uint64_t seed = 7) {
    if (E.spec != calc.spec || F.spec != calc.spec)
        throw std::invalid_argument("off_diagonal_check: spec mismatch");
    OffDiagonalResult res;
    GroupContext ctx(calc.spec.nu);
    // Koranyi gap over masked samples
    GridField probe(calc.spec);
    std::vector<std::size_t> ei, fi;
    for (std::size_t i = 0; i < E.mask.size(); ++i) {
        if (E.mask[i]) ei.push_back(i);
        if (F.mask[i]) fi.push_back(i);
    }
    if (ei.empty() || fi.empty()) throw std::invalid_argument("off_diagonal_check: empty set");
    double gap = std::numeric_limits<double>::infinity();
    for (auto a : ei) {
        HPoint pa = probe.point(a);
        for (auto b : fi) gap = std::min(gap, distance(ctx, pa, probe.point(b), Metric::Koranyi));
    }
    res.gap = gap;
    if (gap <= 0.0) {
        res.vacuous = true;
    }
    double tj = std::pow(2.0, -j);
    auto op = [&](const GridField& v) {
        GridField w = v;
        for (std::size_t i = 0; i < w.values.size(); ++i)
            if (!E.mask[i]) w.values[i] = 0.0;
        w = apply_mode_multiplier(
            calc, [&](double mu, const SpectralCalculus::Mode&) { return cplx(eta(tj * mu)); },
            w);
        for (std::size_t i = 0; i < w.values.size(); ++i)
            if (!F.mask[i]) w.values[i] = 0.0;
        return w;
    };
    auto opT = [&](const GridField& v) {
        GridField w = v;
        for (std::size_t i = 0; i < w.values.size(); ++i)
            if (!F.mask[i]) w.values[i] = 0.0;
        w = apply_mode_multiplier(
            calc, [&](double mu, const SpectralCalculus::Mode&) { return cplx(eta(tj * mu)); },
            w);
        for (std::size_t i = 0; i < w.values.size(); ++i)
            if (!E.mask[i]) w.values[i] = 0.0;
        return w;
    };
    Rng rng(seed);
    GridField v(calc.spec);
    for (auto& x : v.values) x = cplx(rng.normal(), rng.normal());
    double nrm = l2_norm(v);
    for (auto& x : v.values) x /= nrm;
    double lam = 0.0;
    for (int it = 0; it < iterations; ++it) {
        GridField w = opT(op(v));
        lam = std::abs(inner(v, w));
        double wn = l2_norm(w);
        if (wn < 1e-300) {
            lam = 0.0;
            break;
        }
        for (auto& x : w.values) x /= wn;
        v = std::move(w);
    }
    res.op_norm = std::sqrt(std::max(0.0, lam));
    if (!res.vacuous && gap > 0.0)
        res.reference = std::pow(std::pow(2.0, j / 2.0) * gap, -s_order);
    return res;
}

}  // namespace heisenflag
