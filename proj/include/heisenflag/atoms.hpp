#pragma once

// Particles, atoms, and the constructive atomic decomposition driven by the
// area function: level sets Omega_l, rectangle families B_l, enlarged sets
// Omega~_l, tents over adapted rectangles, and coefficients lambda_l.
//
// Discrete synthesis scheme. The psi-side of the reproducing pair must have
// compactly supported kernels (that is what confines b_R to R*), so per scale
// cell (m, n) we take the kernel of a bounded two-parameter bump, hard-
// truncate it with a smooth taper to the tube T(o, q, h) of the cell's tent
// shape, and define
//     A_{m,n} v := L^M Delta^N [ (v) *1 ktrunc_{m,n} ],
//     G := sum_{m,n} A_{m,n} P_{m,n},
// where P_{m,n} are bounded spectral analysis pieces that telescope exactly
// against the untruncated symbols. Truncation makes G = I - E with a small
// defect E, so w := G^{-1} f is computed by Richardson iteration (the same
// inversion device the continuum theory uses for its reproducing formula).
// Splitting P_{m,n} w over the tent rectangles and pushing each mask through
// A_{m,n} then reconstructs f exactly up to the measured solver residual:
//   * supp b_R inside R* holds exactly (lattice support algebra),
//   * a_R = L^M Delta^N b_R holds to rounding (it is the definition),
//   * sum of lambda_l a_l + residual = f holds to rounding.

#include <filesystem>

#include "io.hpp"
#include "operators.hpp"
#include "tiling.hpp"

namespace heisenflag {

struct Particle {
    AdaptedRect rect;
    GridField b;
    GridField a;  // = L^M Delta^N b
    int M = 2, N = 1;
    double kappa = 3.0;
};

struct Atom {
    GridSet omega;                   // the enlarged level set
    std::vector<Particle> particles;
    GridField sum;                   // sum of particle a's (the atom itself)
};

struct AtomicDecomposition {
    std::vector<int> levels;
    std::vector<double> lambdas;        // normalised coefficients (A2-safe)
    std::vector<double> lambdas_paper;  // |F_l|_2 |Omega~_l|^{1/2} variant
    std::vector<Atom> atoms;
    GridField residual;
    GridField input;
    double area_l1 = 0.0;      // |S_area f|_1 used for the level sets
    double solver_residual = 0.0;
    int solver_iterations = 0;
    bool band_warning = false;
    std::string log;

    double lambda_sum() const {
        double s = 0.0;
        for (double l : lambdas) s += std::abs(l);
        return s;
    }
};

// default M per the standing hypotheses: smallest integer > nu/2
inline int default_M(int nu) { return nu / 2 + 1; }

inline GridField iterate_op(const GridField& f, int times, bool central) {
    GridField cur = f;
    for (int k = 0; k < times; ++k) cur = central ? central_laplacian(cur) : sublaplacian(cur);
    return cur;
}

// ---------------------------------------------------------------------------
// Particle construction and validation

struct SupportViolation {
    std::size_t count = 0;
    std::vector<std::size_t> first_samples;
    double max_abs = 0.0;
};

inline Particle make_particle(const GroupContext& ctx, const TileFunction& tf, const GridField& b,
                              const AdaptedRect& R, int M, int N, double kappa,
                              SupportViolation* violation = nullptr) {
    if (M <= ctx.nu / 2.0) throw std::invalid_argument("make_particle: need M > nu/2");
    if (N < 1) throw std::invalid_argument("make_particle: need N >= 1");
    Tube star = enlarge(ctx, tf, R, kappa);
    double bmax = lp_norm(b, std::numeric_limits<double>::infinity());
    SupportViolation v;
    for (std::size_t i = 0; i < b.values.size(); ++i) {
        if (std::abs(b.values[i]) <= 1e-12 * bmax) continue;
        if (!tube_contains(ctx, star, b.point(i))) {
            if (v.first_samples.size() < 8) v.first_samples.push_back(i);
            ++v.count;
            v.max_abs = std::max(v.max_abs, std::abs(b.values[i]));
        }
    }
    if (violation) *violation = v;
    if (v.count) {
        std::ostringstream os;
        os << "make_particle: " << v.count << " samples of b outside R* (max |b| " << v.max_abs
           << "), first flat index " << v.first_samples.front();
        throw std::runtime_error(os.str());
    }
    Particle p;
    p.rect = R;
    p.b = b;
    p.a = iterate_op(iterate_op(b, N, true), M, false);
    p.M = M;
    p.N = N;
    p.kappa = kappa;
    return p;
}

struct AtomValidation {
    double max_sign_ratio = 0.0;   // max over draws of |a_sigma|_2 |Omega|^{1/2}
    double l2_sum_ratio = 0.0;     // sum |a_R|_2^2 * |Omega|
    int n_signs = 0;
    std::uint64_t seed = 0;
};

inline AtomValidation validate_atom(const Atom& atom, int n_signs, std::uint64_t seed) {
    AtomValidation rep;
    rep.n_signs = n_signs;
    rep.seed = seed;
    double om = atom.omega.measure();
    if (atom.particles.empty() || om <= 0.0) return rep;
    double l2sum = 0.0;
    for (const auto& p : atom.particles) {
        double n = l2_norm(p.a);
        l2sum += n * n;
    }
    rep.l2_sum_ratio = l2sum * om;
    Rng rng(seed);
    for (int d = 0; d < n_signs; ++d) {
        GridField s(atom.omega.spec);
        for (const auto& p : atom.particles) {
            double sgn = rng.sign();
            for (std::size_t i = 0; i < s.values.size(); ++i) s.values[i] += sgn * p.a.values[i];
        }
        rep.max_sign_ratio = std::max(rep.max_sign_ratio, l2_norm(s) * std::sqrt(om));
    }
    return rep;
}

// ---------------------------------------------------------------------------
// The analysis/synthesis machinery

// smooth window equal to 1 on [1/4, 8], supported in [1/8, 16]
inline double synthesis_window(double x) {
    if (x <= 0.0) return 0.0;
    return smooth_step(4.0 * x) * (1.0 - smooth_step(x / 16.0));
}

struct DecompositionFamily {
    const SpectralCalculus* calc = nullptr;
    int M = 2, N = 1;
    DyadicPartition pm, pl;  // plain base-4 partitions (telescoping sums)
    std::vector<int> ms, ns;

    // untruncated a-side window W(x) = x^P rho(x) at x = 4^m mu (resp. 4^n w2)
    double W1(double x) const { return std::pow(x, M) * synthesis_window(x); }
    double W2(double y) const { return std::pow(y, N) * synthesis_window(y); }

    double G1(double mu) const {
        double g = 0.0;
        for (int m : ms) {
            double x = std::ldexp(mu, 2 * m);
            double e = pm.eta(x);
            if (e != 0.0) g += e * W1(x);
        }
        return g;
    }
    double G2(double om2) const {
        double g = 0.0;
        for (int n : ns) {
            double y = std::ldexp(om2, 2 * n);
            double e = pl.eta(y);
            if (e != 0.0) g += e * W2(y);
        }
        return g;
    }

    // bounded analysis symbol of the (m, n) piece
    cplx analysis_symbol(int m, int n, double mu, double om2) const {
        if (om2 == 0.0) return cplx(0.0);
        double x = std::ldexp(mu, 2 * m), y = std::ldexp(om2, 2 * n);
        double e1 = pm.eta(x), e2 = pl.eta(y);
        if (e1 == 0.0 || e2 == 0.0) return cplx(0.0);
        double g1 = G1(mu), g2 = G2(om2);
        if (g1 <= 0.0 || g2 <= 0.0) return cplx(0.0);
        return cplx(e1 / g1 * (e2 / g2));
    }

    // bounded b-side symbol (before kernel truncation)
    double b_symbol(int m, int n, double mu, double om2) const {
        double x = std::ldexp(mu, 2 * m), y = std::ldexp(om2, 2 * n);
        return std::ldexp(1.0, 2 * m * M + 2 * n * N) * synthesis_window(x) *
               synthesis_window(y);
    }

    bool covered(double mu, double om2, double tol = 1e-9) const {
        if (om2 == 0.0) return false;
        double s1 = 0.0, s2 = 0.0;
        for (int m : ms) s1 += pm.eta(std::ldexp(mu, 2 * m));
        for (int n : ns) s2 += pl.eta(std::ldexp(om2, 2 * n));
        return std::abs(s1 - 1.0) < tol && std::abs(s2 - 1.0) < tol;
    }
};

inline DecompositionFamily make_decomposition_family(const SpectralCalculus& calc, int M, int N,
                                                     int min_cells = 2) {
    DecompositionFamily fam;
    fam.calc = &calc;
    fam.M = M;
    fam.N = N;
    fam.pm = dyadic_partition(0, 0, 4.0, false);
    fam.pl = dyadic_partition(0, 0, 4.0, false);
    double mu_max = calc.max_eigenvalue();
    double mu_min = calc.min_positive_eigenvalue();
    double om_max = 0.0, om_min = std::numeric_limits<double>::infinity();
    for (const auto& md : calc.modes)
        if (md.omega2 > 0.0) {
            om_max = std::max(om_max, md.omega2);
            om_min = std::min(om_min, md.omega2);
        }
    auto range = [](double lo, double hi) {
        int m_lo = static_cast<int>(std::floor(-std::log2(hi) / 2.0)) - 1;
        int m_hi = static_cast<int>(std::ceil(-std::log2(lo) / 2.0)) + 1;
        return std::make_pair(m_lo, m_hi);
    };
    auto [mlo, mhi] = range(mu_min, mu_max);
    auto [nlo, nhi] = range(om_min, om_max);
    // resolvable tents: length scales at least min_cells grid cells
    mlo = std::max(mlo, static_cast<int>(std::ceil(std::log2(min_cells * calc.spec.dz()))));
    nlo = std::max(nlo, static_cast<int>(std::ceil(std::log2(min_cells * calc.spec.dt()))));
    for (int m = mlo; m <= mhi; ++m) fam.ms.push_back(m);
    for (int n = nlo; n <= nhi; ++n) fam.ns.push_back(n);
    return fam;
}

inline GridField decomposition_band_limit(const DecompositionFamily& fam, const GridField& f) {
    return apply_mode_multiplier(
        *fam.calc,
        [&fam](double mu, const SpectralCalculus::Mode& md) -> cplx {
            return fam.covered(mu, md.omega2) ? cplx(1.0) : cplx(0.0);
        },
        f);
}

namespace detail {

// sparse kernel for the lattice-exact small-support convolution
struct SparseKernel {
    struct Tap {
        std::vector<int> dz;  // z-offsets in cells
        int dt = 0;           // t-offset of the kernel sample (value / dt)
        cplx v;
    };
    std::vector<Tap> taps;
    double cell_volume = 0.0;
};

// truncate a sampled kernel to the tube T(o, rz, rt) with a smooth taper that
// starts at `taper_start` of each radius, and collect the significant taps
inline SparseKernel truncate_kernel(const GridField& k, double rz, double rt,
                                    double taper_start = 0.55, double drop_tol = 1e-14) {
    const GridSpec& s = k.spec;
    SparseKernel out;
    out.cell_volume = s.cell_volume();
    double kmax = lp_norm(k, std::numeric_limits<double>::infinity());
    ZTable zt(s);
    const int nt = s.n_t;
    for (std::size_t z = 0; z < s.n_z_total(); ++z) {
        double zr = 0.0;  // sup-norm distance in z, relative to rz
        for (int a = 0; a < s.z_axes(); ++a)
            zr = std::max(zr, std::abs(zt.coord[z][a]) / rz);
        if (zr >= 1.0) continue;
        double wz = zr <= taper_start
                        ? 1.0
                        : 1.0 - smooth_step(0.5 + 0.5 * (zr - taper_start) / (1.0 - taper_start));
        for (int t = 0; t < nt; ++t) {
            double tv = s.t_coord(t);
            double tr = std::abs(tv) / rt;
            if (tr >= 1.0) continue;
            double wt = tr <= taper_start
                            ? 1.0
                            : 1.0 - smooth_step(0.5 +
                                                0.5 * (tr - taper_start) / (1.0 - taper_start));
            cplx v = k.values[z * nt + t] * wz * wt;
            if (std::abs(v) <= drop_tol * kmax) continue;
            SparseKernel::Tap tap;
            tap.dz.resize(s.z_axes());
            for (int a = 0; a < s.z_axes(); ++a) tap.dz[a] = zt.idx[z][a] - s.n_z / 2;
            tap.dt = t - nt / 2;
            tap.v = v;
            out.taps.push_back(std::move(tap));
        }
    }
    return out;
}

// out(g) = sum_w f(g . w^{-1}) k(w) dV, with the twist shift exact on
// lattice-exact grids (rounded otherwise)
inline GridField conv1_sparse(const GridField& f, const SparseKernel& k) {
    const GridSpec& s = f.spec;
    const int nt = s.n_t;
    const std::size_t nz = s.n_z_total();
    const double dz = s.dz(), dt = s.dt(), twist = 4.0 * s.nu;
    ZTable zt(s);
    GridField out(s);
    parallel_for(nz, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t zo = lo; zo < hi; ++zo) {
            cplx* orow = &out.values[zo * nt];
            for (const auto& tap : k.taps) {
                std::size_t zi = 0;
                bool ok = true;
                for (int a = 0; a < s.z_axes(); ++a) {
                    int i = zt.idx[zo][a] - tap.dz[a];
                    if (i < 0 || i >= s.n_z) {
                        ok = false;
                        break;
                    }
                    zi = zi * s.n_z + static_cast<std::size_t>(i);
                }
                if (!ok) continue;
                // g1 = g . w^{-1}: t1 = t - wt - S(z, wz)
                double S = 0.0;
                for (int j = 0; j < s.nu; ++j) {
                    double x = zt.coord[zo][j], y = zt.coord[zo][j + s.nu];
                    S += y * (tap.dz[j] * dz) - x * (tap.dz[j + s.nu] * dz);
                }
                S *= twist;
                int shift = tap.dt + static_cast<int>(std::lround(S / dt));
                const cplx* frow = &f.values[zi * nt];
                cplx kv = tap.v;
                if (s.t_periodic) {
                    for (int to = 0; to < nt; ++to) {
                        int ti = (to - shift) % nt;
                        if (ti < 0) ti += nt;
                        orow[to] += frow[ti] * kv;
                    }
                } else {
                    int lo_t = std::max(0, shift), hi_t = std::min(nt, nt + shift);
                    for (int to = lo_t; to < hi_t; ++to) orow[to] += frow[to - shift] * kv;
                }
            }
            for (int to = 0; to < nt; ++to) orow[to] *= k.cell_volume;
        }
    });
    return out;
}

// fast per-level tile arithmetic over the grid columns
struct TileGridLevel {
    int level = 0;
    std::vector<std::vector<long long>> zi;  // per z-column: cube lattice
    std::vector<double> ftop;                // per z-column: S(zi, z') + f(z')
};

struct TileGrid {
    const GroupContext* ctx;
    const TileFunction* tf;
    GridSpec spec;
    std::map<int, TileGridLevel> levels;

    TileGrid(const GroupContext& c, const TileFunction& f, const GridSpec& s)
        : ctx(&c), tf(&f), spec(s) {}

    const TileGridLevel& level(int j) {
        auto it = levels.find(j);
        if (it != levels.end()) return it->second;
        TileGridLevel L;
        L.level = j;
        double q = tile_width(*ctx, j);
        ZTable zt(spec);
        const std::size_t nz = spec.n_z_total();
        L.zi.resize(nz);
        L.ftop.resize(nz);
        for (std::size_t z = 0; z < nz; ++z) {
            std::vector<double> zp(2 * ctx->nu);
            L.zi[z].resize(2 * ctx->nu);
            for (int a = 0; a < 2 * ctx->nu; ++a) {
                double v = zt.coord[z][a] / q;
                double w = std::floor(v + 0.5);
                L.zi[z][a] = static_cast<long long>(w);
                zp[a] = v - w;
            }
            double S = 0.0;
            for (int jj = 0; jj < ctx->nu; ++jj)
                S += static_cast<double>(L.zi[z][jj + ctx->nu]) * zp[jj] -
                     static_cast<double>(L.zi[z][jj]) * zp[jj + ctx->nu];
            S *= ctx->twist();
            L.ftop[z] = S + (*tf)(zp);
        }
        return levels.emplace(j, std::move(L)).first->second;
    }

    long long locate_ti(const TileGridLevel& L, std::size_t zcol, int tidx) const {
        double q = tile_width(*ctx, L.level);
        double tn = spec.t_coord(tidx) / (q * q);
        double raw = tn - L.ftop[zcol];
        double u = raw * 2.0 * ctx->nu;
        long long ti = static_cast<long long>(std::floor(u)) + 1;
        if (u - std::floor(u) > 1.0 - 1e-13) ++ti;
        return ti;
    }
};

}  // namespace detail

// scale pair (r, s) = (2^m, 2^n) -> rectangle shape (width level, height level)
inline std::pair<int, int> tent_shape(const GroupContext& ctx, int m, int n) {
    const double b = ctx.base();
    double r = std::ldexp(1.0, m), s = std::ldexp(1.0, n);
    int j = static_cast<int>(std::ceil(std::log(r) / std::log(b) - 1e-12));
    int jp = j;
    while (tile_height(ctx, jp) < s - 1e-12) ++jp;
    return {j, jp};
}

struct DecomposeOptions {
    double kappa = 3.0;
    int M = -1, N = 1;          // -1: default_M(nu)
    double alpha = -1.0;        // -1: (2^{2nu} kappa^D (5nu+2))^{-1}
    int max_levels = 32;
    int solver_max_iter = 120;
    double solver_tol = 1e-9;   // relative algebraic residual target
    std::uint64_t seed = 2024;
};

inline AtomicDecomposition atomic_decompose(const GridField& f, const SpectralCalculus& calc,
                                            const TileFunction& tf,
                                            const DecomposeOptions& opt = {}) {
    const GridSpec& spec = calc.spec;
    if (f.spec != spec) throw std::invalid_argument("atomic_decompose: spec mismatch");
    GroupContext ctx(spec.nu);
    const int M = opt.M > 0 ? opt.M : default_M(ctx.nu);
    const int N = opt.N;
    const double kappa = opt.kappa;
    const double alpha = opt.alpha > 0 ? opt.alpha : flag_maximal_floor(ctx, kappa);

    DecompositionFamily fam = make_decomposition_family(calc, M, N);
    AtomicDecomposition out;
    out.input = f;
    out.residual = f;
    if (l2_norm(f) == 0.0) {
        out.log = "zero input";
        return out;
    }

    // per-cell truncated synthesis kernels
    struct Cell {
        int m, n;
        int j, jp;  // tent shape
        detail::SparseKernel kb;
    };
    std::vector<Cell> cells;
    for (int m : fam.ms) {
        for (int n : fam.ns) {
            Cell c;
            c.m = m;
            c.n = n;
            auto [j, jp] = tent_shape(ctx, m, n);
            c.j = j;
            c.jp = jp;
            GridField kfull = apply_mode_multiplier(
                calc,
                [&fam, m, n](double mu, const SpectralCalculus::Mode& md) -> cplx {
                    return cplx(fam.b_symbol(m, n, mu, md.omega2));
                },
                delta_field(spec));
            double q = tile_width(ctx, j), h = tile_height(ctx, jp);
            c.kb = detail::truncate_kernel(kfull, q, h);
            cells.push_back(std::move(c));
        }
    }

    auto analysis_piece = [&](const Cell& c, const GridField& v) {
        return apply_mode_multiplier(
            calc,
            [&fam, &c](double mu, const SpectralCalculus::Mode& md) {
                return fam.analysis_symbol(c.m, c.n, mu, md.omega2);
            },
            v);
    };
    auto synthesis_apply = [&](const Cell& c, const GridField& v) {
        GridField b = detail::conv1_sparse(v, c.kb);
        return iterate_op(iterate_op(b, N, true), M, false);
    };
    auto G_apply = [&](const GridField& v) {
        GridField acc(spec);
        for (const auto& c : cells) {
            GridField g = synthesis_apply(c, analysis_piece(c, v));
            for (std::size_t i = 0; i < acc.values.size(); ++i)
                acc.values[i] += g.values[i];
        }
        return acc;
    };

    // Richardson iteration for w = G^{-1} f
    GridField w = f;
    double fn = l2_norm(f);
    double resn = 0.0;
    int iters = 0;
    for (; iters < opt.solver_max_iter; ++iters) {
        GridField r = G_apply(w);
        for (std::size_t i = 0; i < r.values.size(); ++i)
            r.values[i] = f.values[i] - r.values[i];
        resn = l2_norm(r) / fn;
        if (resn < opt.solver_tol) break;
        if (resn > 1e3) {
            out.log = "synthesis inversion diverged";
            out.band_warning = true;
            return out;
        }
        for (std::size_t i = 0; i < w.values.size(); ++i) w.values[i] += r.values[i];
    }
    out.solver_residual = resn;
    out.solver_iterations = iters;

    // analysis pieces of w
    std::vector<GridField> u;
    u.reserve(cells.size());
    for (const auto& c : cells) u.push_back(analysis_piece(c, w));

    // area function for the level sets (computed from f itself)
    GridField area(spec);
    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
        GridField p = apply_mode_multiplier(
            calc,
            [&fam, &cells, ci](double mu, const SpectralCalculus::Mode& md) -> cplx {
                double x = std::ldexp(mu, 2 * cells[ci].m);
                double y = md.omega2 > 0.0 ? std::ldexp(md.omega2, 2 * cells[ci].n) : 0.0;
                if (y == 0.0) return cplx(0.0);
                return cplx(fam.pm.eta(x) * fam.pl.eta(y));
            },
            f);
        GridField wrk(spec);
        for (std::size_t i = 0; i < wrk.values.size(); ++i)
            wrk.values[i] = std::norm(p.values[i]);
        double r = std::ldexp(1.0, cells[ci].m), s = std::ldexp(1.0, cells[ci].n);
        detail::PrefixColumns pc(wrk);
        wrk = detail::tube_average_pc(pc, r, 0.0);
        wrk = detail::t_box_average(wrk, s);
        for (std::size_t i = 0; i < area.values.size(); ++i) area.values[i] += wrk.values[i];
    }
    for (auto& v : area.values) v = std::sqrt(std::max(0.0, v.real()));
    out.area_l1 = l1_norm(area);

    double amax = 0.0;
    for (const auto& v : area.values) amax = std::max(amax, v.real());
    if (amax <= 0.0) {
        out.log = "zero area function; empty decomposition";
        return out;
    }
    double amin_pos = amax;
    for (const auto& v : area.values)
        if (v.real() > 1e-14 * amax) amin_pos = std::min(amin_pos, v.real());
    int l_hi = static_cast<int>(std::ceil(std::log2(amax)));
    int l_lo = static_cast<int>(std::floor(std::log2(amin_pos)));
    if (l_hi - l_lo + 1 > opt.max_levels) l_lo = l_hi - opt.max_levels + 1;

    // rectangle assignment of every (sample, cell)
    detail::TileGrid tg(ctx, tf, spec);
    struct RectData {
        AdaptedRect R;
        std::vector<std::size_t> cell_ids;
        std::vector<std::vector<std::size_t>> samples_per_cell;
        double energy = 0.0;
        int level = 0;
    };
    std::map<AdaptedRect, RectData> rects;
    const int nt = spec.n_t;
    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
        const auto& Lw = tg.level(cells[ci].j);
        const auto& Lh = tg.level(cells[ci].jp);
        std::map<AdaptedRect, std::vector<std::size_t>> local;
        for (std::size_t z = 0; z < spec.n_z_total(); ++z) {
            for (int t = 0; t < nt; ++t) {
                if (std::norm(u[ci].values[z * nt + t]) == 0.0) continue;
                AdaptedRect R;
                R.width_level = cells[ci].j;
                R.height_level = cells[ci].jp;
                R.zi = Lw.zi[z];
                R.ti = tg.locate_ti(Lh, z, t);
                local[R].push_back(z * nt + t);
            }
        }
        for (auto& kv : local) {
            auto& rd = rects[kv.first];
            rd.R = kv.first;
            rd.cell_ids.push_back(ci);
            double e = 0.0;
            for (auto i : kv.second) e += std::norm(u[ci].values[i]);
            rd.energy += e * spec.cell_volume();
            rd.samples_per_cell.push_back(std::move(kv.second));
        }
    }
    // prune negligible rectangles (their mass lands in the residual, within
    // a 1e-9 relative budget)
    {
        double per_rect = std::pow(1e-9 * fn, 2) / std::max<std::size_t>(rects.size(), 1);
        for (auto it = rects.begin(); it != rects.end();)
            it = it->second.energy <= per_rect ? rects.erase(it) : std::next(it);
    }

    // level sets and enlargements
    std::vector<GridSet> omega(static_cast<std::size_t>(l_hi - l_lo + 1), GridSet(spec));
    for (int l = l_lo; l <= l_hi; ++l) {
        double thr = std::ldexp(1.0, l);
        auto& om = omega[l - l_lo];
        for (std::size_t i = 0; i < area.values.size(); ++i)
            om.mask[i] = area.values[i].real() > thr ? 1 : 0;
    }
    std::vector<GridSet> omega_tilde;
    omega_tilde.reserve(omega.size());
    {
        ScaleGrid sg = ScaleGrid::for_spec(spec);
        for (auto& om : omega) {
            GridSet ot(spec);
            if (!om.empty()) {
                GridField ind(spec);
                for (std::size_t i = 0; i < ind.values.size(); ++i)
                    ind.values[i] = om.mask[i] ? 1.0 : 0.0;
                GridField mf = flag_maximal_over(ind, sg.pairs());
                for (std::size_t i = 0; i < ot.mask.size(); ++i)
                    ot.mask[i] = (mf.values[i].real() > alpha || om.mask[i]) ? 1 : 0;
            }
            omega_tilde.push_back(std::move(ot));
        }
    }

    // assign rectangles to levels by R* density
    const double density_thr = 1.0 / (3.0 * std::pow(kappa, ctx.D()));
    {
        GridField probe(spec);
        for (auto& kv : rects) {
            auto& rd = kv.second;
            Tube star = enlarge(ctx, tf, rd.R, kappa);
            std::vector<std::size_t> star_cells;
            for (std::size_t i = 0; i < spec.size(); ++i)
                if (tube_contains(ctx, star, probe.point(i))) star_cells.push_back(i);
            int assigned = l_lo;
            if (!star_cells.empty()) {
                for (int l = l_hi; l >= l_lo; --l) {
                    std::size_t cnt = 0;
                    const auto& om = omega[l - l_lo];
                    for (auto i : star_cells) cnt += om.mask[i];
                    if (static_cast<double>(cnt) / star_cells.size() > density_thr) {
                        assigned = l;
                        break;
                    }
                }
            }
            rd.level = assigned;
        }
    }

    // synthesis per level
    GridField recon(spec);
    for (int l = l_hi; l >= l_lo; --l) {
        std::vector<const RectData*> members;
        for (auto& kv : rects)
            if (kv.second.level == l) members.push_back(&kv.second);
        if (members.empty()) continue;
        const auto& otilde = omega_tilde[l - l_lo];
        double om_measure = std::max(otilde.measure(), spec.cell_volume());

        Atom atom;
        atom.omega = otilde;
        atom.sum = GridField(spec);
        double Fl2 = 0.0;
        std::vector<GridField> particle_a, particle_b;
        for (const RectData* rd : members) {
            GridField b(spec);
            for (std::size_t ci = 0; ci < rd->cell_ids.size(); ++ci) {
                std::size_t c = rd->cell_ids[ci];
                GridField masked(spec);
                for (auto i : rd->samples_per_cell[ci]) {
                    masked.values[i] = u[c].values[i];
                    Fl2 += std::norm(u[c].values[i]);
                }
                GridField bc = detail::conv1_sparse(masked, cells[c].kb);
                for (std::size_t i = 0; i < b.values.size(); ++i)
                    b.values[i] += bc.values[i];
            }
            particle_b.push_back(b);
            particle_a.push_back(iterate_op(iterate_op(b, N, true), M, false));
        }
        Fl2 *= spec.cell_volume();

        // B_l bounds |sum sigma_R a_R|_2 for every sign pattern
        double B2 = 0.0;
        for (std::size_t i = 0; i < particle_a.size(); ++i) {
            double n = l2_norm(particle_a[i]);
            B2 += n * n;
        }
        for (std::size_t i = 0; i < particle_a.size(); ++i)
            for (std::size_t k = i + 1; k < particle_a.size(); ++k)
                B2 += 2.0 * std::abs(inner(particle_a[i], particle_a[k]));
        double lam = std::sqrt(std::max(B2, 1e-300)) * std::sqrt(om_measure);
        double lam_paper = std::sqrt(Fl2 * om_measure);
        if (!(lam > 0.0)) continue;

        for (std::size_t i = 0; i < particle_a.size(); ++i) {
            Particle p;
            p.rect = members[i]->R;
            p.M = M;
            p.N = N;
            p.kappa = kappa;
            p.b = std::move(particle_b[i]);
            p.a = std::move(particle_a[i]);
            for (auto& x : p.b.values) x /= lam;
            for (auto& x : p.a.values) x /= lam;
            for (std::size_t k = 0; k < atom.sum.values.size(); ++k)
                atom.sum.values[k] += p.a.values[k];
            atom.particles.push_back(std::move(p));
        }
        for (std::size_t k = 0; k < recon.values.size(); ++k)
            recon.values[k] += lam * atom.sum.values[k];
        out.levels.push_back(l);
        out.lambdas.push_back(lam);
        out.lambdas_paper.push_back(lam_paper);
        out.atoms.push_back(std::move(atom));
    }

    out.residual = GridField(spec);
    for (std::size_t i = 0; i < f.values.size(); ++i)
        out.residual.values[i] = f.values[i] - recon.values[i];
    double rel = l2_norm(out.residual) / fn;
    if (rel > 1e-6) {
        out.band_warning = true;
        std::ostringstream os;
        os << "scale band leaves relative residual " << rel;
        out.log = os.str();
    }
    return out;
}

inline GridField reconstruct(const AtomicDecomposition& d) {
    GridField out = d.residual;
    for (std::size_t l = 0; l < d.atoms.size(); ++l)
        for (std::size_t i = 0; i < out.values.size(); ++i)
            out.values[i] += d.lambdas[l] * d.atoms[l].sum.values[i];
    return out;
}

// ---------------------------------------------------------------------------
// Tail decay of operators applied to particles

enum class TailOperator { AreaFn, GrandMaximal, SquareCts };

// int_{(S*)^c} |A a_R| / (rho_{d1,d2}(R,S) |R|^{1/2} |a_R|_2), exponents
// (2N - 1/2, 2M - D/2)
inline double grand_maximal_of_atom_tail(const GroupContext& ctx, const TileFunction& tf,
                                         const Particle& p, const AdaptedRect& S,
                                         TailOperator op, const SpectralCalculus& calc) {
    const GridSpec& spec = p.a.spec;
    GridField applied(spec);
    switch (op) {
        case TailOperator::AreaFn: {
            LPFamily fam = make_lp_family(calc);
            applied = area_fn(p.a, fam, 1.0, 1.0);
            break;
        }
        case TailOperator::SquareCts: {
            LPFamily fam = make_lp_family(calc);
            applied = square_cts(p.a, fam);
            break;
        }
        case TailOperator::GrandMaximal: {
            ScaleGrid sg = ScaleGrid::for_spec(spec);
            applied = grand_maximal(p.a, {poisson_pair(spec, sg)}, sg, 1.0);
            break;
        }
    }
    Tube sstar = enlarge(ctx, tf, S, p.kappa);
    std::vector<double> terms;
    for (std::size_t i = 0; i < applied.values.size(); ++i)
        if (!tube_contains(ctx, sstar, applied.point(i)))
            terms.push_back(std::abs(applied.values[i]));
    double tail = pairwise_sum(terms) * spec.cell_volume();
    double d1 = 2.0 * p.N - 0.5, d2 = 2.0 * p.M - ctx.D() / 2.0;
    double rho = std::pow(rect_height(ctx, p.rect) / rect_height(ctx, S), d1) +
                 std::pow(rect_width(ctx, p.rect) / rect_width(ctx, S), d2);
    double denom = rho * std::sqrt(rect_measure(ctx, p.rect)) * l2_norm(p.a);
    return denom > 0 ? tail / denom : 0.0;
}

// ---------------------------------------------------------------------------
// Serialization: manifest JSON + per-particle .hfld files

inline void write_decomposition(const AtomicDecomposition& d, const std::string& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["levels"] = d.levels;
    manifest["lambdas"] = d.lambdas;
    manifest["lambdas_paper"] = d.lambdas_paper;
    manifest["area_l1"] = d.area_l1;
    manifest["solver_residual"] = d.solver_residual;
    manifest["solver_iterations"] = d.solver_iterations;
    manifest["band_warning"] = d.band_warning;
    manifest["log"] = d.log;
    nlohmann::json atoms = nlohmann::json::array();
    for (std::size_t l = 0; l < d.atoms.size(); ++l) {
        nlohmann::json ja;
        ja["level"] = d.levels[l];
        ja["omega_measure"] = d.atoms[l].omega.measure();
        nlohmann::json parts = nlohmann::json::array();
        for (std::size_t k = 0; k < d.atoms[l].particles.size(); ++k) {
            const auto& p = d.atoms[l].particles[k];
            nlohmann::json jp;
            jp["width_level"] = p.rect.width_level;
            jp["height_level"] = p.rect.height_level;
            jp["zi"] = p.rect.zi;
            jp["ti"] = p.rect.ti;
            jp["M"] = p.M;
            jp["N"] = p.N;
            jp["kappa"] = p.kappa;
            char name[64];
            std::snprintf(name, sizeof name, "particle_%zu_%zu", l, k);
            jp["b_file"] = std::string(name) + "_b.hfld";
            jp["a_file"] = std::string(name) + "_a.hfld";
            write_hfld(dir + "/" + jp["b_file"].get<std::string>(), p.b);
            write_hfld(dir + "/" + jp["a_file"].get<std::string>(), p.a);
            parts.push_back(jp);
        }
        ja["particles"] = parts;
        atoms.push_back(ja);
    }
    manifest["atoms"] = atoms;
    write_hfld(dir + "/residual.hfld", d.residual);
    std::ofstream os(dir + "/manifest.json");
    os << manifest.dump(2) << "\n";
}

}  // namespace heisenflag
