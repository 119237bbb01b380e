#pragma once

// The Hardy-norm functionals as grid operators: flag/iterated/radial/
// nontangential/grand maximal functions, square and area functions built on
// spectral Littlewood-Paley pieces, the central Hilbert transform, and the
// Riesz transforms.
//
// All suprema over (r, s) run over a dyadic ScaleGrid; results should be read
// together with the band. Square/area functions use the squared dyadic
// partitions (ratio 4 in the spectral variable <-> dyadic length scales), so
// the discrete Plancherel identity is exact on the covered band.

#include "flag_core.hpp"
#include "kernels.hpp"
#include "scales.hpp"
#include "spectral.hpp"

namespace heisenflag {

struct ConeSpec {
    double beta = 1.0;
    explicit ConeSpec(double b = 1.0) : beta(b) {
        if (!(beta >= 0.0)) throw std::invalid_argument("ConeSpec: beta >= 0");
    }
};

// ---------------------------------------------------------------------------
// Maximal functions

inline GridField flag_maximal(const GridField& f, const ScaleGrid& scales) {
    return flag_maximal_over(f, scales.pairs());
}

inline GridField iterated_maximal(const GridField& f, const ScaleGrid& scales) {
    GridField out(f.spec);
    for (const auto& rs : scales.pairs()) {
        GridField a = iterated_average(f, rs.first, rs.second);
        for (std::size_t i = 0; i < out.values.size(); ++i)
            out.values[i] = std::max(out.values[i].real(), a.values[i].real());
    }
    return out;
}

// A pair of scale families: phi1(r) a kernel on the group, phi2(s) a kernel
// on the centre; realises phi_{r,s} = phi1_r *2 phi2_s.
struct KernelPair {
    std::string name;
    std::function<GridField(double)> k1;
    std::function<Line(double)> k2;
};

// Flag Poisson pair. The base kernel is subordinated once at the smallest
// requested scale; other scales come from the exact scaling identity
// p_r = r^{-D} p_1 (delta_{1/r} .) via resampling.
inline KernelPair poisson_pair(const GridSpec& spec, const ScaleGrid& scales, int nodes = 64) {
    double r0 = scales.r_values.front();
    auto base = std::make_shared<GridField>(poisson_kernel(r0, spec, nodes));
    KernelPair p;
    p.name = "poisson";
    p.k1 = [spec, base, r0](double r) -> GridField {
        if (std::abs(r - r0) < 1e-14) return *base;
        return dilate_field(*base, r / r0);
    };
    p.k2 = [spec](double s) { return poisson_1d(s, spec.T, spec.n_t, spec.t_periodic); };
    return p;
}

inline KernelPair heat_pair(const GridSpec& spec) {
    KernelPair p;
    p.name = "heat";
    // length scale r corresponds to heat time r^2
    p.k1 = [spec](double r) { return heat_kernel(r * r, spec); };
    p.k2 = [spec](double s) {
        Line k(spec.T, spec.n_t, spec.t_periodic);
        double v = s * s;
        for (int i = 0; i < k.n; ++i) {
            double t = k.coord(i);
            k.values[i] = cplx(std::exp(-t * t / (4.0 * v)) / std::sqrt(4.0 * M_PI * v), 0.0);
        }
        return k;
    };
    return p;
}

// u(., r, s) = f *1 (phi1_r *2 phi2_s) for every scale pair
inline std::vector<GridField> poisson_extension(const GridField& f, const KernelPair& pair,
                                                const ScaleGrid& scales) {
    std::vector<GridField> out;
    out.reserve(scales.r_values.size() * scales.s_values.size());
    for (double r : scales.r_values) {
        GridField p1 = pair.k1(r);
        for (double s : scales.s_values) {
            GridField prs = conv2(p1, pair.k2(s));
            out.push_back(conv1(f, prs));
        }
    }
    return out;
}

inline GridField radial_maximal(const GridField& f, const ScaleGrid& scales,
                                const KernelPair& pair) {
    GridField out(f.spec);
    for (const auto& u : poisson_extension(f, pair, scales))
        for (std::size_t i = 0; i < out.values.size(); ++i)
            out.values[i] = std::max(out.values[i].real(), std::abs(u.values[i]));
    return out;
}

namespace detail {

// sup of |u| over the tube T(g, r, s) at every g (sheared-box sup)
inline GridField tube_sup(const GridField& u, double r, double s) {
    const GridSpec& sp = u.spec;
    const double dz = sp.dz(), dt = sp.dt(), twist = 4.0 * sp.nu;
    const int nt = sp.n_t;
    const std::size_t nz = sp.n_z_total();
    ZTable zt(sp);
    const int dmax = std::max(0, static_cast<int>(std::floor((r - 1e-12) / dz)));
    const double W = r * r + s;
    GridField out(sp);
    parallel_for(nz, [&](std::size_t lo_z, std::size_t hi_z) {
        std::vector<int> off(sp.z_axes(), -dmax);
        for (std::size_t zo = lo_z; zo < hi_z; ++zo) {
            std::fill(off.begin(), off.end(), -dmax);
            bool done = false;
            while (!done) {
                std::size_t zc = 0;
                bool ok = true;
                for (int a = 0; a < sp.z_axes(); ++a) {
                    int i = zt.idx[zo][a] + off[a];
                    if (i < 0 || i >= sp.n_z) {
                        ok = false;
                        break;
                    }
                    zc = zc * sp.n_z + static_cast<std::size_t>(i);
                }
                if (ok) {
                    double S = 0.0;
                    for (int j = 0; j < sp.nu; ++j) {
                        double x = zt.coord[zo][j], y = zt.coord[zo][j + sp.nu];
                        S += y * (off[j] * dz) - x * (off[j + sp.nu] * dz);
                    }
                    S *= twist;
                    const cplx* col = &u.values[zc * nt];
                    for (int to = 0; to < nt; ++to) {
                        double tc = sp.t_coord(to) + S;
                        int lo = window_lo(tc, W, sp.T, dt);
                        int hi = window_hi(tc, W, sp.T, dt);
                        double m = out.values[zo * nt + to].real();
                        if (sp.t_periodic) {
                            int span = std::min(hi - lo + 1, nt);
                            for (int k = 0; k < span; ++k) {
                                int ti = ((lo + k) % nt + nt) % nt;
                                m = std::max(m, std::abs(col[ti]));
                            }
                        } else {
                            for (int ti = std::max(lo, 0); ti <= std::min(hi, nt - 1); ++ti)
                                m = std::max(m, std::abs(col[ti]));
                        }
                        out.values[zo * nt + to] = m;
                    }
                }
                int a = sp.z_axes() - 1;
                while (a >= 0) {
                    if (++off[a] <= dmax) break;
                    off[a] = -dmax;
                    --a;
                }
                if (a < 0) done = true;
            }
        }
    });
    return out;
}

}  // namespace detail

inline GridField nontangential_maximal(const GridField& f, ConeSpec cone, const ScaleGrid& scales,
                                       const KernelPair& pair) {
    GridField out(f.spec);
    std::size_t idx = 0;
    for (double r : scales.r_values) {
        GridField p1 = pair.k1(r);
        for (double s : scales.s_values) {
            GridField u = conv1(f, conv2(p1, pair.k2(s)));
            GridField m = cone.beta > 0.0
                              ? detail::tube_sup(u, cone.beta * r, cone.beta * cone.beta * s)
                              : u;
            for (std::size_t i = 0; i < out.values.size(); ++i)
                out.values[i] = std::max(out.values[i].real(), std::abs(m.values[i]));
            ++idx;
        }
    }
    (void)idx;
    return out;
}

// Poisson-bounded family validation: measured decay constants
//   C_m = max |D^m phi1|(1+|g|^2)^{2m+D/2+1/2},  D = products of X_j
//   C_n = max |T^n phi2|(1+t^2)^{n+1}
struct PoissonBoundedReport {
    std::string pair_name;
    std::vector<double> c_m;  // m = 0, 1, 2
    std::vector<double> c_n;  // n = 0, 1, 2
    bool ok = true;
    std::string violation;
};

inline PoissonBoundedReport poisson_bounded_check(const KernelPair& pair, const GridSpec& spec,
                                                  double limit = 1e12) {
    PoissonBoundedReport rep;
    rep.pair_name = pair.name;
    GroupContext ctx(spec.nu);
    GridField phi1 = pair.k1(1.0);
    auto mask = interior_mask(spec, 2);
    GridField cur = phi1;
    for (int m = 0; m <= 2; ++m) {
        double c = 0.0;
        for (std::size_t i = 0; i < cur.values.size(); ++i) {
            if (!mask[i]) continue;
            HPoint p = cur.point(i);
            double g2 = gauge_norm(p);
            g2 *= g2;
            double w = std::pow(1.0 + g2, 2.0 * m + ctx.D() / 2.0 + 0.5);
            c = std::max(c, std::abs(cur.values[i]) * w);
        }
        rep.c_m.push_back(c);
        if (!(c < limit) || std::isnan(c)) {
            rep.ok = false;
            rep.violation = pair.name + ": phi1 derivative order " + std::to_string(m);
        }
        if (m < 2) cur = vector_field(cur, {VectorFieldId::X, 0}, EdgeMode::ZeroExtend);
    }
    Line phi2 = pair.k2(1.0);
    std::vector<cplx> col = phi2.values;
    for (int n = 0; n <= 2; ++n) {
        double c = 0.0;
        for (int i = 2; i < phi2.n - 2; ++i) {
            double t = phi2.coord(i);
            double w = std::pow(1.0 + t * t, n + 1.0);
            c = std::max(c, std::abs(col[i]) * w);
        }
        rep.c_n.push_back(c);
        if (!(c < limit) || std::isnan(c)) {
            rep.ok = false;
            rep.violation = pair.name + ": phi2 derivative order " + std::to_string(n);
        }
        // centred first difference, one order at a time (T^n)
        std::vector<cplx> next(col.size(), cplx(0.0));
        for (std::size_t i = 1; i + 1 < col.size(); ++i)
            next[i] = (col[i + 1] - col[i - 1]) / (2.0 * phi2.dt());
        col = next;
    }
    return rep;
}

// Grand maximal function over a family of Poisson-bounded pairs; the family
// implicitly contains the right-translates within the aperture-beta cone, so
// the grand maximal dominates the nontangential one pointwise. beta = 0
// restricts to the pairs themselves (then a single pair gives the radial
// maximal function).
inline GridField grand_maximal(const GridField& f, const std::vector<KernelPair>& family,
                               const ScaleGrid& scales, double translate_beta = 1.0,
                               double validation_limit = 1e12) {
    GridField out(f.spec);
    for (const auto& pair : family) {
        PoissonBoundedReport rep = poisson_bounded_check(pair, f.spec, validation_limit);
        if (!rep.ok) throw std::runtime_error("grand_maximal: family validation failed: " +
                                              rep.violation);
        GridField m = translate_beta > 0.0
                          ? nontangential_maximal(f, ConeSpec(translate_beta), scales, pair)
                          : radial_maximal(f, scales, pair);
        for (std::size_t i = 0; i < out.values.size(); ++i)
            out.values[i] = std::max(out.values[i].real(), m.values[i].real());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Littlewood-Paley pieces and square/area functions

// Two-parameter spectral pieces eta(4^m mu) zeta(4^n omega2) with squared
// dyadic partitions: sum over (m,n) of piece^2 = 1 on the covered band
// (lambda = 0 fibre excluded). Scale indices are length scales r = 2^m,
// s = 2^n.
struct LPFamily {
    const SpectralCalculus* calc = nullptr;
    DyadicPartition part_mu, part_om;
    std::vector<int> ms, ns;

    // piece symbol at scale index m: eta_hat(4^m mu) = partition piece at j = -m
    double sym_mu(int m, double mu) const { return part_mu.piece(-m, mu); }
    double sym_om(int n, double om2) const { return part_om.piece(-n, om2); }
};

inline LPFamily make_lp_family(const SpectralCalculus& calc) {
    LPFamily fam;
    fam.calc = &calc;
    double mu_max = calc.max_eigenvalue();
    double mu_min = calc.min_positive_eigenvalue();
    double om_max = 0.0, om_min = std::numeric_limits<double>::infinity();
    for (const auto& md : calc.modes) {
        if (md.omega2 > 0.0) {
            om_max = std::max(om_max, md.omega2);
            om_min = std::min(om_min, md.omega2);
        }
    }
    // piece at scale m covers mu ~ 4^{-m} [1/2, 4]
    auto range = [](double lo, double hi) {
        int m_lo = static_cast<int>(std::floor(-std::log2(hi) / 2.0)) - 1;
        int m_hi = static_cast<int>(std::ceil(-std::log2(lo) / 2.0)) + 1;
        return std::make_pair(m_lo, m_hi);
    };
    auto [mlo, mhi] = range(mu_min, mu_max);
    auto [nlo, nhi] = range(om_min, om_max);
    for (int m = mlo; m <= mhi; ++m) fam.ms.push_back(m);
    for (int n = nlo; n <= nhi; ++n) fam.ns.push_back(n);
    fam.part_mu = dyadic_partition(-mhi, -mlo, 4.0, true);
    fam.part_om = dyadic_partition(-nhi, -nlo, 4.0, true);
    return fam;
}

// apply the (m, n) phi-piece to f
inline GridField lp_piece(const LPFamily& fam, int m, int n, const GridField& f) {
    return apply_mode_multiplier(
        *fam.calc,
        [&fam, m, n](double mu, const SpectralCalculus::Mode& md) -> cplx {
            if (md.omega2 == 0.0) return cplx(0.0);
            return fam.sym_mu(m, mu) * fam.sym_om(n, md.omega2);
        },
        f);
}

// sharp band-limiter: keeps exactly the part of the spectrum where the
// two-parameter squared partition sums to 1
inline GridField band_limit(const LPFamily& fam, const GridField& f, double tol = 1e-9) {
    return apply_mode_multiplier(
        *fam.calc,
        [&fam, tol](double mu, const SpectralCalculus::Mode& md) -> cplx {
            if (md.omega2 == 0.0) return cplx(0.0);
            double sm = 0.0, sn = 0.0;
            for (int m : fam.ms) {
                double v = fam.sym_mu(m, mu);
                sm += v * v;
            }
            for (int n : fam.ns) {
                double v = fam.sym_om(n, md.omega2);
                sn += v * v;
            }
            return (std::abs(sm - 1.0) < tol && std::abs(sn - 1.0) < tol) ? cplx(1.0) : cplx(0.0);
        },
        f);
}

// cancellation validation of the pieces: kernel moments against polynomials
// of low homogeneous degree, and the first two central moments
struct CancellationReport {
    double max_z_moment = 0.0;   // |integral of k * p| / |k|_1, deg p <= 2M
    double max_t_moment = 0.0;
    bool ok = true;
};

inline CancellationReport cancellation_check(const LPFamily& fam, int m, int n, int M,
                                             double tol = 1e-8) {
    CancellationReport rep;
    GridField k = lp_piece(fam, m, n, delta_field(fam.calc->spec));
    double k1 = l1_norm(k);
    if (k1 == 0.0) return rep;
    // homogeneous monomials of degree <= 2M in (z, t), t of degree 2
    const GridSpec& s = fam.calc->spec;
    std::vector<std::function<double(const HPoint&)>> polys = {
        [](const HPoint&) { return 1.0; },
        [](const HPoint& p) { return p.x[0]; },
        [](const HPoint& p) { return p.y[0]; },
    };
    if (2 * M >= 2) {
        polys.push_back([](const HPoint& p) { return p.t; });
        polys.push_back([](const HPoint& p) { return p.x[0] * p.x[0]; });
        polys.push_back([](const HPoint& p) { return p.x[0] * p.y[0]; });
    }
    for (const auto& p : polys) {
        cplx acc(0.0);
        for (std::size_t i = 0; i < k.values.size(); ++i) acc += k.values[i] * p(k.point(i));
        acc *= s.cell_volume();
        rep.max_z_moment = std::max(rep.max_z_moment, std::abs(acc) / k1);
    }
    // central moments of the t-profile at the origin column
    {
        cplx m0(0.0), m1(0.0);
        for (std::size_t i = 0; i < k.values.size(); ++i) {
            HPoint p = k.point(i);
            double z2 = 0.0;
            for (int a = 0; a < s.nu; ++a) z2 += p.x[a] * p.x[a] + p.y[a] * p.y[a];
            if (z2 > 1e-12) continue;
            m0 += k.values[i];
            m1 += k.values[i] * p.t;
        }
        rep.max_t_moment = std::max(std::abs(m0), std::abs(m1)) * s.dt() / k1;
    }
    rep.ok = rep.max_z_moment < tol && rep.max_t_moment < tol;
    return rep;
}

// Area function S_{F,area,phi,beta,gamma} on the dyadic scale set; beta =
// gamma = 0 means no averaging and reduces to the discrete square function
// (same accumulation path, so the reduction is exact).
inline GridField area_fn(const GridField& f, const LPFamily& fam, double beta, double gamma) {
    GridField acc(f.spec);
    for (int m : fam.ms) {
        for (int n : fam.ns) {
            GridField u = lp_piece(fam, m, n, f);
            GridField w(f.spec);
            for (std::size_t i = 0; i < w.values.size(); ++i)
                w.values[i] = std::norm(u.values[i]);
            if (beta > 0.0 || gamma > 0.0) {
                double r = std::ldexp(1.0, m), s = std::ldexp(1.0, n);
                if (beta > 0.0) {
                    detail::PrefixColumns pc(w);
                    w = detail::tube_average_pc(pc, beta * r, 0.0);
                }
                if (gamma > 0.0) w = detail::t_box_average(w, gamma * s);
            }
            for (std::size_t i = 0; i < acc.values.size(); ++i) acc.values[i] += w.values[i];
        }
    }
    for (auto& v : acc.values) v = std::sqrt(std::max(0.0, v.real()));
    return acc;
}

inline GridField square_dis(const GridField& f, const LPFamily& fam) {
    return area_fn(f, fam, 0.0, 0.0);
}

// log-quadrature version with sub-dyadic refinement; normalised so that the
// L2 isometry holds exactly in the continuum limit
inline GridField square_cts(const GridField& f, const LPFamily& fam, int refine = 2) {
    // c = int eta_hat(u)^2 du/u over one period, per direction
    auto log_integral = [](const DyadicPartition& p) {
        double acc = 0.0;
        int nq = 4096;
        double llo = std::log(0.25), lhi = std::log(8.0);
        double h = (lhi - llo) / nq;
        for (int i = 0; i < nq; ++i) {
            double u = std::exp(llo + (i + 0.5) * h);
            double e = p.piece(0, u);
            acc += e * e * h;
        }
        return acc;
    };
    double c1 = log_integral(fam.part_mu), c2 = log_integral(fam.part_om);
    const double dlr = std::log(2.0) / refine;  // step in log r; log-measure dr/r
    GridField acc(f.spec);
    for (int m : fam.ms) {
        for (int qi = 0; qi < refine; ++qi) {
            double rm = std::ldexp(1.0, 2 * m) * std::pow(2.0, 2.0 * qi / refine);  // 4^m * sub
            for (int n : fam.ns) {
                for (int qk = 0; qk < refine; ++qk) {
                    double sn = std::ldexp(1.0, 2 * n) * std::pow(2.0, 2.0 * qk / refine);
                    GridField u = apply_mode_multiplier(
                        *fam.calc,
                        [&](double mu, const SpectralCalculus::Mode& md) -> cplx {
                            if (md.omega2 == 0.0) return cplx(0.0);
                            return fam.part_mu.piece(0, rm * mu) *
                                   fam.part_om.piece(0, sn * md.omega2);
                        },
                        f);
                    for (std::size_t i = 0; i < acc.values.size(); ++i)
                        acc.values[i] += std::norm(u.values[i]) * dlr * dlr;
                }
            }
        }
    }
    // isometry normalisation: int eta_hat(r^2 mu)^2 dr/r = c1/2 per direction
    for (auto& v : acc.values) v = std::sqrt(std::max(0.0, v.real()) / (c1 * c2 / 4.0));
    return acc;
}

// ---------------------------------------------------------------------------
// Hilbert and Riesz transforms

// periodic Hilbert transform in t: Fourier sign multiplier -i sgn(lambda)
inline GridField hilbert_central(const GridField& f) {
    if (!f.spec.t_periodic) throw std::invalid_argument("hilbert_central: t_periodic required");
    if (f.spec.n_t & (f.spec.n_t - 1))
        throw std::invalid_argument("hilbert_central: n_t must be a power of two");
    const int nt = f.spec.n_t;
    std::vector<cplx> v = f.values;
    detail::fft_columns(f.spec, v, false);
    const std::size_t nz = f.spec.n_z_total();
    for (std::size_t z = 0; z < nz; ++z) {
        for (int m = 0; m < nt; ++m) {
            int mt = m <= nt / 2 ? m : m - nt;
            cplx mult = (mt == 0 || m == nt / 2) ? cplx(0.0)
                                                 : (mt > 0 ? cplx(0.0, -1.0) : cplx(0.0, 1.0));
            v[z * nt + m] *= mult;
        }
    }
    detail::fft_columns(f.spec, v, true);
    GridField out(f.spec);
    out.values = std::move(v);
    return out;
}

// nabla^(1) L^{-1/2}: 2nu components; L^{-1/2} is spectral with the zero mode
// mapped to 0
inline std::vector<GridField> riesz_horizontal(const GridField& f, const SpectralCalculus& calc) {
    GridField w = apply_mode_multiplier(
        calc,
        [](double mu, const SpectralCalculus::Mode&) -> cplx {
            return mu > 1e-12 ? cplx(1.0 / std::sqrt(mu)) : cplx(0.0);
        },
        f);
    std::vector<GridField> out;
    out.reserve(2 * f.spec.nu);
    for (int j = 0; j < f.spec.nu; ++j)
        out.push_back(vector_field(w, {VectorFieldId::X, j}, EdgeMode::ZeroExtend));
    for (int j = 0; j < f.spec.nu; ++j)
        out.push_back(vector_field(w, {VectorFieldId::Y, j}, EdgeMode::ZeroExtend));
    return out;
}

// R_F = nabla^(1) L^{-1/2} nabla^(2) Delta^{-1/2}; the central factor is the
// Hilbert transform
inline std::vector<GridField> flag_riesz(const GridField& f, const SpectralCalculus& calc) {
    return riesz_horizontal(hilbert_central(f), calc);
}

// ---------------------------------------------------------------------------
// Khinchin randomisation check

struct KhinchinReport {
    double square_l1 = 0.0;         // |S_dis f|_1
    double randomized_mean = 0.0;   // mean over draws of |sum r_m s_n u_{m,n}|_1
    double randomized_stddev = 0.0;
    double ratio = 0.0;             // square_l1 / randomized_mean
    int n_draws = 0;
    std::uint64_t seed = 0;
    std::string rng = Rng::algorithm();
};

inline KhinchinReport khinchin_square_check(const GridField& f, const LPFamily& fam, int n_draws,
                                            std::uint64_t seed) {
    KhinchinReport rep;
    rep.n_draws = n_draws;
    rep.seed = seed;
    std::vector<GridField> pieces;
    std::vector<std::pair<int, int>> tags;
    for (int m : fam.ms)
        for (int n : fam.ns) {
            pieces.push_back(lp_piece(fam, m, n, f));
            tags.emplace_back(m, n);
        }
    GridField sq(f.spec);
    for (const auto& u : pieces)
        for (std::size_t i = 0; i < sq.values.size(); ++i)
            sq.values[i] += std::norm(u.values[i]);
    for (auto& v : sq.values) v = std::sqrt(v.real());
    rep.square_l1 = l1_norm(sq);

    Rng rng(seed);
    std::vector<double> draws;
    for (int d = 0; d < n_draws; ++d) {
        std::map<int, int> rm, sn;
        for (int m : fam.ms) rm[m] = rng.sign();
        for (int n : fam.ns) sn[n] = rng.sign();
        GridField g(f.spec);
        for (std::size_t p = 0; p < pieces.size(); ++p) {
            double sgn = rm[tags[p].first] * sn[tags[p].second];
            for (std::size_t i = 0; i < g.values.size(); ++i)
                g.values[i] += sgn * pieces[p].values[i];
        }
        draws.push_back(l1_norm(g));
    }
    double mean = pairwise_sum(draws) / std::max(1, n_draws);
    double var = 0.0;
    for (double d : draws) var += (d - mean) * (d - mean);
    var /= std::max(1, n_draws - 1);
    rep.randomized_mean = mean;
    rep.randomized_stddev = std::sqrt(var);
    rep.ratio = mean > 0 ? rep.square_l1 / mean : 0.0;
    return rep;
}

}  // namespace heisenflag
