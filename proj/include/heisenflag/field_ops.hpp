#pragma once

// Group convolutions, invariant vector fields, the sub-Laplacian, norms and
// resampling on GridFields.
//
// conv1 evaluates the Riemann sum of f *1 k on the sample lattice. The twist
// S(z1, z - z1) is a multiple of 4*nu*dz^2, so when 4*nu*dz^2 is an integer
// multiple of dt the group shift lands on the t-lattice and the sum is exact
// in the lattice sense; otherwise the kernel is interpolated linearly in t
// (the periodic FFT path uses a band-limited phase shift instead).

#include <array>
#include <cassert>
#include <cmath>
#include <limits>
#include <memory>

#include "grid.hpp"
#include "util.hpp"

namespace heisenflag {

namespace detail {

struct ZTable {
    // per z-flat index: the 2*nu axis indices
    std::vector<std::vector<int>> idx;
    std::vector<std::vector<double>> coord;  // same, as coordinates

    explicit ZTable(const GridSpec& s) {
        std::size_t nz = s.n_z_total();
        idx.assign(nz, std::vector<int>(s.z_axes()));
        coord.assign(nz, std::vector<double>(s.z_axes()));
        for (std::size_t zf = 0; zf < nz; ++zf) {
            std::size_t rem = zf;
            for (int a = s.z_axes() - 1; a >= 0; --a) {
                int i = static_cast<int>(rem % s.n_z);
                rem /= s.n_z;
                idx[zf][a] = i;
                coord[zf][a] = s.z_coord(i);
            }
        }
    }
};

inline std::size_t z_stride(const GridSpec& s, int axis) {
    std::size_t st = static_cast<std::size_t>(s.n_t);
    for (int a = s.z_axes() - 1; a > axis; --a) st *= s.n_z;
    return st;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolutions

inline bool conv1_lattice_exact(const GridSpec& s) {
    double q = 4.0 * s.nu * s.dz() * s.dz() / s.dt();
    return std::abs(q - std::lround(q)) < 1e-9;
}

inline GridField conv1_direct(const GridField& f, const GridField& k) {
    const GridSpec& s = f.spec;
    if (k.spec != s) throw std::invalid_argument("conv1: spec mismatch");
    detail::ZTable zt(s);
    const std::size_t nz = s.n_z_total();
    const int nt = s.n_t, half = s.n_z / 2;
    const double dV = s.cell_volume(), dt = s.dt(), twist = 4.0 * s.nu;
    GridField out(s);

    parallel_for(nz, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t zo = lo; zo < hi; ++zo) {
            cplx* orow = &out.values[zo * nt];
            for (std::size_t z1 = 0; z1 < nz; ++z1) {
                // kernel z-index for the offset z_out - z_in
                std::size_t zk = 0;
                bool in_range = true;
                for (int a = 0; a < s.z_axes(); ++a) {
                    int d = zt.idx[zo][a] - zt.idx[z1][a] + half;
                    if (d < 0 || d >= s.n_z) {
                        in_range = false;
                        break;
                    }
                    zk = zk * s.n_z + static_cast<std::size_t>(d);
                }
                if (!in_range) continue;
                // S(z1, z - z1) = 4 nu sum_j (y1_j (x - x1)_j - x1_j (y - y1)_j)
                double S = 0.0;
                for (int j = 0; j < s.nu; ++j) {
                    double x1 = zt.coord[z1][j], y1 = zt.coord[z1][j + s.nu];
                    double xo = zt.coord[zo][j], yo = zt.coord[zo][j + s.nu];
                    S += y1 * (xo - x1) - x1 * (yo - y1);
                }
                S *= twist;
                double sh = S / dt;
                int st0 = static_cast<int>(std::floor(sh));
                double fr = sh - st0;
                bool exact = fr < 1e-9 || fr > 1.0 - 1e-9;
                if (fr > 1.0 - 1e-9) ++st0;
                const cplx* frow = &f.values[z1 * nt];
                const cplx* krow = &k.values[zk * nt];
                for (int t1 = 0; t1 < nt; ++t1) {
                    cplx fv = frow[t1];
                    if (fv == cplx(0.0, 0.0)) continue;
                    for (int to = 0; to < nt; ++to) {
                        int ka = to - t1 - st0;
                        cplx kv;
                        if (exact) {
                            if (s.t_periodic) {
                                ka %= nt;
                                if (ka < 0) ka += nt;
                                // kernel index of value ka*dt
                                int ki = ka + nt / 2;
                                if (ki >= nt) ki -= nt;
                                kv = krow[ki];
                            } else {
                                int ki = ka + nt / 2;
                                if (ki < 0 || ki >= nt) continue;
                                kv = krow[ki];
                            }
                        } else {
                            auto sample = [&](int a) -> cplx {
                                if (s.t_periodic) {
                                    int w = a % nt;
                                    if (w < 0) w += nt;
                                    int ki = w + nt / 2;
                                    if (ki >= nt) ki -= nt;
                                    return krow[ki];
                                }
                                int ki = a + nt / 2;
                                if (ki < 0 || ki >= nt) return cplx(0.0);
                                return krow[ki];
                            };
                            kv = sample(ka) * (1.0 - fr) + sample(ka - 1) * fr;
                        }
                        orow[to] += fv * kv;
                    }
                }
            }
            for (int to = 0; to < nt; ++to) orow[to] *= dV;
        }
    });
    return out;
}

// Fast path for t-periodic specs with power-of-two n_t: per-column FFT in t,
// twist handled as a phase.
inline GridField conv1_fft(const GridField& f, const GridField& k) {
    const GridSpec& s = f.spec;
    if (k.spec != s) throw std::invalid_argument("conv1: spec mismatch");
    if (!s.t_periodic || (s.n_t & (s.n_t - 1)))
        throw std::invalid_argument("conv1_fft: needs periodic t with power-of-two n_t");
    detail::ZTable zt(s);
    const std::size_t nz = s.n_z_total();
    const int nt = s.n_t, half = s.n_z / 2;
    const double dV = s.cell_volume(), dt = s.dt(), twist = 4.0 * s.nu;

    // column FFTs; kernel columns are rotated so index 0 is t = 0
    std::vector<cplx> fhat(nz * nt), khat(nz * nt);
    parallel_for(nz, [&](std::size_t lo, std::size_t hi) {
        std::vector<cplx> buf(nt);
        for (std::size_t z = lo; z < hi; ++z) {
            for (int t = 0; t < nt; ++t) buf[t] = f.values[z * nt + t];
            fft_pow2(buf, false);
            std::copy(buf.begin(), buf.end(), fhat.begin() + z * nt);
            for (int t = 0; t < nt; ++t) buf[t] = k.values[z * nt + ((t + nt / 2) % nt)];
            fft_pow2(buf, false);
            std::copy(buf.begin(), buf.end(), khat.begin() + z * nt);
        }
    });

    GridField out(s);
    parallel_for(nz, [&](std::size_t lo, std::size_t hi) {
        std::vector<cplx> acc(nt), buf(nt);
        for (std::size_t zo = lo; zo < hi; ++zo) {
            std::fill(acc.begin(), acc.end(), cplx(0.0));
            for (std::size_t z1 = 0; z1 < nz; ++z1) {
                std::size_t zk = 0;
                bool in_range = true;
                for (int a = 0; a < s.z_axes(); ++a) {
                    int d = zt.idx[zo][a] - zt.idx[z1][a] + half;
                    if (d < 0 || d >= s.n_z) {
                        in_range = false;
                        break;
                    }
                    zk = zk * s.n_z + static_cast<std::size_t>(d);
                }
                if (!in_range) continue;
                double S = 0.0;
                for (int j = 0; j < s.nu; ++j) {
                    double x1 = zt.coord[z1][j], y1 = zt.coord[z1][j + s.nu];
                    double xo = zt.coord[zo][j], yo = zt.coord[zo][j + s.nu];
                    S += y1 * (xo - x1) - x1 * (yo - y1);
                }
                S *= twist;
                double shift = S / dt;  // lattice units
                double ang = -2.0 * M_PI * shift / nt;
                cplx w(std::cos(ang), std::sin(ang));
                const cplx* fh = &fhat[z1 * nt];
                const cplx* kh = &khat[zk * nt];
                // signed frequencies: m = 0..nt/2 ascending, then negative
                cplx ph(1.0, 0.0);
                for (int m = 0; m <= nt / 2; ++m) {
                    acc[m] += fh[m] * kh[m] * ph;
                    ph *= w;
                }
                ph = std::conj(w);
                for (int m = nt - 1; m > nt / 2; --m) {
                    acc[m] += fh[m] * kh[m] * ph;
                    ph *= std::conj(w);
                }
            }
            for (int m = 0; m < nt; ++m) buf[m] = acc[m];
            fft_pow2(buf, true);
            for (int t = 0; t < nt; ++t) out.values[zo * nt + t] = buf[t] * dV;
        }
    });
    return out;
}

inline GridField conv1(const GridField& f, const GridField& k) {
    if (f.spec.t_periodic && (f.spec.n_t & (f.spec.n_t - 1)) == 0) return conv1_fft(f, k);
    return conv1_direct(f, k);
}

// f *2 k: per-z 1D convolution of the t-columns against a Line kernel.
inline GridField conv2(const GridField& f, const Line& k) {
    const GridSpec& s = f.spec;
    if (std::abs(k.dt() - s.dt()) > 1e-12 * s.dt())
        throw std::invalid_argument("conv2: incompatible t-grids");
    const std::size_t nz = s.n_z_total();
    const int nt = s.n_t, nk = k.n, kh = k.n / 2;
    const double dtau = k.dt();
    GridField out(s);
    parallel_for(nz, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t z = lo; z < hi; ++z) {
            const cplx* frow = &f.values[z * nt];
            cplx* orow = &out.values[z * nt];
            for (int to = 0; to < nt; ++to) {
                cplx acc(0.0);
                for (int ik = 0; ik < nk; ++ik) {
                    // k argument is -t2 at line index ik: -t2 = coord(ik)
                    // f argument is t + t2
                    int t2_idx = kh - ik;  // t2 = -coord(ik) in lattice units
                    int ti = to + t2_idx;
                    cplx fv;
                    if (s.t_periodic) {
                        int w = ti % nt;
                        if (w < 0) w += nt;
                        fv = frow[w];
                    } else {
                        if (ti < 0 || ti >= nt) continue;
                        fv = frow[ti];
                    }
                    acc += fv * k.values[ik];
                }
                orow[to] = acc * dtau;
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Derivatives

enum class EdgeMode { OneSided, ZeroExtend };

namespace detail {

// first derivative along z-axis `axis` or t (axis = -1)
inline GridField d1(const GridField& f, int axis, EdgeMode em) {
    const GridSpec& s = f.spec;
    GridField out(s);
    std::size_t stride;
    int m;
    double inv2h;
    bool periodic;
    if (axis < 0) {
        stride = 1;
        m = s.n_t;
        inv2h = 1.0 / (2.0 * s.dt());
        periodic = s.t_periodic;
    } else {
        stride = z_stride(s, axis);
        m = s.n_z;
        inv2h = 1.0 / (2.0 * s.dz());
        periodic = false;
    }
    const std::size_t n = s.size();
    parallel_for(n, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            int pos = static_cast<int>((i / stride) % static_cast<std::size_t>(m));
            cplx v;
            if (periodic) {
                std::size_t ip = (pos + 1 < m) ? i + stride : i - (m - 1) * stride;
                std::size_t im = (pos > 0) ? i - stride : i + (m - 1) * stride;
                v = (f.values[ip] - f.values[im]) * inv2h;
            } else if (pos > 0 && pos + 1 < m) {
                v = (f.values[i + stride] - f.values[i - stride]) * inv2h;
            } else if (em == EdgeMode::ZeroExtend) {
                cplx up = (pos + 1 < m) ? f.values[i + stride] : cplx(0.0);
                cplx dn = (pos > 0) ? f.values[i - stride] : cplx(0.0);
                v = (up - dn) * inv2h;
            } else {
                // second-order one-sided
                if (pos == 0)
                    v = (-3.0 * f.values[i] + 4.0 * f.values[i + stride] -
                         f.values[i + 2 * stride]) *
                        inv2h;
                else
                    v = (3.0 * f.values[i] - 4.0 * f.values[i - stride] +
                         f.values[i - 2 * stride]) *
                        inv2h;
            }
            out.values[i] = v;
        }
    });
    return out;
}

// compact second derivative along z-axis `axis` or t (axis = -1), zero-extended
inline GridField d2(const GridField& f, int axis) {
    const GridSpec& s = f.spec;
    GridField out(s);
    std::size_t stride;
    int m;
    double invh2;
    bool periodic;
    if (axis < 0) {
        stride = 1;
        m = s.n_t;
        invh2 = 1.0 / (s.dt() * s.dt());
        periodic = s.t_periodic;
    } else {
        stride = z_stride(s, axis);
        m = s.n_z;
        invh2 = 1.0 / (s.dz() * s.dz());
        periodic = false;
    }
    const std::size_t n = s.size();
    parallel_for(n, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            int pos = static_cast<int>((i / stride) % static_cast<std::size_t>(m));
            cplx up, dn;
            if (periodic) {
                up = (pos + 1 < m) ? f.values[i + stride] : f.values[i - (m - 1) * stride];
                dn = (pos > 0) ? f.values[i - stride] : f.values[i + (m - 1) * stride];
            } else {
                up = (pos + 1 < m) ? f.values[i + stride] : cplx(0.0);
                dn = (pos > 0) ? f.values[i - stride] : cplx(0.0);
            }
            out.values[i] = (up - 2.0 * f.values[i] + dn) * invh2;
        }
    });
    return out;
}

// multiply samples by a coordinate function of the z-part
inline void scale_by_coord(GridField& f, const std::function<double(const std::vector<double>&)>& c) {
    detail::ZTable zt(f.spec);
    const int nt = f.spec.n_t;
    const std::size_t nz = f.spec.n_z_total();
    for (std::size_t z = 0; z < nz; ++z) {
        double v = c(zt.coord[z]);
        for (int t = 0; t < nt; ++t) f.values[z * nt + t] *= v;
    }
}

}  // namespace detail

struct VectorFieldId {
    enum Kind { X, Y, T } kind = X;
    int j = 0;  // 0-based, for X/Y
};

// Left-invariant fields X_j = d/dx_j + 4 nu y_j d/dt, Y_j = d/dy_j - 4 nu x_j d/dt,
// T = d/dt. Centred second-order stencils, one-sided at non-periodic edges.
inline GridField vector_field(const GridField& f, VectorFieldId which,
                              EdgeMode em = EdgeMode::OneSided) {
    const GridSpec& s = f.spec;
    if (which.kind == VectorFieldId::T) return detail::d1(f, -1, em);
    if (which.j < 0 || which.j >= s.nu) throw std::invalid_argument("vector_field: bad j");
    GridField dzpart = detail::d1(f, which.kind == VectorFieldId::X ? which.j : s.nu + which.j, em);
    GridField dtpart = detail::d1(f, -1, em);
    double c = 4.0 * s.nu;
    int j = which.j;
    if (which.kind == VectorFieldId::X)
        detail::scale_by_coord(dtpart, [c, j, &s](const std::vector<double>& z) { return c * z[s.nu + j]; });
    else
        detail::scale_by_coord(dtpart, [c, j](const std::vector<double>& z) { return -c * z[j]; });
    for (std::size_t i = 0; i < dzpart.values.size(); ++i) dzpart.values[i] += dtpart.values[i];
    return dzpart;
}

// Sub-Laplacian L = -sum_j (X_j^2 + Y_j^2), assembled in the coordinate form
//   L = -Delta_z - 8 nu sum_j (y_j D_xj - x_j D_yj) D_t - 16 nu^2 |z|^2 Delta_t
// with compact second differences and centred zero-extended first differences.
// Symmetric positive semidefinite on periodic-t grids; agrees with the
// composition of vector_field stencils to discretisation order. The fused
// apply below is what the heat solver and the spectral assembly conjugate.
inline void sublaplacian_apply(const GridField& f, GridField& out) {
    const GridSpec& s = f.spec;
    if (out.spec != s) out = GridField(s);
    const int nt = s.n_t, nzax = s.z_axes();
    const std::size_t nz = s.n_z_total();
    const double inv_z2 = 1.0 / (s.dz() * s.dz());
    const double inv_t2 = 1.0 / (s.dt() * s.dt());
    const double inv_cross = 1.0 / (4.0 * s.dz() * s.dt());
    const double c8 = 8.0 * s.nu, c16 = 16.0 * s.nu * s.nu;
    static thread_local std::shared_ptr<detail::ZTable> zt_cache;
    static thread_local std::uint64_t zt_hash = 0;
    if (!zt_cache || zt_hash != s.hash()) {
        zt_cache = std::make_shared<detail::ZTable>(s);
        zt_hash = s.hash();
    }
    const detail::ZTable& zt = *zt_cache;
    std::vector<std::size_t> stride(nzax);
    for (int a = 0; a < nzax; ++a) stride[a] = detail::z_stride(s, a);

    parallel_for(nz, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t z = lo; z < hi; ++z) {
            const cplx* base = &f.values[z * nt];
            cplx* orow = &out.values[z * nt];
            double r2 = 0.0;
            for (int a = 0; a < nzax; ++a) r2 += zt.coord[z][a] * zt.coord[z][a];
            for (int t = 0; t < nt; ++t) {
                const std::size_t i = z * nt + t;
                int tp = t + 1, tm = t - 1;
                bool tp_ok = true, tm_ok = true;
                if (s.t_periodic) {
                    if (tp == nt) tp = 0;
                    if (tm < 0) tm = nt - 1;
                } else {
                    tp_ok = tp < nt;
                    tm_ok = tm >= 0;
                }
                const cplx u = base[t];
                cplx acc = 0.0;
                // -Delta_z
                for (int a = 0; a < nzax; ++a) {
                    int pos = zt.idx[z][a];
                    cplx up = pos + 1 < s.n_z ? f.values[i + stride[a]] : cplx(0.0);
                    cplx dn = pos > 0 ? f.values[i - stride[a]] : cplx(0.0);
                    acc += (2.0 * u - up - dn) * inv_z2;
                }
                // -16 nu^2 |z|^2 Delta_t
                {
                    cplx up = tp_ok ? base[tp] : cplx(0.0);
                    cplx dn = tm_ok ? base[tm] : cplx(0.0);
                    acc += c16 * r2 * (2.0 * u - up - dn) * inv_t2;
                }
                // -8 nu sum_j (y_j D_xj - x_j D_yj) D_t
                for (int j = 0; j < s.nu; ++j) {
                    double xj = zt.coord[z][j], yj = zt.coord[z][j + s.nu];
                    auto cross = [&](int axis) -> cplx {
                        const std::size_t st = stride[axis];
                        const int pos = zt.idx[z][axis];
                        const std::size_t zi_up = i + st, zi_dn = i - st;
                        cplx pp = (pos + 1 < s.n_z && tp_ok) ? f.values[zi_up - t + tp] : cplx(0.0);
                        cplx pm = (pos + 1 < s.n_z && tm_ok) ? f.values[zi_up - t + tm] : cplx(0.0);
                        cplx mp = (pos > 0 && tp_ok) ? f.values[zi_dn - t + tp] : cplx(0.0);
                        cplx mm = (pos > 0 && tm_ok) ? f.values[zi_dn - t + tm] : cplx(0.0);
                        return (pp - pm - mp + mm) * inv_cross;
                    };
                    acc -= c8 * (yj * cross(j) - xj * cross(s.nu + j));
                }
                orow[t] = acc;
            }
        }
    });
}

inline GridField sublaplacian(const GridField& f) {
    GridField out(f.spec);
    sublaplacian_apply(f, out);
    return out;
}

// Central Laplacian Delta = -T^2, compact stencil.
inline GridField central_laplacian(const GridField& f) {
    GridField out = detail::d2(f, -1);
    for (auto& v : out.values) v = -v;
    return out;
}

// Samples at least `width` cells away from every non-periodic boundary.
inline std::vector<std::uint8_t> interior_mask(const GridSpec& s, int width = 2) {
    std::vector<std::uint8_t> m(s.size(), 1);
    detail::ZTable zt(s);
    const int nt = s.n_t;
    for (std::size_t z = 0; z < s.n_z_total(); ++z) {
        bool zok = true;
        for (int a = 0; a < s.z_axes(); ++a)
            if (zt.idx[z][a] < width || zt.idx[z][a] >= s.n_z - width) zok = false;
        for (int t = 0; t < nt; ++t) {
            bool tok = s.t_periodic || (t >= width && t < nt - width);
            if (!zok || !tok) m[z * nt + t] = 0;
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Norms and resampling

inline double lp_norm(const GridField& f, double p) {
    if (p == std::numeric_limits<double>::infinity()) {
        double m = 0.0;
        for (const auto& v : f.values) m = std::max(m, std::abs(v));
        return m;
    }
    if (p < 1.0) throw std::invalid_argument("lp_norm: p >= 1 required");
    std::vector<double> terms(f.values.size());
    for (std::size_t i = 0; i < terms.size(); ++i) terms[i] = std::pow(std::abs(f.values[i]), p);
    return std::pow(pairwise_sum(terms) * f.spec.cell_volume(), 1.0 / p);
}

inline double l2_norm(const GridField& f) { return lp_norm(f, 2.0); }
inline double l1_norm(const GridField& f) { return lp_norm(f, 1.0); }

inline cplx inner(const GridField& f, const GridField& g) {
    if (f.spec != g.spec) throw std::invalid_argument("inner: spec mismatch");
    std::vector<cplx> terms(f.values.size());
    for (std::size_t i = 0; i < terms.size(); ++i)
        terms[i] = std::conj(f.values[i]) * g.values[i];
    return pairwise_sum(terms) * f.spec.cell_volume();
}

inline cplx integral(const GridField& f) {
    std::vector<cplx> terms = f.values;
    return pairwise_sum(terms) * f.spec.cell_volume();
}

// Multilinear interpolation at a continuous point; zero outside the box
// (t wraps when periodic).
inline cplx interpolate(const GridField& f, const HPoint& p) {
    const GridSpec& s = f.spec;
    const int na = s.z_axes() + 1;
    std::array<int, 16> i0;
    std::array<double, 16> fr;
    assert(na <= 16);
    for (int a = 0; a < s.z_axes(); ++a) {
        double v = (a < s.nu) ? p.x[a] : p.y[a - s.nu];
        double u = (v + s.Z) / s.dz();
        double fl = std::floor(u);
        i0[a] = static_cast<int>(fl);
        fr[a] = u - fl;
        if (i0[a] < -1 || i0[a] > s.n_z - 1) return cplx(0.0);
    }
    {
        double u = (p.t + s.T) / s.dt();
        if (s.t_periodic) {
            u = std::fmod(u, static_cast<double>(s.n_t));
            if (u < 0) u += s.n_t;
        }
        double fl = std::floor(u);
        i0[na - 1] = static_cast<int>(fl);
        fr[na - 1] = u - fl;
        if (!s.t_periodic && (i0[na - 1] < -1 || i0[na - 1] > s.n_t - 1)) return cplx(0.0);
    }
    cplx acc(0.0);
    const int corners = 1 << na;
    for (int c = 0; c < corners; ++c) {
        double w = 1.0;
        GridIndex gi;
        gi.z.resize(s.z_axes());
        bool ok = true;
        for (int a = 0; a < na; ++a) {
            int bit = (c >> a) & 1;
            w *= bit ? fr[a] : (1.0 - fr[a]);
            int ix = i0[a] + bit;
            if (a < s.z_axes()) {
                if (ix < 0 || ix >= s.n_z) {
                    ok = false;
                    break;
                }
                gi.z[a] = ix;
            } else {
                if (s.t_periodic) {
                    ix %= s.n_t;
                    if (ix < 0) ix += s.n_t;
                } else if (ix < 0 || ix >= s.n_t) {
                    ok = false;
                    break;
                }
                gi.t = ix;
            }
        }
        if (ok && w != 0.0) acc += w * f.at(gi);
    }
    return acc;
}

// _g f (g') = f(g^{-1} g')
inline GridField translate_field(const GridField& f, const HPoint& g) {
    GroupContext ctx(f.spec.nu);
    GridField out(f.spec);
    HPoint gi = inv(g);
    const std::size_t n = f.spec.size();
    parallel_for(n, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i)
            out.values[i] = interpolate(f, mul(ctx, gi, out.point(i)));
    });
    return out;
}

// normalised dilate f_r(g') = r^{-D} f(delta_{1/r} g')
inline GridField dilate_field(const GridField& f, double r, bool normalized = true) {
    if (!(r > 0.0)) throw std::domain_error("dilate_field: r must be positive");
    GroupContext ctx(f.spec.nu);
    GridField out(f.spec);
    double scale = normalized ? std::pow(r, -static_cast<double>(ctx.D())) : 1.0;
    const std::size_t n = f.spec.size();
    parallel_for(n, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i)
            out.values[i] = scale * interpolate(f, dilate(out.point(i), 1.0 / r));
    });
    return out;
}

// Discrete delta carrying unit mass (value 1/cell volume at the origin).
inline GridField delta_field(const GridSpec& s) {
    GridField f(s);
    GridIndex gi;
    gi.z.assign(s.z_axes(), s.n_z / 2);
    gi.t = s.n_t / 2;
    f.at(gi) = cplx(1.0 / s.cell_volume(), 0.0);
    return f;
}

}  // namespace heisenflag
