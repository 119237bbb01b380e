#pragma once

// Right averages over tubes T(g, r, s) = g . B1(o,r) . B2(0,s) and the
// iterated windows chi^1_r *2 chi^2_s. A tube centred at g is the sheared box
//   { (z + w, t + u + S(z, w)) : |w|_inf < r, |u| < r^2 + s },
// so per-column prefix sums in t evaluate every tube average in O(1) per
// z-offset. Averages are normalised by the in-box cell count, which keeps the
// average of a constant exactly that constant up to the box edge.

#include <cmath>

#include "field_ops.hpp"

namespace heisenflag {
namespace detail {

struct PrefixColumns {
    // prefix[z][k] = sum of |f| over t-indices < k (k in [0, n_t])
    std::vector<std::vector<double>> prefix;
    const GridSpec* spec = nullptr;

    explicit PrefixColumns(const GridField& f) {
        spec = &f.spec;
        const int nt = f.spec.n_t;
        const std::size_t nz = f.spec.n_z_total();
        prefix.assign(nz, std::vector<double>(nt + 1, 0.0));
        for (std::size_t z = 0; z < nz; ++z) {
            const cplx* row = &f.values[z * nt];
            for (int t = 0; t < nt; ++t) prefix[z][t + 1] = prefix[z][t] + std::abs(row[t]);
        }
    }

    // sum over t-index window [lo, hi) with periodic wrap when applicable;
    // count receives the number of contributing in-box cells
    double window(std::size_t z, int lo, int hi, int& count) const {
        const int nt = spec->n_t;
        if (hi <= lo) {
            count = 0;
            return 0.0;
        }
        if (spec->t_periodic) {
            count = hi - lo;
            if (count >= nt) {
                count = nt;
                return prefix[z][nt];
            }
            int a = ((lo % nt) + nt) % nt;
            int b = a + (hi - lo);
            if (b <= nt) return prefix[z][b] - prefix[z][a];
            return (prefix[z][nt] - prefix[z][a]) + prefix[z][b - nt];
        }
        int a = std::max(lo, 0), b = std::min(hi, nt);
        count = std::max(0, b - a);
        if (count == 0) return 0.0;
        return prefix[z][b] - prefix[z][a];
    }
};

inline int window_lo(double centre, double half, double T, double dt) {
    return static_cast<int>(std::ceil((centre - half + T) / dt - 1e-9));
}
inline int window_hi(double centre, double half, double T, double dt) {
    return static_cast<int>(std::floor((centre + half + T) / dt + 1e-9));
}

// Average of |f| over T(g, r, s) at every sample g, via prefix columns.
inline GridField tube_average_pc(const PrefixColumns& pc, double r, double s) {
    const GridSpec& sp = *pc.spec;
    const double dz = sp.dz(), dt = sp.dt(), twist = 4.0 * sp.nu;
    const int nt = sp.n_t;
    const std::size_t nz = sp.n_z_total();
    ZTable zt(sp);

    const int dmax = std::max(0, static_cast<int>(std::floor((r - 1e-12) / dz)));
    std::vector<std::vector<int>> offsets;
    {
        std::vector<int> cur(sp.z_axes(), -dmax);
        bool done = false;
        while (!done) {
            offsets.push_back(cur);
            int a = sp.z_axes() - 1;
            while (a >= 0) {
                if (++cur[a] <= dmax) break;
                cur[a] = -dmax;
                --a;
            }
            if (a < 0) done = true;
        }
    }

    const double W = r * r + s;
    GridField out(sp);
    std::vector<double> sums(sp.size(), 0.0);
    std::vector<double> counts(sp.size(), 0.0);
    parallel_for(nz, [&](std::size_t lo_z, std::size_t hi_z) {
        for (std::size_t zo = lo_z; zo < hi_z; ++zo) {
            for (const auto& off : offsets) {
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
                if (!ok) continue;
                double S = 0.0;
                for (int j = 0; j < sp.nu; ++j) {
                    double x = zt.coord[zo][j], y = zt.coord[zo][j + sp.nu];
                    double wx = off[j] * dz, wy = off[j + sp.nu] * dz;
                    S += y * wx - x * wy;
                }
                S *= twist;
                for (int to = 0; to < nt; ++to) {
                    double tc = sp.t_coord(to) + S;
                    int cnt = 0;
                    double sum = pc.window(zc, window_lo(tc, W, sp.T, dt),
                                           window_hi(tc, W, sp.T, dt) + 1, cnt);
                    sums[zo * nt + to] += sum;
                    counts[zo * nt + to] += cnt;
                }
            }
            for (int to = 0; to < nt; ++to) {
                std::size_t i = zo * nt + to;
                out.values[i] = counts[i] > 0 ? cplx(sums[i] / counts[i], 0.0) : cplx(0.0);
            }
        }
    });
    return out;
}

// Plain box average in t with half-width s (count-normalised).
inline GridField t_box_average(const GridField& f, double s) {
    const GridSpec& sp = f.spec;
    const int nt = sp.n_t;
    const std::size_t nz = sp.n_z_total();
    PrefixColumns pc(f);
    GridField out(sp);
    parallel_for(nz, [&](std::size_t lo_z, std::size_t hi_z) {
        for (std::size_t z = lo_z; z < hi_z; ++z) {
            for (int to = 0; to < nt; ++to) {
                double tc = sp.t_coord(to);
                int cnt = 0;
                double sum = pc.window(z, window_lo(tc, s, sp.T, sp.dt()),
                                       window_hi(tc, s, sp.T, sp.dt()) + 1, cnt);
                out.values[z * nt + to] = cnt > 0 ? cplx(sum / cnt, 0.0) : cplx(0.0);
            }
        }
    });
    return out;
}

}  // namespace detail

// Average of |f| over the tube T(g, r, s) at every sample g.
inline GridField tube_average(const GridField& f, double r, double s) {
    detail::PrefixColumns pc(f);
    return detail::tube_average_pc(pc, r, s);
}

// |f| *1 chi^1_r *2 chi^2_s: the gauge-ball average followed by a central
// box average (chi^1_r is the indicator of B(o,r) = {|z|<r, |t|<r^2}).
inline GridField iterated_average(const GridField& f, double r, double s) {
    detail::PrefixColumns pc(f);
    GridField inner = detail::tube_average_pc(pc, r, 0.0);
    return detail::t_box_average(inner, s);
}

// sup over the given (r, s) pairs of tube averages of |f|
inline GridField flag_maximal_over(const GridField& f,
                                   const std::vector<std::pair<double, double>>& scales) {
    detail::PrefixColumns pc(f);
    GridField out(f.spec);
    for (const auto& rs : scales) {
        GridField a = detail::tube_average_pc(pc, rs.first, rs.second);
        for (std::size_t i = 0; i < out.values.size(); ++i)
            out.values[i] = std::max(out.values[i].real(), a.values[i].real());
    }
    return out;
}

}  // namespace heisenflag
