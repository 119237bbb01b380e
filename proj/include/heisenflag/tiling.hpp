#pragma once

// The self-similar tile grid: the fractal boundary function of the basic tile,
// tile location/membership, adapted rectangles, tubes and enlargements,
// maximal subrectangles of a grid set, and the Journe sums.
//
// The boundary function is the fixed point of the fibre substitution induced
// by delta_{2nu+1}(T_o) = union over the digit set D of g . T_o, namely
//   f(z) = [ f(z') + (nu+1) + S(w, z') ] / (2nu+1)^2,
// where Z = (2nu+1) z, w is the lattice part of Z and z' = Z - w. The
// substitution contracts by (2nu+1)^{-2} per step, so any tolerance is met in
// O(log 1/tol) steps. At z = 0 the fixed point is (nu+1)/((2nu+1)^2 - 1)
// = 1/(4nu): the top of the central fibre sits exactly half a tile height
// above zero, i.e. f(0) = 1/2 in tile-height units.

#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>

#include "flag_core.hpp"
#include "group.hpp"
#include "scales.hpp"

namespace heisenflag {

// ---------------------------------------------------------------------------
// Tile boundary function

class TileFunction {
  public:
    explicit TileFunction(int nu, double tol = 1e-12) : ctx_(nu), tol_(tol) {
        // safe a-priori bound |f| <= ((nu+1) + Smax) / (b^2 - 1)
        double smax = 4.0 * ctx_.nu * ctx_.nu * ctx_.nu;  // 4nu * nu * nu/... coarse
        fmax_ = (ctx_.nu + 1.0 + 2.0 * ctx_.nu * smax) / (ctx_.base() * ctx_.base() - 1.0);
    }

    int nu() const { return ctx_.nu; }
    double tol() const { return tol_; }

    // f(z) for z in Q0 = [-1/2, 1/2)^{2nu}; z given as 2nu coordinates
    double operator()(const std::vector<double>& z) const {
        Key key = quantize(z);
        {
            std::lock_guard<std::mutex> lk(mu_);
            auto it = cache_.find(key);
            if (it != cache_.end()) return it->second;
        }
        double v = evaluate(z, tol_);
        std::lock_guard<std::mutex> lk(mu_);
        cache_.emplace(std::move(key), v);
        return v;
    }

    // iterate the substitution until the bracket width drops below tol
    double evaluate(const std::vector<double>& z, double tol) const {
        const int b = ctx_.base();
        const double b2 = static_cast<double>(b) * b;
        std::vector<double> cur = z;
        double acc = 0.0, scale = 1.0;
        int max_steps = 64;
        for (int step = 0; step < max_steps; ++step) {
            scale /= b2;
            if (scale * 2.0 * fmax_ < tol) {
                return acc;  // remainder bracket is inside +-tol/2
            }
            std::vector<double> Z(cur.size()), w(cur.size());
            for (std::size_t a = 0; a < cur.size(); ++a) {
                Z[a] = b * cur[a];
                w[a] = std::floor(Z[a] + 0.5);
                cur[a] = Z[a] - w[a];
            }
            double S = 0.0;
            for (int j = 0; j < ctx_.nu; ++j)
                S += w[j + ctx_.nu] * cur[j] - w[j] * cur[j + ctx_.nu];
            S *= ctx_.twist();
            acc += scale * (ctx_.nu + 1.0 + S);
        }
        std::ostringstream os;
        os << "tile_height_fn: no convergence after " << max_steps
           << " steps; last bracket half-width " << scale * fmax_;
        throw std::runtime_error(os.str());
    }

    // value of the paper's displayed bracket (recorded for reference)
    std::pair<double, double> nominal_bounds() const {
        double lo = 1.0 / (4.0 * ctx_.nu * (ctx_.nu + 1.0));
        double hi = (2.0 * ctx_.nu + 1.0) / (4.0 * ctx_.nu * (ctx_.nu + 1.0));
        return {lo, hi};
    }

  private:
    using Key = std::vector<long long>;
    Key quantize(const std::vector<double>& z) const {
        Key k(z.size() + 1);
        double q = tol_ / 4.0;
        for (std::size_t a = 0; a < z.size(); ++a) k[a] = llround(z[a] / q);
        k[z.size()] = llround(1.0 / q);
        return k;
    }

    GroupContext ctx_;
    double tol_;
    double fmax_;
    mutable std::mutex mu_;
    mutable std::map<Key, double> cache_;
};

inline double tile_height_fn(const GroupContext& ctx, const std::vector<double>& z, double tol) {
    TileFunction f(ctx.nu, tol);
    return f.evaluate(z, tol);
}

// ---------------------------------------------------------------------------
// Tiles

struct TileId {
    int level = 0;                 // j
    std::vector<long long> zi;     // lattice z in Z^{2nu} (pre-dilation units)
    long long ti = 0;              // lattice t in (2nu)^{-1} Z, stored as ti/(2nu)

    bool operator==(const TileId& o) const {
        return level == o.level && ti == o.ti && zi == o.zi;
    }
    bool operator<(const TileId& o) const {
        if (level != o.level) return level < o.level;
        if (ti != o.ti) return ti < o.ti;
        return zi < o.zi;
    }
};

// centre of a tile: the lattice translate delta_{b^j}(g_Z)
inline HPoint tile_center(const GroupContext& ctx, const TileId& id) {
    double q = std::pow(ctx.base(), id.level);
    HPoint p = HPoint::origin(ctx.nu);
    for (int j = 0; j < ctx.nu; ++j) {
        p.x[j] = q * static_cast<double>(id.zi[j]);
        p.y[j] = q * static_cast<double>(id.zi[j + ctx.nu]);
    }
    p.t = q * q * static_cast<double>(id.ti) * ctx.t_lattice();
    return p;
}

inline double tile_width(const GroupContext& ctx, int level) {
    return std::pow(ctx.base(), level);
}
inline double tile_height(const GroupContext& ctx, int level) {
    double q = tile_width(ctx, level);
    return q * q * ctx.t_lattice();
}

struct LocateResult {
    bool boundary = false;
    TileId id;
};

// f-fibre top of the tile over a continuous z (normalised coords must lie in
// the tile's own cube); returns the absolute t of the fibre top.
inline double tile_fiber_top(const GroupContext& ctx, const TileFunction& f, const TileId& id,
                             const std::vector<double>& z_abs) {
    double q = tile_width(ctx, id.level);
    std::vector<double> zp(2 * ctx.nu);
    for (int a = 0; a < 2 * ctx.nu; ++a) zp[a] = z_abs[a] / q - static_cast<double>(id.zi[a]);
    double S = 0.0;
    for (int j = 0; j < ctx.nu; ++j)
        S += static_cast<double>(id.zi[j + ctx.nu]) * zp[j] -
             static_cast<double>(id.zi[j]) * zp[j + ctx.nu];
    S *= ctx.twist();
    double tau = static_cast<double>(id.ti) * ctx.t_lattice();
    return q * q * (tau + S + f(zp));
}

// Unique tile of T_j containing g; the Boundary flag fires when g is within
// tol (in level-j normalised units) of a tile face.
inline LocateResult tile_locate(const GroupContext& ctx, const TileFunction& f, const HPoint& g,
                                int level, double tol) {
    const double q = tile_width(ctx, level);
    LocateResult res;
    res.id.level = level;
    res.id.zi.resize(2 * ctx.nu);
    std::vector<double> zp(2 * ctx.nu);
    for (int a = 0; a < 2 * ctx.nu; ++a) {
        double v = (a < ctx.nu ? g.x[a] : g.y[a - ctx.nu]) / q;
        double w = std::floor(v + 0.5);
        res.id.zi[a] = static_cast<long long>(w);
        zp[a] = v - w;
        if (std::abs(zp[a] - 0.5) < tol || std::abs(zp[a] + 0.5) < tol) res.boundary = true;
    }
    double S = 0.0;
    for (int j = 0; j < ctx.nu; ++j)
        S += static_cast<double>(res.id.zi[j + ctx.nu]) * zp[j] -
             static_cast<double>(res.id.zi[j]) * zp[j + ctx.nu];
    S *= ctx.twist();
    double fz = f(zp);
    double tn = g.t / (q * q);  // normalised t
    // need tau lattice value with tn - tau - S in [fz - 1/(2nu), fz)
    double raw = tn - S - fz;  // tau in (raw, raw + 1/(2nu)]
    double u = raw * 2.0 * ctx.nu;
    long long ti = static_cast<long long>(std::floor(u)) + 1;
    // half-open care at the exact lattice point
    if (u - std::floor(u) > 1.0 - 1e-13) ++ti;
    res.id.ti = ti;
    double tau = static_cast<double>(ti) * ctx.t_lattice();
    double tpp = tn - tau - S;  // in [fz - 1/2nu, fz)
    if (std::abs(tpp - fz) < tol || std::abs(tpp - (fz - ctx.t_lattice())) < tol)
        res.boundary = true;
    return res;
}

inline bool tile_member(const GroupContext& ctx, const TileFunction& f, const TileId& id,
                        const HPoint& g, double tol, bool* boundary = nullptr) {
    LocateResult r = tile_locate(ctx, f, g, id.level, tol);
    if (boundary) *boundary = r.boundary;
    return r.id == id;
}

// ---------------------------------------------------------------------------
// Adapted rectangles and tubes

struct AdaptedRect {
    int width_level = 0;             // j
    int height_level = 0;            // j' >= j
    std::vector<long long> zi;       // level-j z-lattice of the projected cube
    long long ti = 0;                // t-lattice of the tall tile at level j'

    bool operator==(const AdaptedRect& o) const {
        return width_level == o.width_level && height_level == o.height_level && ti == o.ti &&
               zi == o.zi;
    }
    bool operator<(const AdaptedRect& o) const {
        if (width_level != o.width_level) return width_level < o.width_level;
        if (height_level != o.height_level) return height_level < o.height_level;
        if (ti != o.ti) return ti < o.ti;
        return zi < o.zi;
    }
};

inline double rect_width(const GroupContext& ctx, const AdaptedRect& R) {
    return tile_width(ctx, R.width_level);
}
inline double rect_height(const GroupContext& ctx, const AdaptedRect& R) {
    return tile_height(ctx, R.height_level);
}
inline double rect_measure(const GroupContext& ctx, const AdaptedRect& R) {
    return std::pow(rect_width(ctx, R), 2.0 * ctx.nu) * rect_height(ctx, R);
}

// lattice of the tall tile's cube (level j') derived from the level-j cube
inline std::vector<long long> rect_tall_zi(const GroupContext& ctx, const AdaptedRect& R) {
    std::vector<long long> out(R.zi.size());
    long long scale = 1;
    for (int k = R.width_level; k < R.height_level; ++k) scale *= ctx.base();
    for (std::size_t a = 0; a < R.zi.size(); ++a) {
        // cube centre in level-j' units is zi[a]/scale; its lattice point is
        // the rounding of that value (cubes nest b-adically)
        long long v = R.zi[a];
        long long r = ((v % scale) + scale) % scale;
        out[a] = (v - r) / scale + (2 * r + scale > 2 * (scale - 1) + 1 ? 0 : 0);
        // nearest lattice with offset in [-1/2, 1/2): floor(v/scale + 1/2)
        double u = static_cast<double>(v) / static_cast<double>(scale);
        out[a] = static_cast<long long>(std::floor(u + 0.5));
    }
    return out;
}

inline TileId rect_tall_tile(const GroupContext& ctx, const AdaptedRect& R) {
    TileId t;
    t.level = R.height_level;
    t.zi = rect_tall_zi(ctx, R);
    t.ti = R.ti;
    return t;
}

inline HPoint rect_center(const GroupContext& ctx, const TileFunction& f, const AdaptedRect& R) {
    double q = rect_width(ctx, R);
    std::vector<double> cq(2 * ctx.nu);
    for (int a = 0; a < 2 * ctx.nu; ++a) cq[a] = q * static_cast<double>(R.zi[a]);
    double top = tile_fiber_top(ctx, f, rect_tall_tile(ctx, R), cq);
    HPoint c = HPoint::origin(ctx.nu);
    for (int j = 0; j < ctx.nu; ++j) {
        c.x[j] = cq[j];
        c.y[j] = cq[j + ctx.nu];
    }
    c.t = top - 0.5 * rect_height(ctx, R);
    return c;
}

// membership: z in the projected cube and g in the tall tile
inline bool rect_contains(const GroupContext& ctx, const TileFunction& f, const AdaptedRect& R,
                          const HPoint& g, double tol, bool* boundary = nullptr) {
    double q = rect_width(ctx, R);
    bool bnd = false;
    bool inside = true;
    for (int a = 0; a < 2 * ctx.nu; ++a) {
        double v = (a < ctx.nu ? g.x[a] : g.y[a - ctx.nu]) / q - static_cast<double>(R.zi[a]);
        if (v < -0.5 || v >= 0.5) inside = false;
        if (std::abs(v - 0.5) < tol || std::abs(v + 0.5) < tol) bnd = true;
    }
    if (inside) {
        bool tb = false;
        inside = tile_member(ctx, f, rect_tall_tile(ctx, R), g, tol, &tb);
        bnd = bnd || tb;
    }
    if (boundary) *boundary = bnd;
    return inside && !bnd ? true : (inside && bnd ? false : false) || (inside && !bnd);
}

struct Tube {
    HPoint center;
    double radius = 1.0;       // r
    double half_height = 1.0;  // s
};

inline double tube_measure(const GroupContext& ctx, const Tube& t) {
    return std::pow(2.0, 2.0 * ctx.nu + 1.0) * std::pow(t.radius, 2.0 * ctx.nu) *
           (t.radius * t.radius + t.half_height);
}

inline bool tube_contains(const GroupContext& ctx, const Tube& tb, const HPoint& g) {
    HPoint w = mul(ctx, inv(tb.center), g);
    for (int j = 0; j < ctx.nu; ++j)
        if (std::abs(w.x[j]) >= tb.radius || std::abs(w.y[j]) >= tb.radius) return false;
    return std::abs(w.t) < tb.radius * tb.radius + tb.half_height;
}

// R^{*,kappa} = T(cent, kappa q/2, kappa^2 (4h + q^2)/8)
inline Tube enlarge(const GroupContext& ctx, const TileFunction& f, const AdaptedRect& R,
                    double kappa) {
    if (kappa < 1.0) throw std::domain_error("enlarge: kappa >= 1 required");
    double q = rect_width(ctx, R), h = rect_height(ctx, R);
    Tube t;
    t.center = rect_center(ctx, f, R);
    t.radius = kappa * q / 2.0;
    t.half_height = kappa * kappa * (4.0 * h + q * q) / 8.0;
    return t;
}

inline double enlargement_measure(const GroupContext& ctx, const AdaptedRect& R, double kappa) {
    double q = rect_width(ctx, R), h = rect_height(ctx, R);
    return std::pow(kappa, ctx.D()) * std::pow(q, 2.0 * ctx.nu) * (h + q * q / 4.0);
}

// proof-side constant of the "where M_F is big" lemma (the one the atomic
// construction actually uses)
inline double flag_maximal_floor(const GroupContext& ctx, double kappa) {
    return 1.0 / (std::pow(2.0, 2.0 * ctx.nu) * std::pow(kappa, ctx.D()) * (5.0 * ctx.nu + 2.0));
}

// ---------------------------------------------------------------------------
// Rectangle <-> tube

// An adapted rectangle R with R subset T subset R^{*,(2nu+1)^2}; verified by
// sampled containment, shrinking the width if the first guess fails.
inline std::optional<AdaptedRect> tube_to_rect(const GroupContext& ctx, const TileFunction& f,
                                               const Tube& tb, int samples = 200,
                                               unsigned seed = 12345) {
    const int b = ctx.base();
    double kappa = static_cast<double>(b) * b;
    Rng rng(seed);
    for (int jw = static_cast<int>(std::floor(std::log(tb.radius) / std::log(b)));
         jw > static_cast<int>(std::floor(std::log(tb.radius) / std::log(b))) - 3; --jw) {
        double q = tile_width(ctx, jw);
        AdaptedRect R;
        R.width_level = jw;
        R.zi.resize(2 * ctx.nu);
        for (int a = 0; a < 2 * ctx.nu; ++a) {
            double c = a < ctx.nu ? tb.center.x[a] : tb.center.y[a - ctx.nu];
            R.zi[a] = static_cast<long long>(std::floor(c / q + 0.5));
        }
        // tallest j' with h <= half of the tube t-extent, at least jw
        int jh = jw;
        while (tile_height(ctx, jh + 1) <=
               0.5 * (tb.half_height + tb.radius * tb.radius))
            ++jh;
        for (; jh >= jw; --jh) {
            std::vector<double> cq(2 * ctx.nu);
            double hq = tile_width(ctx, jw);
            for (int a = 0; a < 2 * ctx.nu; ++a) cq[a] = hq * static_cast<double>(R.zi[a]);
            // locate the tall tile containing the tube centre column
            HPoint probe = tb.center;
            for (int j = 0; j < ctx.nu; ++j) {
                probe.x[j] = cq[j];
                probe.y[j] = cq[j + ctx.nu];
            }
            LocateResult lr = tile_locate(ctx, f, probe, jh, f.tol() * 10);
            AdaptedRect cand = R;
            cand.height_level = jh;
            // translate tall-tile identity into the rectangle's ti
            cand.ti = lr.id.ti;
            // verify R subset T on random interior samples of R
            bool ok = true;
            double h = rect_height(ctx, cand);
            HPoint cent = rect_center(ctx, f, cand);
            for (int s = 0; s < samples && ok; ++s) {
                HPoint p = cent;
                for (int j = 0; j < ctx.nu; ++j) {
                    p.x[j] = cent.x[j] + rng.uniform(-0.49, 0.49) * q;
                    p.y[j] = cent.y[j] + rng.uniform(-0.49, 0.49) * q;
                }
                p.t = cent.t + rng.uniform(-0.49, 0.49) * h;
                bool bnd = false;
                if (rect_contains(ctx, f, cand, p, 1e-9, &bnd) && !bnd)
                    ok = tube_contains(ctx, tb, p);
            }
            if (!ok) continue;
            // verify T subset R^{*,(2nu+1)^2} on random tube samples
            Tube big = enlarge(ctx, f, cand, kappa);
            bool ok2 = true;
            for (int s = 0; s < samples && ok2; ++s) {
                HPoint w = HPoint::origin(ctx.nu);
                for (int j = 0; j < ctx.nu; ++j) {
                    w.x[j] = rng.uniform(-tb.radius, tb.radius);
                    w.y[j] = rng.uniform(-tb.radius, tb.radius);
                }
                w.t = rng.uniform(-1.0, 1.0) * (tb.radius * tb.radius + tb.half_height);
                HPoint p = mul(ctx, tb.center, w);
                if (tube_contains(ctx, tb, p)) ok2 = tube_contains(ctx, big, p);
            }
            if (ok2) return cand;
        }
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Rectangles on a grid set

// all in-box sample indices of R (empty if R pokes outside the grid box)
inline std::vector<std::size_t> rect_samples(const GroupContext& ctx, const TileFunction& f,
                                             const GridSpec& spec, const AdaptedRect& R) {
    std::vector<std::size_t> out;
    const double q = rect_width(ctx, R), h = rect_height(ctx, R);
    detail::ZTable zt(spec);
    TileId tall = rect_tall_tile(ctx, R);
    const int nt = spec.n_t;
    for (std::size_t z = 0; z < spec.n_z_total(); ++z) {
        bool in_cube = true;
        for (int a = 0; a < 2 * ctx.nu && in_cube; ++a) {
            double v = zt.coord[z][a] / q - static_cast<double>(R.zi[a]);
            if (v < -0.5 - 1e-12 || v >= 0.5 - 1e-12) in_cube = false;
        }
        if (!in_cube) continue;
        double top = tile_fiber_top(ctx, f, tall, zt.coord[z]);
        int lo = detail::window_lo(top - h / 2.0, h / 2.0, spec.T, spec.dt());
        int hi = detail::window_hi(top - h / 2.0, h / 2.0, spec.T, spec.dt());
        for (int t = lo; t <= hi; ++t) {
            if (t < 0 || t >= nt) continue;
            double tv = spec.t_coord(t);
            if (tv >= top - h - 1e-12 && tv < top - 1e-12) out.push_back(z * nt + t);
        }
    }
    return out;
}

struct MaximalRects {
    std::vector<AdaptedRect> rects;
    int width_level_lo = 0, width_level_hi = 0;    // searched band (truncation record)
    int height_level_hi = 0;
};

namespace detail {

inline bool cube_ancestor(const GroupContext& ctx, const AdaptedRect& R, int j2,
                          std::vector<long long>& out) {
    long long scale = 1;
    for (int k = R.width_level; k < j2; ++k) scale *= ctx.base();
    out.resize(R.zi.size());
    for (std::size_t a = 0; a < R.zi.size(); ++a) {
        double u = static_cast<double>(R.zi[a]) / static_cast<double>(scale);
        out[a] = static_cast<long long>(std::floor(u + 0.5));
    }
    return true;
}

}  // namespace detail

// All maximal adapted rectangles whose samples lie inside omega.
inline MaximalRects maximal_rects(const GroupContext& ctx, const TileFunction& f,
                                  const GridSet& omega, int width_level_lo, int width_level_hi) {
    const GridSpec& spec = omega.spec;
    MaximalRects result;
    result.width_level_lo = width_level_lo;
    result.width_level_hi = width_level_hi;
    // heights up to the box extent
    int jh_max = width_level_hi;
    while (tile_height(ctx, jh_max + 1) <= 2.0 * spec.T) ++jh_max;
    result.height_level_hi = jh_max;

    std::set<AdaptedRect> candidates;
    for (int j = width_level_lo; j <= width_level_hi; ++j) {
        double q = tile_width(ctx, j);
        long long zlo = static_cast<long long>(std::floor(-spec.Z / q - 0.5)) - 1;
        long long zhi = static_cast<long long>(std::ceil(spec.Z / q + 0.5)) + 1;
        std::vector<long long> zi(2 * ctx.nu, zlo);
        bool done = false;
        while (!done) {
            for (int jp = j; jp <= jh_max; ++jp) {
                double h = tile_height(ctx, jp);
                long long tlo = static_cast<long long>(std::floor(-spec.T / (h))) - 3;
                long long thi = static_cast<long long>(std::ceil(spec.T / (h))) + 3;
                // the tall tile's ti in its own units: one tile height = one
                // lattice step of (2nu)^{-1} at normalised scale, so ti steps
                // through consecutive integers
                for (long long ti = tlo * 1; ti <= thi; ++ti) {
                    AdaptedRect R;
                    R.width_level = j;
                    R.height_level = jp;
                    R.zi = zi;
                    R.ti = ti;
                    auto cells = rect_samples(ctx, f, spec, R);
                    if (cells.empty()) continue;
                    bool inside = true;
                    for (auto c : cells)
                        if (!omega.mask[c]) {
                            inside = false;
                            break;
                        }
                    if (inside) candidates.insert(R);
                }
            }
            int a = static_cast<int>(zi.size()) - 1;
            while (a >= 0) {
                if (++zi[a] <= zhi) break;
                zi[a] = zlo;
                --a;
            }
            if (a < 0) done = true;
        }
    }
    // maximality: drop R if any strict ancestor combination is a candidate
    for (const auto& R : candidates) {
        bool maximal = true;
        for (int j2 = R.width_level; j2 <= width_level_hi && maximal; ++j2) {
            for (int jp2 = std::max(j2, R.height_level); jp2 <= jh_max && maximal; ++jp2) {
                if (j2 == R.width_level && jp2 == R.height_level) continue;
                AdaptedRect A;
                A.width_level = j2;
                A.height_level = jp2;
                detail::cube_ancestor(ctx, R, j2, A.zi);
                // ancestor tall tile of R's tall tile at level jp2
                TileId tall = rect_tall_tile(ctx, R);
                HPoint c = tile_center(ctx, tall);
                // nudge into the tile interior: centre is in the tile
                TileFunction& ff = const_cast<TileFunction&>(f);
                LocateResult lr = tile_locate(ctx, ff, c, jp2, 1e-12);
                A.ti = lr.id.ti;
                if (candidates.count(A)) maximal = false;
            }
        }
        if (maximal) result.rects.push_back(R);
    }
    return result;
}

// unique adapted rectangle containing R that is a translate of delta_b R
inline AdaptedRect rect_dagger(const GroupContext& ctx, const TileFunction& f,
                               const AdaptedRect& R) {
    AdaptedRect D;
    D.width_level = R.width_level + 1;
    D.height_level = R.height_level + 1;
    detail::cube_ancestor(ctx, R, D.width_level, D.zi);
    TileId tall = rect_tall_tile(ctx, R);
    HPoint c = tile_center(ctx, tall);
    LocateResult lr = tile_locate(ctx, f, c, R.height_level + 1, 1e-12);
    D.ti = lr.id.ti;
    return D;
}

inline bool rect_subset(const GroupContext& ctx, const AdaptedRect& A, const AdaptedRect& B) {
    if (A.width_level > B.width_level || A.height_level > B.height_level) return false;
    std::vector<long long> anc;
    detail::cube_ancestor(ctx, A, B.width_level, anc);
    if (anc != B.zi) return false;
    // tall tiles nest iff B's tall tile is the ancestor of A's
    AdaptedRect probe = A;
    while (probe.height_level < B.height_level) {
        TileFunction f(ctx.nu);
        TileId tall = rect_tall_tile(ctx, probe);
        HPoint c = tile_center(ctx, tall);
        LocateResult lr = tile_locate(ctx, f, c, probe.height_level + 1, 1e-12);
        probe.height_level += 1;
        probe.ti = lr.id.ti;
    }
    return probe.ti == B.ti ||
           rect_tall_zi(ctx, probe) != rect_tall_zi(ctx, B) ? probe.ti == B.ti : true;
}

// widest maximal rectangle of omega_tilde containing R (ties by volume)
inline AdaptedRect rect_up(const GroupContext& ctx, const TileFunction& f, const AdaptedRect& R,
                           const GridSet& omega_tilde, int level_lo, int level_hi) {
    MaximalRects M = maximal_rects(ctx, f, omega_tilde, level_lo, level_hi);
    const AdaptedRect* best = nullptr;
    for (const auto& S : M.rects) {
        if (!rect_subset(ctx, R, S)) continue;
        if (!best || S.width_level > best->width_level ||
            (S.width_level == best->width_level &&
             rect_measure(ctx, S) > rect_measure(ctx, *best)))
            best = &S;
    }
    if (!best) throw std::runtime_error("rect_up: R is not inside omega_tilde");
    return *best;
}

enum class JourneAxis { Width, Height };

struct JourneResult {
    double sum = 0.0;
    double omega_measure = 0.0;
    double c_delta = 0.0;  // sum / |Omega|
    std::size_t n_rects = 0;
};

// Journe sum over the maximal rectangles of omega, with R^ from the alpha-
// enlarged set {M_F chi_Omega > alpha}.
inline JourneResult journe_sum(const GroupContext& ctx, const TileFunction& f,
                               const GridSet& omega, double delta, JourneAxis axis, double alpha,
                               int level_lo, int level_hi) {
    if (!(delta > 0.0)) throw std::domain_error("journe_sum: delta > 0 required");
    JourneResult out;
    out.omega_measure = omega.measure();
    if (omega.empty()) return out;

    GridField ind(omega.spec);
    for (std::size_t i = 0; i < ind.values.size(); ++i)
        ind.values[i] = omega.mask[i] ? 1.0 : 0.0;
    GridField mf = flag_maximal_over(ind, ScaleGrid::for_spec(omega.spec).pairs());
    GridSet tilde(omega.spec);
    for (std::size_t i = 0; i < mf.values.size(); ++i)
        tilde.mask[i] = (mf.values[i].real() > alpha || omega.mask[i]) ? 1 : 0;

    MaximalRects M = maximal_rects(ctx, f, omega, level_lo, level_hi);
    MaximalRects Mt = maximal_rects(ctx, f, tilde, level_lo, level_hi);
    out.n_rects = M.rects.size();
    for (const auto& R : M.rects) {
        const AdaptedRect* up = nullptr;
        for (const auto& S : Mt.rects) {
            if (!rect_subset(ctx, R, S)) continue;
            if (!up || S.width_level > up->width_level ||
                (S.width_level == up->width_level &&
                 rect_measure(ctx, S) > rect_measure(ctx, *up)))
                up = &S;
        }
        double ratio = 1.0;
        if (up) {
            ratio = axis == JourneAxis::Width
                        ? rect_width(ctx, R) / rect_width(ctx, *up)
                        : rect_height(ctx, R) / rect_height(ctx, *up);
        }
        out.sum += std::pow(ratio, delta) * rect_measure(ctx, R);
    }
    out.c_delta = out.omega_measure > 0 ? out.sum / out.omega_measure : 0.0;
    return out;
}

// CSV serialisation of rectangle lists: columns cx..., ct, j, j'
inline std::string rects_to_csv(const GroupContext& ctx, const TileFunction& f,
                                const std::vector<AdaptedRect>& rects) {
    std::ostringstream os;
    for (int j = 0; j < ctx.nu; ++j) os << "cx" << j + 1 << ",";
    for (int j = 0; j < ctx.nu; ++j) os << "cy" << j + 1 << ",";
    os << "ct,j,jp\n";
    os.setf(std::ios::fmtflags(0), std::ios::floatfield);
    os.precision(17);
    for (const auto& R : rects) {
        HPoint c = rect_center(ctx, f, R);
        for (int j = 0; j < ctx.nu; ++j) os << c.x[j] << ",";
        for (int j = 0; j < ctx.nu; ++j) os << c.y[j] << ",";
        os << c.t << "," << R.width_level << "," << R.height_level << "\n";
    }
    return os.str();
}

}  // namespace heisenflag
