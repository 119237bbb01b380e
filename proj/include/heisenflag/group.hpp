#pragma once

// Heisenberg group H^nu with the nonstandard symplectic factor 4*nu and the
// l^infinity gauge norm, so that the gauge is a true norm on R^{2nu+1}.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace heisenflag {

struct GroupContext {
    int nu = 1;

    explicit GroupContext(int nu_ = 1) : nu(nu_) {
        if (nu < 1) throw std::invalid_argument("GroupContext: nu must be >= 1");
    }

    // homogeneous dimension
    int D() const { return 2 * nu + 2; }
    // tiling base
    int base() const { return 2 * nu + 1; }
    // symplectic factor in the group law
    double twist() const { return 4.0 * nu; }
    // t-lattice spacing of the integer subgroup
    double t_lattice() const { return 1.0 / (2.0 * nu); }
};

// Group element (z, t) with z = x + i y in C^nu.
struct HPoint {
    std::vector<double> x;  // Re z_j
    std::vector<double> y;  // Im z_j
    double t = 0.0;

    HPoint() = default;
    HPoint(std::vector<double> x_, std::vector<double> y_, double t_)
        : x(std::move(x_)), y(std::move(y_)), t(t_) {
        if (x.size() != y.size()) throw std::invalid_argument("HPoint: x/y size mismatch");
    }

    static HPoint origin(int nu) {
        return HPoint(std::vector<double>(nu, 0.0), std::vector<double>(nu, 0.0), 0.0);
    }

    int nu() const { return static_cast<int>(x.size()); }
};

// Symplectic form S(a, b) = 4 nu (<a.y, b.x> - <a.x, b.y>).
inline double symplectic(const GroupContext& ctx, const HPoint& a, const HPoint& b) {
    double s = 0.0;
    for (int j = 0; j < ctx.nu; ++j) s += a.y[j] * b.x[j] - a.x[j] * b.y[j];
    return ctx.twist() * s;
}

// (a.z + b.z, a.t + b.t + S(a, b))
inline HPoint mul(const GroupContext& ctx, const HPoint& a, const HPoint& b) {
    HPoint r = a;
    for (int j = 0; j < ctx.nu; ++j) {
        r.x[j] += b.x[j];
        r.y[j] += b.y[j];
    }
    r.t = a.t + b.t + symplectic(ctx, a, b);
    return r;
}

inline HPoint inv(const HPoint& a) {
    HPoint r = a;
    for (auto& v : r.x) v = -v;
    for (auto& v : r.y) v = -v;
    r.t = -a.t;
    return r;
}

// delta_r(z, t) = (r z, r^2 t), r > 0
inline HPoint dilate(const HPoint& a, double r) {
    if (!(r > 0.0)) throw std::domain_error("dilate: r must be positive");
    HPoint out = a;
    for (auto& v : out.x) v *= r;
    for (auto& v : out.y) v *= r;
    out.t = a.t * r * r;
    return out;
}

// max{|x_1|, |y_1|, ..., |x_nu|, |y_nu|, |t|^{1/2}}
inline double gauge_norm(const HPoint& a) {
    double m = 0.0;
    for (double v : a.x) m = std::max(m, std::abs(v));
    for (double v : a.y) m = std::max(m, std::abs(v));
    return std::max(m, std::sqrt(std::abs(a.t)));
}

// (|z|^4 + 4 nu^2 t^2)^{1/4} with |z| the Euclidean norm
inline double koranyi_norm(const GroupContext& ctx, const HPoint& a) {
    double z2 = 0.0;
    for (double v : a.x) z2 += v * v;
    for (double v : a.y) z2 += v * v;
    double n4 = z2 * z2 + 4.0 * ctx.nu * ctx.nu * a.t * a.t;
    return std::pow(n4, 0.25);
}

enum class Metric { Gauge, Koranyi };

inline double distance(const GroupContext& ctx, const HPoint& a, const HPoint& b,
                       Metric metric = Metric::Gauge) {
    HPoint d = mul(ctx, inv(b), a);
    return metric == Metric::Gauge ? gauge_norm(d) : koranyi_norm(ctx, d);
}

// d <= d_K <= (4 nu^2 + 2 nu)^{1/4} d
inline double norm_comparison_constant(const GroupContext& ctx) {
    return std::pow(4.0 * ctx.nu * ctx.nu + 2.0 * ctx.nu, 0.25);
}

}  // namespace heisenflag
