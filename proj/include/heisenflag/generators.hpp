#pragma once

// Named test fields: gaussian bumps, particles, the proper-subspace witness,
// and seeded random band-limited fields.

#include "atoms.hpp"

namespace heisenflag {

inline GridField gen_zero(const GridSpec& spec) { return GridField(spec); }

// separable bump exp(-|z|^2/wz^2 - t^2/wt^2) centred at c
inline GridField gen_gaussian(const GridSpec& spec, double wz = 1.0, double wt = 1.0,
                              const HPoint* centre = nullptr) {
    GridField f(spec);
    HPoint c = centre ? *centre : HPoint::origin(spec.nu);
    f.fill([&](const HPoint& p) {
        double z2 = 0.0;
        for (int a = 0; a < spec.nu; ++a) {
            double dx = p.x[a] - c.x[a], dy = p.y[a] - c.y[a];
            z2 += dx * dx + dy * dy;
        }
        double dt = p.t - c.t;
        return cplx(std::exp(-z2 / (wz * wz) - dt * dt / (wt * wt)), 0.0);
    });
    return f;
}

// white noise -> sharp band limit onto the covered two-parameter band,
// normalised to unit L2
inline GridField gen_random_bandlimited(const DecompositionFamily& fam, std::uint64_t seed) {
    GridField f(fam.calc->spec);
    Rng rng(seed);
    for (auto& v : f.values) v = cplx(rng.normal(), rng.normal());
    f = decomposition_band_limit(fam, f);
    double n = l2_norm(f);
    if (n > 0)
        for (auto& v : f.values) v /= n;
    return f;
}

inline GridField gen_random_bandlimited(const LPFamily& fam, std::uint64_t seed) {
    GridField f(fam.calc->spec);
    Rng rng(seed);
    for (auto& v : f.values) v = cplx(rng.normal(), rng.normal());
    f = band_limit(fam, f);
    double n = l2_norm(f);
    if (n > 0)
        for (auto& v : f.values) v /= n;
    return f;
}

// C^inf-style window (1 - u^2)_+^4 on the rectangle's own cube/fibre; the
// canonical compactly supported particle source
inline GridField gen_rect_bump(const GroupContext& ctx, const TileFunction& tf,
                               const GridSpec& spec, const AdaptedRect& R) {
    GridField b(spec);
    HPoint c = rect_center(ctx, tf, R);
    double q = rect_width(ctx, R), h = rect_height(ctx, R);
    b.fill([&](const HPoint& p) -> cplx {
        double w = 1.0;
        for (int a = 0; a < spec.nu; ++a) {
            double ux = 2.0 * (p.x[a] - c.x[a]) / q;
            double uy = 2.0 * (p.y[a] - c.y[a]) / q;
            double vx = 1.0 - ux * ux, vy = 1.0 - uy * uy;
            if (vx <= 0.0 || vy <= 0.0) return cplx(0.0);
            w *= vx * vx * vx * vx * vy * vy * vy * vy;
        }
        double ut = 2.0 * (p.t - c.t) / h;
        double vt = 1.0 - ut * ut;
        if (vt <= 0.0) return cplx(0.0);
        return cplx(w * vt * vt * vt * vt, 0.0);
    });
    return b;
}

// particle from a compactly supported bump in the width-level-0 rectangle at
// the origin, a-normalised to unit L2
inline Particle gen_particle(const GroupContext& ctx, const TileFunction& tf,
                             const GridSpec& spec, int M, int N, double kappa,
                             int width_level = 0, int height_level = 0) {
    AdaptedRect R;
    R.width_level = width_level;
    R.height_level = std::max(width_level, height_level);
    R.zi.assign(2 * ctx.nu, 0);
    R.ti = tile_locate(ctx, tf, HPoint::origin(ctx.nu), R.height_level, 1e-12).id.ti;
    GridField b = gen_rect_bump(ctx, tf, spec, R);
    Particle p = make_particle(ctx, tf, b, R, M, N, kappa);
    double n = l2_norm(p.a);
    if (n > 0) {
        for (auto& v : p.a.values) v /= n;
        for (auto& v : p.b.values) v /= n;
    }
    return p;
}

// proper-subspace witness a(z,t) = psi(z) phi(t): psi mean-zero with
// int |psi| = 1, phi >= 0 with mass 1; mean_zero=false gives the control
inline GridField gen_witness(const GridSpec& spec, bool mean_zero = true) {
    GridField f(spec);
    // psi(z) = c x_1 (1-|z|^2)_+^2 (mean zero by oddness), or its modulus
    f.fill([&](const HPoint& p) -> cplx {
        double z2 = 0.0;
        for (int a = 0; a < spec.nu; ++a) z2 += p.x[a] * p.x[a] + p.y[a] * p.y[a];
        double v = 1.0 - z2;
        if (v <= 0.0) return cplx(0.0);
        double psi = p.x[0] * v * v;
        if (!mean_zero) psi = std::abs(psi);
        double ut = p.t;
        double w = 1.0 - ut * ut;
        if (w <= 0.0) return cplx(0.0);
        return cplx(psi * w * w, 0.0);
    });
    // normalise: int |psi| dz = 1 and int phi dt = 1 jointly -> int |f| = 1
    double l1 = l1_norm(f);
    if (l1 > 0)
        for (auto& v : f.values) v /= l1;
    return f;
}

}  // namespace heisenflag
