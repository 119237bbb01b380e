#pragma once

// Sampled fields on a uniform box grid over H^nu.
//
// Grid convention: node-centred, z_i = -Z + i*dz with dz = 2Z/n_z (right
// endpoint excluded, so the layout is periodic-friendly and the origin is a
// sample when n is even). Same for t. Layout is t-fastest row-major over the
// 2*nu z-axes.

#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "group.hpp"

namespace heisenflag {

using cplx = std::complex<double>;

struct GridSpec {
    int nu = 1;
    double Z = 4.0;       // half extent of each z axis
    double T = 8.0;       // half extent of t
    int n_z = 16;         // samples per z axis
    int n_t = 64;         // samples in t
    bool t_periodic = false;

    GridSpec() = default;
    GridSpec(int nu_, double Z_, double T_, int n_z_, int n_t_, bool per)
        : nu(nu_), Z(Z_), T(T_), n_z(n_z_), n_t(n_t_), t_periodic(per) {
        validate();
    }

    void validate() const {
        if (nu < 1) throw std::invalid_argument("GridSpec: nu >= 1 required");
        if (n_z < 4 || n_z % 2 || n_t < 4 || n_t % 2)
            throw std::invalid_argument("GridSpec: n_z, n_t must be even and >= 4");
        if (!(Z > 0.0) || !(T > 0.0)) throw std::invalid_argument("GridSpec: extents must be positive");
    }

    double dz() const { return 2.0 * Z / n_z; }
    double dt() const { return 2.0 * T / n_t; }
    int z_axes() const { return 2 * nu; }

    std::size_t n_z_total() const {
        std::size_t n = 1;
        for (int a = 0; a < z_axes(); ++a) n *= static_cast<std::size_t>(n_z);
        return n;
    }
    std::size_t size() const { return n_z_total() * static_cast<std::size_t>(n_t); }

    double cell_volume() const {
        double v = dt();
        for (int a = 0; a < z_axes(); ++a) v *= dz();
        return v;
    }

    double z_coord(int i) const { return -Z + i * dz(); }
    double t_coord(int k) const { return -T + k * dt(); }

    // nearest grid index of a continuous coordinate, or -1 if off the box
    int z_index(double v) const {
        int i = static_cast<int>(std::lround((v + Z) / dz()));
        return (i >= 0 && i < n_z) ? i : -1;
    }
    int t_index(double v) const {
        if (t_periodic) {
            double w = std::fmod(v + T, 2.0 * T);
            if (w < 0) w += 2.0 * T;
            int k = static_cast<int>(std::lround(w / dt())) % n_t;
            return k;
        }
        int k = static_cast<int>(std::lround((v + T) / dt()));
        return (k >= 0 && k < n_t) ? k : -1;
    }

    bool operator==(const GridSpec& o) const {
        return nu == o.nu && Z == o.Z && T == o.T && n_z == o.n_z && n_t == o.n_t &&
               t_periodic == o.t_periodic;
    }
    bool operator!=(const GridSpec& o) const { return !(*this == o); }

    // FNV-1a over the defining fields; used by the eigencache and reports
    std::uint64_t hash() const {
        std::uint64_t h = 1469598103934665603ull;
        auto mix = [&h](const void* p, std::size_t n) {
            const auto* b = static_cast<const unsigned char*>(p);
            for (std::size_t i = 0; i < n; ++i) {
                h ^= b[i];
                h *= 1099511628211ull;
            }
        };
        mix(&nu, sizeof nu);
        mix(&Z, sizeof Z);
        mix(&T, sizeof T);
        mix(&n_z, sizeof n_z);
        mix(&n_t, sizeof n_t);
        int per = t_periodic ? 1 : 0;
        mix(&per, sizeof per);
        return h;
    }
};

// Multi-index over the z-axes of a spec, plus the t index.
struct GridIndex {
    std::vector<int> z;  // size 2*nu
    int t = 0;
};

class GridField {
  public:
    GridSpec spec;
    std::vector<cplx> values;  // t-fastest

    GridField() = default;
    explicit GridField(const GridSpec& s, cplx fill = cplx(0.0, 0.0))
        : spec(s), values(s.size(), fill) {}

    std::size_t size() const { return values.size(); }

    static std::size_t flat(const GridSpec& s, const GridIndex& gi) {
        std::size_t idx = 0;
        for (int a = 0; a < s.z_axes(); ++a) idx = idx * s.n_z + gi.z[a];
        return idx * s.n_t + gi.t;
    }

    cplx& at(const GridIndex& gi) { return values[flat(spec, gi)]; }
    cplx at(const GridIndex& gi) const { return values[flat(spec, gi)]; }

    // Sample coordinates of flat index.
    HPoint point(std::size_t idx) const {
        int it = static_cast<int>(idx % spec.n_t);
        std::size_t zi = idx / spec.n_t;
        HPoint p = HPoint::origin(spec.nu);
        for (int a = spec.z_axes() - 1; a >= 0; --a) {
            int i = static_cast<int>(zi % spec.n_z);
            zi /= spec.n_z;
            if (a < spec.nu)
                p.x[a] = spec.z_coord(i);
            else
                p.y[a - spec.nu] = spec.z_coord(i);
        }
        p.t = spec.t_coord(it);
        return p;
    }

    // Fill from a callback on sample points.
    void fill(const std::function<cplx(const HPoint&)>& fn) {
        for (std::size_t i = 0; i < values.size(); ++i) values[i] = fn(point(i));
    }
};

// Sampled function on R (the centre), node-centred like the t-axis.
struct Line {
    double half_extent = 8.0;
    int n = 64;
    bool periodic = false;
    std::vector<cplx> values;

    Line() = default;
    Line(double he, int n_, bool per = false)
        : half_extent(he), n(n_), periodic(per), values(static_cast<std::size_t>(n_), cplx(0.0)) {
        if (n < 4 || n % 2) throw std::invalid_argument("Line: n must be even and >= 4");
    }

    double dt() const { return 2.0 * half_extent / n; }
    double coord(int k) const { return -half_extent + k * dt(); }
};

// Boolean mask over the samples of a spec; the discrete stand-in for open sets.
struct GridSet {
    GridSpec spec;
    std::vector<std::uint8_t> mask;

    GridSet() = default;
    explicit GridSet(const GridSpec& s, bool fill = false)
        : spec(s), mask(s.size(), fill ? 1 : 0) {}

    std::size_t count() const {
        return static_cast<std::size_t>(std::accumulate(mask.begin(), mask.end(), std::size_t{0}));
    }
    double measure() const { return static_cast<double>(count()) * spec.cell_volume(); }
    bool empty() const { return count() == 0; }
};

// ---------------------------------------------------------------------------
// .hfld file format: one UTF-8 JSON header line, '\n', then the raw
// little-endian payload. Round trips are bit-exact.

namespace detail {
inline void require_little_endian() {
    const std::uint16_t probe = 1;
    if (*reinterpret_cast<const unsigned char*>(&probe) != 1)
        throw std::runtime_error("hfld: little-endian host required");
}
}  // namespace detail

inline void write_hfld(const std::string& path, const GridField& f, bool as_real = false) {
    detail::require_little_endian();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("hfld: cannot open for write: " + path);
    char header[512];
    std::snprintf(header, sizeof header,
                  "{\"version\":1,\"nu\":%d,\"Z\":%.17g,\"T\":%.17g,\"n_z\":%d,\"n_t\":%d,"
                  "\"t_periodic\":%s,\"dtype\":\"%s\",\"layout\":\"t-fastest\"}",
                  f.spec.nu, f.spec.Z, f.spec.T, f.spec.n_z, f.spec.n_t,
                  f.spec.t_periodic ? "true" : "false", as_real ? "f64" : "c128");
    os << header << '\n';
    if (as_real) {
        std::vector<double> re(f.values.size());
        for (std::size_t i = 0; i < re.size(); ++i) re[i] = f.values[i].real();
        os.write(reinterpret_cast<const char*>(re.data()),
                 static_cast<std::streamsize>(re.size() * sizeof(double)));
    } else {
        os.write(reinterpret_cast<const char*>(f.values.data()),
                 static_cast<std::streamsize>(f.values.size() * sizeof(cplx)));
    }
    if (!os) throw std::runtime_error("hfld: write failed: " + path);
}

GridField read_hfld(const std::string& path);  // defined in io.hpp (needs JSON)

}  // namespace heisenflag
