#pragma once

// Dyadic scale grids (r, s) = (2^j, 2^k) clipped to the band the grid can
// resolve. Continuous suprema and integrals over scale are approximated on
// this grid; results should be read together with the band they used.

#include <cmath>
#include <vector>

#include "grid.hpp"

namespace heisenflag {

struct ScaleGrid {
    std::vector<double> r_values;
    std::vector<double> s_values;

    static std::vector<double> dyadic(double lo, double hi) {
        std::vector<double> v;
        int jlo = static_cast<int>(std::ceil(std::log2(lo) - 1e-9));
        int jhi = static_cast<int>(std::floor(std::log2(hi) + 1e-9));
        for (int j = jlo; j <= jhi; ++j) v.push_back(std::ldexp(1.0, j));
        if (v.empty()) v.push_back(lo);
        return v;
    }

    // resolvable band [2*delta, extent/2] on each axis
    static ScaleGrid for_spec(const GridSpec& s) {
        ScaleGrid g;
        g.r_values = dyadic(2.0 * s.dz(), s.Z / 2.0);
        g.s_values = dyadic(2.0 * s.dt(), s.T / 2.0);
        return g;
    }

    std::vector<std::pair<double, double>> pairs() const {
        std::vector<std::pair<double, double>> p;
        for (double r : r_values)
            for (double s : s_values) p.emplace_back(r, s);
        return p;
    }
};

}  // namespace heisenflag
