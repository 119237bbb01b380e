#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <random>
#include <stdexcept>
#include <thread>
#include <vector>

namespace heisenflag {

// Process-wide thread cap (0 = hardware concurrency); set from the CLI.
inline std::atomic<unsigned>& thread_limit() {
    static std::atomic<unsigned> v{0};
    return v;
}

// Chunked parallel for over [0, n). Deterministic work split; safe for pure
// per-index writes.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
    unsigned hw = thread_limit().load();
    if (hw == 0) hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (n < 2 || hw == 1) {
        body(0, n);
        return;
    }
    unsigned nthreads = static_cast<unsigned>(std::min<std::size_t>(hw, n));
    std::vector<std::thread> threads;
    threads.reserve(nthreads);
    std::size_t chunk = (n + nthreads - 1) / nthreads;
    for (unsigned k = 0; k < nthreads; ++k) {
        std::size_t lo = k * chunk;
        std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        threads.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    for (auto& th : threads) th.join();
}

// Pairwise (cascade) summation: deterministic and accurate to ~eps*log n.
template <typename T>
inline T pairwise_sum(const std::vector<T>& v, std::size_t lo, std::size_t hi) {
    std::size_t n = hi - lo;
    if (n == 0) return T{};
    if (n <= 8) {
        T s{};
        for (std::size_t i = lo; i < hi; ++i) s += v[i];
        return s;
    }
    std::size_t mid = lo + n / 2;
    return pairwise_sum(v, lo, mid) + pairwise_sum(v, mid, hi);
}

template <typename T>
inline T pairwise_sum(const std::vector<T>& v) {
    return pairwise_sum(v, 0, v.size());
}

// In-place radix-2 FFT; n must be a power of two. inverse=true applies 1/n.
inline void fft_pow2(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) throw std::invalid_argument("fft_pow2: size must be 2^k");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                auto u = a[i + k];
                auto v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    if (inverse) {
        for (auto& x : a) x /= static_cast<double>(n);
    }
}

// Deterministic seeded generator. mt19937_64 is specified by the standard, so
// sequences are reproducible across platforms; reports record the algorithm.
struct Rng {
    std::mt19937_64 engine;
    explicit Rng(std::uint64_t seed) : engine(seed) {}
    static constexpr const char* algorithm() { return "mt19937_64"; }

    double uniform(double a, double b) {
        std::uniform_real_distribution<double> d(a, b);
        return d(engine);
    }
    double normal(double mu = 0.0, double sigma = 1.0) {
        std::normal_distribution<double> d(mu, sigma);
        return d(engine);
    }
    int sign() { return (engine() & 1ull) ? 1 : -1; }
    std::uint64_t integer(std::uint64_t lo, std::uint64_t hi) {  // inclusive
        std::uniform_int_distribution<std::uint64_t> d(lo, hi);
        return d(engine);
    }
};

// Least-squares fit y = a + b*x; returns {a, b, r_squared}.
struct LineFit {
    double intercept = 0.0, slope = 0.0, r2 = 0.0;
};
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_line: bad input");
    double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
        syy += y[i] * y[i];
    }
    double denom = n * sxx - sx * sx;
    LineFit f;
    f.slope = (n * sxy - sx * sy) / denom;
    f.intercept = (sy - f.slope * sx) / n;
    double ss_tot = syy - sy * sy / n;
    double ss_res = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double e = y[i] - (f.intercept + f.slope * x[i]);
        ss_res += e * e;
    }
    f.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    return f;
}

}  // namespace heisenflag
