#include "smartlab/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

namespace smartlab {

namespace {

// Nodes on [-1, 1] by Newton iteration on P_n, started from the Chebyshev
// angle approximation. Standard double precision construction.
Quad1D make_rule(int n) {
    if (n < 1 || n > 64) throw std::invalid_argument("gauss_legendre_01: need 1 <= n <= 64");
    Quad1D q;
    q.x.resize(n);
    q.w.resize(n);
    for (int i = 0; i < n; ++i) {
        double t = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double p0 = 0.0, p1 = 0.0;
        for (int it = 0; it < 100; ++it) {
            p0 = 1.0;
            p1 = 0.0;
            for (int k = 0; k < n; ++k) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * k + 1.0) * t * p1 - k * p2) / (k + 1.0);
            }
            const double dp = n * (t * p0 - p1) / (t * t - 1.0);
            const double step = p0 / dp;
            t -= step;
            if (std::abs(step) < 1e-15) break;
        }
        // recompute derivative at the converged node for the weight
        p0 = 1.0;
        p1 = 0.0;
        for (int k = 0; k < n; ++k) {
            const double p2 = p1;
            p1 = p0;
            p0 = ((2.0 * k + 1.0) * t * p1 - k * p2) / (k + 1.0);
        }
        const double dp = n * (t * p0 - p1) / (t * t - 1.0);
        // map [-1,1] -> [0,1]
        q.x[n - 1 - i] = 0.5 * (t + 1.0);
        q.w[n - 1 - i] = 1.0 / ((1.0 - t * t) * dp * dp);
    }
    return q;
}

} // namespace

const Quad1D& gauss_legendre_01(int n) {
    static std::mutex mu;
    static std::map<int, Quad1D> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, make_rule(n)).first;
    return it->second;
}

} // namespace smartlab
