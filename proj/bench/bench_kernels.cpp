// Compares the serial reference kernels against the OpenMP variants on the
// hot loops (cell integration, projection) and checks the outputs agree
// bitwise. With one core the interesting output is the agreement column.
#include <chrono>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "smartlab/measures.hpp"
#include "smartlab/partition.hpp"
#include "smartlab/polyspace.hpp"
#include "smartlab/rng.hpp"

using namespace smartlab;

namespace {

template <class F>
double best_ms(F&& f, int reps = 3) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

} // namespace

int main() {
#ifdef _OPENMP
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("openmp: not enabled\n");
#endif

    const PartitionTree t = PartitionTree::build(Box::unit_cube(1), 16, SplitSpec{});
    const PolySpace s = PolySpace::total_degree(1, 2);

    // random piecewise quadratic at depth 16
    PiecewisePoly f = PiecewisePoly::zero(t, s, 16, false);
    auto rng = engine_for(7, 0);
    for (double& c : f.coef) c = gaussian(rng);

    const MeasureTree leb = MeasureTree::lebesgue(t);

    std::printf("%-28s %10s %10s %8s %6s\n", "kernel", "serial ms", "omp ms", "speedup", "equal");

    {
        std::vector<double> a, b;
        const double ts = best_ms([&] { a = integrate_on_level(t, s, f, 8, leb, false); });
        const double tp = best_ms([&] { b = integrate_on_level(t, s, f, 8, leb, true); });
        std::printf("%-28s %10.2f %10.2f %8.2f %6s\n", "integrate depth16->8", ts, tp, ts / tp,
                    bitwise_equal(a, b) ? "yes" : "NO");
    }
    {
        PiecewisePoly a, b;
        const double ts = best_ms([&] { a = project(t, s, f, 10, leb, false); });
        const double tp = best_ms([&] { b = project(t, s, f, 10, leb, true); });
        std::printf("%-28s %10.2f %10.2f %8.2f %6s\n", "project depth16->10", ts, tp, ts / tp,
                    bitwise_equal(a.coef, b.coef) ? "yes" : "NO");
    }
    {
        LevelValues a, b;
        const double ts = best_ms([&] { a = abs_conditional_expectation(t, s, f, 8, leb, 4, false); });
        const double tp = best_ms([&] { b = abs_conditional_expectation(t, s, f, 8, leb, 4, true); });
        std::printf("%-28s %10.2f %10.2f %8.2f %6s\n", "abs-cond-exp depth16->8", ts, tp, ts / tp,
                    bitwise_equal(a.v, b.v) ? "yes" : "NO");
    }
    return 0;
}
