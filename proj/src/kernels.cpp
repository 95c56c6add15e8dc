#include "smartlab/kernels.hpp"

#include <stdexcept>

namespace smartlab::kernels {

void aggregate_to_level(const std::vector<double>& vals, int nvals, int from, int to,
                        std::vector<double>& out) {
    if (to > from) throw std::invalid_argument("aggregate_to_level: to must be <= from");
    const std::size_t ncoarse = std::size_t{1} << to;
    const std::size_t block = std::size_t{1} << (from - to);
    out.assign(ncoarse * nvals, 0.0);
    for (std::size_t a = 0; a < ncoarse; ++a) {
        double* dst = out.data() + a * nvals;
        const double* src = vals.data() + a * block * nvals;
        for (std::size_t b = 0; b < block; ++b)
            for (int j = 0; j < nvals; ++j) dst[j] += src[b * nvals + j];
    }
}

std::vector<std::vector<double>> aggregate_all_levels(const std::vector<double>& vals, int nvals,
                                                      int from) {
    std::vector<std::vector<double>> pyr(from + 1);
    pyr[from] = vals;
    for (int l = from; l > 0; --l) {
        const std::size_t n = std::size_t{1} << (l - 1);
        pyr[l - 1].assign(n * nvals, 0.0);
        for (std::size_t a = 0; a < n; ++a)
            for (int j = 0; j < nvals; ++j)
                pyr[l - 1][a * nvals + j] =
                    pyr[l][(2 * a) * nvals + j] + pyr[l][(2 * a + 1) * nvals + j];
    }
    return pyr;
}

std::vector<double> lift_values(const std::vector<double>& v, int from, int to) {
    if (to < from) throw std::invalid_argument("lift_values: target level coarser than source");
    const int shift = to - from;
    std::vector<double> out(std::size_t{1} << to);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i >> shift];
    return out;
}

} // namespace smartlab::kernels
