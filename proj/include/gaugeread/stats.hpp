#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace gauge {

/// Linear-interpolated percentile, h = (n-1)p + 1 on 1-based ranks.
/// `sorted` must be ascending; p in [0, 1].
inline double percentile_sorted(std::span<const double> sorted, double p)
{
    if (sorted.empty()) throw std::invalid_argument("percentile: empty input");
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("percentile: p outside [0,1]");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;  // 0-based
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const double frac = h - static_cast<double>(lo);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline double percentile(std::vector<double> values, double p)
{
    std::sort(values.begin(), values.end());
    return percentile_sorted(values, p);
}

/// Median; even count averages the two middle values.
inline double median(std::vector<double> values)
{
    if (values.empty()) throw std::invalid_argument("median: empty input");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

inline double mean(std::span<const double> v)
{
    if (v.empty()) throw std::invalid_argument("mean: empty input");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace gauge
