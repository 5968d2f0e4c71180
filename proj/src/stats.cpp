#include "superenv/stats.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <stdexcept>

namespace superenv {

double mean(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v)
        s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double>& v)
{
    RunningStats r;
    for (double x : v)
        r.push(x);
    return r.variance();
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double kolmogorov_cdf_exact(std::size_t n, double d)
{
    if (d <= 0.0)
        return 0.0;
    if (d >= 1.0)
        return 1.0;
    const double nd = static_cast<double>(n) * d;
    const int k = static_cast<int>(nd) + 1;
    const int m = 2 * k - 1;
    const double h = k - nd;
    Eigen::MatrixXd H(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            H(i, j) = (i - j + 1 >= 0) ? 1.0 : 0.0;
    for (int i = 0; i < m; ++i) {
        H(i, 0) -= std::pow(h, i + 1);
        H(m - 1, i) -= std::pow(h, m - i);
    }
    H(m - 1, 0) += (2.0 * h - 1.0 > 0.0) ? std::pow(2.0 * h - 1.0, m) : 0.0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            if (i - j + 1 > 0)
                H(i, j) /= std::tgamma(i - j + 2.0);
    // H^n with a running power-of-ten exponent to keep entries representable
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(m, m);
    int expo = 0;
    for (std::size_t i = 0; i < n; ++i) {
        P = P * H;
        double c = P(k - 1, k - 1);
        if (c > 1e140) {
            P *= 1e-140;
            expo += 140;
        }
    }
    double s = P(k - 1, k - 1);
    for (std::size_t i = 1; i <= n; ++i) {
        s *= static_cast<double>(i) / static_cast<double>(n);
        if (s < 1e-140) {
            s *= 1e140;
            expo -= 140;
        }
    }
    return std::clamp(s * std::pow(10.0, expo), 0.0, 1.0);
}

double kolmogorov_tail(double x)
{
    if (x <= 0.0)
        return 1.0;
    if (x < 0.27)
        return 1.0;
    double s = 0.0;
    for (int k = 1; k <= 100; ++k) {
        double term = std::exp(-2.0 * k * k * x * x);
        s += (k % 2 ? 1.0 : -1.0) * term;
        if (term < 1e-18)
            break;
    }
    return std::clamp(2.0 * s, 0.0, 1.0);
}

KSResult ks_test(std::vector<double> samples, const std::function<double(double)>& reference_cdf)
{
    KSResult r;
    r.n = samples.size();
    if (r.n < 8)
        throw std::invalid_argument("ks_test needs at least 8 samples");
    std::sort(samples.begin(), samples.end());
    if (samples.front() == samples.back()) {
        r.degenerate = true;
        r.statistic = 1.0;
        r.p_value = 0.0;
        return r;
    }
    const double n = static_cast<double>(r.n);
    double D = 0.0;
    for (std::size_t i = 0; i < r.n; ++i) {
        double F = reference_cdf(samples[i]);
        D = std::max({D, (i + 1) / n - F, F - i / n});
    }
    r.statistic = D;
    if (r.n <= 35) {
        r.exact = true;
        r.p_value = std::clamp(1.0 - kolmogorov_cdf_exact(r.n, D), 0.0, 1.0);
    } else {
        double sn = std::sqrt(n);
        r.p_value = kolmogorov_tail((sn + 0.12 + 0.11 / sn) * D);
    }
    return r;
}

} // namespace superenv
