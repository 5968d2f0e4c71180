#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace superenv {

struct MCEstimate {
    double mean = 0.0;
    double std_err = 0.0;
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;
    bool flagged = false;
    std::string note;

    
};

// Welford running mean / variance.
class RunningStats {
public:
    void push(double x)
    {
        ++n_;
        double d = x - mean_;
        mean_ += d / static_cast<double>(n_);
        m2_ += d * (x - mean_);
    }
    std::size_t count() const { return n_; }
    double mean() const { return mean_; }
    double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
    double std_error() const { return n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0; }
    MCEstimate estimate(std::uint64_t seed = 0) const
    {
        MCEstimate e;
        e.mean = mean_;
        e.std_err = std_error();
        e.n_samples = n_;
        e.seed = seed;
        return e;
    }

private:
    std::size_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

double mean(const std::vector<double>& v);
double sample_variance(const std::vector<double>& v);

double normal_cdf(double x);

struct KSResult {
    double statistic = 0.0;
    double p_value = 0.0;
    std::size_t n = 0;
    bool degenerate = false;
    bool exact = false;
};

// Two-sided one-sample Kolmogorov-Smirnov test. Exact distribution for n <= 35, asymptotic otherwise.
KSResult ks_test(std::vector<double> samples, const std::function<double(double)>& reference_cdf);

// P(D_n < d) for the one-sample statistic (Marsaglia-Tsang-Wang).
double kolmogorov_cdf_exact(std::size_t n, double d);
// P(sqrt(n) D_n > x) in the limit (Kolmogorov distribution tail).
double kolmogorov_tail(double x);

} // namespace superenv
