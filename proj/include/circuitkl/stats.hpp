#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "circuitkl/errors.hpp"

namespace circuitkl {

// ---------------------------------------------------------------------------
// Divergences
// ---------------------------------------------------------------------------

// KL(p || q) in nats over a shared finite support. Terms with p_i == 0
// contribute nothing (0 * log 0 := 0); a zero in q where p is positive makes
// the divergence infinite and is reported as an error rather than returned.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size())
        throw DataError("kl_divergence: support size mismatch (" + std::to_string(p.size()) +
                        " vs " + std::to_string(q.size()) + ")");
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] < 0.0 || q[i] < 0.0)
            throw DataError("kl_divergence: negative probability at index " + std::to_string(i));
        if (p[i] == 0.0) continue;
        if (q[i] <= 0.0)
            throw DataError("kl_divergence: q is zero at index " + std::to_string(i) +
                            " where p is positive");
        acc += p[i] * std::log(p[i] / q[i]);
    }
    // Mathematically >= 0; clamp the rounding dust from near-identical inputs.
    return acc < 0.0 ? 0.0 : acc;
}

// KL between Bernoulli(a) and Bernoulli(p), in nats. Both arguments must lie
// strictly inside (0, 1).
inline double bernoulli_kl(double a, double p) {
    if (!(a > 0.0 && a < 1.0) || !(p > 0.0 && p < 1.0))
        throw UsageError("bernoulli_kl: arguments must lie strictly in (0, 1)");
    return a * std::log(a / p) + (1.0 - a) * std::log((1.0 - a) / (1.0 - p));
}

// ---------------------------------------------------------------------------
// Small numeric helpers
// ---------------------------------------------------------------------------

// Ceiling with a relative slack of 1e-9 so that products like 0.96 * 1275,
// which land a hair above an integer after rounding, still take the
// mathematical ceiling instead of overshooting by one.
inline long long ceil_with_tolerance(double x) {
    double slack = 1e-9 * std::max(1.0, std::fabs(x));
    return static_cast<long long>(std::ceil(x - slack));
}

inline double log_add_exp(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    double m = a > b ? a : b;
    return m + std::log1p(std::exp((a > b ? b : a) - m));
}

// ---------------------------------------------------------------------------
// Binomial tail machinery
// ---------------------------------------------------------------------------

namespace detail {

// log C(n, k) + k log p + (n-k) log(1-p), valid for 0 < p < 1.
inline double log_binom_pmf(long long n, long long k, double p) {
    double dn = static_cast<double>(n), dk = static_cast<double>(k);
    return std::lgamma(dn + 1.0) - std::lgamma(dk + 1.0) - std::lgamma(dn - dk + 1.0) +
           dk * std::log(p) + (dn - dk) * std::log1p(-p);
}

} // namespace detail

// P(X <= k) for X ~ Binomial(n, p). Accumulated in log space with log-sum-exp;
// when k sits above the mean n*p the complementary (upper-tail) sum is used so
// the small tail is the one summed directly.
inline double binomial_cdf(long long k, long long n, double p) {
    if (n < 0) throw UsageError("binomial_cdf: n must be >= 0");
    if (!(p >= 0.0 && p <= 1.0)) throw UsageError("binomial_cdf: p must lie in [0, 1]");
    if (k < 0) return 0.0;
    if (k >= n) return 1.0;
    if (p == 0.0) return 1.0; // all mass at 0 <= k
    if (p == 1.0) return 0.0; // all mass at n > k

    const double neg_inf = -std::numeric_limits<double>::infinity();
    if (static_cast<double>(k) > static_cast<double>(n) * p) {
        double acc = neg_inf;
        for (long long i = k + 1; i <= n; ++i)
            acc = log_add_exp(acc, detail::log_binom_pmf(n, i, p));
        return 1.0 - std::exp(acc);
    }
    double acc = neg_inf;
    for (long long i = 0; i <= k; ++i)
        acc = log_add_exp(acc, detail::log_binom_pmf(n, i, p));
    return std::exp(acc);
}

// ---------------------------------------------------------------------------
// Percentile estimation and guarantees
// ---------------------------------------------------------------------------

// Conservative percentile estimate: the ceil(n * (target + margin))-th smallest
// of the samples. Requires enough samples that the index exists.
inline double order_statistic_percentile(std::span<const double> samples, double target, double margin) {
    if (samples.empty()) throw DataError("order_statistic_percentile: no samples");
    if (!(target > 0.0 && target < 1.0))
        throw UsageError("order_statistic_percentile: target must lie strictly in (0, 1)");
    if (!(margin > 0.0)) throw UsageError("order_statistic_percentile: margin must be positive");
    long long n = static_cast<long long>(samples.size());
    long long k = ceil_with_tolerance(static_cast<double>(n) * (target + margin));
    if (k < 1) k = 1;
    if (k > n)
        throw DataError("order_statistic_percentile: " + std::to_string(n) +
                        " samples are too few for target " + std::to_string(target) +
                        " with margin " + std::to_string(margin));
    std::vector<double> copy(samples.begin(), samples.end());
    std::nth_element(copy.begin(), copy.begin() + (k - 1), copy.end());
    return copy[k - 1];
}

// Probability that the conservative estimate from n samples upper-bounds the
// true (target)-percentile, exactly: a binomial lower-tail evaluated at the
// chosen order-statistic index minus one.
inline double exact_bound_probability(long long n, double target, double margin) {
    if (n < 0) throw UsageError("exact_bound_probability: n must be >= 0");
    if (!(target > 0.0 && target < 1.0))
        throw UsageError("exact_bound_probability: target must lie strictly in (0, 1)");
    if (!(margin > 0.0) || !(target + margin < 1.0))
        throw UsageError("exact_bound_probability: need margin > 0 and target + margin < 1");
    if (n == 0) return 0.0;
    long long k = ceil_with_tolerance(static_cast<double>(n) * (target + margin));
    if (k > n) return 1.0; // estimator would be unavailable; treat as the trivial bound
    return binomial_cdf(k - 1, n, target);
}

// Chernoff relaxation of the same probability: 1 - exp(-n * KL(target+margin || target)).
inline double chernoff_bound_probability(long long n, double target, double margin) {
    if (n < 0) throw UsageError("chernoff_bound_probability: n must be >= 0");
    if (!(target > 0.0 && target < 1.0))
        throw UsageError("chernoff_bound_probability: target must lie strictly in (0, 1)");
    if (!(margin > 0.0) || !(target + margin < 1.0))
        throw UsageError("chernoff_bound_probability: need margin > 0 and target + margin < 1");
    return 1.0 - std::exp(-static_cast<double>(n) * bernoulli_kl(target + margin, target));
}

// Hoeffding relaxation: 1 - exp(-2 n margin^2). Does not depend on target.
inline double hoeffding_bound_probability(long long n, double target, double margin) {
    if (n < 0) throw UsageError("hoeffding_bound_probability: n must be >= 0");
    if (!(target > 0.0 && target < 1.0))
        throw UsageError("hoeffding_bound_probability: target must lie strictly in (0, 1)");
    if (!(margin > 0.0) || !(target + margin < 1.0))
        throw UsageError("hoeffding_bound_probability: need margin > 0 and target + margin < 1");
    return 1.0 - std::exp(-2.0 * static_cast<double>(n) * margin * margin);
}

enum class BoundMethod { Exact, Chernoff, Hoeffding };

inline BoundMethod parse_bound_method(const std::string& s) {
    if (s == "exact") return BoundMethod::Exact;
    if (s == "chernoff") return BoundMethod::Chernoff;
    if (s == "hoeffding") return BoundMethod::Hoeffding;
    throw UsageError("unknown bound method '" + s + "' (expected exact, chernoff or hoeffding)");
}

// Number of samples needed so the conservative percentile estimate holds with
// confidence at least `confidence`.
//
// The two closed forms invert their exponential bounds directly. The exact
// method searches: the success probability is *not* monotone in n (the
// order-statistic index is a ceiling, so the probability sawtooths as n
// grows), and this routine intentionally returns the first crossing located
// by an exponential doubling bracket refined with bisection — not the global
// minimum over the sawtooth.
inline long long min_samples(double target, double confidence, double margin, BoundMethod method) {
    if (!(target > 0.0 && target < 1.0))
        throw UsageError("min_samples: target must lie strictly in (0, 1)");
    if (!(confidence > 0.0 && confidence < 1.0))
        throw UsageError("min_samples: confidence must lie strictly in (0, 1)");
    if (!(margin > 0.0) || !(target + margin < 1.0))
        throw UsageError("min_samples: need margin > 0 and target + margin < 1");

    switch (method) {
    case BoundMethod::Hoeffding:
        return ceil_with_tolerance(std::log(1.0 / (1.0 - confidence)) / (2.0 * margin * margin));
    case BoundMethod::Chernoff:
        return ceil_with_tolerance(std::log(1.0 / (1.0 - confidence)) /
                                   bernoulli_kl(target + margin, target));
    case BoundMethod::Exact: {
        auto satisfied = [&](long long n) {
            return exact_bound_probability(n, target, margin) >= confidence;
        };
        long long hi = 1;
        while (!satisfied(hi)) {
            if (hi > (1ll << 40))
                throw UsageError("min_samples: exact search exceeded 2^40 samples");
            hi *= 2;
        }
        long long lo = hi / 2 + 1;
        while (lo < hi) {
            long long mid = lo + (hi - lo) / 2;
            if (satisfied(mid)) hi = mid;
            else lo = mid + 1;
        }
        return hi;
    }
    }
    throw UsageError("min_samples: unknown method");
}

// ---------------------------------------------------------------------------
// Descriptive summary
// ---------------------------------------------------------------------------

// Linear-interpolation quantile on an already sorted sample.
inline double quantile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw DataError("quantile_sorted: no samples");
    if (!(q >= 0.0 && q <= 1.0)) throw UsageError("quantile_sorted: q must lie in [0, 1]");
    if (sorted.size() == 1) return sorted[0];
    double pos = q * static_cast<double>(sorted.size() - 1);
    size_t lo = static_cast<size_t>(pos);
    if (lo >= sorted.size() - 1) return sorted[sorted.size() - 1];
    double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

struct SummaryTable {
    static constexpr size_t kNumLevels = 9;
    static constexpr std::array<const char*, kNumLevels> level_names = {
        "min", "25%", "50%", "75%", "95%", "99%", "99.9%", "99.99%", "max"};
    static constexpr std::array<double, kNumLevels> level_fractions = {
        0.0, 0.25, 0.5, 0.75, 0.95, 0.99, 0.999, 0.9999, 1.0};

    size_t count = 0;
    double mean = 0.0;
    double stddev = 0.0; // sample standard deviation (n - 1 denominator)
    std::array<double, kNumLevels> quantiles{};
    std::array<double, kNumLevels> z_scores{}; // (quantile - mean) / stddev
};

inline SummaryTable summarize(std::span<const double> samples) {
    if (samples.size() < 2)
        throw DataError("summarize: need at least 2 samples, got " + std::to_string(samples.size()));
    SummaryTable t;
    t.count = samples.size();
    double sum = 0.0;
    for (double v : samples) sum += v;
    t.mean = sum / static_cast<double>(samples.size());
    double ss = 0.0;
    for (double v : samples) {
        double d = v - t.mean;
        ss += d * d;
    }
    t.stddev = std::sqrt(ss / static_cast<double>(samples.size() - 1));
    if (t.stddev == 0.0)
        throw DataError("summarize: degenerate distribution, all samples equal");
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    for (size_t i = 0; i < SummaryTable::kNumLevels; ++i) {
        t.quantiles[i] = quantile_sorted(sorted, SummaryTable::level_fractions[i]);
        t.z_scores[i] = (t.quantiles[i] - t.mean) / t.stddev;
    }
    return t;
}

} // namespace circuitkl
