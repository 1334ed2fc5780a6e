#pragma once

// Independent oracles for the Bayes scoring chain. The survival function is
// computed by adaptive quadrature over the chi-square density (the
// implementation under test uses the closed Poisson series), and the score
// chain is a from-scratch re-evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

namespace gauntlet::testing {

inline double chi2_pdf(double x, int df, double lgamma_half_df) {
    if (x < 0) return 0.0;
    double k = df / 2.0;
    if (x == 0.0) return df == 2 ? 0.5 : 0.0;
    return std::exp((k - 1.0) * std::log(x) - x / 2.0 - lgamma_half_df - k * std::numbers::ln2);
}

namespace detail {

inline double simpson(double fa, double fm, double fb, double a, double b) {
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

template <typename F>
double adapt(F&& f, double a, double m, double b, double fa, double fm, double fb, double whole,
             double eps, int depth) {
    double lm = (a + m) / 2.0, rm = (m + b) / 2.0;
    double flm = f(lm), frm = f(rm);
    double left = simpson(fa, flm, fm, a, m);
    double right = simpson(fm, frm, fb, m, b);
    double delta = left + right - whole;
    if (depth <= 0 || std::fabs(delta) <= 15.0 * eps) return left + right + delta / 15.0;
    return adapt(f, a, lm, m, fa, flm, fm, left, eps / 2.0, depth - 1) +
           adapt(f, m, rm, b, fm, frm, fb, right, eps / 2.0, depth - 1);
}

template <typename F>
double integrate(F&& f, double a, double b, double eps) {
    if (!(b > a)) return 0.0;
    // fixed pre-split keeps the adaptive pass from terminating early on
    // deceptively smooth-looking stretches
    int segments = std::max(4, static_cast<int>((b - a) / 8.0) + 1);
    double h = (b - a) / segments;
    double total = 0.0;
    for (int s = 0; s < segments; ++s) {
        double lo = a + s * h, hi = lo + h, mid = (lo + hi) / 2.0;
        double flo = f(lo), fmid = f(mid), fhi = f(hi);
        total += adapt(f, lo, mid, hi, flo, fmid, fhi, simpson(flo, fmid, fhi, lo, hi),
                       eps / segments, 32);
    }
    return total;
}

}  // namespace detail

// P(X >= chi2) for chi-square with df degrees of freedom, by numerical
// integration of the density.
inline double oracle_chi2_survival(double chi2, int df, double eps = 1e-12) {
    if (chi2 <= 0.0) return 1.0;
    double lg = std::lgamma(df / 2.0);
    double cdf =
        detail::integrate([&](double x) { return chi2_pdf(x, df, lg); }, 0.0, chi2, eps);
    return std::clamp(1.0 - cdf, 0.0, 1.0);
}

// Plain-arithmetic re-evaluation of the scoring chain.
struct OracleModel {
    std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> tokens;  // spam, ham
    std::uint64_t total_spam = 0;
    std::uint64_t total_ham = 0;
    double s = 1.0;
    double x = 0.5;
    size_t max_significant = 150;
};

inline double oracle_spamicity(const OracleModel& m, const std::string& token) {
    std::uint64_t sc = 0, hc = 0;
    if (auto it = m.tokens.find(token); it != m.tokens.end()) {
        sc = it->second.first;
        hc = it->second.second;
    }
    double b = double(sc) / double(m.total_spam);
    double g = double(hc) / double(m.total_ham);
    double p = (b + g == 0.0) ? m.x : b / (b + g);
    double n = double(sc + hc);
    return (m.s * m.x + n * p) / (m.s + n);
}

inline double oracle_score(const OracleModel& m, const std::vector<std::string>& message_tokens) {
    std::set<std::string> unique(message_tokens.begin(), message_tokens.end());
    std::vector<std::pair<std::string, double>> scored;
    for (const auto& t : unique) scored.emplace_back(t, oracle_spamicity(m, t));
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        return std::fabs(a.second - 0.5) > std::fabs(b.second - 0.5) ||
               (std::fabs(a.second - 0.5) == std::fabs(b.second - 0.5) && a.first < b.first);
    });
    if (scored.size() > m.max_significant) scored.resize(m.max_significant);
    if (scored.empty()) return m.x;
    double sum_ln_f = 0.0, sum_ln_1mf = 0.0;
    for (const auto& [t, f] : scored) {
        double c = std::min(std::max(f, 1e-6), 1.0 - 1e-6);
        sum_ln_f += std::log(c);
        sum_ln_1mf += std::log(1.0 - c);
    }
    int df = static_cast<int>(2 * scored.size());
    double h = oracle_chi2_survival(-2.0 * sum_ln_f, df);
    double s = oracle_chi2_survival(-2.0 * sum_ln_1mf, df);
    return (1.0 + h - s) / 2.0;
}

}  // namespace gauntlet::testing
