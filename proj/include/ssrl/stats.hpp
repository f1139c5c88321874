#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ssrl/eval.hpp"

namespace ssrl {

namespace detail {

/// Continued fraction for the incomplete beta (modified Lentz iteration).
inline double beta_cont_frac(double x, double a, double b) {
    constexpr double tiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 500; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-15) return h;
    }
    throw NumericError("incomplete beta: continued fraction failed to converge");
}

} // namespace detail

/// Iₓ(a,b), the CDF of the beta distribution; the p-value kernel for both the
/// t and F distributions. The continued fraction converges fastest below the
/// distribution mode, so the complementary identity flips the tail.
inline double regularized_incomplete_beta(double x, double a, double b) {
    if (!(a > 0.0) || !(b > 0.0))
        throw DataError("incomplete beta: a and b must be positive");
    if (!(x >= 0.0 && x <= 1.0)) throw DataError("incomplete beta: x must lie in [0,1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double ln_front = a * std::log(x) + b * std::log1p(-x) -
                            (std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_cont_frac(x, a, b) / a;
    return 1.0 - front * detail::beta_cont_frac(1.0 - x, b, a) / b;
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom.
inline double t_two_sided_p(double t, double df) {
    if (!(df > 0.0)) throw DataError("t distribution: df must be positive");
    if (!std::isfinite(t)) throw NumericError("t distribution: non-finite statistic");
    return regularized_incomplete_beta(df / (df + t * t), 0.5 * df, 0.5);
}

/// Upper tail probability of the F distribution with (df1, df2) degrees of
/// freedom.
inline double f_upper_p(double f, double df1, double df2) {
    if (!(df1 > 0.0) || !(df2 > 0.0)) throw DataError("F distribution: dfs must be positive");
    if (!std::isfinite(f) || f < 0.0) throw NumericError("F distribution: bad statistic");
    return regularized_incomplete_beta(df2 / (df2 + df1 * f), 0.5 * df2, 0.5 * df1);
}

struct TestResult {
    std::string kind;        // "t" or "F"
    double statistic = 0.0;
    double df1 = 0.0;        // t-tests use df1 only
    double df2 = 0.0;
    double p = 1.0;

    bool significant(double threshold) const { return p < threshold; }
    Json to_json() const {
        return Json{{"kind", kind}, {"statistic", statistic}, {"df1", df1}, {"df2", df2},
                    {"p", p}};
    }
};

/// Post-hoc paired t-test on per-subject accuracies.
inline TestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw ShapeError("paired t-test: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + " measurements");
    const std::size_t n = a.size();
    if (n < 2) throw DataError("paired t-test: need at least 2 pairs");
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(a[i]) || !std::isfinite(b[i]))
            throw NumericError("paired t-test: non-finite measurement");
        mean += a[i] - b[i];
    }
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i] - mean;
        ss += d * d;
    }
    const double var = ss / static_cast<double>(n - 1);
    if (var == 0.0) throw DataError("paired t-test: zero-variance differences");
    TestResult r;
    r.kind = "t";
    r.statistic = mean / std::sqrt(var / static_cast<double>(n));
    r.df1 = static_cast<double>(n - 1);
    r.p = t_two_sided_p(r.statistic, r.df1);
    return r;
}

/// Complete subjects × methods design; every subject measured under every
/// method.
struct AccuracyTable {
    std::vector<std::string> subjects;
    std::vector<std::string> methods;
    std::vector<std::vector<double>> acc;  // [subject][method]

    void validate() const {
        if (subjects.size() < 2 || methods.size() < 2)
            throw DataError("accuracy table: need at least 2 subjects and 2 methods");
        if (acc.size() != subjects.size())
            throw ShapeError("accuracy table: " + std::to_string(acc.size()) + " rows for " +
                             std::to_string(subjects.size()) + " subjects");
        for (const auto& row : acc) {
            if (row.size() != methods.size())
                throw ShapeError("accuracy table: ragged row of " + std::to_string(row.size()) +
                                 " cells");
            for (const double v : row) {
                if (!std::isfinite(v)) throw NumericError("accuracy table: non-finite accuracy");
                if (v < 0.0 || v > 1.0)
                    throw DataError("accuracy table: accuracy " + std::to_string(v) +
                                    " outside [0,1]");
            }
        }
    }
};

/// One-way repeated-measures ANOVA: the total sum of squares splits into
/// method, subject and error terms; F = MS_method / MS_error on
/// (k-1, (k-1)(n-1)) degrees of freedom.
inline TestResult rm_anova(const AccuracyTable& table) {
    table.validate();
    const std::size_t n = table.subjects.size(), k = table.methods.size();
    double grand = 0.0;
    std::vector<double> method_mean(k, 0.0), subject_mean(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            grand += table.acc[i][j];
            method_mean[j] += table.acc[i][j];
            subject_mean[i] += table.acc[i][j];
        }
    grand /= static_cast<double>(n * k);
    for (double& m : method_mean) m /= static_cast<double>(n);
    for (double& s : subject_mean) s /= static_cast<double>(k);

    double ss_method = 0.0, ss_subject = 0.0, ss_total = 0.0;
    for (const double m : method_mean) ss_method += (m - grand) * (m - grand);
    ss_method *= static_cast<double>(n);
    for (const double s : subject_mean) ss_subject += (s - grand) * (s - grand);
    ss_subject *= static_cast<double>(k);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j)
            ss_total += (table.acc[i][j] - grand) * (table.acc[i][j] - grand);
    const double ss_error = ss_total - ss_method - ss_subject;

    TestResult r;
    r.kind = "F";
    r.df1 = static_cast<double>(k - 1);
    r.df2 = static_cast<double>((k - 1) * (n - 1));
    // Sums of squares that vanish up to rounding are treated as exactly
    // zero: identical methods give F = 0 rather than rounding noise divided
    // by a zero error term, and a method effect with no residual variance is
    // reported as a failure instead of an astronomically large F.
    const double eps = 1e-12 * (1.0 + ss_total);
    if (ss_method <= eps) {
        r.statistic = 0.0;
        r.p = 1.0;
        return r;
    }
    if (ss_error <= eps)
        throw NumericError("rm anova: zero error variance with method differences");
    r.statistic = (ss_method / r.df1) / (ss_error / r.df2);
    r.p = f_upper_p(r.statistic, r.df1, r.df2);
    return r;
}

inline double bonferroni_threshold(double alpha, std::size_t comparisons) {
    if (comparisons < 1) throw DataError("bonferroni: need at least one comparison");
    return alpha / static_cast<double>(comparisons);
}

// ---- external interfaces ----

/// Per sweep point: the repeated-measures ANOVA over methods plus all
/// pairwise t-tests with Bonferroni-corrected significance flags. A subject
/// is one (fold, seed) run; the repeated-measures design requires every
/// method to cover every subject exactly once.
inline Json stats_report(const SweepResult& result, double alpha = 0.01) {
    if (result.rows.empty()) throw DataError("stats report: empty sweep result");
    // task -> n -> method -> subject -> accuracy, methods in first appearance
    // order.
    std::map<std::string, std::map<std::size_t, std::map<std::string, std::map<std::string, double>>>>
        grid;
    std::map<std::string, std::vector<std::string>> method_order;
    for (const SweepRow& row : result.rows) {
        const std::string subject = row.fold + "/" + std::to_string(row.seed);
        auto& cell = grid[row.task][row.n_per_class][row.method];
        if (cell.count(subject))
            throw DataError("stats report: duplicate run for " + row.task + " n=" +
                            std::to_string(row.n_per_class) + " method=" + row.method +
                            " subject=" + subject);
        cell[subject] = row.accuracy;
        auto& order = method_order[row.task];
        if (std::find(order.begin(), order.end(), row.method) == order.end())
            order.push_back(row.method);
    }

    Json tasks = Json::array();
    for (const auto& [task, by_n] : grid) {
        Json points = Json::array();
        for (const auto& [n, by_method] : by_n) {
            const std::vector<std::string>& methods = method_order.at(task);
            // Sorted union of subjects; every method must cover all of them.
            std::map<std::string, std::size_t> subject_index;
            for (const auto& [method, cells] : by_method)
                for (const auto& [subject, acc] : cells) subject_index.emplace(subject, 0);
            AccuracyTable table;
            for (auto& [subject, idx] : subject_index) {
                idx = table.subjects.size();
                table.subjects.push_back(subject);
            }
            table.methods = methods;
            table.acc.assign(table.subjects.size(), std::vector<double>(methods.size(), 0.0));
            for (std::size_t j = 0; j < methods.size(); ++j) {
                const auto it = by_method.find(methods[j]);
                if (it == by_method.end() || it->second.size() != table.subjects.size())
                    throw DataError("stats report: method '" + methods[j] +
                                    "' is missing runs at n=" + std::to_string(n) +
                                    " (incomplete repeated-measures design)");
                for (const auto& [subject, acc] : it->second)
                    table.acc[subject_index.at(subject)][j] = acc;
            }
            const std::size_t pairs = methods.size() * (methods.size() - 1) / 2;
            const double threshold = bonferroni_threshold(alpha, pairs);
            Json pairwise = Json::array();
            for (std::size_t a = 0; a < methods.size(); ++a)
                for (std::size_t b = a + 1; b < methods.size(); ++b) {
                    std::vector<double> va, vb;
                    for (std::size_t i = 0; i < table.subjects.size(); ++i) {
                        va.push_back(table.acc[i][a]);
                        vb.push_back(table.acc[i][b]);
                    }
                    Json entry;
                    // Zero-variance differences have no defined t; report the
                    // degeneracy instead of failing the whole table.
                    bool constant_diff = true;
                    for (std::size_t i = 1; i < va.size() && constant_diff; ++i)
                        constant_diff = va[i] - vb[i] == va[0] - vb[0];
                    if (constant_diff) {
                        entry = Json{{"kind", "t"},
                                     {"degenerate", true},
                                     {"constant_difference", va[0] - vb[0]}};
                    } else {
                        const TestResult t = paired_ttest(va, vb);
                        entry = t.to_json();
                        entry["significant"] = t.significant(threshold);
                    }
                    entry["methods"] = {methods[a], methods[b]};
                    pairwise.push_back(std::move(entry));
                }
            // A purely additive table (every subject shifted by the same
            // per-method offsets) has no residual variance, so the F ratio is
            // undefined; report the degeneracy like the pairwise case does.
            Json anova;
            try {
                anova = rm_anova(table).to_json();
            } catch (const NumericError& e) {
                if (std::string(e.what()).find("zero error variance") == std::string::npos)
                    throw;
                anova = Json{{"kind", "F"},
                             {"degenerate", true},
                             {"note", "zero error variance with method differences"}};
            }
            points.push_back({{"n_per_class", n},
                              {"subjects", table.subjects},
                              {"anova", anova},
                              {"bonferroni_threshold", threshold},
                              {"pairwise", pairwise}});
        }
        tasks.push_back({{"task", task}, {"points", points}});
    }
    return Json{{"alpha", alpha}, {"tasks", tasks}};
}

} // namespace ssrl
