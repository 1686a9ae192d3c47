#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "core.hpp"

namespace rgmm {

struct ScoredGroup {
    std::string group_id;
    std::vector<double> scores;
    std::vector<int> labels;
};

namespace detail {

inline void check_scored(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw EvalError("scores and labels differ in length");
    for (int y : labels)
        if (y != 0 && y != 1) throw EvalError("labels must be 0 or 1");
    for (double s : scores)
        if (std::isnan(s)) throw EvalError("score is NaN");
}

}  // namespace detail

/// Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie), via average
/// ranks in O(n log n).
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    detail::check_scored(scores, labels);
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (int y : labels) n_pos += static_cast<std::size_t>(y);
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw EvalError("auc: undefined for a single-class group");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Sum of (1-based, tie-averaged) ranks of the positives; kept doubled to stay integral.
    double rank_sum2 = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double avg2 = static_cast<double>(i + 1 + j);  // 2 * mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) rank_sum2 += avg2;
        i = j;
    }
    const double u = 0.5 * rank_sum2 - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Negatives scored at or above the smallest positive score.
inline int fp_at_full_recall(const std::vector<double>& scores, const std::vector<int>& labels) {
    detail::check_scored(scores, labels);
    double c = std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (labels[i] == 1) {
            c = std::min(c, scores[i]);
            any = true;
        }
    if (!any) throw EvalError("fp_at_full_recall: threshold undefined without positives");
    int fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (labels[i] == 0 && scores[i] >= c) ++fp;
    return fp;
}

struct GroupEval {
    std::string group_id;
    int n = 0;
    int n_positive = 0;
    bool has_auc = false;
    double auc = 0.0;
    bool has_fp = false;
    int fp = 0;
};

struct EvalSummary {
    double mean_auc = 0.0;
    double median_fp = 0.0;
    int n_groups = 0;
    // Groups without both classes (AUC undefined) / without positives (FP undefined).
    int skipped_auc = 0;
    int skipped_fp = 0;
    std::vector<GroupEval> per_group;
};

inline double median(std::vector<double> v) {
    if (v.empty()) throw EvalError("median of empty set");
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

inline EvalSummary evaluate_groups(const std::vector<ScoredGroup>& groups) {
    if (groups.empty()) throw EvalError("evaluate_groups: no groups");
    EvalSummary s;
    s.n_groups = static_cast<int>(groups.size());
    double auc_sum = 0.0;
    int auc_count = 0;
    std::vector<double> fps;
    for (const auto& g : groups) {
        detail::check_scored(g.scores, g.labels);
        GroupEval e;
        e.group_id = g.group_id;
        e.n = static_cast<int>(g.scores.size());
        e.n_positive = static_cast<int>(std::count(g.labels.begin(), g.labels.end(), 1));
        if (e.n_positive > 0 && e.n_positive < e.n) {
            e.has_auc = true;
            e.auc = auc(g.scores, g.labels);
            auc_sum += e.auc;
            ++auc_count;
        } else {
            ++s.skipped_auc;
        }
        if (e.n_positive > 0) {
            e.has_fp = true;
            e.fp = fp_at_full_recall(g.scores, g.labels);
            fps.push_back(e.fp);
        } else {
            ++s.skipped_fp;
        }
        s.per_group.push_back(std::move(e));
    }
    if (auc_count == 0 && fps.empty()) throw EvalError("evaluate_groups: every group was skipped");
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.mean_auc = auc_count ? auc_sum / auc_count : nan;
    s.median_fp = fps.empty() ? nan : median(fps);
    return s;
}

/// Posterior P(Y = 1 | x) for each row of x.
inline std::vector<double> score_points(const Matrix& x, const Theta& theta) {
    if (x.rows() == 0) return {};
    const Vector pi = posterior(DataSet(x), theta).pi;
    return {pi.data(), pi.data() + pi.size()};
}

}  // namespace rgmm
