#pragma once

// Evaluation metrics and analysis utilities: confusion matrices, macro F1,
// false-belief accuracy reports, a small PCA (Jacobi eigensolver) and a
// paired two-sided t-test with its own incomplete-beta CDF.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mtom/data.hpp"
#include "mtom/tensor.hpp"

namespace mtom {

// ---- confusion / F1 ----

struct ConfusionMatrix {
    std::size_t k = 0;
    std::vector<std::size_t> counts;  // [k,k], rows = truth, cols = prediction

    explicit ConfusionMatrix(std::size_t classes = 0) : k(classes), counts(classes * classes, 0) {}

    void add(std::size_t truth, std::size_t pred) {
        if (truth >= k || pred >= k) throw TensorError("confusion: label out of range");
        ++counts[truth * k + pred];
    }

    std::size_t at(std::size_t truth, std::size_t pred) const {
        return counts[truth * k + pred];
    }

    std::size_t total() const {
        std::size_t n = 0;
        for (auto c : counts) n += c;
        return n;
    }

    double accuracy() const {
        const std::size_t n = total();
        if (n == 0) return 0.0;
        std::size_t hit = 0;
        for (std::size_t i = 0; i < k; ++i) hit += at(i, i);
        return static_cast<double>(hit) / static_cast<double>(n);
    }
};

// Per-class F1 averaged over classes. A class with no predictions and no
// true examples contributes 0 (the 0/0 case is defined as zero).
inline double macro_f1(const ConfusionMatrix& cm) {
    if (cm.k == 0) throw TensorError("macro_f1: empty confusion matrix");
    double sum = 0.0;
    for (std::size_t c = 0; c < cm.k; ++c) {
        std::size_t tp = cm.at(c, c), fp = 0, fn = 0;
        for (std::size_t o = 0; o < cm.k; ++o) {
            if (o == c) continue;
            fp += cm.at(o, c);
            fn += cm.at(c, o);
        }
        const double denom = static_cast<double>(2 * tp + fp + fn);
        sum += denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
    }
    return sum / static_cast<double>(cm.k);
}

// ---- false-belief report ----

struct FalseBeliefSubset {
    std::size_t total = 0;
    std::size_t correct = 0;
    bool empty() const { return total == 0; }
    double accuracy() const {
        return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
    }
};

struct FalseBeliefReport {
    // indices: 0 first-order (minds m1/m2), 1 second-order (m12/m21), 2 joint
    // (clips where both orders are flagged at once)
    FalseBeliefSubset first_order, second_order, joint;
    std::array<std::size_t, kNumMinds> flagged_counts{};  // flags seen per mind
    std::size_t clips = 0;
};

// One record per evaluated clip: the five true labels, predictions, flags.
struct ClipOutcome {
    std::array<std::int32_t, kNumMinds> labels{};
    std::array<std::int32_t, kNumMinds> flags{};
    std::array<std::int32_t, kNumMinds> preds{};
};

inline FalseBeliefReport false_belief_accuracy(const std::vector<ClipOutcome>& outcomes) {
    FalseBeliefReport rep;
    rep.clips = outcomes.size();
    for (const auto& oc : outcomes) {
        for (std::size_t m = 0; m < kNumMinds; ++m)
            if (oc.flags[m]) ++rep.flagged_counts[m];
        bool any_first = oc.flags[0] || oc.flags[1];
        bool any_second = oc.flags[2] || oc.flags[3];
        for (std::size_t m : {std::size_t{0}, std::size_t{1}}) {
            if (!oc.flags[m]) continue;
            ++rep.first_order.total;
            if (oc.preds[m] == oc.labels[m]) ++rep.first_order.correct;
        }
        for (std::size_t m : {std::size_t{2}, std::size_t{3}}) {
            if (!oc.flags[m]) continue;
            ++rep.second_order.total;
            if (oc.preds[m] == oc.labels[m]) ++rep.second_order.correct;
        }
        if (any_first && any_second) {
            ++rep.joint.total;
            bool all_ok = true;
            for (std::size_t m = 0; m < 4; ++m)
                if (oc.flags[m] && oc.preds[m] != oc.labels[m]) all_ok = false;
            if (all_ok) ++rep.joint.correct;
        }
    }
    return rep;
}

inline std::string format_false_belief_report(const FalseBeliefReport& rep) {
    std::ostringstream os;
    os << "clips = " << rep.clips << "\n";
    static const char* mind_names[kNumMinds] = {"m1", "m2", "m12", "m21", "mc"};
    for (std::size_t m = 0; m < kNumMinds; ++m)
        os << "flagged." << mind_names[m] << " = " << rep.flagged_counts[m] << "\n";
    auto line = [&](const char* name, const FalseBeliefSubset& s) {
        os << name << ".total = " << s.total << "\n";
        if (s.empty())
            os << name << ".accuracy = empty\n";
        else {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.6f", s.accuracy());
            os << name << ".accuracy = " << buf << "\n";
        }
    };
    line("first_order", rep.first_order);
    line("second_order", rep.second_order);
    line("joint", rep.joint);
    return os.str();
}

// ---- PCA ----

struct PcaResult {
    std::size_t dim = 0;
    std::vector<double> mean;            // [dim]
    std::vector<double> components;      // [2,dim], orthonormal rows
    std::array<double, 2> explained_variance_ratio{};
    std::vector<std::array<double, 2>> projected;  // per sample
    double separability = 0.0;  // in [0,1], only meaningful when labels given
};

namespace analyze_detail {

// Cyclic Jacobi rotations on a symmetric matrix; returns eigenvalues and
// fills the columns of v with eigenvectors.
inline void jacobi_eigen(std::vector<double>& a, std::size_t n, std::vector<double>& eigvals,
                         std::vector<double>& v) {
    v.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double app = a[p * n + p], aqq = a[q * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    const double aip = a[i * n + p], aiq = a[i * n + q];
                    a[i * n + p] = c * aip - s * aiq;
                    a[i * n + q] = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double api = a[p * n + i], aqi = a[q * n + i];
                    a[p * n + i] = c * api - s * aqi;
                    a[q * n + i] = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = v[i * n + p], viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }
    eigvals.resize(n);
    for (std::size_t i = 0; i < n; ++i) eigvals[i] = a[i * n + i];
}

}  // namespace analyze_detail

// Top-2 principal components of row-major samples [n,dim]. Labels, when
// given, additionally score how linearly separable the projected classes are
// (accuracy of the best centroid classifier in the projected plane).
inline PcaResult pca_project(const std::vector<double>& samples, std::size_t n,
                             std::size_t dim,
                             const std::vector<std::int32_t>* labels = nullptr) {
    if (n < 3) throw TensorError("pca: need at least 3 samples, got " + std::to_string(n));
    if (dim < 2) throw TensorError("pca: need at least 2 dimensions");
    if (samples.size() != n * dim) throw TensorError("pca: sample buffer size mismatch");
    if (labels && labels->size() != n) throw TensorError("pca: label count mismatch");

    PcaResult res;
    res.dim = dim;
    res.mean.assign(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < dim; ++d) res.mean[d] += samples[i * dim + d];
    for (auto& m : res.mean) m /= static_cast<double>(n);

    std::vector<double> cov(dim * dim, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < dim; ++d) {
            const double xd = samples[i * dim + d] - res.mean[d];
            for (std::size_t e = d; e < dim; ++e)
                cov[d * dim + e] += xd * (samples[i * dim + e] - res.mean[e]);
        }
    for (std::size_t d = 0; d < dim; ++d)
        for (std::size_t e = 0; e < d; ++e) cov[d * dim + e] = cov[e * dim + d];
    for (auto& c : cov) c /= static_cast<double>(n - 1);

    std::vector<double> eigvals, v;
    analyze_detail::jacobi_eigen(cov, dim, eigvals, v);

    std::vector<std::size_t> order(dim);
    for (std::size_t i = 0; i < dim; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return eigvals[a] > eigvals[b]; });

    double trace = 0.0;
    for (double ev : eigvals) trace += std::max(ev, 0.0);
    res.components.assign(2 * dim, 0.0);
    for (int c = 0; c < 2; ++c) {
        const std::size_t col = order[c];
        double norm = 0.0;
        for (std::size_t d = 0; d < dim; ++d) norm += v[d * dim + col] * v[d * dim + col];
        norm = std::sqrt(norm);
        if (norm < 1e-12) throw TensorError("pca: degenerate eigenvector");
        for (std::size_t d = 0; d < dim; ++d)
            res.components[c * dim + d] = v[d * dim + col] / norm;
        res.explained_variance_ratio[c] =
            trace > 0.0 ? std::max(eigvals[col], 0.0) / trace : 0.0;
    }

    res.projected.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < 2; ++c) {
            double dot = 0.0;
            for (std::size_t d = 0; d < dim; ++d)
                dot += (samples[i * dim + d] - res.mean[d]) * res.components[c * dim + d];
            res.projected[i][c] = dot;
        }

    if (labels) {
        // nearest-centroid accuracy in the projected plane
        std::int32_t max_label = 0;
        for (auto l : *labels) {
            if (l < 0) throw TensorError("pca: negative label");
            max_label = std::max(max_label, l);
        }
        const std::size_t classes = static_cast<std::size_t>(max_label) + 1;
        std::vector<std::array<double, 2>> centroid(classes, {0.0, 0.0});
        std::vector<std::size_t> count(classes, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto l = static_cast<std::size_t>((*labels)[i]);
            centroid[l][0] += res.projected[i][0];
            centroid[l][1] += res.projected[i][1];
            ++count[l];
        }
        for (std::size_t c = 0; c < classes; ++c)
            if (count[c]) {
                centroid[c][0] /= static_cast<double>(count[c]);
                centroid[c][1] /= static_cast<double>(count[c]);
            }
        std::size_t hit = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t best_c = 0;
            for (std::size_t c = 0; c < classes; ++c) {
                if (!count[c]) continue;
                const double dx = res.projected[i][0] - centroid[c][0];
                const double dy = res.projected[i][1] - centroid[c][1];
                const double d2 = dx * dx + dy * dy;
                if (d2 < best) {
                    best = d2;
                    best_c = c;
                }
            }
            if (best_c == static_cast<std::size_t>((*labels)[i])) ++hit;
        }
        res.separability = static_cast<double>(hit) / static_cast<double>(n);
    }
    return res;
}

// ---- paired t-test ----

struct TTestResult {
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;
    bool degenerate = false;  // zero variance of the differences
};

namespace analyze_detail {

// Continued-fraction regularized incomplete beta, Lentz's algorithm.
inline double betacf(double a, double b, double x) {
    const double eps = 3e-14, fpmin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) break;
    }
    return h;
}

inline double betai(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                         a * std::log(x) + b * std::log(1.0 - x);
    const double bt = std::exp(ln_bt);
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

}  // namespace analyze_detail

// Two-sided p-value of Student's t with df degrees of freedom.
inline double student_t_two_sided(double t, double df) {
    if (df <= 0.0) throw TensorError("t-test: degrees of freedom must be positive");
    return analyze_detail::betai(df / 2.0, 0.5, df / (df + t * t));
}

inline TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw TensorError("t-test: sample sizes differ");
    const std::size_t n = a.size();
    if (n < 2) throw TensorError("t-test: need at least 2 pairs");
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(n - 1);

    TTestResult res;
    res.df = static_cast<double>(n - 1);
    if (var <= 0.0) {
        // all differences identical, the statistic is undefined
        res.degenerate = true;
        res.t = mean == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
        res.p = mean == 0.0 ? 1.0 : 0.0;
        return res;
    }
    res.t = mean / std::sqrt(var / static_cast<double>(n));
    res.p = student_t_two_sided(res.t, res.df);
    return res;
}

}  // namespace mtom
