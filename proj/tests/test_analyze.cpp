#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mtom/analyze.hpp"

using namespace mtom;

TEST_CASE("confusion matrix and accuracy") {
    ConfusionMatrix cm(3);
    cm.add(0, 0);
    cm.add(0, 1);
    cm.add(1, 1);
    cm.add(2, 2);
    CHECK(cm.total() == 4);
    CHECK(cm.accuracy() == doctest::Approx(0.75));
    CHECK(cm.at(0, 1) == 1);
    CHECK_THROWS_AS(cm.add(3, 0), TensorError);
    CHECK(ConfusionMatrix(4).accuracy() == 0.0);
}

TEST_CASE("macro f1") {
    // perfect predictions on every class
    ConfusionMatrix perfect(4);
    for (std::size_t c = 0; c < 4; ++c)
        for (int i = 0; i < 10; ++i) perfect.add(c, c);
    CHECK(macro_f1(perfect) == doctest::Approx(1.0));

    // always predicting class 0 on a uniform 4-class set: class 0 gets
    // f1 = 2*100/(200+300) = 0.4, the rest get 0, macro = 0.1
    ConfusionMatrix degenerate(4);
    for (std::size_t c = 0; c < 4; ++c)
        for (int i = 0; i < 100; ++i) degenerate.add(c, 0);
    CHECK(macro_f1(degenerate) == doctest::Approx(0.1).epsilon(1e-12));

    // permuting class identities leaves the macro average unchanged
    ConfusionMatrix a(3), b(3);
    const std::size_t counts[3][3] = {{8, 1, 0}, {2, 5, 3}, {0, 1, 9}};
    const std::size_t perm[3] = {2, 0, 1};
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t r = 0; r < counts[i][j]; ++r) {
                a.add(i, j);
                b.add(perm[i], perm[j]);
            }
    CHECK(macro_f1(a) == doctest::Approx(macro_f1(b)).epsilon(1e-12));

    // absent classes contribute zero instead of poisoning the mean
    ConfusionMatrix sparse(4);
    sparse.add(0, 0);
    sparse.add(1, 1);
    CHECK(macro_f1(sparse) == doctest::Approx(0.5));

    CHECK_THROWS_AS(macro_f1(ConfusionMatrix(0)), TensorError);
}

namespace {

ClipOutcome make_outcome(std::initializer_list<int> labels, std::initializer_list<int> flags,
                         std::initializer_list<int> preds) {
    ClipOutcome oc;
    std::copy(labels.begin(), labels.end(), oc.labels.begin());
    std::copy(flags.begin(), flags.end(), oc.flags.begin());
    std::copy(preds.begin(), preds.end(), oc.preds.begin());
    return oc;
}

}  // namespace

TEST_CASE("false belief report") {
    // all flagged predictions correct
    std::vector<ClipOutcome> all_ok = {
        make_outcome({2, 3, 3, 3, 3}, {0, 1, 0, 1, 0}, {2, 3, 0, 3, 3}),
        make_outcome({3, 3, 3, 3, 3}, {1, 0, 1, 0, 0}, {3, 0, 3, 0, 3}),
    };
    FalseBeliefReport rep = false_belief_accuracy(all_ok);
    CHECK(rep.clips == 2);
    CHECK(rep.first_order.total == 2);
    CHECK(rep.first_order.accuracy() == doctest::Approx(1.0));
    CHECK(rep.second_order.total == 2);
    CHECK(rep.second_order.accuracy() == doctest::Approx(1.0));
    CHECK(rep.joint.total == 2);  // both clips carry first and second order flags
    CHECK(rep.joint.accuracy() == doctest::Approx(1.0));
    CHECK(rep.flagged_counts[0] == 1);
    CHECK(rep.flagged_counts[3] == 1);
    CHECK(rep.flagged_counts[4] == 0);

    // no flags at all: subsets are empty, and the report says so
    std::vector<ClipOutcome> quiet = {make_outcome({3, 3, 3, 3, 3}, {0, 0, 0, 0, 0},
                                                   {3, 3, 3, 3, 3})};
    FalseBeliefReport qrep = false_belief_accuracy(quiet);
    CHECK(qrep.first_order.empty());
    CHECK(qrep.second_order.empty());
    const std::string text = format_false_belief_report(qrep);
    CHECK(text.find("first_order.accuracy = empty") != std::string::npos);
    CHECK(text.find("clips = 1") != std::string::npos);

    // a wrong flagged prediction breaks the joint subset
    std::vector<ClipOutcome> mixed = {
        make_outcome({2, 3, 3, 3, 3}, {0, 1, 0, 1, 0}, {2, 0, 0, 3, 3})};
    FalseBeliefReport mrep = false_belief_accuracy(mixed);
    CHECK(mrep.first_order.accuracy() == doctest::Approx(0.0));
    CHECK(mrep.second_order.accuracy() == doctest::Approx(1.0));
    CHECK(mrep.joint.total == 1);
    CHECK(mrep.joint.correct == 0);

    // flagging everything reduces each subset to plain accuracy on its minds
    std::vector<ClipOutcome> flagged;
    Rng rng(7);
    std::size_t first_hits = 0, first_total = 0;
    for (int i = 0; i < 50; ++i) {
        ClipOutcome oc;
        for (std::size_t m = 0; m < kNumMinds; ++m) {
            oc.labels[m] = static_cast<std::int32_t>(rng.index(kNumDynClasses));
            oc.preds[m] = static_cast<std::int32_t>(rng.index(kNumDynClasses));
            oc.flags[m] = m < 4;
        }
        for (std::size_t m = 0; m < 2; ++m) {
            ++first_total;
            first_hits += oc.preds[m] == oc.labels[m];
        }
        flagged.push_back(oc);
    }
    FalseBeliefReport frep = false_belief_accuracy(flagged);
    CHECK(frep.first_order.total == first_total);
    CHECK(frep.first_order.correct == first_hits);
}

TEST_CASE("pca on collinear data") {
    // points on a line through dimension 0: the first component explains all
    const std::size_t n = 20, dim = 6;
    std::vector<double> samples(n * dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) samples[i * dim + 0] = static_cast<double>(i);
    PcaResult res = pca_project(samples, n, dim);
    CHECK(res.explained_variance_ratio[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(std::abs(res.components[0]) == doctest::Approx(1.0).epsilon(1e-9));
    for (std::size_t d = 1; d < dim; ++d)
        CHECK(std::abs(res.components[d]) <= 1e-9);
}

TEST_CASE("pca component orthonormality") {
    Rng rng(11);
    const std::size_t n = 200, dim = 16;
    std::vector<double> samples(n * dim);
    for (auto& v : samples) v = rng.normal();
    PcaResult res = pca_project(samples, n, dim);
    double n1 = 0, n2 = 0, dot = 0;
    for (std::size_t d = 0; d < dim; ++d) {
        n1 += res.components[d] * res.components[d];
        n2 += res.components[dim + d] * res.components[dim + d];
        dot += res.components[d] * res.components[dim + d];
    }
    CHECK(std::abs(n1 - 1.0) <= 1e-9);
    CHECK(std::abs(n2 - 1.0) <= 1e-9);
    CHECK(std::abs(dot) <= 1e-9);
    CHECK(res.explained_variance_ratio[0] >= res.explained_variance_ratio[1]);

    // isotropic data spreads variance about evenly over both components
    CHECK(res.explained_variance_ratio[0] <= 0.25);
    CHECK(res.explained_variance_ratio[1] >= 0.02);
}

TEST_CASE("pca invariances and errors") {
    Rng rng(13);
    const std::size_t n = 40, dim = 5;
    std::vector<double> samples(n * dim);
    for (auto& v : samples) v = rng.normal();

    // duplicating the whole sample set changes nothing but the count
    std::vector<double> doubled = samples;
    doubled.insert(doubled.end(), samples.begin(), samples.end());
    PcaResult a = pca_project(samples, n, dim);
    PcaResult b = pca_project(doubled, 2 * n, dim);
    for (std::size_t d = 0; d < dim; ++d)
        CHECK(std::abs(std::abs(a.components[d]) - std::abs(b.components[d])) <= 1e-6);
    CHECK(a.explained_variance_ratio[0] ==
          doctest::Approx(b.explained_variance_ratio[0]).epsilon(1e-9));

    CHECK_THROWS_AS(pca_project(std::vector<double>(2 * dim), 2, dim), TensorError);
    CHECK_THROWS_AS(pca_project(std::vector<double>(5), 5, 1), TensorError);
    CHECK_THROWS_AS(pca_project(std::vector<double>(7), 3, 5), TensorError);

    // two well-separated clusters are perfectly separable by centroids
    std::vector<double> clusters;
    std::vector<std::int32_t> labels;
    for (int i = 0; i < 30; ++i) {
        const double off = i < 15 ? -10.0 : 10.0;
        labels.push_back(i < 15 ? 0 : 1);
        for (std::size_t d = 0; d < dim; ++d)
            clusters.push_back(off + 0.1 * rng.normal());
    }
    PcaResult sep = pca_project(clusters, 30, dim, &labels);
    CHECK(sep.separability == doctest::Approx(1.0));
}

TEST_CASE("student t p-values") {
    // classic two-sided 5% critical value at 4 degrees of freedom
    CHECK(student_t_two_sided(2.776, 4.0) == doctest::Approx(0.05).epsilon(0.05));
    CHECK(student_t_two_sided(0.0, 10.0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(student_t_two_sided(100.0, 5.0) < 1e-6);
    CHECK(student_t_two_sided(-2.776, 4.0) ==
          doctest::Approx(student_t_two_sided(2.776, 4.0)).epsilon(1e-12));
    CHECK_THROWS_AS(student_t_two_sided(1.0, 0.0), TensorError);
}

TEST_CASE("paired t test") {
    // d = 1..5 against zero: t = 3 / sqrt(2.5/5) = 4.2426, p about 0.0132
    TTestResult r = paired_t_test({1, 2, 3, 4, 5}, {0, 0, 0, 0, 0});
    CHECK(r.t == doctest::Approx(4.2426).epsilon(1e-3));
    CHECK(r.df == 4.0);
    CHECK(r.p > 0.01);
    CHECK(r.p < 0.02);
    CHECK_FALSE(r.degenerate);

    // swapping the arguments flips the sign but not the p-value
    TTestResult s = paired_t_test({0, 0, 0, 0, 0}, {1, 2, 3, 4, 5});
    CHECK(s.t == doctest::Approx(-r.t).epsilon(1e-12));
    CHECK(s.p == doctest::Approx(r.p).epsilon(1e-12));

    // identical samples: no evidence at all
    TTestResult eq = paired_t_test({1, 2, 3}, {1, 2, 3});
    CHECK(eq.degenerate);
    CHECK(eq.p == 1.0);

    // constant nonzero difference: zero variance, certain direction
    TTestResult c = paired_t_test({2, 3, 4}, {1, 2, 3});
    CHECK(c.degenerate);
    CHECK(c.p == 0.0);

    CHECK_THROWS_AS(paired_t_test({1.0}, {2.0}), TensorError);
    CHECK_THROWS_AS(paired_t_test({1, 2}, {1, 2, 3}), TensorError);
}
