#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mtom/gradcheck.hpp"
#include "mtom/tensor.hpp"

using namespace mtom;

namespace {

Tensor<double> randn(const Shape& s, Rng& rng, bool grad = true) {
    Tensor<double> t = Tensor<double>::zeros(s, grad);
    for (auto& v : t.value()) v = rng.normal();
    return t;
}

}  // namespace

TEST_CASE("matmul identity cases") {
    Tape<double> tape;
    Tensor<double> eye = Tensor<double>::from_values({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Rng rng(3);
    Tensor<double> b = randn({3, 4}, rng, false);
    Tensor<double> out = matmul(tape, eye, b);
    for (std::size_t i = 0; i < b.numel(); ++i)
        CHECK(out.value()[i] == doctest::Approx(b.value()[i]).epsilon(1e-12));

    Tensor<double> a = Tensor<double>::from_values({2, 2}, {1, 2, 3, 4});
    Tensor<double> i2 = Tensor<double>::from_values({2, 2}, {1, 0, 0, 1});
    Tensor<double> ab = matmul(tape, a, i2);
    CHECK(ab.value() == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("matmul gradient vs finite differences") {
    Rng rng(11);
    ScalarFn<double> f = [](Tape<double>& t, const std::vector<Tensor<double>>& in) {
        Tensor<double> y = matmul(t, in[0], in[1]);
        return sum(t, mul(t, y, y));
    };
    auto res = finite_diff_check(f, {randn({5, 7}, rng), randn({7, 3}, rng)});
    CHECK(res.max_rel_err <= 1e-6);
}

TEST_CASE("elementwise identities and gradient") {
    Tape<double> tape;
    Rng rng(5);
    Tensor<double> x = randn({4, 4}, rng, false);
    Tensor<double> zeros = Tensor<double>::zeros({4, 4});
    Tensor<double> ones = Tensor<double>::zeros({4, 4});
    std::fill(ones.value().begin(), ones.value().end(), 1.0);
    CHECK(add(tape, x, zeros).value() == x.value());
    CHECK(mul(tape, x, ones).value() == x.value());
    CHECK_THROWS_AS(add(tape, x, Tensor<double>::zeros({4, 5})), TensorError);

    ScalarFn<double> f = [](Tape<double>& t, const std::vector<Tensor<double>>& in) {
        return sum(t, mul(t, in[0], in[1]));
    };
    auto res = finite_diff_check(f, {randn({4, 4}, rng), randn({4, 4}, rng)});
    CHECK(res.max_rel_err <= 1e-6);
}

TEST_CASE("concat shapes and backward") {
    Tape<double> tape;
    Rng rng(7);
    Tensor<double> x = randn({2, 3}, rng, false);
    CHECK(concat(tape, {x}, 0).value() == x.value());
    Tensor<double> y = randn({2, 5}, rng, false);
    Tensor<double> c = concat(tape, {x, y}, 1);
    CHECK(c.shape() == Shape{2, 8});
    CHECK_THROWS_AS(concat(tape, {x, randn({3, 5}, rng, false)}, 1), TensorError);

    ScalarFn<double> f = [](Tape<double>& t, const std::vector<Tensor<double>>& in) {
        Tensor<double> cc = concat(t, {in[0], in[1]}, 1);
        return sum(t, mul(t, cc, cc));
    };
    auto res = finite_diff_check(f, {randn({2, 3}, rng), randn({2, 5}, rng)});
    CHECK(res.max_rel_err <= 1e-6);
}

TEST_CASE("concat then complementary slices is the identity") {
    Tape<double> tape;
    Rng rng(13);
    Tensor<double> a = randn({3, 2}, rng, false);
    Tensor<double> b = randn({3, 6}, rng, false);
    Tensor<double> c = concat(tape, {a, b}, 1);
    CHECK(slice(tape, c, 1, 0, 2).value() == a.value());
    CHECK(slice(tape, c, 1, 2, 6).value() == b.value());
}

TEST_CASE("conv2d basics") {
    Tape<double> tape;
    Rng rng(17);
    Tensor<double> input = randn({1, 5, 5}, rng, false);
    Tensor<double> zero_k = Tensor<double>::zeros({2, 1, 3, 3});
    Tensor<double> bias = Tensor<double>::from_values({2}, {0.5, -1.5});
    Tensor<double> out = conv2d(tape, input, zero_k, bias);
    CHECK(out.shape() == Shape{2, 3, 3});
    for (std::size_t p = 0; p < 9; ++p) {
        CHECK(out.value()[p] == 0.5);
        CHECK(out.value()[9 + p] == -1.5);
    }

    // delta kernel picks out the central crop
    Tensor<double> delta = Tensor<double>::zeros({1, 1, 3, 3});
    delta.value()[4] = 1.0;
    Tensor<double> crop = conv2d(tape, input, delta, Tensor<double>::zeros({1}));
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c)
            CHECK(crop.value()[r * 3 + c] ==
                  doctest::Approx(input.value()[(r + 1) * 5 + (c + 1)]));
}

TEST_CASE("conv2d gradient vs finite differences") {
    Rng rng(19);
    ScalarFn<double> f = [](Tape<double>& t, const std::vector<Tensor<double>>& in) {
        Tensor<double> y = conv2d(t, in[0], in[1], in[2]);
        return sum(t, mul(t, y, y));
    };
    auto res =
        finite_diff_check(f, {randn({3, 8, 8}, rng), randn({2, 3, 3, 3}, rng), randn({2}, rng)});
    CHECK(res.max_rel_err <= 1e-5);
}

TEST_CASE("maxpool basics and tie break") {
    Tape<double> tape;
    Tensor<double> small = Tensor<double>::from_values({1, 2, 2}, {1, 2, 3, 4});
    CHECK(maxpool2d(tape, small).value() == std::vector<double>{4});

    // constant input: the gradient routes to the first index in scan order
    Tensor<double> flat = Tensor<double>::zeros({1, 2, 2}, true);
    std::fill(flat.value().begin(), flat.value().end(), 2.0);
    Tape<double> t2;
    Tensor<double> loss = sum(t2, maxpool2d(t2, flat));
    t2.backward(loss);
    CHECK(flat.grad() == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("maxpool gradient away from ties") {
    Rng rng(23);
    ScalarFn<double> f = [](Tape<double>& t, const std::vector<Tensor<double>>& in) {
        Tensor<double> y = maxpool2d(t, in[0]);
        return sum(t, mul(t, y, y));
    };
    auto res = finite_diff_check(f, {randn({4, 6, 6}, rng)});
    CHECK(res.max_rel_err <= 1e-5);

    ScalarFn<double> g = [](Tape<double>& t, const std::vector<Tensor<double>>& in) {
        return sum(t, global_maxpool(t, in[0]));
    };
    auto res2 = finite_diff_check(g, {randn({3, 4, 4}, rng)});
    CHECK(res2.max_rel_err <= 1e-6);
}

TEST_CASE("activations") {
    Tape<double> tape;
    Tensor<double> x = Tensor<double>::from_values({2}, {0.0, -1.0});
    CHECK(gelu(tape, x).value()[0] == 0.0);
    CHECK(relu(tape, x).value()[1] == 0.0);

    Tensor<double> c = Tensor<double>::zeros({5});
    std::fill(c.value().begin(), c.value().end(), 3.7);
    Tensor<double> sm = softmax(tape, c, 0);
    for (double v : sm.value()) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));

    Rng rng(29);
    for (int i = 0; i < 20; ++i) {
        Tensor<double> r = randn({7}, rng, false);
        Tensor<double> s = softmax(tape, r, 0);
        double total = 0;
        for (double v : s.value()) {
            CHECK(v >= 0.0);
            total += v;
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("gelu gradient at fixed points") {
    for (double x0 : {-2.0, -0.5, 0.5, 2.0}) {
        ScalarFn<double> f = [](Tape<double>& t, const std::vector<Tensor<double>>& in) {
            return sum(t, gelu(t, in[0]));
        };
        Tensor<double> x = Tensor<double>::from_values({1}, {x0}, true);
        auto res = finite_diff_check(f, {x}, 1e-6);
        CHECK(res.max_rel_err <= 1e-8);
    }
}

TEST_CASE("layernorm") {
    Tape<double> tape;
    Tensor<double> gain = Tensor<double>::zeros({4});
    std::fill(gain.value().begin(), gain.value().end(), 1.0);
    Tensor<double> bias = Tensor<double>::zeros({4});
    Tensor<double> constant = Tensor<double>::zeros({2, 4});
    std::fill(constant.value().begin(), constant.value().end(), 5.0);
    Tensor<double> out = layernorm(tape, constant, gain, bias);
    for (double v : out.value()) CHECK(std::abs(v) < 1e-9);

    Rng rng(31);
    Tensor<double> x = randn({3, 16}, rng, false);
    Tensor<double> g16 = Tensor<double>::zeros({16});
    std::fill(g16.value().begin(), g16.value().end(), 1.0);
    Tensor<double> normed = layernorm(tape, x, g16, Tensor<double>::zeros({16}));
    for (std::size_t r = 0; r < 3; ++r) {
        double mean = 0, var = 0;
        for (std::size_t d = 0; d < 16; ++d) mean += normed.value()[r * 16 + d];
        mean /= 16;
        for (std::size_t d = 0; d < 16; ++d) {
            const double dv = normed.value()[r * 16 + d] - mean;
            var += dv * dv;
        }
        var /= 16;
        CHECK(std::abs(mean) < 1e-9);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }

    ScalarFn<double> f = [](Tape<double>& t, const std::vector<Tensor<double>>& in) {
        Tensor<double> y = layernorm(t, in[0], in[1], in[2]);
        return sum(t, mul(t, y, y));
    };
    auto res = finite_diff_check(f, {randn({3, 16}, rng), randn({16}, rng), randn({16}, rng)});
    CHECK(res.max_rel_err <= 1e-6);
}

TEST_CASE("dropout") {
    Tape<double> tape;
    Rng rng(37);
    Tensor<double> x = randn({4, 4}, rng, false);
    CHECK(dropout(tape, x, 0.1, false, rng).value() == x.value());
    CHECK(dropout(tape, x, 0.0, true, rng).value() == x.value());
    CHECK_THROWS_AS(dropout(tape, x, 1.0, true, rng), TensorError);

    const std::size_t n = 1000000;
    Tensor<double> big = Tensor<double>::zeros({n});
    std::fill(big.value().begin(), big.value().end(), 1.0);
    Tensor<double> dropped = dropout(tape, big, 0.1, true, rng);
    std::size_t zeroed = 0;
    for (double v : dropped.value())
        if (v == 0.0) ++zeroed;
    const double rate = static_cast<double>(zeroed) / n;
    CHECK(std::abs(rate - 0.1) <= 0.003);
}

TEST_CASE("backward basics") {
    Rng rng(41);
    Tensor<double> x = randn({6}, rng);
    {
        Tape<double> tape;
        Tensor<double> loss = sum(tape, x);
        tape.backward(loss);
        CHECK(x.grad() == std::vector<double>(6, 1.0));
        CHECK_THROWS_AS(tape.backward(loss), TensorError);  // one-shot tape
    }
    x.zero_grad();
    {
        Tape<double> tape;
        Tensor<double> loss = sum(tape, mul(tape, x, x));
        tape.backward(loss);
        for (std::size_t i = 0; i < 6; ++i)
            CHECK(x.grad()[i] == doctest::Approx(2 * x.value()[i]).epsilon(1e-12));
    }
    {
        Tape<double> tape;
        Tensor<double> nonscalar = mul(tape, x, x);
        CHECK_THROWS_AS(tape.backward(nonscalar), TensorError);
    }
}

TEST_CASE("finite_diff_check self tests") {
    Rng rng(43);
    ScalarFn<double> linear = [](Tape<double>& t, const std::vector<Tensor<double>>& in) {
        return sum(t, scale(t, in[0], 3.0));
    };
    CHECK(finite_diff_check(linear, {randn({5}, rng)}).max_rel_err <= 1e-9);

    ScalarFn<double> xent = [](Tape<double>& t, const std::vector<Tensor<double>>& in) {
        Tensor<double> logp = log_softmax(t, in[0], 0);
        return scale(t, pick(t, logp, 2), -1.0);
    };
    CHECK(finite_diff_check(xent, {randn({9}, rng)}).max_rel_err <= 1e-6);

    CHECK_THROWS_AS(finite_diff_check(
                        ScalarFn<double>([](Tape<double>& t,
                                            const std::vector<Tensor<double>>& in) {
                            return mul(t, in[0], in[0]);
                        }),
                        {randn({3}, rng)}),
                    TensorError);
}

TEST_CASE("rng streams are reproducible") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng da(7), db(7);
    Tape<double> tape;
    Tensor<double> x = Tensor<double>::zeros({256});
    std::fill(x.value().begin(), x.value().end(), 1.0);
    Tensor<double> m1 = dropout(tape, x, 0.1, true, da);
    Tensor<double> m2 = dropout(tape, x, 0.1, true, db);
    CHECK(m1.value() == m2.value());

    Rng ia(9), ib(9);
    Tensor<double> w1 = Tensor<double>::uniform_init({40}, ia, 0.5);
    Tensor<double> w2 = Tensor<double>::uniform_init({40}, ib, 0.5);
    CHECK(w1.value() == w2.value());
}

TEST_CASE("per-op gradients at random points") {
    Rng rng(47);
    std::vector<ScalarFn<double>> ops = {
        [](Tape<double>& t, const std::vector<Tensor<double>>& in) {
            return sum(t, tanh_op(t, in[0]));
        },
        [](Tape<double>& t, const std::vector<Tensor<double>>& in) {
            return sum(t, sigmoid(t, in[0]));
        },
        [](Tape<double>& t, const std::vector<Tensor<double>>& in) {
            return mean(t, gelu(t, in[0]));
        },
        [](Tape<double>& t, const std::vector<Tensor<double>>& in) {
            Tensor<double> p = softmax(t, in[0], 0);
            return sum(t, mul(t, p, p));
        },
        [](Tape<double>& t, const std::vector<Tensor<double>>& in) {
            return sum(t, mean_rows(t, reshape(t, in[0], {3, 4})));
        },
    };
    for (const auto& f : ops) {
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial)
            worst = std::max(worst, finite_diff_check(f, {randn({12}, rng)}).max_rel_err);
        CHECK(worst <= 1e-4);
    }
}
