#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mtom/gradcheck.hpp"
#include "mtom/layers.hpp"

using namespace mtom;

namespace {

Tensor<double> randn(const Shape& s, Rng& rng, bool grad = true) {
    Tensor<double> t = Tensor<double>::zeros(s, grad);
    for (auto& v : t.value()) v = rng.normal();
    return t;
}

}  // namespace

TEST_CASE("linear parameter count formula") {
    Rng rng(1);
    Linear<double> lin(10, 7, rng);
    ParamList<double> ps;
    lin.collect("lin", ps);
    CHECK(param_count(ps) == 10 * 7 + 10);

    Linear<double> nobias(10, 7, rng, false);
    ParamList<double> ps2;
    nobias.collect("nb", ps2);
    CHECK(param_count(ps2) == 70);
}

TEST_CASE("cnn encoder basics") {
    Rng rng(2);
    CnnEncoder<double> cnn(3, rng);
    Tape<double> tape;

    Tensor<double> zero_frame = Tensor<double>::zeros({3, 22, 22});
    Tensor<double> out = cnn.forward(tape, zero_frame);
    CHECK(out.shape() == Shape{64});
    // conv biases and the projection bias start at zero, so a zero frame
    // maps to the projection of the zero feature vector
    for (double v : out.value()) CHECK(v == 0.0);

    Tensor<double> frame = randn({3, 32, 32}, rng, false);
    Tensor<double> enc = cnn.forward(tape, frame);
    CHECK(enc.shape() == Shape{64});

    Tensor<double> shifted = Tensor<double>::zeros({3, 32, 32});
    for (std::size_t i = 0; i < frame.numel(); ++i)
        shifted.value()[i] = frame.value()[i] + 0.35;
    Tensor<double> enc2 = cnn.forward(tape, shifted);
    double diff = 0;
    for (std::size_t i = 0; i < 64; ++i) diff += std::abs(enc.value()[i] - enc2.value()[i]);
    CHECK(diff > 1e-6);  // no accidental offset invariance

    CHECK_THROWS_AS(cnn.forward(tape, Tensor<double>::zeros({3, 21, 21})), TensorError);

    ParamList<double> ps;
    cnn.collect("cnn", ps);
    // 16,32,64 channel blocks with 3x3 kernels plus the 64->64 projection
    CHECK(param_count(ps) == 448u + 4640u + 18496u + 4160u);
}

TEST_CASE("gcn_normalize") {
    Tensor<double> zero = Tensor<double>::zeros({3, 3});
    Tensor<double> a_hat = gcn_normalize(zero);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(a_hat.value()[i * 3 + j] == doctest::Approx(i == j ? 1.0 : 0.0));

    Tensor<double> edge = Tensor<double>::from_values({2, 2}, {0, 1, 1, 0});
    Tensor<double> norm = gcn_normalize(edge);
    for (double v : norm.value()) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));

    Rng rng(3);
    Tensor<double> sym = Tensor<double>::zeros({4, 4});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = i + 1; j < 4; ++j) {
            const double v = rng.uniform();
            sym.value()[i * 4 + j] = v;
            sym.value()[j * 4 + i] = v;
        }
    Tensor<double> shat = gcn_normalize(sym);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(shat.value()[i * 4 + j] ==
                  doctest::Approx(shat.value()[j * 4 + i]).epsilon(1e-12));

    Tensor<double> neg = Tensor<double>::from_values({2, 2}, {0, -1, -1, 0});
    CHECK_THROWS_AS(gcn_normalize(neg), TensorError);
}

TEST_CASE("gcn forward properties") {
    Rng rng(5);
    GcnLayer<double> gcn(6, rng);
    Tape<double> tape;

    Tensor<double> adj = Tensor<double>::zeros({5, 5});
    for (std::size_t i = 0; i + 1 < 5; ++i) {
        adj.value()[i * 5 + (i + 1)] = 1;
        adj.value()[(i + 1) * 5 + i] = 1;
    }
    Tensor<double> a_hat = gcn_normalize(adj);
    Tensor<double> x = randn({5, 6}, rng, false);
    Tensor<double> out = gcn.forward(tape, a_hat, x);
    CHECK(out.shape() == Shape{64});

    // permute nodes: reorder rows/cols of A and rows of X identically
    std::vector<std::size_t> perm = {4, 2, 0, 3, 1};
    Tensor<double> padj = Tensor<double>::zeros({5, 5});
    Tensor<double> px = Tensor<double>::zeros({5, 6});
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 5; ++j)
            padj.value()[i * 5 + j] = adj.value()[perm[i] * 5 + perm[j]];
        for (std::size_t f = 0; f < 6; ++f)
            px.value()[i * 6 + f] = x.value()[perm[i] * 6 + f];
    }
    Tensor<double> pout = gcn.forward(tape, gcn_normalize(padj), px);
    for (std::size_t i = 0; i < 64; ++i)
        CHECK(pout.value()[i] == doctest::Approx(out.value()[i]).epsilon(1e-9));

    // zero features reach the projection bias only; bias starts at zero
    Tensor<double> zout = gcn.forward(tape, a_hat, Tensor<double>::zeros({5, 6}));
    for (std::size_t i = 0; i < 64; ++i)
        CHECK(zout.value()[i] == doctest::Approx(gcn.proj.bias.value()[i]));

    ParamList<double> ps;
    gcn.collect("g", ps);
    std::vector<Tensor<double>> inputs = {randn({5, 6}, rng)};
    for (auto& p : ps) inputs.push_back(p);
    ScalarFn<double> f = [&, a_hat](Tape<double>& t, const std::vector<Tensor<double>>& in) {
        Tensor<double> y = gcn.forward(t, a_hat, in[0]);
        return sum(t, mul(t, y, y));
    };
    CHECK(finite_diff_check(f, inputs).max_rel_err <= 1e-5);
}

TEST_CASE("bilstm shapes and symmetries") {
    Rng rng(7);
    BiLstm<double> lstm(5, rng);
    Tape<double> tape;

    for (std::size_t t_len : {std::size_t{1}, std::size_t{3}, std::size_t{6}}) {
        BiLstmOutput<double> out = lstm.forward(tape, randn({t_len, 5}, rng, false));
        CHECK(out.hidden.shape() == Shape{t_len, 128});
        CHECK(out.cell.shape() == Shape{128});
    }
    CHECK_THROWS_AS(lstm.forward(tape, Tensor<double>::zeros({0, 5})), TensorError);

    // zeroed parameters give zero outputs
    BiLstm<double> zl(4, rng);
    for (int d = 0; d < 2; ++d) {
        std::fill(zl.w_input[d].value().begin(), zl.w_input[d].value().end(), 0.0);
        std::fill(zl.w_hidden[d].value().begin(), zl.w_hidden[d].value().end(), 0.0);
        std::fill(zl.b[d].value().begin(), zl.b[d].value().end(), 0.0);
    }
    BiLstmOutput<double> zout = zl.forward(tape, randn({3, 4}, rng, false));
    for (double v : zout.hidden.value()) CHECK(v == 0.0);
    for (double v : zout.cell.value()) CHECK(v == 0.0);

    // reversing the sequence swaps the directional halves of the final cell,
    // when the two directions share parameters
    BiLstm<double> tied(5, rng);
    tied.w_input[1].value() = tied.w_input[0].value();
    tied.w_hidden[1].value() = tied.w_hidden[0].value();
    tied.b[1].value() = tied.b[0].value();
    Tensor<double> x = randn({4, 5}, rng, false);
    Tensor<double> xr = Tensor<double>::zeros({4, 5});
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t d = 0; d < 5; ++d)
            xr.value()[t * 5 + d] = x.value()[(3 - t) * 5 + d];
    BiLstmOutput<double> fwd = tied.forward(tape, x);
    BiLstmOutput<double> rev = tied.forward(tape, xr);
    for (std::size_t i = 0; i < 64; ++i) {
        CHECK(fwd.cell.value()[i] == doctest::Approx(rev.cell.value()[64 + i]).epsilon(1e-12));
        CHECK(fwd.cell.value()[64 + i] == doctest::Approx(rev.cell.value()[i]).epsilon(1e-12));
    }

    ParamList<double> ps;
    lstm.collect("l", ps);
    CHECK(param_count(ps) == 2u * (256 * 5 + 256 * 64 + 256));
}

TEST_CASE("bilstm gradient") {
    Rng rng(9);
    BiLstm<double> lstm(5, rng);
    ParamList<double> ps;
    lstm.collect("l", ps);
    std::vector<Tensor<double>> inputs = {randn({3, 5}, rng)};
    for (auto& p : ps) inputs.push_back(p);
    ScalarFn<double> f = [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
        BiLstmOutput<double> o = lstm.forward(t, in[0]);
        return add(t, sum(t, mul(t, o.hidden, o.hidden)), sum(t, mul(t, o.cell, o.cell)));
    };
    Rng sample_rng(10);
    CHECK(finite_diff_check_sampled(f, inputs, 200, sample_rng).max_rel_err <= 1e-4);
}

TEST_CASE("cross attention") {
    Rng rng(11);
    CrossAttention<double> att(rng);
    Tape<double> tape;

    // make all kv tokens identical: repeat the same 16 projection rows
    for (std::size_t tok = 1; tok < 8; ++tok)
        for (std::size_t r = 0; r < 16; ++r)
            for (std::size_t c = 0; c < 128; ++c)
                att.w_shared_kv.value()[(tok * 16 + r) * 128 + c] =
                    att.w_shared_kv.value()[r * 128 + c];
    Tensor<double> q = randn({128}, rng, false);
    Tensor<double> kv = randn({128}, rng, false);
    Tensor<double> out = att.forward(tape, q, kv);
    for (std::size_t tok = 0; tok < 8; ++tok)
        for (std::size_t r = 0; r < 16; ++r)
            CHECK(out.value()[tok * 16 + r] == doctest::Approx(out.value()[r]).epsilon(1e-9));

    // equal query tokens: every output token is the same mixture of kv tokens
    CrossAttention<double> att2(rng);
    for (std::size_t tok = 1; tok < 8; ++tok)
        for (std::size_t r = 0; r < 16; ++r)
            for (std::size_t c = 0; c < 128; ++c)
                att2.w_query.value()[(tok * 16 + r) * 128 + c] =
                    att2.w_query.value()[r * 128 + c];
    Tensor<double> out2 = att2.forward(tape, randn({128}, rng, false), kv);
    for (std::size_t tok = 1; tok < 8; ++tok)
        for (std::size_t r = 0; r < 16; ++r)
            CHECK(out2.value()[tok * 16 + r] == doctest::Approx(out2.value()[r]).epsilon(1e-9));

    CHECK_THROWS_AS(att.forward(tape, Tensor<double>::zeros({64}), kv), TensorError);

    CrossAttention<double> att3(rng);
    ParamList<double> ps;
    att3.collect("a", ps);
    CHECK(param_count(ps) == 2u * 128 * 128);
    ScalarFn<double> f = [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
        Tensor<double> y = att3.forward(t, in[0], in[1]);
        return sum(t, mul(t, y, y));
    };
    Rng sr(13);
    CHECK(finite_diff_check_sampled(
              f, {randn({128}, rng), randn({128}, rng), att3.w_query, att3.w_shared_kv}, 200,
              sr)
              .max_rel_err <= 1e-4);
}
