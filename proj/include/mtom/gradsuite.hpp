#pragma once

// The gradient verification suite behind `analyze gradcheck`: every primitive
// op at random points, every layer, and the full forward paths of the Base,
// IC and CG variants, all in 64-bit against central finite differences.

#include <iostream>

#include "mtom/gradcheck.hpp"
#include "mtom/layers.hpp"
#include "mtom/model.hpp"
#include "mtom/train.hpp"

namespace mtom {

struct GradSuiteEntry {
    std::string name;
    GradCheckResult result;
};

namespace gradsuite_detail {

inline Tensor<double> rand_t(const Shape& s, Rng& rng, double scale = 1.0) {
    Tensor<double> t = Tensor<double>::zeros(s, true);
    for (auto& v : t.value()) v = rng.normal(0.0, scale);
    return t;
}

}  // namespace gradsuite_detail

inline std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed = 9) {
    using gradsuite_detail::rand_t;
    Rng rng(seed);
    std::vector<GradSuiteEntry> entries;
    auto check = [&](const std::string& name, const ScalarFn<double>& f,
                     std::vector<Tensor<double>> inputs) {
        entries.push_back({name, finite_diff_check(f, std::move(inputs))});
    };
    auto check_sampled = [&](const std::string& name, const ScalarFn<double>& f,
                             std::vector<Tensor<double>> inputs, std::size_t n) {
        entries.push_back({name, finite_diff_check_sampled(f, std::move(inputs), n, rng)});
    };
    auto sq_sum = [](Tape<double>& tape, const Tensor<double>& y) {
        return sum(tape, mul(tape, y, y));
    };

    check("matmul", [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
        return sq_sum(t, matmul(t, in[0], in[1]));
    }, {rand_t({5, 7}, rng), rand_t({7, 3}, rng)});

    check("elementwise_mul", [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
        return sum(t, mul(t, in[0], in[1]));
    }, {rand_t({4, 4}, rng), rand_t({4, 4}, rng)});

    check("concat_slice", [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
        Tensor<double> c = concat(t, {in[0], in[1]}, 1);
        return sq_sum(t, slice(t, c, 1, 2, 4));
    }, {rand_t({2, 3}, rng), rand_t({2, 5}, rng)});

    check_sampled("conv2d", [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
        return sq_sum(t, conv2d(t, in[0], in[1], in[2]));
    }, {rand_t({3, 8, 8}, rng), rand_t({2, 3, 3, 3}, rng), rand_t({2}, rng)}, 100);

    check_sampled("maxpool2d", [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
        return sq_sum(t, maxpool2d(t, in[0]));
    }, {rand_t({4, 6, 6}, rng)}, 100);

    check("gelu", [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
        return sum(t, gelu(t, in[0]));
    }, {rand_t({4, 5}, rng)});

    check("softmax_xent", [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
        return cross_entropy(t, in[0], 2);
    }, {rand_t({9}, rng)});

    check("layernorm", [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
        return sq_sum(t, layernorm(t, in[0], in[1], in[2]));
    }, {rand_t({3, 16}, rng), rand_t({16}, rng), rand_t({16}, rng)});

    {
        Rng lr(seed + 1);
        BiLstm<double> lstm(5, lr);
        std::vector<Tensor<double>> inputs = {rand_t({3, 5}, rng)};
        ParamList<double> ps;
        lstm.collect("lstm", ps);
        for (auto& p : ps) inputs.push_back(p);
        check_sampled("bilstm", [&, lstm](Tape<double>& t,
                                          const std::vector<Tensor<double>>& in) {
            BiLstmOutput<double> o = lstm.forward(t, in[0]);
            return add(t, sq_sum(t, o.hidden), sq_sum(t, o.cell));
        }, inputs, 100);
    }

    {
        Rng ar(seed + 2);
        CrossAttention<double> att(ar);
        check_sampled("cross_attention",
                      [&, att](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          return sq_sum(t, att.forward(t, in[0], in[1]));
                      },
                      {rand_t({128}, rng), rand_t({128}, rng), att.w_query, att.w_shared_kv},
                      100);
    }

    {
        Rng gr(seed + 3);
        GcnLayer<double> gcn(4, gr);
        Tensor<double> adj = Tensor<double>::zeros({5, 5});
        for (std::size_t i = 0; i + 1 < 5; ++i) {
            adj.value()[i * 5 + i + 1] = 1.0;
            adj.value()[(i + 1) * 5 + i] = 1.0;
        }
        Tensor<double> a_hat = gcn_normalize(adj);
        ParamList<double> ps;
        gcn.collect("gcn", ps);
        std::vector<Tensor<double>> inputs = {rand_t({5, 4}, rng)};
        for (auto& p : ps) inputs.push_back(p);
        check_sampled("gcn", [&, gcn, a_hat](Tape<double>& t,
                                             const std::vector<Tensor<double>>& in) {
            return sq_sum(t, gcn.forward(t, a_hat, in[0]));
        }, inputs, 100);
    }

    // full model paths on a tiny generated episode; small noise breaks
    // max-pool ties so the loss is differentiable at the checked point
    auto model_path = [&](const std::string& name, MToMnetConfig mc, DatasetMode dm) {
        SyntheticConfig sc;
        sc.mode = dm;
        sc.episode_count = 1;
        sc.t_len = dm == DatasetMode::Tbd ? kClipLen : 2;
        sc.frame_size = 22;
        sc.object_count = 3;
        sc.seed = seed + 17;
        std::vector<float> ocr(kNumObjectClasses * kNumObjectClasses, 0.0f);
        for (std::size_t i = 0; i < kNumObjectClasses; ++i)
            ocr[i * kNumObjectClasses + i] = 1.0f;
        Episode ep = generate_episode(sc, episode_seed(sc.seed, 0), "gc", ocr).episode;
        Rng noise(seed + 23);
        for (auto& v : ep.frames) v += static_cast<float>(noise.normal(0.0, 1e-3));
        for (auto& e : ep.ego)
            for (auto& v : e) v += static_cast<float>(noise.normal(0.0, 1e-3));

        MToMnetConfig dmc = mc;
        dmc.mode = dm;
        dmc.num_classes = dm == DatasetMode::Boss ? kNumObjectClasses : kNumDynClasses;
        dmc.dropout = 0.0;
        MToMnet<double> model(dmc, seed + 31);
        ScalarFn<double> f = [&model, ep, dm](Tape<double>& t,
                                              const std::vector<Tensor<double>>&) {
            Rng r(0);
            const std::size_t t_len = dm == DatasetMode::Tbd ? kClipLen : ep.t_len;
            BeliefOutput<double> out = model.forward(t, ep, 0, t_len, false, r);
            return episode_loss(t, model, out, ep, 0, t_len);
        };
        entries.push_back(
            {name, finite_diff_check_sampled(f, model.parameters(), 100, rng, 1e-4)});
    };

    MToMnetConfig base;
    base.variant = Variant::Base;
    model_path("model_base", base, DatasetMode::Boss);
    MToMnetConfig ic;
    ic.variant = Variant::IC;
    ic.aggregation = Aggregation::Concat;
    model_path("model_ic_concat", ic, DatasetMode::Boss);
    MToMnetConfig cg;
    cg.variant = Variant::CG;
    cg.aggregation = Aggregation::Concat;
    model_path("model_cg_concat", cg, DatasetMode::Tbd);

    return entries;
}

}  // namespace mtom
