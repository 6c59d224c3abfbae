#pragma once

// Cross-entropy losses, Adam, the training loop and evaluation. Runs are
// bitwise reproducible for a fixed seed: the shuffle and dropout streams are
// both derived from it and episodes are visited in shuffled index order.

#include <cmath>
#include <iostream>
#include <optional>

#include "mtom/analyze.hpp"
#include "mtom/data.hpp"
#include "mtom/model.hpp"

namespace mtom {

template <typename Real>
Tensor<Real> cross_entropy(Tape<Real>& tape, const Tensor<Real>& logits, std::int32_t label) {
    if (label < 0 || static_cast<std::size_t>(label) >= logits.numel())
        throw TensorError("cross_entropy: label out of range");
    Tensor<Real> logp = log_softmax(tape, logits, 0);
    return scale(tape, pick(tape, logp, static_cast<std::size_t>(label)), Real(-1));
}

template <typename Real>
class Adam {
  public:
    Adam() = default;
    Adam(ParamList<Real> params, double lr, double beta1 = 0.9, double beta2 = 0.99,
         double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        if (lr < 0.0) throw TensorError("adam: negative learning rate");
        for (const auto& p : params_) {
            m_.emplace_back(p.numel(), 0.0);
            v_.emplace_back(p.numel(), 0.0);
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step() {
        if (lr_ == 0.0) {  // explicit identity, state still advances
            ++t_;
            return;
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& val = params_[i].value();
            const auto& grad = params_[i].grad();
            for (std::size_t j = 0; j < val.size(); ++j) {
                const double g = static_cast<double>(grad[j]);
                m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
                v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                val[j] = static_cast<Real>(static_cast<double>(val[j]) -
                                           lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    std::size_t steps_taken() const { return t_; }

  private:
    ParamList<Real> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_ = 0.0, beta1_ = 0.9, beta2_ = 0.99, eps_ = 1e-8;
    std::size_t t_ = 0;
};

// ---- losses per sample ----

// boss: per-frame cross-entropy summed over the two persons, averaged over
// timesteps. tbd: summed over the five minds of one clip.
template <typename Real>
Tensor<Real> episode_loss(Tape<Real>& tape, const MToMnet<Real>& model,
                          const BeliefOutput<Real>& out, const Episode& ep,
                          std::size_t start, std::size_t t_len) {
    if (model.config().mode == DatasetMode::Boss) {
        std::vector<Tensor<Real>> terms;
        for (std::size_t t = 0; t < t_len; ++t)
            for (int p = 0; p < 2; ++p)
                terms.push_back(cross_entropy(tape, out.frame_logits[p][t],
                                              ep.boss_labels[p][start + t]));
        Tensor<Real> total = terms[0];
        for (std::size_t i = 1; i < terms.size(); ++i) total = add(tape, total, terms[i]);
        return scale(tape, total, static_cast<Real>(1.0 / static_cast<double>(t_len)));
    }
    const std::size_t clip = start / kClipLen;
    Tensor<Real> total;
    for (std::size_t m = 0; m < kNumMinds; ++m) {
        Tensor<Real> term =
            cross_entropy(tape, out.mind_logits[m], ep.tbd_labels[clip * kNumMinds + m]);
        total = m == 0 ? term : add(tape, total, term);
    }
    return total;
}

// ---- evaluation ----

struct EvalResult {
    double metric = 0.0;  // boss: accuracy, tbd: macro F1
    ConfusionMatrix confusion{0};
    std::vector<ClipOutcome> outcomes;  // tbd only
    std::size_t samples = 0;
};

template <typename Real>
EvalResult evaluate(const MToMnet<Real>& model, const std::vector<Episode>& episodes) {
    EvalResult res;
    Rng dummy(0);  // dropout is disabled outside training, stream untouched
    Tape<Real> tape;
    if (model.config().mode == DatasetMode::Boss) {
        res.confusion = ConfusionMatrix(kNumObjectClasses);
        for (const auto& ep : episodes) {
            BeliefOutput<Real> out = model.forward(tape, ep, 0, ep.t_len, false, dummy);
            for (std::size_t t = 0; t < ep.t_len; ++t) {
                auto [l1, l2] = model.decide(out.frame_probs[0][t], out.frame_probs[1][t]);
                res.confusion.add(static_cast<std::size_t>(ep.boss_labels[0][t]), l1);
                res.confusion.add(static_cast<std::size_t>(ep.boss_labels[1][t]), l2);
                ++res.samples;
            }
            tape = Tape<Real>();
        }
        res.metric = res.confusion.accuracy();
    } else {
        res.confusion = ConfusionMatrix(kNumDynClasses);
        for (const auto& ep : episodes) {
            for (const Clip& clip : make_clips(ep)) {
                BeliefOutput<Real> out =
                    model.forward(tape, ep, clip.start, kClipLen, false, dummy);
                auto preds = model.decide_minds(out.mind_probs);
                ClipOutcome oc;
                oc.labels = clip.labels;
                oc.flags = clip.flags;
                for (std::size_t m = 0; m < kNumMinds; ++m) {
                    oc.preds[m] = static_cast<std::int32_t>(preds[m]);
                    res.confusion.add(static_cast<std::size_t>(clip.labels[m]), preds[m]);
                }
                res.outcomes.push_back(oc);
                ++res.samples;
                tape = Tape<Real>();
            }
        }
        res.metric = macro_f1(res.confusion);
    }
    return res;
}

// ---- training loop ----

struct TrainConfig {
    std::size_t epochs = 300;
    std::size_t batch_size = 4;  // reference defaults: 4 boss, 64 tbd
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    std::uint64_t seed = 1;

    void validate() const {
        if (epochs == 0) throw TensorError("train config: epochs must be > 0");
        if (batch_size == 0) throw TensorError("train config: batch size must be > 0");
        if (lr < 0) throw TensorError("train config: negative learning rate");
    }
};

struct TrainResult {
    std::size_t best_epoch = 0;
    double best_metric = -1.0;
    double final_train_loss = 0.0;
    std::vector<std::string> log_lines;  // "epoch,train_loss,val_metric"
};

template <typename Real>
TrainResult train(MToMnet<Real>& model, const std::vector<Episode>& train_eps,
                  const std::vector<Episode>& val_eps, const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& checkpoint_path = std::nullopt,
                  std::ostream* log = nullptr,
                  std::optional<double> stop_at_metric = std::nullopt) {
    cfg.validate();
    if (train_eps.empty()) throw DataError("train: no training episodes");
    const bool boss = model.config().mode == DatasetMode::Boss;

    // samples are whole episodes (boss) or clips (tbd)
    struct Sample {
        const Episode* ep;
        std::size_t start, len;
    };
    std::vector<Sample> samples;
    for (const auto& ep : train_eps) {
        if (boss) {
            samples.push_back({&ep, 0, ep.t_len});
        } else {
            for (const Clip& c : make_clips(ep)) samples.push_back({&ep, c.start, kClipLen});
        }
    }

    Rng shuffle_rng(cfg.seed * 0x9e3779b97f4a7c15ull + 1);
    Rng dropout_rng(cfg.seed * 0xbf58476d1ce4e5b9ull + 2);
    ParamList<Real> params = model.parameters();
    Adam<Real> opt(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);

    TrainResult res;
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const std::size_t bsz = std::min(cfg.batch_size, order.size() - b);
            opt.zero_grad();
            for (std::size_t k = 0; k < bsz; ++k) {
                const Sample& s = samples[order[b + k]];
                Tape<Real> tape;
                BeliefOutput<Real> out =
                    model.forward(tape, *s.ep, s.start, s.len, true, dropout_rng);
                Tensor<Real> loss = episode_loss(tape, model, out, *s.ep, s.start, s.len);
                const double lv = static_cast<double>(loss.item());
                if (!std::isfinite(lv))
                    throw TensorError("train: non-finite loss at epoch " +
                                      std::to_string(epoch) + ", aborting");
                epoch_loss += lv;
                ++seen;
                Tensor<Real> scaled =
                    scale(tape, loss, static_cast<Real>(1.0 / static_cast<double>(bsz)));
                tape.backward(scaled);
            }
            opt.step();
        }
        epoch_loss /= static_cast<double>(seen);
        res.final_train_loss = epoch_loss;

        EvalResult val =
            val_eps.empty() ? evaluate(model, train_eps) : evaluate(model, val_eps);
        char line[96];
        std::snprintf(line, sizeof line, "%zu,%.6f,%.6f", epoch, epoch_loss, val.metric);
        res.log_lines.emplace_back(line);
        if (log) (*log) << line << "\n";

        if (val.metric > res.best_metric) {
            res.best_metric = val.metric;
            res.best_epoch = epoch;
            if (checkpoint_path) {
                CheckpointMeta meta;
                meta.epoch = epoch;
                meta.metric = val.metric;
                meta.seed = cfg.seed;
                save_checkpoint(model, meta, *checkpoint_path);
            }
        }
        if (stop_at_metric && val.metric >= *stop_at_metric) break;
    }
    return res;
}

}  // namespace mtom
