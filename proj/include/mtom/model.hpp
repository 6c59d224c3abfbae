#pragma once

// The MToMnet family: shared contextual extractors, two person-specific
// MindNets, and the Base / DB / IC / CG prediction mechanisms with the four
// aggregation operators, for both the per-frame-beliefs (boss) and
// five-minds (tbd) tasks.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>

#include "mtom/data.hpp"
#include "mtom/layers.hpp"
#include "mtom/tensor.hpp"

namespace mtom {

// Mismatches between artifacts (model vs data mode, checkpoint vs request)
// get their own type so callers can map them to a distinct exit status.
class IncompatError : public std::runtime_error {
  public:
    explicit IncompatError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class Variant { Base, DB, IC, CG };
enum class Aggregation { Sum, Mul, Concat, Attention };

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Base: return "base";
        case Variant::DB: return "db";
        case Variant::IC: return "ic";
        case Variant::CG: return "cg";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "base") return Variant::Base;
    if (s == "db") return Variant::DB;
    if (s == "ic") return Variant::IC;
    if (s == "cg") return Variant::CG;
    throw TensorError("unknown variant '" + s + "'");
}

inline std::string aggregation_name(Aggregation a) {
    switch (a) {
        case Aggregation::Sum: return "sum";
        case Aggregation::Mul: return "mul";
        case Aggregation::Concat: return "concat";
        case Aggregation::Attention: return "attention";
    }
    return "?";
}

inline Aggregation aggregation_from_name(const std::string& s) {
    if (s == "sum") return Aggregation::Sum;
    if (s == "mul") return Aggregation::Mul;
    if (s == "concat") return Aggregation::Concat;
    if (s == "attention") return Aggregation::Attention;
    throw TensorError("unknown aggregation '" + s + "'");
}

struct MToMnetConfig {
    Variant variant = Variant::Base;
    Aggregation aggregation = Aggregation::Concat;
    double tau = 2.0;
    DatasetMode mode = DatasetMode::Boss;
    std::size_t num_classes = kNumObjectClasses;  // 27 boss, 4 tbd
    std::size_t hidden = 64;
    double dropout = 0.1;

    static MToMnetConfig for_mode(DatasetMode m) {
        MToMnetConfig c;
        c.mode = m;
        c.num_classes = m == DatasetMode::Boss ? kNumObjectClasses : kNumDynClasses;
        return c;
    }

    bool fused() const { return variant == Variant::IC || variant == Variant::CG; }

    // Concat and attention aggregations double the fused representation width.
    std::size_t z_width() const {
        if (!fused()) return 128;
        return (aggregation == Aggregation::Concat || aggregation == Aggregation::Attention)
                   ? 256
                   : 128;
    }

    std::size_t gaze_dim() const { return mode == DatasetMode::Boss ? 3 : 2; }
    std::size_t pose_coord_dim() const { return mode == DatasetMode::Boss ? 3 : 2; }
    std::size_t ctx_width() const { return mode == DatasetMode::Boss ? 192 : 128; }
    std::size_t ind_width() const { return mode == DatasetMode::Boss ? 128 : 192; }
    std::size_t lstm_input() const { return ctx_width() + ind_width(); }

    void validate() const {
        if (tau <= 0.0) throw TensorError("config: tau must be positive");
        if (hidden != 64) throw TensorError("config: hidden dimension is fixed at 64");
        if (dropout < 0.0 || dropout >= 1.0) throw TensorError("config: dropout out of range");
        const std::size_t want = mode == DatasetMode::Boss ? kNumObjectClasses : kNumDynClasses;
        if (num_classes != want)
            throw TensorError("config: num_classes must be " + std::to_string(want) +
                              " for " + mode_name(mode) + " mode");
    }
};

// Re-ranked decision labels: argmax(P_self^tau * P_other), computed in log
// space; ties break to the lowest class index.
inline std::pair<std::size_t, std::size_t> db_rerank(const std::vector<double>& p1,
                                                     const std::vector<double>& p2,
                                                     double tau) {
    if (tau <= 0.0) throw TensorError("db_rerank: tau must be positive");
    if (p1.size() != p2.size() || p1.empty())
        throw TensorError("db_rerank: distributions must have equal nonzero length");
    auto pick = [&](const std::vector<double>& self, const std::vector<double>& other) {
        std::size_t best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < self.size(); ++i) {
            const double score = tau * std::log(std::max(self[i], 1e-300)) +
                                 std::log(std::max(other[i], 1e-300));
            if (score > best_score) {
                best_score = score;
                best = i;
            }
        }
        return best;
    };
    return {pick(p1, p2), pick(p2, p1)};
}

template <typename Real>
struct MindNetState {
    Tensor<Real> hidden;               // [T,128]
    Tensor<Real> cell;                 // [128]
    std::vector<Tensor<Real>> fused;   // z_t per timestep, after fusion
};

template <typename Real>
struct BeliefOutput {
    // boss mode: per-timestep logits/distributions per person
    std::array<std::vector<Tensor<Real>>, 2> frame_logits;
    std::array<std::vector<Tensor<Real>>, 2> frame_probs;
    // tbd mode: m1, m2, m12, m21, mc
    std::array<Tensor<Real>, kNumMinds> mind_logits;
    std::array<Tensor<Real>, kNumMinds> mind_probs;
    // states kept for analysis
    MindNetState<Real> state1, state2;
};

template <typename Real>
class MindNet {
  public:
    MindNet() = default;
    MindNet(const MToMnetConfig& cfg, Rng& rng) {
        gaze_fc = Linear<Real>(64, cfg.gaze_dim(), rng);
        pose_gcn = GcnLayer<Real>(cfg.pose_coord_dim(), rng);
        ln_gain = Tensor<Real>::zeros({cfg.lstm_input()}, true);
        std::fill(ln_gain.value().begin(), ln_gain.value().end(), Real(1));
        ln_bias = Tensor<Real>::zeros({cfg.lstm_input()}, true);
        lstm = BiLstm<Real>(cfg.lstm_input(), rng);
        if (cfg.fused()) {
            const double bound = std::sqrt(1.0 / 64.0);
            fc_h = Tensor<Real>::uniform_init({64, 64}, rng, bound);
        }
        if (cfg.mode == DatasetMode::Boss) {
            head_self = Linear<Real>(cfg.num_classes, cfg.z_width(), rng);
        } else {
            head_self = Linear<Real>(cfg.num_classes, cfg.z_width(), rng);
            head_second = Linear<Real>(cfg.num_classes, cfg.z_width(), rng);
        }
    }

    // Hidden-to-cell-dimension projection: one 64x64 bias-free map applied
    // to each LSTM direction half.
    Tensor<Real> project_hidden(Tape<Real>& tape, const Tensor<Real>& h) const {
        Tensor<Real> fwd = matvec(tape, fc_h, slice(tape, h, 0, 0, 64));
        Tensor<Real> bwd = matvec(tape, fc_h, slice(tape, h, 0, 64, 64));
        return concat(tape, {fwd, bwd}, 0);
    }

    void collect(const std::string& prefix, ParamList<Real>& out) {
        gaze_fc.collect(prefix + ".gaze_fc", out);
        pose_gcn.collect(prefix + ".pose_gcn", out);
        ln_gain.set_name(prefix + ".ln.gain");
        ln_bias.set_name(prefix + ".ln.bias");
        out.push_back(ln_gain);
        out.push_back(ln_bias);
        lstm.collect(prefix + ".lstm", out);
        if (fc_h.defined()) {
            fc_h.set_name(prefix + ".fusion.fc_h");
            out.push_back(fc_h);
        }
        head_self.collect(prefix + ".head_self", out);
        if (head_second.weight.defined()) head_second.collect(prefix + ".head_second", out);
    }

    Linear<Real> gaze_fc;
    GcnLayer<Real> pose_gcn;
    Tensor<Real> ln_gain, ln_bias;
    BiLstm<Real> lstm;
    Tensor<Real> fc_h;  // defined for IC/CG only
    Linear<Real> head_self;
    Linear<Real> head_second;  // tbd only
};

template <typename Real>
class MToMnet {
  public:
    MToMnet() = default;

    MToMnet(const MToMnetConfig& config, std::uint64_t seed) : cfg_(config) {
        cfg_.validate();
        // independent init stream per component, so the shared extractors and
        // both MindNet encoders are bit-identical across variants and
        // aggregations for a fixed seed
        auto stream = [&](std::uint64_t salt) { return Rng(episode_seed(seed, salt)); };
        Rng rng_shared = stream(101);
        cnn = CnnEncoder<Real>(3, rng_shared);
        if (cfg_.mode == DatasetMode::Boss)
            ocr_gcn = GcnLayer<Real>(kNumObjectClasses, rng_shared);
        box_fc = Linear<Real>(64, kBoxSlots * kBoxFields, rng_shared);
        if (cfg_.mode == DatasetMode::Tbd) ego_cnn = CnnEncoder<Real>(3, rng_shared);
        Rng rng_m1 = stream(102);
        Rng rng_m2 = stream(103);
        mindnets[0] = MindNet<Real>(cfg_, rng_m1);
        mindnets[1] = MindNet<Real>(cfg_, rng_m2);
        Rng rng_fusion = stream(104);
        if (cfg_.variant == Variant::CG) {
            const double bound = std::sqrt(1.0 / 128.0);
            cg_weight = Tensor<Real>::uniform_init({128, 128}, rng_fusion, bound);
        }
        if (cfg_.fused() && cfg_.aggregation == Aggregation::Attention)
            attention = CrossAttention<Real>(rng_fusion);
        Rng rng_heads = stream(105);
        if (cfg_.mode == DatasetMode::Tbd)
            mc_head = Linear<Real>(cfg_.num_classes, cfg_.z_width(), rng_heads);

        Tensor<float> adj = pose_adjacency();
        Tensor<float> adj_hat_f = gcn_normalize(adj);
        pose_adj_hat = Tensor<Real>::zeros({kPoseJoints, kPoseJoints});
        for (std::size_t i = 0; i < adj_hat_f.numel(); ++i)
            pose_adj_hat.value()[i] = static_cast<Real>(adj_hat_f.value()[i]);
    }

    const MToMnetConfig& config() const { return cfg_; }

    ParamList<Real> parameters() {
        ParamList<Real> out;
        cnn.collect("shared.cnn", out);
        if (cfg_.mode == DatasetMode::Boss) ocr_gcn.collect("shared.ocr_gcn", out);
        box_fc.collect("shared.box_fc", out);
        if (cfg_.mode == DatasetMode::Tbd) ego_cnn.collect("shared.ego_cnn", out);
        mindnets[0].collect("mindnet1", out);
        mindnets[1].collect("mindnet2", out);
        if (cg_weight.defined()) {
            cg_weight.set_name("fusion.cg_weight");
            out.push_back(cg_weight);
        }
        if (attention.w_query.defined()) attention.collect("fusion.attention", out);
        if (mc_head.weight.defined()) mc_head.collect("heads.mc", out);
        return out;
    }

    // Clones MindNet 1 parameters into MindNet 2 for symmetry property tests.
    void tie_mindnets() {
        ParamList<Real> p1, p2;
        mindnets[0].collect("mindnet1", p1);
        mindnets[1].collect("mindnet2", p2);
        if (p1.size() != p2.size()) throw TensorError("tie_mindnets: parameter list mismatch");
        for (std::size_t i = 0; i < p1.size(); ++i) p2[i].value() = p1[i].value();
    }

    // ---- encoders ----

    Tensor<Real> encode_contextual_frame(Tape<Real>& tape, const Episode& ep,
                                         std::size_t t) const {
        std::vector<Tensor<Real>> parts;
        parts.push_back(cnn.forward(tape, frame_tensor(ep.frames, ep, t)));
        if (cfg_.mode == DatasetMode::Boss) {
            Tensor<Real> ocr = Tensor<Real>::zeros({kNumObjectClasses, kNumObjectClasses});
            const std::size_t n = kNumObjectClasses * kNumObjectClasses;
            for (std::size_t i = 0; i < n; ++i)
                ocr.value()[i] = static_cast<Real>(ep.ocr[t * n + i]);
            Tensor<Real> ocr_hat = gcn_normalize(ocr);
            parts.push_back(ocr_gcn.forward(tape, ocr_hat, ocr));
        }
        Tensor<Real> box = Tensor<Real>::zeros({kBoxSlots * kBoxFields});
        for (std::size_t i = 0; i < kBoxSlots * kBoxFields; ++i)
            box.value()[i] = static_cast<Real>(ep.boxes[t * kBoxSlots * kBoxFields + i]);
        parts.push_back(box_fc.forward(tape, box));
        return concat(tape, parts, 0);
    }

    Tensor<Real> encode_individual_frame(Tape<Real>& tape, const Episode& ep, std::size_t t,
                                         int person) const {
        if (person != 0 && person != 1)
            throw TensorError("encode_individual: person index must be 1 or 2");
        const MindNet<Real>& net = mindnets[person];
        std::vector<Tensor<Real>> parts;
        if (cfg_.mode == DatasetMode::Tbd)
            parts.push_back(ego_cnn.forward(tape, frame_tensor(ep.ego[person], ep, t)));
        Tensor<Real> gz = Tensor<Real>::zeros({cfg_.gaze_dim()});
        for (std::size_t i = 0; i < cfg_.gaze_dim(); ++i)
            gz.value()[i] = static_cast<Real>(ep.gaze[person][t * cfg_.gaze_dim() + i]);
        parts.push_back(net.gaze_fc.forward(tape, gz));
        const std::size_t cd = cfg_.pose_coord_dim();
        Tensor<Real> pj = Tensor<Real>::zeros({kPoseJoints, cd});
        for (std::size_t i = 0; i < kPoseJoints * cd; ++i)
            pj.value()[i] = static_cast<Real>(ep.pose[person][t * kPoseJoints * cd + i]);
        parts.push_back(net.pose_gcn.forward(tape, pose_adj_hat, pj));
        return concat(tape, parts, 0);
    }

    // LN over the concatenated cue vector, dropout in training, then the
    // bidirectional LSTM.
    MindNetState<Real> mindnet_forward(Tape<Real>& tape, const Tensor<Real>& x_ctx,
                                       const Tensor<Real>& x_ind, int person, bool training,
                                       Rng& rng) const {
        if (x_ctx.dim(0) != x_ind.dim(0))
            throw TensorError("mindnet_forward: contextual and individual lengths differ");
        const MindNet<Real>& net = mindnets[person];
        Tensor<Real> x = concat(tape, {x_ctx, x_ind}, 1);
        Tensor<Real> normed = layernorm(tape, x, net.ln_gain, net.ln_bias);
        normed = dropout(tape, normed, cfg_.dropout, training, rng);
        BiLstmOutput<Real> lo = net.lstm.forward(tape, normed);
        MindNetState<Real> state;
        state.hidden = lo.hidden;
        state.cell = lo.cell;
        return state;
    }

    // ---- fusion ----

    Tensor<Real> aggregate(Tape<Real>& tape, const Tensor<Real>& projected,
                           const Tensor<Real>& partner) const {
        switch (cfg_.aggregation) {
            case Aggregation::Sum: return add(tape, projected, partner);
            case Aggregation::Mul: return mul(tape, projected, partner);
            case Aggregation::Concat: return concat(tape, {projected, partner}, 0);
            case Aggregation::Attention:
                return concat(tape, {projected, attention.forward(tape, projected, partner)},
                              0);
        }
        throw TensorError("aggregate: aggregation unset");
    }

    void ic_fuse(Tape<Real>& tape, MindNetState<Real>& s1, MindNetState<Real>& s2) const {
        const std::size_t t_len = s1.hidden.dim(0);
        for (std::size_t t = 0; t < t_len; ++t) {
            Tensor<Real> h1 = row(tape, s1.hidden, t);
            Tensor<Real> h2 = row(tape, s2.hidden, t);
            s1.fused.push_back(
                aggregate(tape, mindnets[0].project_hidden(tape, h1), s2.cell));
            s2.fused.push_back(
                aggregate(tape, mindnets[1].project_hidden(tape, h2), s1.cell));
        }
    }

    Tensor<Real> cg_fuse(Tape<Real>& tape, MindNetState<Real>& s1,
                         MindNetState<Real>& s2) const {
        // common ground: one 128x128 map applied to each cell state, summed;
        // symmetric in the two persons by construction
        Tensor<Real> cg = add(tape, matvec(tape, cg_weight, s1.cell),
                              matvec(tape, cg_weight, s2.cell));
        const std::size_t t_len = s1.hidden.dim(0);
        for (std::size_t t = 0; t < t_len; ++t) {
            Tensor<Real> h1 = row(tape, s1.hidden, t);
            Tensor<Real> h2 = row(tape, s2.hidden, t);
            s1.fused.push_back(aggregate(tape, mindnets[0].project_hidden(tape, h1), cg));
            s2.fused.push_back(aggregate(tape, mindnets[1].project_hidden(tape, h2), cg));
        }
        return cg;
    }

    // ---- full forward ----

    BeliefOutput<Real> forward(Tape<Real>& tape, const Episode& ep, std::size_t start,
                               std::size_t t_len, bool training, Rng& rng) const {
        if (start + t_len > ep.t_len) throw TensorError("forward: window out of range");
        if (cfg_.mode == DatasetMode::Tbd && t_len != kClipLen)
            throw TensorError("forward: five-minds windows must have length " +
                              std::to_string(kClipLen) + ", got " + std::to_string(t_len));
        if (ep.mode != cfg_.mode)
            throw IncompatError("forward: episode mode " + mode_name(ep.mode) +
                                " does not match model mode " + mode_name(cfg_.mode));

        std::vector<Tensor<Real>> ctx_rows, ind_rows[2];
        for (std::size_t t = start; t < start + t_len; ++t) {
            Tensor<Real> c = encode_contextual_frame(tape, ep, t);
            ctx_rows.push_back(reshape(tape, c, {std::size_t{1}, c.numel()}));
            for (int p = 0; p < 2; ++p) {
                Tensor<Real> iv = encode_individual_frame(tape, ep, t, p);
                ind_rows[p].push_back(reshape(tape, iv, {std::size_t{1}, iv.numel()}));
            }
        }
        Tensor<Real> x_ctx = concat(tape, ctx_rows, 0);
        BeliefOutput<Real> out;
        out.state1 = mindnet_forward(tape, x_ctx, concat(tape, ind_rows[0], 0), 0, training,
                                     rng);
        out.state2 = mindnet_forward(tape, x_ctx, concat(tape, ind_rows[1], 0), 1, training,
                                     rng);

        if (cfg_.variant == Variant::IC) ic_fuse(tape, out.state1, out.state2);
        else if (cfg_.variant == Variant::CG) cg_fuse(tape, out.state1, out.state2);

        auto z_at = [&](const MindNetState<Real>& s, std::size_t t) {
            return cfg_.fused() ? s.fused[t] : row(tape, s.hidden, t);
        };

        if (cfg_.mode == DatasetMode::Boss) {
            for (std::size_t t = 0; t < t_len; ++t) {
                for (int p = 0; p < 2; ++p) {
                    const MindNetState<Real>& s = p == 0 ? out.state1 : out.state2;
                    Tensor<Real> logits = mindnets[p].head_self.forward(tape, z_at(s, t));
                    out.frame_logits[p].push_back(logits);
                    out.frame_probs[p].push_back(softmax(tape, logits, 0));
                }
            }
        } else {
            Tensor<Real> z1 = z_at(out.state1, t_len - 1);
            Tensor<Real> z2 = z_at(out.state2, t_len - 1);
            out.mind_logits[0] = mindnets[0].head_self.forward(tape, z1);
            out.mind_logits[1] = mindnets[1].head_self.forward(tape, z2);
            out.mind_logits[2] = mindnets[0].head_second.forward(tape, z1);
            out.mind_logits[3] = mindnets[1].head_second.forward(tape, z2);
            out.mind_logits[4] = mc_head.forward(tape, mul(tape, z1, z2));
            for (std::size_t m = 0; m < kNumMinds; ++m)
                out.mind_probs[m] = softmax(tape, out.mind_logits[m], 0);
        }
        return out;
    }

    // Decision labels for a boss-mode timestep, honoring the DB re-ranking.
    std::pair<std::size_t, std::size_t> decide(const Tensor<Real>& probs1,
                                              const Tensor<Real>& probs2) const {
        if (cfg_.variant == Variant::DB) {
            std::vector<double> p1(probs1.value().begin(), probs1.value().end());
            std::vector<double> p2(probs2.value().begin(), probs2.value().end());
            return db_rerank(p1, p2, cfg_.tau);
        }
        return {argmax_lowest(probs1), argmax_lowest(probs2)};
    }

    // Mind-level decisions for tbd mode; DB re-ranks the (m1,m2) and
    // (m12,m21) pairs, the common mind is unaffected.
    std::array<std::size_t, kNumMinds> decide_minds(
        const std::array<Tensor<Real>, kNumMinds>& probs) const {
        std::array<std::size_t, kNumMinds> labels{};
        if (cfg_.variant == Variant::DB) {
            auto pairwise = [&](std::size_t a, std::size_t b) {
                std::vector<double> pa(probs[a].value().begin(), probs[a].value().end());
                std::vector<double> pb(probs[b].value().begin(), probs[b].value().end());
                auto [la, lb] = db_rerank(pa, pb, cfg_.tau);
                labels[a] = la;
                labels[b] = lb;
            };
            pairwise(0, 1);
            pairwise(2, 3);
        } else {
            for (std::size_t m = 0; m < 4; ++m) labels[m] = argmax_lowest(probs[m]);
        }
        labels[4] = argmax_lowest(probs[4]);
        return labels;
    }

    CnnEncoder<Real> cnn;
    GcnLayer<Real> ocr_gcn;   // boss only
    Linear<Real> box_fc;
    CnnEncoder<Real> ego_cnn;  // tbd only; shared between the two MindNets
    MindNet<Real> mindnets[2];
    Tensor<Real> cg_weight;        // CG only
    CrossAttention<Real> attention;  // attention aggregation only
    Linear<Real> mc_head;          // tbd only
    Tensor<Real> pose_adj_hat;

  private:
    MToMnetConfig cfg_;

    static Tensor<Real> row(Tape<Real>& tape, const Tensor<Real>& m, std::size_t t) {
        return reshape(tape, slice(tape, m, 0, t, 1), {m.dim(1)});
    }

    Tensor<Real> frame_tensor(const std::vector<float>& buf, const Episode& ep,
                              std::size_t t) const {
        const std::size_t fpix = 3 * ep.frame_h * ep.frame_w;
        Tensor<Real> f = Tensor<Real>::zeros({3, ep.frame_h, ep.frame_w});
        for (std::size_t i = 0; i < fpix; ++i)
            f.value()[i] = static_cast<Real>(buf[t * fpix + i]);
        return f;
    }
};

// ---- parameter accounting ----

struct ParamBreakdown {
    std::size_t extractors = 0, lstm = 0, fusion = 0, heads = 0;
    std::size_t total() const { return extractors + lstm + fusion + heads; }
};

template <typename Real>
ParamBreakdown count_parameters(MToMnet<Real>& model) {
    ParamBreakdown b;
    for (auto& p : model.parameters()) {
        const std::string& n = p.name();
        if (n.find(".lstm.") != std::string::npos) b.lstm += p.numel();
        else if (n.find("fusion") != std::string::npos) b.fusion += p.numel();
        else if (n.find("head") != std::string::npos) b.heads += p.numel();
        else b.extractors += p.numel();
    }
    return b;
}

// Reference totals from the original implementation, used for the budget
// regression (targets are matched within 5 percent, not exactly).
inline std::optional<std::size_t> reference_param_total(const MToMnetConfig& cfg) {
    const bool boss = cfg.mode == DatasetMode::Boss;
    if (cfg.variant == Variant::Base || cfg.variant == Variant::DB)
        return boss ? 452374u : 465716u;
    if (cfg.aggregation == Aggregation::Concat) {
        if (cfg.variant == Variant::IC) return boss ? std::optional<std::size_t>(452630u)
                                                    : std::nullopt;
        if (cfg.variant == Variant::CG) return boss ? 460886u : 474228u;
    }
    if (cfg.aggregation == Aggregation::Attention && boss) {
        if (cfg.variant == Variant::IC) return 485398u;
        if (cfg.variant == Variant::CG) return 493654u;
    }
    return std::nullopt;
}

// ---- checkpoints ----

struct CheckpointMeta {
    std::size_t epoch = 0;
    double metric = 0.0;
    std::uint64_t seed = 0;
};

inline void write_config_lines(std::ostream& os, const MToMnetConfig& cfg) {
    os << "variant = " << variant_name(cfg.variant) << "\n";
    os << "aggregation = " << aggregation_name(cfg.aggregation) << "\n";
    os << "tau = " << cfg.tau << "\n";
    os << "mode = " << mode_name(cfg.mode) << "\n";
    os << "num_classes = " << cfg.num_classes << "\n";
    os << "dropout = " << cfg.dropout << "\n";
}

template <typename Real>
void save_checkpoint(MToMnet<Real>& model, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
    os << "MTOM1\n";
    write_config_lines(os, model.config());
    os << "epoch = " << meta.epoch << "\n";
    char metric_buf[40];
    std::snprintf(metric_buf, sizeof metric_buf, "%.17g", meta.metric);
    os << "metric = " << metric_buf << "\n";
    os << "seed = " << meta.seed << "\n";
    os << "end_header\n";
    for (auto& p : model.parameters()) {
        std::vector<std::uint32_t> dims;
        for (auto d : p.shape()) dims.push_back(static_cast<std::uint32_t>(d));
        std::vector<float> as32(p.numel());
        for (std::size_t i = 0; i < p.numel(); ++i)
            as32[i] = static_cast<float>(p.value()[i]);
        io_detail::write_farray(os, p.name(), dims, as32);
    }
    os << "end\n";
    if (!os) throw DataError("write error on '" + path.string() + "'");
}

template <typename Real>
std::pair<MToMnet<Real>, CheckpointMeta> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(is, line) || line != "MTOM1")
        throw DataError("'" + path.string() + "': bad magic, not an MTOM1 checkpoint");
    MToMnetConfig cfg;
    CheckpointMeta meta;
    while (std::getline(is, line)) {
        if (line == "end_header") break;
        const auto eq = line.find(" = ");
        if (eq == std::string::npos)
            throw DataError("'" + path.string() + "': malformed header line '" + line + "'");
        const std::string key = line.substr(0, eq), val = line.substr(eq + 3);
        if (key == "variant") cfg.variant = variant_from_name(val);
        else if (key == "aggregation") cfg.aggregation = aggregation_from_name(val);
        else if (key == "tau") cfg.tau = std::stod(val);
        else if (key == "mode") cfg.mode = mode_from_name(val);
        else if (key == "num_classes") cfg.num_classes = std::stoul(val);
        else if (key == "dropout") cfg.dropout = std::stod(val);
        else if (key == "epoch") meta.epoch = std::stoul(val);
        else if (key == "metric") meta.metric = std::stod(val);
        else if (key == "seed") meta.seed = std::stoull(val);
        else throw DataError("'" + path.string() + "': unknown header key '" + key + "'");
    }
    if (!is) throw DataError("'" + path.string() + "': truncated header");

    MToMnet<Real> model(cfg, meta.seed);
    std::map<std::string, Tensor<Real>> by_name;
    for (auto& p : model.parameters()) by_name[p.name()] = p;

    bool saw_end = false;
    while (std::getline(is, line)) {
        if (line == "end") {
            saw_end = true;
            break;
        }
        std::istringstream ls(line);
        std::string tag, kind, name;
        ls >> tag >> kind >> name;
        if (tag != "array" || kind != "f")
            throw DataError("'" + path.string() + "': malformed array line '" + line + "'");
        std::vector<std::uint32_t> dims;
        std::uint32_t d;
        while (ls >> d) dims.push_back(d);
        std::size_t n = 1;
        for (auto dd : dims) n *= dd;
        std::vector<float> data(n);
        io_detail::read_f32_le(is, data);
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw DataError("'" + path.string() + "': unknown parameter '" + name + "'");
        if (it->second.numel() != n)
            throw DataError("'" + path.string() + "': parameter '" + name +
                            "' has wrong size");
        for (std::size_t i = 0; i < n; ++i)
            it->second.value()[i] = static_cast<Real>(data[i]);
    }
    if (!saw_end) throw DataError("'" + path.string() + "': truncated, missing end marker");
    return {model, meta};
}

}  // namespace mtom
