#pragma once

// Building blocks composed by the MToMnet model: linear maps, the 16/32/64
// CNN encoder, one-layer GCN with symmetric normalization, a bidirectional
// LSTM and single-head cross-attention over 8x16 token reshapes.

#include <string>
#include <vector>

#include "mtom/tensor.hpp"

namespace mtom {

template <typename Real>
using ParamList = std::vector<Tensor<Real>>;

template <typename Real>
std::size_t param_count(const ParamList<Real>& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.numel();
    return n;
}

template <typename Real>
class Linear {
  public:
    Linear() = default;
    Linear(std::size_t out, std::size_t in, Rng& rng, bool with_bias = true) {
        const double bound = std::sqrt(1.0 / static_cast<double>(in));
        weight = Tensor<Real>::uniform_init({out, in}, rng, bound);
        if (with_bias) bias = Tensor<Real>::zeros({out}, true);
    }

    Tensor<Real> forward(Tape<Real>& tape, const Tensor<Real>& x) const {
        return affine(tape, weight, x, bias);
    }

    // rows of X [n,in] -> [n,out]
    Tensor<Real> forward_rows(Tape<Real>& tape, const Tensor<Real>& x) const {
        Tensor<Real> y = matmul_nt(tape, x, weight);
        if (!bias.defined()) return y;
        // add bias to every row
        std::vector<Tensor<Real>> rows;
        const std::size_t n = y.dim(0);
        for (std::size_t i = 0; i < n; ++i) {
            Tensor<Real> r = reshape(tape, slice(tape, y, 0, i, 1), {y.dim(1)});
            rows.push_back(reshape(tape, add(tape, r, bias), {std::size_t{1}, y.dim(1)}));
        }
        return concat(tape, rows, 0);
    }

    void collect(const std::string& prefix, ParamList<Real>& out) {
        weight.set_name(prefix + ".weight");
        out.push_back(weight);
        if (bias.defined()) {
            bias.set_name(prefix + ".bias");
            out.push_back(bias);
        }
    }

    Tensor<Real> weight;
    Tensor<Real> bias;  // undefined when bias-free
};

// Three conv blocks (16, 32, 64 channels, 3x3 kernels, stride 1, valid
// padding), each followed by ReLU and 2x2 max pooling; the third pool is
// global. A 64->64 projection closes the stack. Minimum input is 22x22.
template <typename Real>
class CnnEncoder {
  public:
    static constexpr std::size_t kMinInput = 22;

    CnnEncoder() = default;
    CnnEncoder(std::size_t in_channels, Rng& rng) {
        const std::size_t chans[4] = {in_channels, 16, 32, 64};
        for (int i = 0; i < 3; ++i) {
            const double bound = std::sqrt(1.0 / static_cast<double>(chans[i] * 9));
            kernels[i] =
                Tensor<Real>::uniform_init({chans[i + 1], chans[i], 3, 3}, rng, bound);
            biases[i] = Tensor<Real>::zeros({chans[i + 1]}, true);
        }
        proj = Linear<Real>(64, 64, rng);
    }

    Tensor<Real> forward(Tape<Real>& tape, const Tensor<Real>& frame) const {
        if (frame.rank() != 3)
            throw TensorError("cnn_forward: expected frame [C,H,W]");
        if (frame.dim(1) < kMinInput || frame.dim(2) < kMinInput)
            throw TensorError("cnn_forward: frame " + std::to_string(frame.dim(1)) + "x" +
                              std::to_string(frame.dim(2)) + " below minimum " +
                              std::to_string(kMinInput) + "x" + std::to_string(kMinInput));
        Tensor<Real> h = frame;
        for (int i = 0; i < 2; ++i) {
            h = maxpool2d(tape, relu(tape, conv2d(tape, h, kernels[i], biases[i])));
        }
        h = global_maxpool(tape, relu(tape, conv2d(tape, h, kernels[2], biases[2])));
        return proj.forward(tape, h);
    }

    void collect(const std::string& prefix, ParamList<Real>& out) {
        for (int i = 0; i < 3; ++i) {
            const std::string block = prefix + ".conv" + std::to_string(i + 1);
            kernels[i].set_name(block + ".weight");
            biases[i].set_name(block + ".bias");
            out.push_back(kernels[i]);
            out.push_back(biases[i]);
        }
        proj.collect(prefix + ".proj", out);
    }

    Tensor<Real> kernels[3];
    Tensor<Real> biases[3];
    Linear<Real> proj;
};

// A_hat = D^{-1/2} (A + I) D^{-1/2} with D the degree matrix of A + I.
template <typename Real>
Tensor<Real> gcn_normalize(const Tensor<Real>& a) {
    if (a.rank() != 2 || a.dim(0) != a.dim(1))
        throw TensorError("gcn_normalize: adjacency must be square");
    const std::size_t n = a.dim(0);
    for (Real v : a.value())
        if (v < Real(0)) throw TensorError("gcn_normalize: negative adjacency entry");
    std::vector<Real> deg(n, Real(0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) deg[i] += a.value()[i * n + j];
        deg[i] += Real(1);  // self loop
    }
    Tensor<Real> out = Tensor<Real>::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const Real aij = a.value()[i * n + j] + (i == j ? Real(1) : Real(0));
            out.value()[i * n + j] = aij / std::sqrt(deg[i] * deg[j]);
        }
    return out;
}

// One graph convolution GELU'd, mean-pooled over nodes and projected to 64.
// The GCN hidden width is 32 to keep model totals near the reference budget.
template <typename Real>
class GcnLayer {
  public:
    static constexpr std::size_t kHidden = 32;

    GcnLayer() = default;
    GcnLayer(std::size_t in_features, Rng& rng) {
        const double bound = std::sqrt(1.0 / static_cast<double>(in_features));
        weight = Tensor<Real>::uniform_init({kHidden, in_features}, rng, bound);
        proj = Linear<Real>(64, kHidden, rng);
    }

    Tensor<Real> forward(Tape<Real>& tape, const Tensor<Real>& a_hat,
                         const Tensor<Real>& x) const {
        if (a_hat.rank() != 2 || x.rank() != 2 || a_hat.dim(1) != x.dim(0))
            throw TensorError("gcn_forward: shape mismatch " + shape_str(a_hat.shape()) +
                              " vs " + shape_str(x.shape()));
        Tensor<Real> mixed = matmul(tape, a_hat, x);          // [n,F]
        Tensor<Real> h = matmul_nt(tape, mixed, weight);      // [n,hidden]
        h = gelu(tape, h);
        Tensor<Real> pooled = mean_rows(tape, h);             // [hidden]
        return proj.forward(tape, pooled);
    }

    void collect(const std::string& prefix, ParamList<Real>& out) {
        weight.set_name(prefix + ".weight");
        out.push_back(weight);
        proj.collect(prefix + ".proj", out);
    }

    Tensor<Real> weight;
    Linear<Real> proj;
};

template <typename Real>
struct BiLstmOutput {
    Tensor<Real> hidden;  // [T,128]
    Tensor<Real> cell;    // [128] = final forward cell || final backward cell
};

// One-layer bidirectional LSTM with hidden size 64 per direction.
// Gate order in the packed 256-row weight matrices: input, forget, cell, output.
template <typename Real>
class BiLstm {
  public:
    static constexpr std::size_t kHidden = 64;

    BiLstm() = default;
    BiLstm(std::size_t input_dim, Rng& rng) : input_dim_(input_dim) {
        for (int d = 0; d < 2; ++d) {
            const double bx = std::sqrt(1.0 / static_cast<double>(input_dim));
            const double bh = std::sqrt(1.0 / static_cast<double>(kHidden));
            w_input[d] = Tensor<Real>::uniform_init({4 * kHidden, input_dim}, rng, bx);
            w_hidden[d] = Tensor<Real>::uniform_init({4 * kHidden, kHidden}, rng, bh);
            b[d] = Tensor<Real>::zeros({4 * kHidden}, true);
            for (std::size_t i = kHidden; i < 2 * kHidden; ++i)
                b[d].value()[i] = Real(1);  // forget-gate bias
        }
    }

    BiLstmOutput<Real> forward(Tape<Real>& tape, const Tensor<Real>& x) const {
        if (x.rank() != 2 || x.dim(1) != input_dim_)
            throw TensorError("bilstm_forward: expected [T," + std::to_string(input_dim_) +
                              "], got " + shape_str(x.shape()));
        const std::size_t t_len = x.dim(0);
        if (t_len == 0) throw TensorError("bilstm_forward: empty sequence");

        std::vector<Tensor<Real>> h_fwd, h_bwd;
        Tensor<Real> c_fwd_last, c_bwd_last;
        for (int d = 0; d < 2; ++d) {
            Tensor<Real> h = Tensor<Real>::zeros({kHidden});
            Tensor<Real> c = Tensor<Real>::zeros({kHidden});
            for (std::size_t s = 0; s < t_len; ++s) {
                const std::size_t t = d == 0 ? s : t_len - 1 - s;
                Tensor<Real> xt = reshape(tape, slice(tape, x, 0, t, 1), {input_dim_});
                Tensor<Real> pre = add(tape, affine(tape, w_input[d], xt, b[d]),
                                       matvec(tape, w_hidden[d], h));
                Tensor<Real> gi = sigmoid(tape, slice(tape, pre, 0, 0, kHidden));
                Tensor<Real> gf = sigmoid(tape, slice(tape, pre, 0, kHidden, kHidden));
                Tensor<Real> gg = tanh_op(tape, slice(tape, pre, 0, 2 * kHidden, kHidden));
                Tensor<Real> go = sigmoid(tape, slice(tape, pre, 0, 3 * kHidden, kHidden));
                c = add(tape, mul(tape, gf, c), mul(tape, gi, gg));
                h = mul(tape, go, tanh_op(tape, c));
                if (d == 0)
                    h_fwd.push_back(h);
                else
                    h_bwd.push_back(h);
            }
            (d == 0 ? c_fwd_last : c_bwd_last) = c;
        }

        std::vector<Tensor<Real>> rows;
        rows.reserve(t_len);
        for (std::size_t t = 0; t < t_len; ++t) {
            Tensor<Real> row =
                concat(tape, {h_fwd[t], h_bwd[t_len - 1 - t]}, 0);  // [128]
            rows.push_back(reshape(tape, row, {std::size_t{1}, 2 * kHidden}));
        }
        BiLstmOutput<Real> out;
        out.hidden = concat(tape, rows, 0);
        out.cell = concat(tape, {c_fwd_last, c_bwd_last}, 0);
        return out;
    }

    void collect(const std::string& prefix, ParamList<Real>& out) {
        const char* dir[2] = {".fwd", ".bwd"};
        for (int d = 0; d < 2; ++d) {
            w_input[d].set_name(prefix + dir[d] + ".w_input");
            w_hidden[d].set_name(prefix + dir[d] + ".w_hidden");
            b[d].set_name(prefix + dir[d] + ".bias");
            out.push_back(w_input[d]);
            out.push_back(w_hidden[d]);
            out.push_back(b[d]);
        }
    }

    std::size_t input_dim() const { return input_dim_; }

    Tensor<Real> w_input[2], w_hidden[2], b[2];

  private:
    std::size_t input_dim_ = 0;
};

// Single-head scaled dot-product attention between two 128-vectors reshaped
// to 8 tokens x 16 dims. Q comes from the query side, K and V share one
// projection of the kv side; both maps are bias-free 128x128.
template <typename Real>
class CrossAttention {
  public:
    static constexpr std::size_t kDim = 128;
    static constexpr std::size_t kTokens = 8;
    static constexpr std::size_t kTokenDim = 16;

    CrossAttention() = default;
    explicit CrossAttention(Rng& rng) {
        const double bound = std::sqrt(1.0 / static_cast<double>(kDim));
        w_query = Tensor<Real>::uniform_init({kDim, kDim}, rng, bound);
        w_shared_kv = Tensor<Real>::uniform_init({kDim, kDim}, rng, bound);
    }

    Tensor<Real> forward(Tape<Real>& tape, const Tensor<Real>& q_vec,
                         const Tensor<Real>& kv_vec) const {
        if (q_vec.numel() != kDim || kv_vec.numel() != kDim)
            throw TensorError("cross_attention: inputs must be 128-vectors");
        Tensor<Real> q = reshape(tape, matvec(tape, w_query, q_vec), {kTokens, kTokenDim});
        Tensor<Real> kv =
            reshape(tape, matvec(tape, w_shared_kv, kv_vec), {kTokens, kTokenDim});
        Tensor<Real> scores =
            scale(tape, matmul_nt(tape, q, kv),
                  static_cast<Real>(1.0 / std::sqrt(static_cast<double>(kTokenDim))));
        Tensor<Real> weights = softmax(tape, scores, 1);
        Tensor<Real> attended = matmul(tape, weights, kv);
        return reshape(tape, attended, {kDim});
    }

    void collect(const std::string& prefix, ParamList<Real>& out) {
        w_query.set_name(prefix + ".w_query");
        w_shared_kv.set_name(prefix + ".w_shared_kv");
        out.push_back(w_query);
        out.push_back(w_shared_kv);
    }

    Tensor<Real> w_query, w_shared_kv;
};

}  // namespace mtom
