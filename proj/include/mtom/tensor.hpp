#pragma once

// Reverse-mode autodiff on dense row-major tensors. A Tape records one
// forward pass; backward() replays the recorded closures in reverse.
// Real is float for training and double for gradient checking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtom {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           std::multiplies<std::size_t>());
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

class TensorError : public std::runtime_error {
  public:
    explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

// Deterministic xorshift64* generator. The stream depends only on the seed,
// never on platform or standard library internals.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 1) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    std::uint64_t next_u64() {
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545f4914f6cdd1dull;
    }

    // uniform in [0,1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal(double mean = 0.0, double stddev = 1.0) {
        if (have_cached_) {
            have_cached_ = false;
            return mean + stddev * cached_;
        }
        double u1 = 0.0, u2 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return mean + stddev * r * std::cos(a);
    }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
    }

  private:
    std::uint64_t state_;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

template <typename Real>
struct TensorNode {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;  // empty unless requires_grad
    bool requires_grad = false;
    std::string name;  // set for parameters, used by checkpoints
};

template <typename Real>
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false) {
        Tensor t;
        t.node_ = std::make_shared<TensorNode<Real>>();
        t.node_->shape = shape;
        t.node_->value.assign(shape_numel(shape), Real(0));
        t.node_->requires_grad = requires_grad;
        if (requires_grad) t.node_->grad.assign(t.node_->value.size(), Real(0));
        return t;
    }

    static Tensor from_values(const Shape& shape, std::vector<Real> values,
                              bool requires_grad = false) {
        if (values.size() != shape_numel(shape))
            throw TensorError("from_values: data length " + std::to_string(values.size()) +
                              " does not match shape " + shape_str(shape));
        Tensor t = zeros(shape, requires_grad);
        t.node_->value = std::move(values);
        return t;
    }

    static Tensor scalar(Real v, bool requires_grad = false) {
        return from_values({}, {v}, requires_grad);
    }

    static Tensor uniform_init(const Shape& shape, Rng& rng, double bound,
                               bool requires_grad = true) {
        Tensor t = zeros(shape, requires_grad);
        for (auto& v : t.node_->value) v = static_cast<Real>(rng.uniform(-bound, bound));
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    bool requires_grad() const { return node_->requires_grad; }

    std::vector<Real>& value() { return node_->value; }
    const std::vector<Real>& value() const { return node_->value; }
    std::vector<Real>& grad() {
        if (!node_->requires_grad) throw TensorError("grad requested on detached tensor");
        return node_->grad;
    }
    const std::vector<Real>& grad() const {
        if (!node_->requires_grad) throw TensorError("grad requested on detached tensor");
        return node_->grad;
    }

    Real item() const {
        if (numel() != 1) throw TensorError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->value[0];
    }

    void zero_grad() {
        if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
    }

    void set_name(const std::string& n) { node_->name = n; }
    const std::string& name() const { return node_->name; }

    bool all_finite() const {
        for (Real v : node_->value)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    std::shared_ptr<TensorNode<Real>> node() const { return node_; }

  private:
    std::shared_ptr<TensorNode<Real>> node_;
};

// One forward pass worth of recorded operations. Single-writer: a tape is
// confined to the worker that runs the forward and its backward.
template <typename Real>
class Tape {
  public:
    // Output tensors of recorded ops carry grad buffers so intermediate
    // gradients can accumulate; requires_grad stays false for values fed
    // in as constants with no recorded producer and no grad-carrying input.
    Tensor<Real> make_output(const Shape& shape, bool needs_grad) {
        Tensor<Real> t = Tensor<Real>::zeros(shape, needs_grad);
        return t;
    }

    void record(std::function<void()> backward_op) {
        ops_.push_back(std::move(backward_op));
    }

    std::size_t size() const { return ops_.size(); }

    // Seeds the scalar loss with gradient one and replays every backward
    // rule in reverse topological order. One shot per tape.
    void backward(Tensor<Real>& loss) {
        if (loss.numel() != 1)
            throw TensorError("backward: loss must be scalar, got " + shape_str(loss.shape()));
        if (consumed_) throw TensorError("backward: tape already consumed; build a new tape");
        consumed_ = true;
        if (loss.requires_grad()) loss.grad()[0] = Real(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

    bool consumed() const { return consumed_; }

  private:
    std::vector<std::function<void()>> ops_;
    bool consumed_ = false;
};

namespace detail {

template <typename Real>
bool any_grad(std::initializer_list<const Tensor<Real>*> ts) {
    for (const auto* t : ts)
        if (t->requires_grad()) return true;
    return false;
}

}  // namespace detail

// ---- core ops ----

template <typename Real>
Tensor<Real> matmul(Tape<Real>& tape, const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw TensorError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    const bool g = detail::any_grad<Real>({&a, &b});
    Tensor<Real> out = tape.make_output({m, n}, g);
    const Real* pa = a.value().data();
    const Real* pb = b.value().data();
    Real* po = out.value().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
            const Real av = pa[i * k + l];
            if (av == Real(0)) continue;
            for (std::size_t j = 0; j < n; ++j) po[i * n + j] += av * pb[l * n + j];
        }
    if (g) {
        auto an = a.node(), bn = b.node(), on = out.node();
        tape.record([an, bn, on, m, k, n] {
            const Real* go = on->grad.data();
            if (an->requires_grad) {
                Real* ga = an->grad.data();
                const Real* vb = bn->value.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const Real gv = go[i * n + j];
                        if (gv == Real(0)) continue;
                        for (std::size_t l = 0; l < k; ++l) ga[i * k + l] += gv * vb[l * n + j];
                    }
            }
            if (bn->requires_grad) {
                Real* gb = bn->grad.data();
                const Real* va = an->value.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t l = 0; l < k; ++l) {
                        const Real av = va[i * k + l];
                        if (av == Real(0)) continue;
                        for (std::size_t j = 0; j < n; ++j) gb[l * n + j] += av * go[i * n + j];
                    }
            }
        });
    }
    return out;
}

// C = A * B^T, used for X·W^T row layouts.
template <typename Real>
Tensor<Real> matmul_nt(Tape<Real>& tape, const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw TensorError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()) + "^T");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    const bool g = detail::any_grad<Real>({&a, &b});
    Tensor<Real> out = tape.make_output({m, n}, g);
    const Real* pa = a.value().data();
    const Real* pb = b.value().data();
    Real* po = out.value().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            Real acc = 0;
            for (std::size_t l = 0; l < k; ++l) acc += pa[i * k + l] * pb[j * k + l];
            po[i * n + j] = acc;
        }
    if (g) {
        auto an = a.node(), bn = b.node(), on = out.node();
        tape.record([an, bn, on, m, k, n] {
            const Real* go = on->grad.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const Real gv = go[i * n + j];
                    if (gv == Real(0)) continue;
                    if (an->requires_grad)
                        for (std::size_t l = 0; l < k; ++l)
                            an->grad[i * k + l] += gv * bn->value[j * k + l];
                    if (bn->requires_grad)
                        for (std::size_t l = 0; l < k; ++l)
                            bn->grad[j * k + l] += gv * an->value[i * k + l];
                }
        });
    }
    return out;
}

enum class EwOp { Add, Sub, Mul };

// Pointwise binary op. Shapes must match exactly; the only broadcast is a
// true scalar on either side.
template <typename Real>
Tensor<Real> elementwise(Tape<Real>& tape, EwOp op, const Tensor<Real>& a,
                         const Tensor<Real>& b) {
    const bool a_scalar = a.numel() == 1 && a.rank() == 0;
    const bool b_scalar = b.numel() == 1 && b.rank() == 0;
    if (!a_scalar && !b_scalar && a.shape() != b.shape())
        throw TensorError("elementwise: shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    const Shape& out_shape = a_scalar ? b.shape() : a.shape();
    const std::size_t n = shape_numel(out_shape);
    const bool g = detail::any_grad<Real>({&a, &b});
    Tensor<Real> out = tape.make_output(out_shape, g);
    const Real* pa = a.value().data();
    const Real* pb = b.value().data();
    Real* po = out.value().data();
    for (std::size_t i = 0; i < n; ++i) {
        const Real x = pa[a_scalar ? 0 : i];
        const Real y = pb[b_scalar ? 0 : i];
        po[i] = op == EwOp::Add ? x + y : (op == EwOp::Sub ? x - y : x * y);
    }
    if (g) {
        auto an = a.node(), bn = b.node(), on = out.node();
        tape.record([an, bn, on, op, n, a_scalar, b_scalar] {
            for (std::size_t i = 0; i < n; ++i) {
                const Real gv = on->grad[i];
                if (gv == Real(0)) continue;
                if (an->requires_grad) {
                    const Real d = op == EwOp::Mul ? bn->value[b_scalar ? 0 : i] : Real(1);
                    an->grad[a_scalar ? 0 : i] += gv * d;
                }
                if (bn->requires_grad) {
                    Real d;
                    if (op == EwOp::Mul)
                        d = an->value[a_scalar ? 0 : i];
                    else
                        d = op == EwOp::Sub ? Real(-1) : Real(1);
                    bn->grad[b_scalar ? 0 : i] += gv * d;
                }
            }
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> add(Tape<Real>& tape, const Tensor<Real>& a, const Tensor<Real>& b) {
    return elementwise(tape, EwOp::Add, a, b);
}
template <typename Real>
Tensor<Real> sub(Tape<Real>& tape, const Tensor<Real>& a, const Tensor<Real>& b) {
    return elementwise(tape, EwOp::Sub, a, b);
}
template <typename Real>
Tensor<Real> mul(Tape<Real>& tape, const Tensor<Real>& a, const Tensor<Real>& b) {
    return elementwise(tape, EwOp::Mul, a, b);
}

template <typename Real>
Tensor<Real> scale(Tape<Real>& tape, const Tensor<Real>& a, Real factor) {
    const bool g = a.requires_grad();
    Tensor<Real> out = tape.make_output(a.shape(), g);
    for (std::size_t i = 0; i < a.numel(); ++i) out.value()[i] = a.value()[i] * factor;
    if (g) {
        auto an = a.node(), on = out.node();
        tape.record([an, on, factor] {
            for (std::size_t i = 0; i < an->grad.size(); ++i)
                an->grad[i] += on->grad[i] * factor;
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> concat(Tape<Real>& tape, const std::vector<Tensor<Real>>& parts,
                    std::size_t axis) {
    if (parts.empty()) throw TensorError("concat: empty tensor list");
    const Shape& s0 = parts.front().shape();
    if (axis >= s0.size()) throw TensorError("concat: axis out of range");
    Shape out_shape = s0;
    out_shape[axis] = 0;
    bool g = false;
    for (const auto& p : parts) {
        if (p.rank() != s0.size()) throw TensorError("concat: rank mismatch");
        for (std::size_t d = 0; d < s0.size(); ++d)
            if (d != axis && p.dim(d) != s0[d])
                throw TensorError("concat: off-axis extent mismatch at axis " +
                                  std::to_string(d));
        out_shape[axis] += p.dim(axis);
        g = g || p.requires_grad();
    }
    Tensor<Real> out = tape.make_output(out_shape, g);
    // outer = product of dims before axis, inner = product after
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];
    for (std::size_t d = axis + 1; d < out_shape.size(); ++d) inner *= out_shape[d];
    const std::size_t out_axis = out_shape[axis];
    std::size_t offset = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(offset);
        const std::size_t pa = p.dim(axis);
        for (std::size_t o = 0; o < outer; ++o)
            std::copy(p.value().begin() + o * pa * inner,
                      p.value().begin() + (o + 1) * pa * inner,
                      out.value().begin() + (o * out_axis + offset) * inner);
        offset += pa;
    }
    if (g) {
        std::vector<std::shared_ptr<TensorNode<Real>>> nodes;
        std::vector<std::size_t> axes;
        for (const auto& p : parts) {
            nodes.push_back(p.node());
            axes.push_back(p.dim(axis));
        }
        auto on = out.node();
        tape.record([nodes, axes, offsets, on, outer, inner, out_axis] {
            for (std::size_t i = 0; i < nodes.size(); ++i) {
                if (!nodes[i]->requires_grad) continue;
                const std::size_t pa = axes[i];
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t j = 0; j < pa * inner; ++j)
                        nodes[i]->grad[o * pa * inner + j] +=
                            on->grad[(o * out_axis + offsets[i]) * inner + j];
            }
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> slice(Tape<Real>& tape, const Tensor<Real>& t, std::size_t axis,
                   std::size_t start, std::size_t len) {
    if (axis >= t.rank()) throw TensorError("slice: axis out of range");
    if (start + len > t.dim(axis)) throw TensorError("slice: range out of bounds");
    Shape out_shape = t.shape();
    out_shape[axis] = len;
    const bool g = t.requires_grad();
    Tensor<Real> out = tape.make_output(out_shape, g);
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= t.dim(d);
    for (std::size_t d = axis + 1; d < t.rank(); ++d) inner *= t.dim(d);
    const std::size_t in_axis = t.dim(axis);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy(t.value().begin() + (o * in_axis + start) * inner,
                  t.value().begin() + (o * in_axis + start + len) * inner,
                  out.value().begin() + o * len * inner);
    if (g) {
        auto tn = t.node(), on = out.node();
        tape.record([tn, on, outer, inner, in_axis, start, len] {
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t j = 0; j < len * inner; ++j)
                    tn->grad[(o * in_axis + start) * inner + j] += on->grad[o * len * inner + j];
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> reshape(Tape<Real>& tape, const Tensor<Real>& t, const Shape& new_shape) {
    if (shape_numel(new_shape) != t.numel())
        throw TensorError("reshape: numel mismatch " + shape_str(t.shape()) + " -> " +
                          shape_str(new_shape));
    const bool g = t.requires_grad();
    Tensor<Real> out = tape.make_output(new_shape, g);
    out.value() = t.value();
    if (g) {
        auto tn = t.node(), on = out.node();
        tape.record([tn, on] {
            for (std::size_t i = 0; i < tn->grad.size(); ++i) tn->grad[i] += on->grad[i];
        });
    }
    return out;
}

// Valid (no-padding) cross-correlation, kernel 3x3, stride 1.
template <typename Real>
Tensor<Real> conv2d(Tape<Real>& tape, const Tensor<Real>& input, const Tensor<Real>& kernels,
                    const Tensor<Real>& bias) {
    if (input.rank() != 3 || kernels.rank() != 4 || bias.rank() != 1)
        throw TensorError("conv2d: expected input [C,H,W], kernels [O,C,3,3], bias [O]");
    const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t cout = kernels.dim(0);
    if (kernels.dim(1) != cin || kernels.dim(2) != 3 || kernels.dim(3) != 3 ||
        bias.dim(0) != cout)
        throw TensorError("conv2d: kernel/bias shape mismatch");
    if (h < 3 || w < 3)
        throw TensorError("conv2d: input " + std::to_string(h) + "x" + std::to_string(w) +
                          " smaller than 3x3 kernel");
    const std::size_t oh = h - 2, ow = w - 2;
    const bool g = detail::any_grad<Real>({&input, &kernels, &bias});
    Tensor<Real> out = tape.make_output({cout, oh, ow}, g);
    const Real* pi = input.value().data();
    const Real* pk = kernels.value().data();
    Real* po = out.value().data();
    for (std::size_t oc = 0; oc < cout; ++oc) {
        const Real b = bias.value()[oc];
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                Real acc = b;
                for (std::size_t ic = 0; ic < cin; ++ic)
                    for (std::size_t ky = 0; ky < 3; ++ky)
                        for (std::size_t kx = 0; kx < 3; ++kx)
                            acc += pi[(ic * h + y + ky) * w + x + kx] *
                                   pk[((oc * cin + ic) * 3 + ky) * 3 + kx];
                po[(oc * oh + y) * ow + x] = acc;
            }
    }
    if (g) {
        auto in = input.node(), kn = kernels.node(), bn = bias.node(), on = out.node();
        tape.record([in, kn, bn, on, cin, cout, h, w, oh, ow] {
            const Real* go = on->grad.data();
            for (std::size_t oc = 0; oc < cout; ++oc)
                for (std::size_t y = 0; y < oh; ++y)
                    for (std::size_t x = 0; x < ow; ++x) {
                        const Real gv = go[(oc * oh + y) * ow + x];
                        if (gv == Real(0)) continue;
                        if (bn->requires_grad) bn->grad[oc] += gv;
                        for (std::size_t ic = 0; ic < cin; ++ic)
                            for (std::size_t ky = 0; ky < 3; ++ky)
                                for (std::size_t kx = 0; kx < 3; ++kx) {
                                    const std::size_t ii = (ic * h + y + ky) * w + x + kx;
                                    const std::size_t ki = ((oc * cin + ic) * 3 + ky) * 3 + kx;
                                    if (kn->requires_grad)
                                        kn->grad[ki] += gv * in->value[ii];
                                    if (in->requires_grad)
                                        in->grad[ii] += gv * kn->value[ki];
                                }
                    }
        });
    }
    return out;
}

// 2x2 max pooling with stride 2; gradient goes to the first argmax in scan
// order on ties.
template <typename Real>
Tensor<Real> maxpool2d(Tape<Real>& tape, const Tensor<Real>& input) {
    if (input.rank() != 3) throw TensorError("maxpool2d: expected [C,H,W]");
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (h < 2 || w < 2) throw TensorError("maxpool2d: input smaller than window");
    const std::size_t oh = h / 2, ow = w / 2;
    const bool g = input.requires_grad();
    Tensor<Real> out = tape.make_output({c, oh, ow}, g);
    auto argmax = std::make_shared<std::vector<std::size_t>>(c * oh * ow);
    for (std::size_t ic = 0; ic < c; ++ic)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                std::size_t best = (ic * h + 2 * y) * w + 2 * x;
                Real bv = input.value()[best];
                for (std::size_t ky = 0; ky < 2; ++ky)
                    for (std::size_t kx = 0; kx < 2; ++kx) {
                        const std::size_t i = (ic * h + 2 * y + ky) * w + 2 * x + kx;
                        if (input.value()[i] > bv) {
                            bv = input.value()[i];
                            best = i;
                        }
                    }
                out.value()[(ic * oh + y) * ow + x] = bv;
                (*argmax)[(ic * oh + y) * ow + x] = best;
            }
    if (g) {
        auto in = input.node(), on = out.node();
        tape.record([in, on, argmax] {
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                in->grad[(*argmax)[i]] += on->grad[i];
        });
    }
    return out;
}

// Global max over each channel plane -> [C].
template <typename Real>
Tensor<Real> global_maxpool(Tape<Real>& tape, const Tensor<Real>& input) {
    if (input.rank() != 3) throw TensorError("global_maxpool: expected [C,H,W]");
    const std::size_t c = input.dim(0), plane = input.dim(1) * input.dim(2);
    const bool g = input.requires_grad();
    Tensor<Real> out = tape.make_output({c}, g);
    auto argmax = std::make_shared<std::vector<std::size_t>>(c);
    for (std::size_t ic = 0; ic < c; ++ic) {
        std::size_t best = ic * plane;
        for (std::size_t i = 1; i < plane; ++i)
            if (input.value()[ic * plane + i] > input.value()[best]) best = ic * plane + i;
        out.value()[ic] = input.value()[best];
        (*argmax)[ic] = best;
    }
    if (g) {
        auto in = input.node(), on = out.node();
        tape.record([in, on, argmax] {
            for (std::size_t ic = 0; ic < on->grad.size(); ++ic)
                in->grad[(*argmax)[ic]] += on->grad[ic];
        });
    }
    return out;
}

namespace detail {

template <typename Real, typename Fwd, typename Bwd>
Tensor<Real> unary(Tape<Real>& tape, const Tensor<Real>& x, Fwd fwd, Bwd bwd) {
    const bool g = x.requires_grad();
    Tensor<Real> out = tape.make_output(x.shape(), g);
    for (std::size_t i = 0; i < x.numel(); ++i) out.value()[i] = fwd(x.value()[i]);
    if (g) {
        auto xn = x.node(), on = out.node();
        tape.record([xn, on, bwd] {
            for (std::size_t i = 0; i < xn->grad.size(); ++i)
                xn->grad[i] += on->grad[i] * bwd(xn->value[i], on->value[i]);
        });
    }
    return out;
}

}  // namespace detail

template <typename Real>
Tensor<Real> relu(Tape<Real>& tape, const Tensor<Real>& x) {
    return detail::unary(
        tape, x, [](Real v) { return v > Real(0) ? v : Real(0); },
        [](Real v, Real) { return v > Real(0) ? Real(1) : Real(0); });
}

// Exact Gaussian-CDF GELU: x * Phi(x).
template <typename Real>
Tensor<Real> gelu(Tape<Real>& tape, const Tensor<Real>& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return detail::unary(
        tape, x,
        [](Real v) {
            const double xv = static_cast<double>(v);
            return static_cast<Real>(0.5 * xv * (1.0 + std::erf(xv * inv_sqrt2)));
        },
        [](Real v, Real) {
            const double xv = static_cast<double>(v);
            const double phi = 0.5 * (1.0 + std::erf(xv * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * xv * xv);
            return static_cast<Real>(phi + xv * pdf);
        });
}

template <typename Real>
Tensor<Real> tanh_op(Tape<Real>& tape, const Tensor<Real>& x) {
    return detail::unary(
        tape, x, [](Real v) { return std::tanh(v); },
        [](Real, Real y) { return Real(1) - y * y; });
}

template <typename Real>
Tensor<Real> sigmoid(Tape<Real>& tape, const Tensor<Real>& x) {
    return detail::unary(
        tape, x, [](Real v) { return Real(1) / (Real(1) + std::exp(-v)); },
        [](Real, Real y) { return y * (Real(1) - y); });
}

namespace detail {

// Iterates all lanes along `axis`: outer * inner lanes of length dim(axis).
template <typename Real, typename Fn>
void for_each_lane(const Shape& shape, std::size_t axis, Fn fn) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
    for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
    const std::size_t n = shape[axis];
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) fn(o * n * inner + i, inner, n);
}

}  // namespace detail

// Max-shifted softmax along `axis`.
template <typename Real>
Tensor<Real> softmax(Tape<Real>& tape, const Tensor<Real>& x, std::size_t axis) {
    if (axis >= x.rank()) throw TensorError("softmax: axis out of range");
    const bool g = x.requires_grad();
    Tensor<Real> out = tape.make_output(x.shape(), g);
    detail::for_each_lane<Real>(x.shape(), axis, [&](std::size_t base, std::size_t stride,
                                                     std::size_t n) {
        Real mx = x.value()[base];
        for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x.value()[base + i * stride]);
        Real sum = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const Real e = std::exp(x.value()[base + i * stride] - mx);
            out.value()[base + i * stride] = e;
            sum += e;
        }
        for (std::size_t i = 0; i < n; ++i) out.value()[base + i * stride] /= sum;
    });
    if (g) {
        auto xn = x.node(), on = out.node();
        const Shape shape = x.shape();
        tape.record([xn, on, shape, axis] {
            detail::for_each_lane<Real>(shape, axis, [&](std::size_t base, std::size_t stride,
                                                         std::size_t n) {
                Real dot = 0;
                for (std::size_t i = 0; i < n; ++i)
                    dot += on->grad[base + i * stride] * on->value[base + i * stride];
                for (std::size_t i = 0; i < n; ++i)
                    xn->grad[base + i * stride] += on->value[base + i * stride] *
                                                   (on->grad[base + i * stride] - dot);
            });
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> log_softmax(Tape<Real>& tape, const Tensor<Real>& x, std::size_t axis) {
    if (axis >= x.rank()) throw TensorError("log_softmax: axis out of range");
    const bool g = x.requires_grad();
    Tensor<Real> out = tape.make_output(x.shape(), g);
    detail::for_each_lane<Real>(x.shape(), axis, [&](std::size_t base, std::size_t stride,
                                                     std::size_t n) {
        Real mx = x.value()[base];
        for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x.value()[base + i * stride]);
        Real sum = 0;
        for (std::size_t i = 0; i < n; ++i) sum += std::exp(x.value()[base + i * stride] - mx);
        const Real lse = mx + std::log(sum);
        for (std::size_t i = 0; i < n; ++i)
            out.value()[base + i * stride] = x.value()[base + i * stride] - lse;
    });
    if (g) {
        auto xn = x.node(), on = out.node();
        const Shape shape = x.shape();
        tape.record([xn, on, shape, axis] {
            detail::for_each_lane<Real>(shape, axis, [&](std::size_t base, std::size_t stride,
                                                         std::size_t n) {
                Real gsum = 0;
                for (std::size_t i = 0; i < n; ++i) gsum += on->grad[base + i * stride];
                for (std::size_t i = 0; i < n; ++i)
                    xn->grad[base + i * stride] +=
                        on->grad[base + i * stride] -
                        std::exp(on->value[base + i * stride]) * gsum;
            });
        });
    }
    return out;
}

// Per-last-axis standardization followed by affine gain/bias.
template <typename Real>
Tensor<Real> layernorm(Tape<Real>& tape, const Tensor<Real>& x, const Tensor<Real>& gain,
                       const Tensor<Real>& bias, Real eps = Real(1e-5)) {
    if (x.rank() < 1) throw TensorError("layernorm: input must have rank >= 1");
    const std::size_t d = x.dim(x.rank() - 1);
    if (gain.numel() != d || bias.numel() != d)
        throw TensorError("layernorm: gain/bias length must equal last axis extent");
    const std::size_t rows = x.numel() / d;
    const bool g = detail::any_grad<Real>({&x, &gain, &bias});
    Tensor<Real> out = tape.make_output(x.shape(), g);
    auto norm = std::make_shared<std::vector<Real>>(x.numel());   // (x-mu)/sigma
    auto inv_sigma = std::make_shared<std::vector<Real>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* px = x.value().data() + r * d;
        Real mean = 0;
        for (std::size_t i = 0; i < d; ++i) mean += px[i];
        mean /= static_cast<Real>(d);
        Real var = 0;
        for (std::size_t i = 0; i < d; ++i) var += (px[i] - mean) * (px[i] - mean);
        var /= static_cast<Real>(d);
        const Real is = Real(1) / std::sqrt(var + eps);
        (*inv_sigma)[r] = is;
        for (std::size_t i = 0; i < d; ++i) {
            const Real nh = (px[i] - mean) * is;
            (*norm)[r * d + i] = nh;
            out.value()[r * d + i] = nh * gain.value()[i] + bias.value()[i];
        }
    }
    if (g) {
        auto xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
        tape.record([xn, gn, bn, on, norm, inv_sigma, rows, d] {
            for (std::size_t r = 0; r < rows; ++r) {
                Real sum_gy = 0, sum_gyn = 0;
                for (std::size_t i = 0; i < d; ++i) {
                    const Real gy = on->grad[r * d + i];
                    const Real nh = (*norm)[r * d + i];
                    if (bn->requires_grad) bn->grad[i] += gy;
                    if (gn->requires_grad) gn->grad[i] += gy * nh;
                    const Real gyg = gy * gn->value[i];
                    sum_gy += gyg;
                    sum_gyn += gyg * nh;
                }
                if (!xn->requires_grad) continue;
                const Real is = (*inv_sigma)[r];
                for (std::size_t i = 0; i < d; ++i) {
                    const Real gyg = on->grad[r * d + i] * gn->value[i];
                    const Real nh = (*norm)[r * d + i];
                    xn->grad[r * d + i] += is * (gyg - (sum_gy + nh * sum_gyn) /
                                                           static_cast<Real>(d));
                }
            }
        });
    }
    return out;
}

// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
template <typename Real>
Tensor<Real> dropout(Tape<Real>& tape, const Tensor<Real>& x, double p, bool training,
                     Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw TensorError("dropout: p must be in [0,1)");
    if (!training || p == 0.0) {
        // identity, but still tracked so gradients pass through
        return scale(tape, x, Real(1));
    }
    const bool g = x.requires_grad();
    Tensor<Real> out = tape.make_output(x.shape(), g);
    auto mask = std::make_shared<std::vector<Real>>(x.numel());
    const Real keep_scale = static_cast<Real>(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const Real m = rng.uniform() < p ? Real(0) : keep_scale;
        (*mask)[i] = m;
        out.value()[i] = x.value()[i] * m;
    }
    if (g) {
        auto xn = x.node(), on = out.node();
        tape.record([xn, on, mask] {
            for (std::size_t i = 0; i < xn->grad.size(); ++i)
                xn->grad[i] += on->grad[i] * (*mask)[i];
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> sum(Tape<Real>& tape, const Tensor<Real>& x) {
    const bool g = x.requires_grad();
    Tensor<Real> out = tape.make_output({}, g);
    Real acc = 0;
    for (Real v : x.value()) acc += v;
    out.value()[0] = acc;
    if (g) {
        auto xn = x.node(), on = out.node();
        tape.record([xn, on] {
            for (auto& gv : xn->grad) gv += on->grad[0];
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> mean(Tape<Real>& tape, const Tensor<Real>& x) {
    return scale(tape, sum(tape, x), Real(1) / static_cast<Real>(x.numel()));
}

// Mean over rows of [n,d] -> [d].
template <typename Real>
Tensor<Real> mean_rows(Tape<Real>& tape, const Tensor<Real>& x) {
    if (x.rank() != 2) throw TensorError("mean_rows: expected rank-2 tensor");
    const std::size_t n = x.dim(0), d = x.dim(1);
    const bool g = x.requires_grad();
    Tensor<Real> out = tape.make_output({d}, g);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out.value()[j] += x.value()[i * d + j];
    for (std::size_t j = 0; j < d; ++j) out.value()[j] /= static_cast<Real>(n);
    if (g) {
        auto xn = x.node(), on = out.node();
        tape.record([xn, on, n, d] {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    xn->grad[i * d + j] += on->grad[j] / static_cast<Real>(n);
        });
    }
    return out;
}

// Picks one entry, used for the NLL loss term.
template <typename Real>
Tensor<Real> pick(Tape<Real>& tape, const Tensor<Real>& x, std::size_t index) {
    if (index >= x.numel()) throw TensorError("pick: index out of range");
    const bool g = x.requires_grad();
    Tensor<Real> out = tape.make_output({}, g);
    out.value()[0] = x.value()[index];
    if (g) {
        auto xn = x.node(), on = out.node();
        tape.record([xn, on, index] { xn->grad[index] += on->grad[0]; });
    }
    return out;
}

// y = W x + b for a rank-1 x; W is [out,in].
template <typename Real>
Tensor<Real> affine(Tape<Real>& tape, const Tensor<Real>& w, const Tensor<Real>& x,
                    const Tensor<Real>& b) {
    if (w.rank() != 2 || x.rank() != 1 || w.dim(1) != x.dim(0))
        throw TensorError("affine: shape mismatch " + shape_str(w.shape()) + " * " +
                          shape_str(x.shape()));
    const std::size_t m = w.dim(0), n = w.dim(1);
    const bool has_bias = b.defined();
    if (has_bias && b.numel() != m) throw TensorError("affine: bias length mismatch");
    const bool g = w.requires_grad() || x.requires_grad() ||
                   (has_bias && b.requires_grad());
    Tensor<Real> out = tape.make_output({m}, g);
    for (std::size_t i = 0; i < m; ++i) {
        Real acc = has_bias ? b.value()[i] : Real(0);
        const Real* pw = w.value().data() + i * n;
        for (std::size_t j = 0; j < n; ++j) acc += pw[j] * x.value()[j];
        out.value()[i] = acc;
    }
    if (g) {
        auto wn = w.node(), xn = x.node(), on = out.node();
        auto bn = has_bias ? b.node() : nullptr;
        tape.record([wn, xn, bn, on, m, n] {
            for (std::size_t i = 0; i < m; ++i) {
                const Real gv = on->grad[i];
                if (gv == Real(0)) continue;
                if (bn && bn->requires_grad) bn->grad[i] += gv;
                for (std::size_t j = 0; j < n; ++j) {
                    if (wn->requires_grad) wn->grad[i * n + j] += gv * xn->value[j];
                    if (xn->requires_grad) xn->grad[j] += gv * wn->value[i * n + j];
                }
            }
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> matvec(Tape<Real>& tape, const Tensor<Real>& w, const Tensor<Real>& x) {
    return affine(tape, w, x, Tensor<Real>{});
}

inline std::size_t argmax_lowest(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

template <typename Real>
std::size_t argmax_lowest(const Tensor<Real>& t) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < t.numel(); ++i)
        if (t.value()[i] > t.value()[best]) best = i;
    return best;
}

}  // namespace mtom
