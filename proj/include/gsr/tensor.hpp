#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "gsr/common.hpp"
#include "gsr/rng.hpp"

namespace gsr {

template <class S>
class Tape;

namespace detail {

void mem_add(size_t bytes);
void mem_sub(size_t bytes);

// Storage allocation is funneled through here so live tensor bytes can be
// tracked (used by the coarse-to-fine memory benchmark).
template <class S>
std::shared_ptr<std::vector<S>> make_storage(std::vector<S>&& v) {
    size_t bytes = v.capacity() * sizeof(S);
    mem_add(bytes);
    return std::shared_ptr<std::vector<S>>(new std::vector<S>(std::move(v)),
                                           [bytes](std::vector<S>* p) {
                                               mem_sub(bytes);
                                               delete p;
                                           });
}

template <class S>
std::shared_ptr<std::vector<S>> make_storage(size_t n, S fill) {
    return make_storage(std::vector<S>(n, fill));
}

} // namespace detail

// Dense row-major tensor. Copies are shallow: they alias the same storage.
// Tensors are treated as immutable once produced by an op; only optimizer
// updates mutate leaf storage, between tapes.
//
// A tensor is either a constant (tape() == nullptr) or bound to a node of
// one tape. Ops record themselves on the tape whenever any input is bound.
template <class S>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<size_t> shape)
        : shape_(std::move(shape)),
          values_(detail::make_storage<S>(shape_numel(shape_), S(0))) {}

    Tensor(std::vector<size_t> shape, std::vector<S> values)
        : shape_(std::move(shape)), values_(detail::make_storage<S>(std::move(values))) {
        if (values_->size() != shape_numel(shape_))
            throw ShapeError(msg("tensor: ", values_->size(), " values do not fill shape ",
                                 shape_str(shape_)));
    }

    static Tensor full(std::vector<size_t> shape, S value) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.values_ = detail::make_storage<S>(shape_numel(t.shape_), value);
        return t;
    }

    static Tensor scalar(S value) { return Tensor({1}, {value}); }

    static Tensor randn(std::vector<size_t> shape, Rng& rng, S sd = S(1)) {
        Tensor t(std::move(shape));
        for (S& v : *t.values_) v = static_cast<S>(rng.normal() * static_cast<double>(sd));
        return t;
    }

    const std::vector<size_t>& shape() const { return shape_; }
    size_t rank() const { return shape_.size(); }
    size_t size() const { return values_ ? values_->size() : 0; }
    size_t dim(size_t i) const { return shape_[i]; }
    bool defined() const { return static_cast<bool>(values_); }

    S* data() { return values_->data(); }
    const S* data() const { return values_->data(); }

    S& operator()(size_t i) { return (*values_)[i]; }
    S operator()(size_t i) const { return (*values_)[i]; }
    S& operator()(size_t i, size_t j) { return (*values_)[i * shape_[1] + j]; }
    S operator()(size_t i, size_t j) const { return (*values_)[i * shape_[1] + j]; }
    S& operator()(size_t i, size_t j, size_t k) {
        return (*values_)[(i * shape_[1] + j) * shape_[2] + k];
    }
    S operator()(size_t i, size_t j, size_t k) const {
        return (*values_)[(i * shape_[1] + j) * shape_[2] + k];
    }

    Tape<S>* tape() const { return tape_; }
    int node() const { return node_; }

    // Same storage, detached from any tape.
    Tensor detached() const {
        Tensor t;
        t.shape_ = shape_;
        t.values_ = values_;
        return t;
    }

    // Deep copy of the values, detached.
    Tensor clone() const { return Tensor(shape_, std::vector<S>(*values_)); }

    const std::shared_ptr<std::vector<S>>& storage() const { return values_; }

private:
    std::vector<size_t> shape_;
    std::shared_ptr<std::vector<S>> values_;
    Tape<S>* tape_ = nullptr;
    int node_ = -1;

    friend class Tape<S>;
};

// Reverse-mode differentiation record. One tape per forward pass; backward()
// consumes it. Ops append nodes in topological order, so the reverse sweep is
// a single pass over the node list.
template <class S>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Register a leaf whose gradient is wanted. Returns a handle bound to
    // this tape, aliasing the input storage.
    Tensor<S> watch(const Tensor<S>& t) {
        if (t.tape() != nullptr)
            throw ContractError("tape: tensor is already bound to a tape");
        Tensor<S> bound = t.detached();
        bound.tape_ = this;
        bound.node_ = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{t.shape(), bound.values_, {}, {}, nullptr, false});
        return bound;
    }

    // Append an op result. Used by op implementations; backward may be set
    // afterwards via set_backward when the closure needs the output storage.
    Tensor<S> record(std::vector<size_t> shape, std::vector<S> values,
                     std::vector<int> parents, BackwardFn backward) {
        Tensor<S> out(std::move(shape), std::move(values));
        out.tape_ = this;
        out.node_ = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{out.shape_, out.values_, {}, std::move(parents),
                              std::move(backward), false});
        return out;
    }

    void set_backward(int node, BackwardFn fn) {
        nodes_[static_cast<size_t>(node)].backward = std::move(fn);
    }

    // Accumulate into a node's gradient buffer; no-op for constants (node < 0).
    void accum(int node, const S* g, size_t n) {
        if (node < 0) return;
        Node& nd = nodes_[static_cast<size_t>(node)];
        if (nd.grad.empty()) nd.grad.assign(shape_numel(nd.shape), S(0));
        nd.live = true;
        S* dst = nd.grad.data();
        for (size_t i = 0; i < n; ++i) dst[i] += g[i];
    }

    void accum(int node, const std::vector<S>& g) { accum(node, g.data(), g.size()); }

    // Gradient buffer of a node, zero-initialized on first touch. Callers
    // writing directly must also mark_live the node.
    std::vector<S>& grad_buffer(int node) {
        Node& nd = nodes_[static_cast<size_t>(node)];
        if (nd.grad.empty()) nd.grad.assign(shape_numel(nd.shape), S(0));
        return nd.grad;
    }

    void mark_live(int node) {
        if (node >= 0) nodes_[static_cast<size_t>(node)].live = true;
    }

    void backward(const Tensor<S>& loss) {
        if (consumed_) throw ContractError("tape: backward called on a consumed tape");
        if (loss.tape() != this) throw ContractError("tape: loss is not recorded on this tape");
        if (loss.size() != 1)
            throw ContractError(msg("tape: loss must be scalar, got shape ",
                                    shape_str(loss.shape())));
        consumed_ = true;
        int root = loss.node();
        grad_buffer(root)[0] = S(1);
        nodes_[static_cast<size_t>(root)].live = true;
        for (int i = root; i >= 0; --i) {
            Node& nd = nodes_[static_cast<size_t>(i)];
            if (!nd.live || !nd.backward) continue;
            nd.backward(*this, i);
        }
        done_ = true;
    }

    // Gradient of a watched/recorded tensor. Zero if the loss does not reach it.
    Tensor<S> grad(const Tensor<S>& t) const {
        if (!done_) throw ContractError("tape: gradients requested before backward");
        if (t.tape() != this) throw ContractError("tape: tensor is not on this tape");
        const Node& nd = nodes_[static_cast<size_t>(t.node())];
        if (nd.grad.empty()) return Tensor<S>(nd.shape);
        return Tensor<S>(nd.shape, nd.grad);
    }

    bool consumed() const { return consumed_; }
    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        std::vector<size_t> shape;
        std::shared_ptr<std::vector<S>> values;
        std::vector<S> grad;
        std::vector<int> parents;
        BackwardFn backward;
        bool live;
    };
    std::vector<Node> nodes_;
    bool consumed_ = false;
    bool done_ = false;
};

namespace detail {

// Tape shared by the given inputs; throws if two inputs sit on different tapes.
template <class S>
Tape<S>* common_tape(std::initializer_list<const Tensor<S>*> ts) {
    Tape<S>* tape = nullptr;
    for (const Tensor<S>* t : ts) {
        if (!t->tape()) continue;
        if (tape && tape != t->tape())
            throw ContractError("op: inputs are recorded on different tapes");
        tape = t->tape();
    }
    return tape;
}

} // namespace detail

// Live tensor storage bytes; peak resets on demand.
struct MemoryStats {
    static size_t current();
    static size_t peak();
    static void reset_peak();
};

// ---- elementwise and linear algebra ops ------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <class S>
Tensor<S> scale(const Tensor<S>& a, S c);
template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, S c);

// y = x W + b with x: m x k, W: k x n, b: n (pass an undefined tensor for no bias).
template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b);
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);
// a · b^T with a: m x k, b: n x k.
template <class S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b);

template <class S>
Tensor<S> softmax(const Tensor<S>& x, int axis);
// Layer norm over the last axis; gain/bias have that axis's length.
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     S eps = S(1e-5));

template <class S>
Tensor<S> gelu(const Tensor<S>& x);
template <class S>
Tensor<S> tanh_op(const Tensor<S>& x);
template <class S>
Tensor<S> sigmoid(const Tensor<S>& x);
template <class S>
Tensor<S> abs_op(const Tensor<S>& x);
template <class S>
Tensor<S> square(const Tensor<S>& x);

template <class S>
Tensor<S> sum(const Tensor<S>& x);
template <class S>
Tensor<S> mean(const Tensor<S>& x);

// Rows of x normalized to unit L2 norm; rows with norm < eps map to a fixed
// unit vector (1, 0, ..., 0) with zero gradient.
template <class S>
Tensor<S> normalize_rows(const Tensor<S>& x, S eps = S(1e-12));

template <class S>
Tensor<S> concat_cols(const Tensor<S>& a, const Tensor<S>& b);
template <class S>
Tensor<S> slice_cols(const Tensor<S>& x, size_t c0, size_t c1);
template <class S>
Tensor<S> slice_rows(const Tensor<S>& x, size_t r0, size_t r1);
template <class S>
Tensor<S> reshape(const Tensor<S>& x, std::vector<size_t> shape);

// ---- raw (non-tape) kernels shared by op backward passes -------------------
namespace raw {

// C (+)= op_a(A) · op_b(B); dimensions are those of the transposed operands,
// so the product is always m x k times k x n.
template <class S>
void gemm(const S* a, const S* b, S* c, size_t m, size_t k, size_t n, bool ta, bool tb,
          bool accumulate);

} // namespace raw

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

} // namespace gsr
