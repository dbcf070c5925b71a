#pragma once

#include <functional>
#include <string>

#include "gsr/tensor.hpp"

namespace gsr {

// Callback used to enumerate the named parameters of a weight struct, for
// initialization, checkpointing and tape registration.
template <class S>
using ParamVisitor = std::function<void(const std::string&, Tensor<S>&)>;

template <class S>
struct LinearLayer {
    Tensor<S> w; // in x out
    Tensor<S> b; // out (may be undefined for bias-free layers)

    static LinearLayer init(size_t in, size_t out, Rng& rng, bool bias = true);
    Tensor<S> apply(const Tensor<S>& x) const { return linear(x, w, b); }
    void visit(const std::string& prefix, const ParamVisitor<S>& fn);
};

// Two-layer perceptron with GELU between the layers.
template <class S>
struct Mlp2 {
    LinearLayer<S> l1, l2;

    static Mlp2 init(size_t in, size_t hidden, size_t out, Rng& rng);
    Tensor<S> apply(const Tensor<S>& x) const { return l2.apply(gelu(l1.apply(x))); }
    void visit(const std::string& prefix, const ParamVisitor<S>& fn);
};

// Pre-norm cross-attention block: query and context are layer-normed, run
// through multi-head attention with a residual, then a GELU feed-forward with
// a residual. Projections are bias-free.
template <class S>
struct AttentionBlockWeights {
    Tensor<S> wq, wk, wv, wo; // C_t x C_t
    Tensor<S> ff1;            // C_t x C_ff
    Tensor<S> ff2;            // C_ff x C_t
    Tensor<S> lnq_gain, lnq_bias;
    Tensor<S> lnkv_gain, lnkv_bias;
    Tensor<S> lnff_gain, lnff_bias;
    size_t head_count = 1;

    static AttentionBlockWeights init(size_t c_t, size_t head_count, Rng& rng,
                                      size_t c_ff = 0); // c_ff defaults to 4*c_t
    void validate() const;
    void visit(const std::string& prefix, const ParamVisitor<S>& fn);
};

template <class S>
Tensor<S> cross_attention_block(const Tensor<S>& f_q, const Tensor<S>& f_kv,
                                const AttentionBlockWeights<S>& w);

// Per-head attention probabilities (forward only, for inspection and tests);
// result is head_count tensors of N_q x N_kv.
template <class S>
std::vector<Tensor<S>> cross_attention_probs(const Tensor<S>& f_q, const Tensor<S>& f_kv,
                                             const AttentionBlockWeights<S>& w);

} // namespace gsr
