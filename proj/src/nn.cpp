#include "gsr/nn.hpp"

#include <cmath>

namespace gsr {

namespace {

// Xavier-style init for a projection matrix.
template <class S>
Tensor<S> init_matrix(size_t in, size_t out, Rng& rng) {
    S sd = static_cast<S>(std::sqrt(2.0 / static_cast<double>(in + out)));
    return Tensor<S>::randn({in, out}, rng, sd);
}

} // namespace

template <class S>
LinearLayer<S> LinearLayer<S>::init(size_t in, size_t out, Rng& rng, bool bias) {
    LinearLayer<S> l;
    l.w = init_matrix<S>(in, out, rng);
    if (bias) l.b = Tensor<S>({out});
    return l;
}

template <class S>
void LinearLayer<S>::visit(const std::string& prefix, const ParamVisitor<S>& fn) {
    fn(prefix + ".w", w);
    if (b.defined()) fn(prefix + ".b", b);
}

template <class S>
Mlp2<S> Mlp2<S>::init(size_t in, size_t hidden, size_t out, Rng& rng) {
    Mlp2<S> m;
    m.l1 = LinearLayer<S>::init(in, hidden, rng);
    m.l2 = LinearLayer<S>::init(hidden, out, rng);
    return m;
}

template <class S>
void Mlp2<S>::visit(const std::string& prefix, const ParamVisitor<S>& fn) {
    l1.visit(prefix + ".l1", fn);
    l2.visit(prefix + ".l2", fn);
}

template <class S>
AttentionBlockWeights<S> AttentionBlockWeights<S>::init(size_t c_t, size_t head_count,
                                                        Rng& rng, size_t c_ff) {
    if (c_ff == 0) c_ff = 4 * c_t;
    if (head_count == 0 || c_t % head_count != 0)
        throw ContractError(msg("attention: head count ", head_count,
                                " does not divide feature dim ", c_t));
    AttentionBlockWeights<S> w;
    w.wq = init_matrix<S>(c_t, c_t, rng);
    w.wk = init_matrix<S>(c_t, c_t, rng);
    w.wv = init_matrix<S>(c_t, c_t, rng);
    w.wo = init_matrix<S>(c_t, c_t, rng);
    w.ff1 = init_matrix<S>(c_t, c_ff, rng);
    w.ff2 = init_matrix<S>(c_ff, c_t, rng);
    w.lnq_gain = Tensor<S>::full({c_t}, S(1));
    w.lnq_bias = Tensor<S>({c_t});
    w.lnkv_gain = Tensor<S>::full({c_t}, S(1));
    w.lnkv_bias = Tensor<S>({c_t});
    w.lnff_gain = Tensor<S>::full({c_t}, S(1));
    w.lnff_bias = Tensor<S>({c_t});
    w.head_count = head_count;
    return w;
}

template <class S>
void AttentionBlockWeights<S>::validate() const {
    size_t c_t = wq.defined() ? wq.dim(0) : 0;
    if (c_t == 0 || head_count == 0 || c_t % head_count != 0)
        throw ContractError(msg("attention: head count ", head_count,
                                " does not divide feature dim ", c_t));
    for (const Tensor<S>* t : {&wq, &wk, &wv, &wo, &ff1, &ff2}) {
        for (size_t i = 0; i < t->size(); ++i)
            if (!std::isfinite(t->data()[i]))
                throw NumericError("attention: non-finite projection weight");
    }
}

template <class S>
void AttentionBlockWeights<S>::visit(const std::string& prefix, const ParamVisitor<S>& fn) {
    fn(prefix + ".wq", wq);
    fn(prefix + ".wk", wk);
    fn(prefix + ".wv", wv);
    fn(prefix + ".wo", wo);
    fn(prefix + ".ff1", ff1);
    fn(prefix + ".ff2", ff2);
    fn(prefix + ".lnq_gain", lnq_gain);
    fn(prefix + ".lnq_bias", lnq_bias);
    fn(prefix + ".lnkv_gain", lnkv_gain);
    fn(prefix + ".lnkv_bias", lnkv_bias);
    fn(prefix + ".lnff_gain", lnff_gain);
    fn(prefix + ".lnff_bias", lnff_bias);
}

namespace {

template <class S>
void check_block_dims(const Tensor<S>& f_q, const Tensor<S>& f_kv,
                      const AttentionBlockWeights<S>& w) {
    size_t c_t = w.wq.dim(0);
    if (f_q.rank() != 2 || f_q.dim(1) != c_t)
        throw ShapeError(msg("cross_attention_block: query shape ", shape_str(f_q.shape()),
                             " does not match feature dim ", c_t));
    if (f_kv.rank() != 2 || f_kv.dim(1) != c_t)
        throw ShapeError(msg("cross_attention_block: context shape ", shape_str(f_kv.shape()),
                             " does not match feature dim ", c_t));
    if (w.head_count == 0 || c_t % w.head_count != 0)
        throw ContractError(msg("cross_attention_block: head count ", w.head_count,
                                " does not divide feature dim ", c_t));
}

} // namespace

template <class S>
Tensor<S> cross_attention_block(const Tensor<S>& f_q, const Tensor<S>& f_kv,
                                const AttentionBlockWeights<S>& w) {
    check_block_dims(f_q, f_kv, w);
    size_t c_t = w.wq.dim(0);
    size_t heads = w.head_count;
    size_t d = c_t / heads;
    S inv_sqrt_d = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d)));

    Tensor<S> q_in = layer_norm(f_q, w.lnq_gain, w.lnq_bias);
    Tensor<S> kv_in = layer_norm(f_kv, w.lnkv_gain, w.lnkv_bias);
    Tensor<S> q = matmul(q_in, w.wq);
    Tensor<S> k = matmul(kv_in, w.wk);
    Tensor<S> v = matmul(kv_in, w.wv);

    Tensor<S> merged;
    for (size_t h = 0; h < heads; ++h) {
        Tensor<S> qh = slice_cols(q, h * d, (h + 1) * d);
        Tensor<S> kh = slice_cols(k, h * d, (h + 1) * d);
        Tensor<S> vh = slice_cols(v, h * d, (h + 1) * d);
        Tensor<S> probs = softmax(scale(matmul_nt(qh, kh), inv_sqrt_d), -1);
        Tensor<S> oh = matmul(probs, vh);
        merged = h == 0 ? oh : concat_cols(merged, oh);
    }
    Tensor<S> attn = matmul(merged, w.wo);
    Tensor<S> h1 = add(f_q, attn);

    Tensor<S> ff_in = layer_norm(h1, w.lnff_gain, w.lnff_bias);
    Tensor<S> ff = matmul(gelu(matmul(ff_in, w.ff1)), w.ff2);
    return add(h1, ff);
}

template <class S>
std::vector<Tensor<S>> cross_attention_probs(const Tensor<S>& f_q, const Tensor<S>& f_kv,
                                             const AttentionBlockWeights<S>& w) {
    check_block_dims(f_q, f_kv, w);
    size_t c_t = w.wq.dim(0);
    size_t heads = w.head_count;
    size_t d = c_t / heads;
    S inv_sqrt_d = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d)));

    Tensor<S> q_in = layer_norm(f_q.detached(), w.lnq_gain.detached(), w.lnq_bias.detached());
    Tensor<S> kv_in =
        layer_norm(f_kv.detached(), w.lnkv_gain.detached(), w.lnkv_bias.detached());
    Tensor<S> q = matmul(q_in, w.wq.detached());
    Tensor<S> k = matmul(kv_in, w.wk.detached());
    std::vector<Tensor<S>> probs;
    probs.reserve(heads);
    for (size_t h = 0; h < heads; ++h) {
        Tensor<S> qh = slice_cols(q, h * d, (h + 1) * d);
        Tensor<S> kh = slice_cols(k, h * d, (h + 1) * d);
        probs.push_back(softmax(scale(matmul_nt(qh, kh), inv_sqrt_d), -1));
    }
    return probs;
}

#define GSR_INSTANTIATE_NN(S)                                                             \
    template struct LinearLayer<S>;                                                      \
    template struct Mlp2<S>;                                                             \
    template struct AttentionBlockWeights<S>;                                            \
    template Tensor<S> cross_attention_block<S>(const Tensor<S>&, const Tensor<S>&,      \
                                                const AttentionBlockWeights<S>&);        \
    template std::vector<Tensor<S>> cross_attention_probs<S>(                            \
        const Tensor<S>&, const Tensor<S>&, const AttentionBlockWeights<S>&);

GSR_INSTANTIATE_NN(float)
GSR_INSTANTIATE_NN(double)

#undef GSR_INSTANTIATE_NN

} // namespace gsr
