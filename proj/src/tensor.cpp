#include "gsr/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>

namespace gsr {

namespace {

std::atomic<size_t> g_mem_current{0};
std::atomic<size_t> g_mem_peak{0};

} // namespace

namespace detail {

void mem_add(size_t bytes) {
    size_t cur = g_mem_current.fetch_add(bytes) + bytes;
    size_t peak = g_mem_peak.load();
    while (cur > peak && !g_mem_peak.compare_exchange_weak(peak, cur)) {
    }
}

void mem_sub(size_t bytes) { g_mem_current.fetch_sub(bytes); }

} // namespace detail

size_t MemoryStats::current() { return g_mem_current.load(); }
size_t MemoryStats::peak() { return g_mem_peak.load(); }
void MemoryStats::reset_peak() { g_mem_peak.store(g_mem_current.load()); }

namespace raw {

template <class S>
void gemm(const S* a, const S* b, S* c, size_t m, size_t k, size_t n, bool ta, bool tb,
          bool accumulate) {
    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Map = Eigen::Map<const Mat>;
    using OutMap = Eigen::Map<Mat>;
    Map ma(a, ta ? k : m, ta ? m : k);
    Map mb(b, tb ? n : k, tb ? k : n);
    OutMap mc(c, m, n);
    auto run = [&](const auto& prod) {
        if (accumulate)
            mc.noalias() += prod;
        else
            mc.noalias() = prod;
    };
    if (!ta && !tb)
        run(ma * mb);
    else if (ta && !tb)
        run(ma.transpose() * mb);
    else if (!ta && tb)
        run(ma * mb.transpose());
    else
        run(ma.transpose() * mb.transpose());
}

template void gemm<float>(const float*, const float*, float*, size_t, size_t, size_t, bool,
                          bool, bool);
template void gemm<double>(const double*, const double*, double*, size_t, size_t, size_t,
                           bool, bool, bool);

} // namespace raw

namespace {

template <class S>
void check_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(msg(op, ": shapes disagree: ", shape_str(a.shape()), " vs ",
                             shape_str(b.shape())));
}

} // namespace

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    check_same_shape("add", a, b);
    std::vector<S> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    Tape<S>* tape = detail::common_tape<S>({&a, &b});
    if (!tape) return Tensor<S>(a.shape(), std::move(out));
    int na = a.tape() ? a.node() : -1;
    int nb = b.tape() ? b.node() : -1;
    return tape->record(a.shape(), std::move(out), {na, nb}, [na, nb](Tape<S>& t, int self) {
        const auto& g = t.grad_buffer(self);
        t.accum(na, g);
        t.accum(nb, g);
    });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    check_same_shape("sub", a, b);
    std::vector<S> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    Tape<S>* tape = detail::common_tape<S>({&a, &b});
    if (!tape) return Tensor<S>(a.shape(), std::move(out));
    int na = a.tape() ? a.node() : -1;
    int nb = b.tape() ? b.node() : -1;
    return tape->record(a.shape(), std::move(out), {na, nb}, [na, nb](Tape<S>& t, int self) {
        const auto& g = t.grad_buffer(self);
        t.accum(na, g);
        if (nb >= 0) {
            std::vector<S> neg(g.size());
            for (size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
            t.accum(nb, neg);
        }
    });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    check_same_shape("mul", a, b);
    std::vector<S> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    Tape<S>* tape = detail::common_tape<S>({&a, &b});
    if (!tape) return Tensor<S>(a.shape(), std::move(out));
    int na = a.tape() ? a.node() : -1;
    int nb = b.tape() ? b.node() : -1;
    auto as = a.storage();
    auto bs = b.storage();
    return tape->record(a.shape(), std::move(out), {na, nb},
                        [na, nb, as, bs](Tape<S>& t, int self) {
                            const auto& g = t.grad_buffer(self);
                            if (na >= 0) {
                                std::vector<S> ga(g.size());
                                for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * (*bs)[i];
                                t.accum(na, ga);
                            }
                            if (nb >= 0) {
                                std::vector<S> gb(g.size());
                                for (size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * (*as)[i];
                                t.accum(nb, gb);
                            }
                        });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
    std::vector<S> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    Tape<S>* tape = a.tape();
    if (!tape) return Tensor<S>(a.shape(), std::move(out));
    int na = a.node();
    return tape->record(a.shape(), std::move(out), {na}, [na, c](Tape<S>& t, int self) {
        const auto& g = t.grad_buffer(self);
        std::vector<S> ga(g.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * c;
        t.accum(na, ga);
    });
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
    std::vector<S> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + c;
    Tape<S>* tape = a.tape();
    if (!tape) return Tensor<S>(a.shape(), std::move(out));
    int na = a.node();
    return tape->record(a.shape(), std::move(out), {na}, [na](Tape<S>& t, int self) {
        t.accum(na, t.grad_buffer(self));
    });
}

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError(msg("matmul: shapes disagree: ", shape_str(a.shape()), " vs ",
                             shape_str(b.shape())));
    size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<S> out(m * n);
    raw::gemm(a.data(), b.data(), out.data(), m, k, n, false, false, false);
    Tape<S>* tape = detail::common_tape<S>({&a, &b});
    if (!tape) return Tensor<S>({m, n}, std::move(out));
    int na = a.tape() ? a.node() : -1;
    int nb = b.tape() ? b.node() : -1;
    auto as = a.storage();
    auto bs = b.storage();
    return tape->record({m, n}, std::move(out), {na, nb},
                        [na, nb, as, bs, m, k, n](Tape<S>& t, int self) {
                            const auto& g = t.grad_buffer(self);
                            if (na >= 0) {
                                raw::gemm<S>(g.data(), bs->data(), t.grad_buffer(na).data(),
                                             m, n, k, false, true, true);
                                t.mark_live(na);
                            }
                            if (nb >= 0) {
                                raw::gemm<S>(as->data(), g.data(), t.grad_buffer(nb).data(),
                                             k, m, n, true, false, true);
                                t.mark_live(nb);
                            }
                        });
}

template <class S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw ShapeError(msg("matmul_nt: shapes disagree: ", shape_str(a.shape()), " vs ",
                             shape_str(b.shape())));
    size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    std::vector<S> out(m * n);
    raw::gemm(a.data(), b.data(), out.data(), m, k, n, false, true, false);
    Tape<S>* tape = detail::common_tape<S>({&a, &b});
    if (!tape) return Tensor<S>({m, n}, std::move(out));
    int na = a.tape() ? a.node() : -1;
    int nb = b.tape() ? b.node() : -1;
    auto as = a.storage();
    auto bs = b.storage();
    return tape->record({m, n}, std::move(out), {na, nb},
                        [na, nb, as, bs, m, k, n](Tape<S>& t, int self) {
                            const auto& g = t.grad_buffer(self);
                            if (na >= 0) {
                                raw::gemm<S>(g.data(), bs->data(), t.grad_buffer(na).data(),
                                             m, n, k, false, false, true);
                                t.mark_live(na);
                            }
                            if (nb >= 0) {
                                raw::gemm<S>(g.data(), as->data(), t.grad_buffer(nb).data(),
                                             n, m, k, true, false, true);
                                t.mark_live(nb);
                            }
                        });
}

template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0))
        throw ShapeError(msg("linear: inner dimensions disagree: x ", shape_str(x.shape()),
                             " vs w ", shape_str(w.shape())));
    size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
    bool has_bias = b.defined();
    if (has_bias && (b.rank() != 1 || b.dim(0) != n))
        throw ShapeError(msg("linear: bias shape ", shape_str(b.shape()),
                             " does not match output width ", n));
    std::vector<S> out(m * n);
    raw::gemm(x.data(), w.data(), out.data(), m, k, n, false, false, false);
    if (has_bias) {
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) out[i * n + j] += b.data()[j];
    }
    Tape<S>* tape = has_bias ? detail::common_tape<S>({&x, &w, &b})
                             : detail::common_tape<S>({&x, &w});
    if (!tape) return Tensor<S>({m, n}, std::move(out));
    int nx = x.tape() ? x.node() : -1;
    int nw = w.tape() ? w.node() : -1;
    int nb = has_bias && b.tape() ? b.node() : -1;
    auto xs = x.storage();
    auto ws = w.storage();
    return tape->record({m, n}, std::move(out), {nx, nw, nb},
                        [nx, nw, nb, xs, ws, m, k, n](Tape<S>& t, int self) {
                            const auto& g = t.grad_buffer(self);
                            if (nx >= 0) {
                                raw::gemm<S>(g.data(), ws->data(), t.grad_buffer(nx).data(),
                                             m, n, k, false, true, true);
                                t.mark_live(nx);
                            }
                            if (nw >= 0) {
                                raw::gemm<S>(xs->data(), g.data(), t.grad_buffer(nw).data(),
                                             k, m, n, true, false, true);
                                t.mark_live(nw);
                            }
                            if (nb >= 0) {
                                auto& gb = t.grad_buffer(nb);
                                for (size_t i = 0; i < m; ++i)
                                    for (size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                                t.mark_live(nb);
                            }
                        });
}

template <class S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
    if (x.rank() == 0) throw ShapeError("softmax: rank-0 tensor");
    int r = static_cast<int>(x.rank());
    int ax = axis < 0 ? axis + r : axis;
    if (ax < 0 || ax >= r)
        throw ShapeError(msg("softmax: axis ", axis, " out of range for rank ", r));
    size_t a = static_cast<size_t>(ax);
    size_t len = x.dim(a);
    size_t outer = 1, inner = 1;
    for (size_t i = 0; i < a; ++i) outer *= x.dim(i);
    for (size_t i = a + 1; i < x.rank(); ++i) inner *= x.dim(i);

    std::vector<S> out(x.size());
    const S* px = x.data();
    for (size_t o = 0; o < outer; ++o) {
        for (size_t in = 0; in < inner; ++in) {
            size_t base = o * len * inner + in;
            S mx = px[base];
            for (size_t l = 1; l < len; ++l) mx = std::max(mx, px[base + l * inner]);
            S denom = S(0);
            for (size_t l = 0; l < len; ++l) {
                S e = std::exp(px[base + l * inner] - mx);
                out[base + l * inner] = e;
                denom += e;
            }
            for (size_t l = 0; l < len; ++l) out[base + l * inner] /= denom;
        }
    }
    Tape<S>* tape = x.tape();
    if (!tape) return Tensor<S>(x.shape(), std::move(out));
    int nx = x.node();
    Tensor<S> result = tape->record(x.shape(), std::move(out), {nx}, nullptr);
    auto outv = result.storage();
    tape->set_backward(result.node(), [nx, outv, outer, inner, len](Tape<S>& t, int self) {
        const auto& g = t.grad_buffer(self);
        std::vector<S> gx(outv->size());
        const S* y = outv->data();
        for (size_t o = 0; o < outer; ++o) {
            for (size_t in = 0; in < inner; ++in) {
                size_t base = o * len * inner + in;
                S dot = S(0);
                for (size_t l = 0; l < len; ++l) {
                    size_t idx = base + l * inner;
                    dot += g[idx] * y[idx];
                }
                for (size_t l = 0; l < len; ++l) {
                    size_t idx = base + l * inner;
                    gx[idx] = y[idx] * (g[idx] - dot);
                }
            }
        }
        t.accum(nx, gx);
    });
    return result;
}

template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias, S eps) {
    if (x.rank() < 1) throw ShapeError("layer_norm: rank-0 tensor");
    size_t n = x.dim(x.rank() - 1);
    if (gain.size() != n || bias.size() != n)
        throw ShapeError(msg("layer_norm: gain/bias size ", gain.size(), "/", bias.size(),
                             " does not match last axis ", n));
    size_t rows = x.size() / n;
    std::vector<S> out(x.size());
    std::vector<S> inv_sd(rows), xmu(x.size());
    const S* px = x.data();
    for (size_t i = 0; i < rows; ++i) {
        const S* row = px + i * n;
        S mu = S(0);
        for (size_t j = 0; j < n; ++j) mu += row[j];
        mu /= static_cast<S>(n);
        S var = S(0);
        for (size_t j = 0; j < n; ++j) {
            S d = row[j] - mu;
            xmu[i * n + j] = d;
            var += d * d;
        }
        var /= static_cast<S>(n);
        S is = S(1) / std::sqrt(var + eps);
        inv_sd[i] = is;
        for (size_t j = 0; j < n; ++j)
            out[i * n + j] = xmu[i * n + j] * is * gain.data()[j] + bias.data()[j];
    }
    Tape<S>* tape = detail::common_tape<S>({&x, &gain, &bias});
    if (!tape) return Tensor<S>(x.shape(), std::move(out));
    int nx = x.tape() ? x.node() : -1;
    int ng = gain.tape() ? gain.node() : -1;
    int nb = bias.tape() ? bias.node() : -1;
    auto gs = gain.storage();
    auto xmu_p = std::make_shared<std::vector<S>>(std::move(xmu));
    auto isd_p = std::make_shared<std::vector<S>>(std::move(inv_sd));
    return tape->record(
        x.shape(), std::move(out), {nx, ng, nb},
        [nx, ng, nb, gs, xmu_p, isd_p, rows, n](Tape<S>& t, int self) {
            const auto& g = t.grad_buffer(self);
            const S* xmu = xmu_p->data();
            const S* isd = isd_p->data();
            const S* gain = gs->data();
            std::vector<S> gx(nx >= 0 ? rows * n : 0);
            std::vector<S> ggain(ng >= 0 ? n : 0, S(0));
            std::vector<S> gbias(nb >= 0 ? n : 0, S(0));
            for (size_t i = 0; i < rows; ++i) {
                S is = isd[i];
                S sum_gh = S(0), sum_gh_xhat = S(0);
                for (size_t j = 0; j < n; ++j) {
                    size_t idx = i * n + j;
                    S xhat = xmu[idx] * is;
                    S gh = g[idx] * gain[j];
                    sum_gh += gh;
                    sum_gh_xhat += gh * xhat;
                    if (ng >= 0) ggain[j] += g[idx] * xhat;
                    if (nb >= 0) gbias[j] += g[idx];
                }
                if (nx >= 0) {
                    for (size_t j = 0; j < n; ++j) {
                        size_t idx = i * n + j;
                        S xhat = xmu[idx] * is;
                        S gh = g[idx] * gain[j];
                        gx[idx] = is * (gh - (sum_gh + xhat * sum_gh_xhat) / static_cast<S>(n));
                    }
                }
            }
            if (nx >= 0) t.accum(nx, gx);
            if (ng >= 0) t.accum(ng, ggain);
            if (nb >= 0) t.accum(nb, gbias);
        });
}

template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
    const S inv_sqrt2 = static_cast<S>(1.0 / std::numbers::sqrt2);
    std::vector<S> out(x.size());
    for (size_t i = 0; i < out.size(); ++i) {
        S v = x.data()[i];
        out[i] = S(0.5) * v * (S(1) + std::erf(v * inv_sqrt2));
    }
    Tape<S>* tape = x.tape();
    if (!tape) return Tensor<S>(x.shape(), std::move(out));
    int nx = x.node();
    auto xs = x.storage();
    return tape->record(x.shape(), std::move(out), {nx}, [nx, xs](Tape<S>& t, int self) {
        const S inv_sqrt2 = static_cast<S>(1.0 / std::numbers::sqrt2);
        const S inv_sqrt2pi = static_cast<S>(1.0 / std::sqrt(2.0 * std::numbers::pi));
        const auto& g = t.grad_buffer(self);
        std::vector<S> gx(g.size());
        for (size_t i = 0; i < g.size(); ++i) {
            S v = (*xs)[i];
            S cdf = S(0.5) * (S(1) + std::erf(v * inv_sqrt2));
            S pdf = inv_sqrt2pi * std::exp(S(-0.5) * v * v);
            gx[i] = g[i] * (cdf + v * pdf);
        }
        t.accum(nx, gx);
    });
}

template <class S>
Tensor<S> tanh_op(const Tensor<S>& x) {
    std::vector<S> out(x.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.data()[i]);
    Tape<S>* tape = x.tape();
    if (!tape) return Tensor<S>(x.shape(), std::move(out));
    int nx = x.node();
    Tensor<S> result = tape->record(x.shape(), std::move(out), {nx}, nullptr);
    auto outv = result.storage();
    tape->set_backward(result.node(), [nx, outv](Tape<S>& t, int self) {
        const auto& g = t.grad_buffer(self);
        std::vector<S> gx(g.size());
        for (size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * (S(1) - (*outv)[i] * (*outv)[i]);
        t.accum(nx, gx);
    });
    return result;
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    std::vector<S> out(x.size());
    for (size_t i = 0; i < out.size(); ++i) {
        S v = x.data()[i];
        out[i] = v >= S(0) ? S(1) / (S(1) + std::exp(-v)) : std::exp(v) / (S(1) + std::exp(v));
    }
    Tape<S>* tape = x.tape();
    if (!tape) return Tensor<S>(x.shape(), std::move(out));
    int nx = x.node();
    Tensor<S> result = tape->record(x.shape(), std::move(out), {nx}, nullptr);
    auto outv = result.storage();
    tape->set_backward(result.node(), [nx, outv](Tape<S>& t, int self) {
        const auto& g = t.grad_buffer(self);
        std::vector<S> gx(g.size());
        for (size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * (*outv)[i] * (S(1) - (*outv)[i]);
        t.accum(nx, gx);
    });
    return result;
}

template <class S>
Tensor<S> abs_op(const Tensor<S>& x) {
    std::vector<S> out(x.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::abs(x.data()[i]);
    Tape<S>* tape = x.tape();
    if (!tape) return Tensor<S>(x.shape(), std::move(out));
    int nx = x.node();
    auto xs = x.storage();
    return tape->record(x.shape(), std::move(out), {nx}, [nx, xs](Tape<S>& t, int self) {
        const auto& g = t.grad_buffer(self);
        std::vector<S> gx(g.size());
        for (size_t i = 0; i < g.size(); ++i)
            gx[i] = (*xs)[i] > S(0) ? g[i] : ((*xs)[i] < S(0) ? -g[i] : S(0));
        t.accum(nx, gx);
    });
}

template <class S>
Tensor<S> square(const Tensor<S>& x) {
    std::vector<S> out(x.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * x.data()[i];
    Tape<S>* tape = x.tape();
    if (!tape) return Tensor<S>(x.shape(), std::move(out));
    int nx = x.node();
    auto xs = x.storage();
    return tape->record(x.shape(), std::move(out), {nx}, [nx, xs](Tape<S>& t, int self) {
        const auto& g = t.grad_buffer(self);
        std::vector<S> gx(g.size());
        for (size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * S(2) * (*xs)[i];
        t.accum(nx, gx);
    });
}

template <class S>
Tensor<S> sum(const Tensor<S>& x) {
    S total = S(0);
    for (size_t i = 0; i < x.size(); ++i) total += x.data()[i];
    Tape<S>* tape = x.tape();
    if (!tape) return Tensor<S>::scalar(total);
    int nx = x.node();
    size_t n = x.size();
    return tape->record({1}, {total}, {nx}, [nx, n](Tape<S>& t, int self) {
        S g = t.grad_buffer(self)[0];
        std::vector<S> gx(n, g);
        t.accum(nx, gx);
    });
}

template <class S>
Tensor<S> mean(const Tensor<S>& x) {
    if (x.size() == 0) throw ShapeError("mean: empty tensor");
    S total = S(0);
    for (size_t i = 0; i < x.size(); ++i) total += x.data()[i];
    S m = total / static_cast<S>(x.size());
    Tape<S>* tape = x.tape();
    if (!tape) return Tensor<S>::scalar(m);
    int nx = x.node();
    size_t n = x.size();
    return tape->record({1}, {m}, {nx}, [nx, n](Tape<S>& t, int self) {
        S g = t.grad_buffer(self)[0] / static_cast<S>(n);
        std::vector<S> gx(n, g);
        t.accum(nx, gx);
    });
}

template <class S>
Tensor<S> normalize_rows(const Tensor<S>& x, S eps) {
    if (x.rank() != 2)
        throw ShapeError(msg("normalize_rows: expected rank 2, got ", shape_str(x.shape())));
    size_t rows = x.dim(0), n = x.dim(1);
    std::vector<S> out(x.size());
    std::vector<uint8_t> degenerate(rows, 0);
    for (size_t i = 0; i < rows; ++i) {
        S norm2 = S(0);
        for (size_t j = 0; j < n; ++j) norm2 += x(i, j) * x(i, j);
        S norm = std::sqrt(norm2);
        if (norm < eps) {
            degenerate[i] = 1;
            out[i * n] = S(1);
            for (size_t j = 1; j < n; ++j) out[i * n + j] = S(0);
        } else {
            for (size_t j = 0; j < n; ++j) out[i * n + j] = x(i, j) / norm;
        }
    }
    Tape<S>* tape = x.tape();
    if (!tape) return Tensor<S>(x.shape(), std::move(out));
    int nx = x.node();
    auto xs = x.storage();
    auto deg = std::make_shared<std::vector<uint8_t>>(std::move(degenerate));
    return tape->record(x.shape(), std::move(out), {nx},
                        [nx, xs, deg, rows, n](Tape<S>& t, int self) {
                            const auto& g = t.grad_buffer(self);
                            std::vector<S> gx(rows * n, S(0));
                            for (size_t i = 0; i < rows; ++i) {
                                if ((*deg)[i]) continue;
                                const S* xr = xs->data() + i * n;
                                const S* gr = g.data() + i * n;
                                S norm2 = S(0), dot = S(0);
                                for (size_t j = 0; j < n; ++j) norm2 += xr[j] * xr[j];
                                S norm = std::sqrt(norm2);
                                for (size_t j = 0; j < n; ++j) dot += gr[j] * xr[j];
                                S inv = S(1) / norm;
                                S inv3 = inv / norm2;
                                for (size_t j = 0; j < n; ++j)
                                    gx[i * n + j] = gr[j] * inv - xr[j] * dot * inv3;
                            }
                            t.accum(nx, gx);
                        });
}

template <class S>
Tensor<S> concat_cols(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
        throw ShapeError(msg("concat_cols: row counts disagree: ", shape_str(a.shape()),
                             " vs ", shape_str(b.shape())));
    size_t rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    std::vector<S> out(rows * (ca + cb));
    for (size_t i = 0; i < rows; ++i) {
        for (size_t j = 0; j < ca; ++j) out[i * (ca + cb) + j] = a(i, j);
        for (size_t j = 0; j < cb; ++j) out[i * (ca + cb) + ca + j] = b(i, j);
    }
    Tape<S>* tape = detail::common_tape<S>({&a, &b});
    if (!tape) return Tensor<S>({rows, ca + cb}, std::move(out));
    int na = a.tape() ? a.node() : -1;
    int nb = b.tape() ? b.node() : -1;
    return tape->record({rows, ca + cb}, std::move(out), {na, nb},
                        [na, nb, rows, ca, cb](Tape<S>& t, int self) {
                            const auto& g = t.grad_buffer(self);
                            if (na >= 0) {
                                std::vector<S> ga(rows * ca);
                                for (size_t i = 0; i < rows; ++i)
                                    for (size_t j = 0; j < ca; ++j)
                                        ga[i * ca + j] = g[i * (ca + cb) + j];
                                t.accum(na, ga);
                            }
                            if (nb >= 0) {
                                std::vector<S> gb(rows * cb);
                                for (size_t i = 0; i < rows; ++i)
                                    for (size_t j = 0; j < cb; ++j)
                                        gb[i * cb + j] = g[i * (ca + cb) + ca + j];
                                t.accum(nb, gb);
                            }
                        });
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& x, size_t c0, size_t c1) {
    if (x.rank() != 2 || c0 >= c1 || c1 > x.dim(1))
        throw ShapeError(msg("slice_cols: range [", c0, ",", c1, ") invalid for shape ",
                             shape_str(x.shape())));
    size_t rows = x.dim(0), cols = x.dim(1), w = c1 - c0;
    std::vector<S> out(rows * w);
    for (size_t i = 0; i < rows; ++i)
        for (size_t j = 0; j < w; ++j) out[i * w + j] = x(i, c0 + j);
    Tape<S>* tape = x.tape();
    if (!tape) return Tensor<S>({rows, w}, std::move(out));
    int nx = x.node();
    return tape->record({rows, w}, std::move(out), {nx},
                        [nx, rows, cols, c0, w](Tape<S>& t, int self) {
                            const auto& g = t.grad_buffer(self);
                            std::vector<S> gx(rows * cols, S(0));
                            for (size_t i = 0; i < rows; ++i)
                                for (size_t j = 0; j < w; ++j)
                                    gx[i * cols + c0 + j] = g[i * w + j];
                            t.accum(nx, gx);
                        });
}

template <class S>
Tensor<S> slice_rows(const Tensor<S>& x, size_t r0, size_t r1) {
    if (x.rank() < 1 || r0 >= r1 || r1 > x.dim(0))
        throw ShapeError(msg("slice_rows: range [", r0, ",", r1, ") invalid for shape ",
                             shape_str(x.shape())));
    size_t stride = x.size() / x.dim(0);
    size_t rows = r1 - r0;
    std::vector<S> out(rows * stride);
    std::copy(x.data() + r0 * stride, x.data() + r1 * stride, out.begin());
    std::vector<size_t> shape = x.shape();
    shape[0] = rows;
    Tape<S>* tape = x.tape();
    if (!tape) return Tensor<S>(shape, std::move(out));
    int nx = x.node();
    size_t total = x.size();
    return tape->record(shape, std::move(out), {nx},
                        [nx, r0, stride, total](Tape<S>& t, int self) {
                            const auto& g = t.grad_buffer(self);
                            std::vector<S> gx(total, S(0));
                            std::copy(g.begin(), g.end(), gx.begin() + r0 * stride);
                            t.accum(nx, gx);
                        });
}

template <class S>
Tensor<S> reshape(const Tensor<S>& x, std::vector<size_t> shape) {
    if (shape_numel(shape) != x.size())
        throw ShapeError(msg("reshape: ", shape_str(x.shape()), " has ", x.size(),
                             " elements, target ", shape_str(shape), " wants ",
                             shape_numel(shape)));
    std::vector<S> out(x.data(), x.data() + x.size());
    Tape<S>* tape = x.tape();
    if (!tape) return Tensor<S>(std::move(shape), std::move(out));
    int nx = x.node();
    return tape->record(std::move(shape), std::move(out), {nx}, [nx](Tape<S>& t, int self) {
        t.accum(nx, t.grad_buffer(self));
    });
}

#define GSR_INSTANTIATE_OPS(S)                                                              \
    template Tensor<S> add<S>(const Tensor<S>&, const Tensor<S>&);                         \
    template Tensor<S> sub<S>(const Tensor<S>&, const Tensor<S>&);                         \
    template Tensor<S> mul<S>(const Tensor<S>&, const Tensor<S>&);                         \
    template Tensor<S> scale<S>(const Tensor<S>&, S);                                      \
    template Tensor<S> add_scalar<S>(const Tensor<S>&, S);                                 \
    template Tensor<S> matmul<S>(const Tensor<S>&, const Tensor<S>&);                      \
    template Tensor<S> matmul_nt<S>(const Tensor<S>&, const Tensor<S>&);                   \
    template Tensor<S> linear<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);    \
    template Tensor<S> softmax<S>(const Tensor<S>&, int);                                  \
    template Tensor<S> layer_norm<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, \
                                     S);                                                   \
    template Tensor<S> gelu<S>(const Tensor<S>&);                                          \
    template Tensor<S> tanh_op<S>(const Tensor<S>&);                                       \
    template Tensor<S> sigmoid<S>(const Tensor<S>&);                                       \
    template Tensor<S> abs_op<S>(const Tensor<S>&);                                        \
    template Tensor<S> square<S>(const Tensor<S>&);                                        \
    template Tensor<S> sum<S>(const Tensor<S>&);                                           \
    template Tensor<S> mean<S>(const Tensor<S>&);                                          \
    template Tensor<S> normalize_rows<S>(const Tensor<S>&, S);                             \
    template Tensor<S> concat_cols<S>(const Tensor<S>&, const Tensor<S>&);                 \
    template Tensor<S> slice_cols<S>(const Tensor<S>&, size_t, size_t);                    \
    template Tensor<S> slice_rows<S>(const Tensor<S>&, size_t, size_t);                    \
    template Tensor<S> reshape<S>(const Tensor<S>&, std::vector<size_t>);

GSR_INSTANTIATE_OPS(float)
GSR_INSTANTIATE_OPS(double)

#undef GSR_INSTANTIATE_OPS

} // namespace gsr
