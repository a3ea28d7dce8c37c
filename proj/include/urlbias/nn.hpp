// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 urlbias contributors

#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "urlbias/common.hpp"
#include "urlbias/tokenizer.hpp"

namespace urlbias::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// Deterministic random numbers. Draws go through explicit helpers built on
// the raw engine output so sequences are identical across standard libraries,
// and independent purposes (init, shuffle, dropout, noise) fork their own
// streams so adding one consumer never shifts another.
// ---------------------------------------------------------------------------

inline uint64_t mix64(uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

    Rng fork(uint64_t stream) const { return Rng(mix64(seed_ ^ mix64(stream ^ 0xA5A5A5A5ull))); }

    uint64_t next_u64() { return engine_(); }

    uint64_t below(uint64_t n) { return next_u64() % n; }

    double uniform() {  // [0, 1)
        return double(next_u64() >> 11) * 0x1.0p-53;
    }

    double normal() {  // Box-Muller, one value per call
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0, u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1)), a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <class S>
struct Tensor {
    std::string name;
    Mat<S> w, g;

    void resize(Eigen::Index rows, Eigen::Index cols) {
        w.setZero(rows, cols);
        g.setZero(rows, cols);
    }
    void zero_grad() { g.setZero(); }
};

template <class S>
inline void glorot_init(Tensor<S>& t, Rng& rng) {
    const double limit = std::sqrt(6.0 / double(t.w.rows() + t.w.cols()));
    for (Eigen::Index c = 0; c < t.w.cols(); ++c)
        for (Eigen::Index r = 0; r < t.w.rows(); ++r)
            t.w(r, c) = S(limit * (2.0 * rng.uniform() - 1.0));
}

template <class S>
inline void normal_init(Tensor<S>& t, Rng& rng, double stddev) {
    for (Eigen::Index c = 0; c < t.w.cols(); ++c)
        for (Eigen::Index r = 0; r < t.w.rows(); ++r) t.w(r, c) = S(stddev * rng.normal());
}

template <class S>
struct AdamConfig {
    S lr = S(1e-3);
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S eps = S(1e-8);
    S weight_decay = S(0);
};

/// Adam with decoupled weight decay: the decay shrinks parameters directly at
/// lr * wd * theta per step instead of entering the gradient, so it cannot
/// hijack the adaptive scaling when task gradients are small. A step on
/// all-zero gradients of a fresh zero-decay optimizer is an exact no-op,
/// which the debiasing trainer relies on for its lambda = 0 special case.
template <class S>
class Adam {
public:
    Adam() = default;
    Adam(std::vector<Tensor<S>*> params, AdamConfig<S> cfg)
        : params_(std::move(params)), cfg_(cfg) {
        for (auto* p : params_) {
            m_.push_back(Mat<S>::Zero(p->w.rows(), p->w.cols()));
            v_.push_back(Mat<S>::Zero(p->w.rows(), p->w.cols()));
        }
    }

    void step() {
        ++t_;
        const S c1 = S(1) - S(std::pow(double(cfg_.beta1), double(t_)));
        const S c2 = S(1) - S(std::pow(double(cfg_.beta2), double(t_)));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            m_[i] = cfg_.beta1 * m_[i] + (S(1) - cfg_.beta1) * p.g;
            v_[i] = cfg_.beta2 * v_[i] + (S(1) - cfg_.beta2) * p.g.cwiseProduct(p.g);
            if (cfg_.weight_decay != S(0)) p.w *= (S(1) - cfg_.lr * cfg_.weight_decay);
            p.w.array() -= cfg_.lr * (m_[i].array() / c1) /
                           ((v_[i].array() / c2).sqrt() + cfg_.eps);
        }
    }

    void zero_grads() {
        for (auto* p : params_) p->zero_grad();
    }

    const AdamConfig<S>& config() const { return cfg_; }

private:
    std::vector<Tensor<S>*> params_;
    AdamConfig<S> cfg_;
    int64_t t_ = 0;
    std::vector<Mat<S>> m_, v_;
};

// ---------------------------------------------------------------------------
// Packed ragged batches: sequences are stored as column spans of one matrix.
// ---------------------------------------------------------------------------

struct Ranges {
    std::vector<int> offsets;  // batch+1 monotone offsets

    int batch() const { return int(offsets.size()) - 1; }
    int total() const { return offsets.back(); }
    int begin(int i) const { return offsets[i]; }
    int length(int i) const { return offsets[i + 1] - offsets[i]; }
};

struct PackedIds {
    std::vector<int32_t> ids;  // concatenated sequences
    Ranges ranges;
};

/// Pack one stream of encoded samples, trimming trailing PAD but keeping at
/// least min_len positions so convolution windows always exist.
inline PackedIds pack_ids(const std::vector<const TokenizedSample*>& samples, TokenMode stream,
                          int min_len) {
    PackedIds out;
    out.ranges.offsets.push_back(0);
    for (const auto* s : samples) {
        const auto& ids = stream == TokenMode::chars ? s->char_ids : s->word_ids;
        int len = int(ids.size());
        while (len > 0 && ids[len - 1] == kPadId) --len;
        len = std::max(len, min_len);  // short sequences extend with PAD below
        for (int t = 0; t < len; ++t)
            out.ids.push_back(t < int(ids.size()) ? ids[t] : kPadId);
        out.ranges.offsets.push_back(int(out.ids.size()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Layers. Each layer pairs forward() with backward(); caches are explicit so
// a layer object itself is read-only during the pass.
// ---------------------------------------------------------------------------

/// Token embedding table, stored d x M (one column per token). The PAD column
/// is never initialized nor updated, so padding carries no signal.
template <class S>
struct Embedding {
    Tensor<S> table;

    void init(const std::string& name, int dim, int vocab_size, Rng& rng) {
        table.name = name;
        table.resize(dim, vocab_size);
        normal_init(table, rng, 0.1);
        table.w.col(kPadId).setZero();
    }

    int dim() const { return int(table.w.rows()); }

    Mat<S> forward(const PackedIds& in) const {
        Mat<S> x(dim(), in.ranges.total());
        for (int j = 0; j < int(in.ids.size()); ++j) x.col(j) = table.w.col(in.ids[j]);
        return x;
    }

    void backward(const PackedIds& in, const Mat<S>& dx) {
        for (int j = 0; j < int(in.ids.size()); ++j)
            if (in.ids[j] != kPadId) table.g.col(in.ids[j]) += dx.col(j);
    }
};

/// Valid 1-d convolution over token embeddings followed by ReLU and
/// max-over-time pooling, the URLNet-style branch block.
template <class S>
struct ConvMaxPool {
    int width = 3;
    Tensor<S> W;  // channels x (width * dim)
    Tensor<S> b;  // channels x 1

    struct Cache {
        Mat<S> col;                 // (width*dim) x total_windows
        std::vector<int> win_off;   // batch+1
        Mat<S> max_raw;             // channels x batch (pre-ReLU maxima)
        Eigen::MatrixXi argmax;     // channels x batch (column in col)
    };

    void init(const std::string& name, int w, int dim, int channels, Rng& rng) {
        width = w;
        W.name = name + ".W";
        W.resize(channels, Eigen::Index(w) * dim);
        glorot_init(W, rng);
        b.name = name + ".b";
        b.resize(channels, 1);
    }

    int channels() const { return int(W.w.rows()); }
    int dim() const { return int(W.w.cols()) / width; }

    Mat<S> forward(const Mat<S>& x, const Ranges& r, Cache& cache) const {
        const int d = dim(), C = channels(), B = r.batch();
        cache.win_off.assign(1, 0);
        for (int i = 0; i < B; ++i) {
            int n = r.length(i) - width + 1;
            if (n < 1) throw Error("conv: sequence shorter than kernel width");
            cache.win_off.push_back(cache.win_off.back() + n);
        }
        const int total = cache.win_off.back();
        cache.col.resize(Eigen::Index(width) * d, total);
        for (int i = 0; i < B; ++i) {
            int base = r.begin(i);
            for (int t = 0; t < cache.win_off[i + 1] - cache.win_off[i]; ++t)
                for (int k = 0; k < width; ++k)
                    cache.col.col(cache.win_off[i] + t).segment(Eigen::Index(k) * d, d) =
                        x.col(base + t + k);
        }
        Mat<S> act = W.w * cache.col;
        act.colwise() += b.w.col(0);

        cache.max_raw.resize(C, B);
        cache.argmax.resize(C, B);
        Mat<S> pooled(C, B);
        for (int i = 0; i < B; ++i) {
            for (int c = 0; c < C; ++c) {
                int best = cache.win_off[i];
                S best_v = act(c, best);
                for (int j = cache.win_off[i] + 1; j < cache.win_off[i + 1]; ++j)
                    if (act(c, j) > best_v) {
                        best_v = act(c, j);
                        best = j;
                    }
                cache.max_raw(c, i) = best_v;
                cache.argmax(c, i) = best;
                pooled(c, i) = best_v > S(0) ? best_v : S(0);
            }
        }
        return pooled;
    }

    /// dpooled is channels x batch. Accumulates into W.g/b.g when param_grads
    /// and into dx (already sized d x total positions) when dx != nullptr.
    void backward(const Mat<S>& dpooled, const Ranges& r, const Cache& cache, bool param_grads,
                  Mat<S>* dx) {
        const int d = dim(), C = channels(), B = r.batch();
        for (int i = 0; i < B; ++i) {
            for (int c = 0; c < C; ++c) {
                if (cache.max_raw(c, i) <= S(0)) continue;  // ReLU gate closed
                S g = dpooled(c, i);
                if (g == S(0)) continue;
                const int j = cache.argmax(c, i);
                if (param_grads) {
                    W.g.row(c) += g * cache.col.col(j).transpose();
                    b.g(c, 0) += g;
                }
                if (dx) {
                    const int t = j - cache.win_off[i];
                    for (int k = 0; k < width; ++k)
                        dx->col(r.begin(i) + t + k) +=
                            g * W.w.row(c).segment(Eigen::Index(k) * d, d).transpose();
                }
            }
        }
    }
};

/// Gated convolution block: H = A .* sigmoid(B) over the byte stream followed
/// by global max pooling.
template <class S>
struct GatedConvPool {
    int width = 5;
    Tensor<S> Wa, ba, Wb, bb;

    struct Cache {
        Mat<S> col;
        std::vector<int> win_off;
        Mat<S> a, sig;              // full pre-gate activations (channels x windows)
        Eigen::MatrixXi argmax;     // channels x batch
    };

    void init(const std::string& name, int w, int dim, int channels, Rng& rng) {
        width = w;
        Wa.name = name + ".Wa";
        Wa.resize(channels, Eigen::Index(w) * dim);
        glorot_init(Wa, rng);
        ba.name = name + ".ba";
        ba.resize(channels, 1);
        Wb.name = name + ".Wb";
        Wb.resize(channels, Eigen::Index(w) * dim);
        glorot_init(Wb, rng);
        bb.name = name + ".bb";
        bb.resize(channels, 1);
    }

    int channels() const { return int(Wa.w.rows()); }
    int dim() const { return int(Wa.w.cols()) / width; }

    Mat<S> forward(const Mat<S>& x, const Ranges& r, Cache& cache) const {
        const int d = dim(), C = channels(), B = r.batch();
        cache.win_off.assign(1, 0);
        for (int i = 0; i < B; ++i) {
            int n = r.length(i) - width + 1;
            if (n < 1) throw Error("gated conv: sequence shorter than kernel width");
            cache.win_off.push_back(cache.win_off.back() + n);
        }
        cache.col.resize(Eigen::Index(width) * d, cache.win_off.back());
        for (int i = 0; i < B; ++i) {
            int base = r.begin(i);
            for (int t = 0; t < cache.win_off[i + 1] - cache.win_off[i]; ++t)
                for (int k = 0; k < width; ++k)
                    cache.col.col(cache.win_off[i] + t).segment(Eigen::Index(k) * d, d) =
                        x.col(base + t + k);
        }
        cache.a = Wa.w * cache.col;
        cache.a.colwise() += ba.w.col(0);
        Mat<S> gate = Wb.w * cache.col;
        gate.colwise() += bb.w.col(0);
        cache.sig = (S(1) / (S(1) + (-gate.array()).exp())).matrix();

        Mat<S> pooled(C, B);
        cache.argmax.resize(C, B);
        for (int i = 0; i < B; ++i)
            for (int c = 0; c < C; ++c) {
                int best = cache.win_off[i];
                S best_v = cache.a(c, best) * cache.sig(c, best);
                for (int j = cache.win_off[i] + 1; j < cache.win_off[i + 1]; ++j) {
                    S v = cache.a(c, j) * cache.sig(c, j);
                    if (v > best_v) {
                        best_v = v;
                        best = j;
                    }
                }
                pooled(c, i) = best_v;
                cache.argmax(c, i) = best;
            }
        return pooled;
    }

    void backward(const Mat<S>& dpooled, const Ranges& r, const Cache& cache, bool param_grads,
                  Mat<S>* dx) {
        const int d = dim(), C = channels(), B = r.batch();
        for (int i = 0; i < B; ++i)
            for (int c = 0; c < C; ++c) {
                S g = dpooled(c, i);
                if (g == S(0)) continue;
                const int j = cache.argmax(c, i);
                const S a = cache.a(c, j), sg = cache.sig(c, j);
                const S da = g * sg;
                const S dgate = g * a * sg * (S(1) - sg);
                if (param_grads) {
                    Wa.g.row(c) += da * cache.col.col(j).transpose();
                    ba.g(c, 0) += da;
                    Wb.g.row(c) += dgate * cache.col.col(j).transpose();
                    bb.g(c, 0) += dgate;
                }
                if (dx) {
                    const int t = j - cache.win_off[i];
                    for (int k = 0; k < width; ++k)
                        dx->col(r.begin(i) + t + k) +=
                            da * Wa.w.row(c).segment(Eigen::Index(k) * d, d).transpose() +
                            dgate * Wb.w.row(c).segment(Eigen::Index(k) * d, d).transpose();
                }
            }
    }
};

/// Single-layer LSTM over the byte stream with max pooling across hidden
/// states. Batched over time; positions past a sample's length receive no
/// gradient because pooling never reads them.
template <class S>
struct LstmMaxPool {
    Tensor<S> Wx;  // 4H x d
    Tensor<S> Wh;  // 4H x H
    Tensor<S> b;   // 4H x 1

    struct Cache {
        int maxlen = 0;
        std::vector<Mat<S>> xt, ifgo, c, tanh_c, h;  // per time step
        Eigen::MatrixXi argmax;                      // hidden x batch (time index)
    };

    void init(const std::string& name, int dim, int hidden, Rng& rng) {
        Wx.name = name + ".Wx";
        Wx.resize(Eigen::Index(4) * hidden, dim);
        glorot_init(Wx, rng);
        Wh.name = name + ".Wh";
        Wh.resize(Eigen::Index(4) * hidden, hidden);
        glorot_init(Wh, rng);
        b.name = name + ".b";
        b.resize(Eigen::Index(4) * hidden, 1);
        b.w.block(hidden, 0, hidden, 1).setConstant(S(1));  // forget-gate bias
    }

    int hidden() const { return int(Wh.w.cols()); }
    int dim() const { return int(Wx.w.cols()); }

    Mat<S> forward(const Mat<S>& x, const Ranges& r, Cache& cache) const {
        const int H = hidden(), d = dim(), B = r.batch();
        int maxlen = 0;
        for (int i = 0; i < B; ++i) maxlen = std::max(maxlen, r.length(i));
        cache.maxlen = maxlen;
        cache.xt.assign(maxlen, Mat<S>());
        cache.ifgo.assign(maxlen, Mat<S>());
        cache.c.assign(maxlen, Mat<S>());
        cache.tanh_c.assign(maxlen, Mat<S>());
        cache.h.assign(maxlen, Mat<S>());

        Mat<S> h_prev = Mat<S>::Zero(H, B), c_prev = Mat<S>::Zero(H, B);
        for (int t = 0; t < maxlen; ++t) {
            Mat<S>& xt = cache.xt[t];
            xt.setZero(d, B);
            for (int i = 0; i < B; ++i)
                if (t < r.length(i)) xt.col(i) = x.col(r.begin(i) + t);
            Mat<S> z = Wx.w * xt + Wh.w * h_prev;
            z.colwise() += b.w.col(0);
            auto& g = cache.ifgo[t];
            g.resize(Eigen::Index(4) * H, B);
            g.topRows(H) = (S(1) / (S(1) + (-z.topRows(H).array()).exp())).matrix();
            g.block(H, 0, H, B) =
                (S(1) / (S(1) + (-z.block(H, 0, H, B).array()).exp())).matrix();
            g.block(2 * H, 0, H, B) = z.block(2 * H, 0, H, B).array().tanh().matrix();
            g.block(3 * H, 0, H, B) =
                (S(1) / (S(1) + (-z.block(3 * H, 0, H, B).array()).exp())).matrix();

            cache.c[t] = g.block(H, 0, H, B).cwiseProduct(c_prev) +
                         g.topRows(H).cwiseProduct(g.block(2 * H, 0, H, B));
            cache.tanh_c[t] = cache.c[t].array().tanh().matrix();
            cache.h[t] = g.block(3 * H, 0, H, B).cwiseProduct(cache.tanh_c[t]);
            h_prev = cache.h[t];
            c_prev = cache.c[t];
        }

        Mat<S> pooled(H, B);
        cache.argmax.resize(H, B);
        for (int i = 0; i < B; ++i)
            for (int hidx = 0; hidx < H; ++hidx) {
                int best = 0;
                S best_v = cache.h[0](hidx, i);
                for (int t = 1; t < r.length(i); ++t)
                    if (cache.h[t](hidx, i) > best_v) {
                        best_v = cache.h[t](hidx, i);
                        best = t;
                    }
                pooled(hidx, i) = best_v;
                cache.argmax(hidx, i) = best;
            }
        return pooled;
    }

    void backward(const Mat<S>& dpooled, const Ranges& r, const Cache& cache, bool param_grads,
                  Mat<S>* dx) {
        const int H = hidden(), B = r.batch();
        Mat<S> dh_next = Mat<S>::Zero(H, B), dc_next = Mat<S>::Zero(H, B);
        for (int t = cache.maxlen - 1; t >= 0; --t) {
            Mat<S> dh = dh_next;
            for (int i = 0; i < B; ++i)
                for (int hidx = 0; hidx < H; ++hidx)
                    if (cache.argmax(hidx, i) == t) dh(hidx, i) += dpooled(hidx, i);

            const auto& g = cache.ifgo[t];
            auto i_g = g.topRows(H), f_g = g.block(H, 0, H, B), g_g = g.block(2 * H, 0, H, B),
                 o_g = g.block(3 * H, 0, H, B);

            Mat<S> d_o = dh.cwiseProduct(cache.tanh_c[t]);
            Mat<S> dc = dc_next +
                        dh.cwiseProduct(o_g).cwiseProduct(
                            (S(1) - cache.tanh_c[t].array().square()).matrix());
            Mat<S> c_prev = t > 0 ? cache.c[t - 1] : Mat<S>::Zero(H, B);
            Mat<S> d_i = dc.cwiseProduct(g_g);
            Mat<S> d_g = dc.cwiseProduct(i_g);
            Mat<S> d_f = dc.cwiseProduct(c_prev);

            Mat<S> dz(Eigen::Index(4) * H, B);
            dz.topRows(H) = d_i.cwiseProduct(i_g).cwiseProduct((S(1) - i_g.array()).matrix());
            dz.block(H, 0, H, B) =
                d_f.cwiseProduct(f_g).cwiseProduct((S(1) - f_g.array()).matrix());
            dz.block(2 * H, 0, H, B) =
                d_g.cwiseProduct((S(1) - g_g.array().square()).matrix());
            dz.block(3 * H, 0, H, B) =
                d_o.cwiseProduct(o_g).cwiseProduct((S(1) - o_g.array()).matrix());

            if (param_grads) {
                Wx.g.noalias() += dz * cache.xt[t].transpose();
                if (t > 0) Wh.g.noalias() += dz * cache.h[t - 1].transpose();
                b.g.col(0) += dz.rowwise().sum();
            }
            if (dx) {
                Mat<S> dxt = Wx.w.transpose() * dz;
                for (int i = 0; i < B; ++i)
                    if (t < r.length(i)) dx->col(r.begin(i) + t) += dxt.col(i);
            }
            dh_next = Wh.w.transpose() * dz;
            dc_next = dc.cwiseProduct(f_g);
        }
    }
};

template <class S>
struct Dense {
    Tensor<S> W;  // out x in
    Tensor<S> b;  // out x 1

    void init(const std::string& name, int in, int out, Rng& rng) {
        W.name = name + ".W";
        W.resize(out, in);
        glorot_init(W, rng);
        b.name = name + ".b";
        b.resize(out, 1);
    }

    Mat<S> forward(const Mat<S>& x) const {
        Mat<S> y = W.w * x;
        y.colwise() += b.w.col(0);
        return y;
    }

    /// Returns dx; accumulates parameter gradients when param_grads is set.
    Mat<S> backward(const Mat<S>& x, const Mat<S>& dy, bool param_grads) {
        if (param_grads) {
            W.g.noalias() += dy * x.transpose();
            b.g.col(0) += dy.rowwise().sum();
        }
        return W.w.transpose() * dy;
    }
};

/// Inverted dropout over a feature matrix; identity when rate == 0 or at eval.
template <class S>
struct Dropout {
    double rate = 0.0;

    struct Cache {
        Mat<S> mask;  // empty when inactive
    };

    Mat<S> forward(const Mat<S>& x, bool train, Rng* rng, Cache& cache) const {
        if (!train || rate <= 0.0) {
            cache.mask.resize(0, 0);
            return x;
        }
        const S keep = S(1.0 - rate);
        cache.mask.resize(x.rows(), x.cols());
        for (Eigen::Index c = 0; c < x.cols(); ++c)
            for (Eigen::Index r = 0; r < x.rows(); ++r)
                cache.mask(r, c) = rng->uniform() >= rate ? S(1) / keep : S(0);
        return x.cwiseProduct(cache.mask);
    }

    Mat<S> backward(const Mat<S>& dy, const Cache& cache) const {
        if (cache.mask.size() == 0) return dy;
        return dy.cwiseProduct(cache.mask);
    }
};

// ---------------------------------------------------------------------------
// Softmax and cross-entropy
// ---------------------------------------------------------------------------

template <class S>
inline Mat<S> softmax_columns(const Mat<S>& logits) {
    Mat<S> p = logits;
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
        auto col = p.col(c);
        col.array() -= col.maxCoeff();
        col = col.array().exp().matrix();
        col /= col.sum();
    }
    return p;
}

constexpr double kLogClamp = 1e-12;

/// -sum_k t_k log p_k with probabilities clamped to [1e-12, 1].
template <class S>
inline double cross_entropy(const Vec<S>& target, const Vec<S>& probs) {
    double loss = 0.0;
    for (Eigen::Index k = 0; k < probs.size(); ++k) {
        if (target[k] == S(0)) continue;
        loss -= double(target[k]) * std::log(std::max(double(probs[k]), kLogClamp));
    }
    return loss;
}

/// Identity on the forward pass; scales gradients by -lambda on the way back.
template <class S>
struct GradientReversal {
    S lambda = S(1);
    Mat<S> forward(const Mat<S>& x) const { return x; }
    Mat<S> backward(const Mat<S>& dy) const { return (-lambda) * dy; }
};

/// Position-wise bias predictor: two rectified hidden layers and a softmax
/// over classes, applied independently to every token embedding.
template <class S>
struct BiasPredictor {
    Dense<S> l1, l2, l3;

    struct Cache {
        Mat<S> x, h1, h2, probs;
    };

    void init(const std::string& name, int dim, int hidden1, int hidden2, int num_classes,
              Rng& rng) {
        l1.init(name + ".l1", dim, hidden1, rng);
        l2.init(name + ".l2", hidden1, hidden2, rng);
        l3.init(name + ".l3", hidden2, num_classes, rng);
    }

    std::vector<Tensor<S>*> params() {
        return {&l1.W, &l1.b, &l2.W, &l2.b, &l3.W, &l3.b};
    }

    Mat<S> forward(const Mat<S>& x, Cache& cache) const {
        cache.x = x;
        cache.h1 = l1.forward(x).cwiseMax(S(0));
        cache.h2 = l2.forward(cache.h1).cwiseMax(S(0));
        cache.probs = softmax_columns(l3.forward(cache.h2));
        return cache.probs;
    }

    /// dlogits = dL/d(pre-softmax logits), positions as columns. Returns dx.
    Mat<S> backward(const Cache& cache, const Mat<S>& dlogits, bool param_grads) {
        Mat<S> dh2 = l3.backward(cache.h2, dlogits, param_grads);
        dh2 = dh2.cwiseProduct((cache.h2.array() > S(0)).template cast<S>().matrix());
        Mat<S> dh1 = l2.backward(cache.h1, dh2, param_grads);
        dh1 = dh1.cwiseProduct((cache.h1.array() > S(0)).template cast<S>().matrix());
        return l1.backward(cache.x, dh1, param_grads);
    }
};

}  // namespace urlbias::nn
