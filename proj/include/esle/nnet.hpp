#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "esle/corpus.hpp"
#include "esle/error.hpp"
#include "esle/io.hpp"
#include "esle/labels.hpp"
#include "esle/metrics.hpp"
#include "esle/rng.hpp"
#include "esle/tensor.hpp"

namespace esle {

// ---------------------------------------------------------------------------
// Architecture: N conv blocks (conv, SeLU, 2x2 maxpool), a chain of SeLU
// fully-connected layers, the features->E embedding layer (SeLU output is the
// embedding), and the E->C head with sigmoid outputs.
// ---------------------------------------------------------------------------

struct ConvSpec {
    std::size_t out_channels = 0;
    std::size_t kernel = 0;
    std::size_t padding = 0;
};

struct NetworkConfig {
    std::size_t in_channels = 3;
    std::size_t in_h = 64;
    std::size_t in_w = 64;
    std::vector<ConvSpec> convs = {{9, 5, 2}, {18, 5, 2}, {36, 3, 1}};
    std::vector<std::size_t> fc_widths = {1024, 128};
    std::size_t embedding_dim = 32;
    std::size_t num_labels = kLabelCount;

    struct ConvDims {
        std::size_t in_c, in_h, in_w;   // input to the conv
        std::size_t out_h, out_w;       // after the conv
        std::size_t pool_h, pool_w;     // after the 2x2 pool
    };

    std::vector<ConvDims> conv_dims() const {
        std::vector<ConvDims> dims;
        std::size_t c = in_channels, h = in_h, w = in_w;
        for (const auto& cs : convs) {
            ConvDims d{};
            d.in_c = c;
            d.in_h = h;
            d.in_w = w;
            d.out_h = h + 2 * cs.padding - cs.kernel + 1;
            d.out_w = w + 2 * cs.padding - cs.kernel + 1;
            d.pool_h = (d.out_h + 1) / 2;
            d.pool_w = (d.out_w + 1) / 2;
            dims.push_back(d);
            c = cs.out_channels;
            h = d.pool_h;
            w = d.pool_w;
        }
        return dims;
    }

    // Width of the flattened input to the first fully-connected layer.
    std::size_t flatten_dim() const {
        if (convs.empty()) return in_channels * in_h * in_w;
        auto dims = conv_dims();
        return convs.back().out_channels * dims.back().pool_h * dims.back().pool_w;
    }

    // conv blocks + hidden fc + embedding layer + head
    std::size_t layer_count() const { return convs.size() + fc_widths.size() + 2; }

    std::string layer_name(std::size_t i) const {
        if (i < convs.size()) return "conv" + std::to_string(i + 1);
        i -= convs.size();
        if (i < fc_widths.size()) return "fc" + std::to_string(i + 1);
        return i == fc_widths.size() ? "embed" : "head";
    }

    void validate() const {
        if (in_channels == 0 || in_h == 0 || in_w == 0)
            throw ValueError("network: input dimensions must be positive");
        if (embedding_dim == 0 || num_labels == 0)
            throw ValueError("network: embedding_dim and num_labels must be positive");
        std::size_t h = in_h, w = in_w;
        for (std::size_t i = 0; i < convs.size(); ++i) {
            const auto& cs = convs[i];
            if (cs.out_channels == 0 || cs.kernel == 0)
                throw ValueError("network: conv" + std::to_string(i + 1) + " has zero size");
            if (h + 2 * cs.padding < cs.kernel || w + 2 * cs.padding < cs.kernel)
                throw ShapeError("network: conv" + std::to_string(i + 1) + " kernel " +
                                 std::to_string(cs.kernel) + " exceeds padded input " +
                                 std::to_string(h) + "x" + std::to_string(w));
            h = (h + 2 * cs.padding - cs.kernel + 1 + 1) / 2;
            w = (w + 2 * cs.padding - cs.kernel + 1 + 1) / 2;
        }
        for (std::size_t wfc : fc_widths)
            if (wfc == 0) throw ValueError("network: fc width must be positive");
    }

    json to_json() const {
        json j;
        j["in_channels"] = in_channels;
        j["in_h"] = in_h;
        j["in_w"] = in_w;
        json cj = json::array();
        for (const auto& c : convs)
            cj.push_back({{"out", c.out_channels}, {"k", c.kernel}, {"pad", c.padding}});
        j["convs"] = cj;
        j["fc"] = fc_widths;
        j["embedding_dim"] = embedding_dim;
        j["num_labels"] = num_labels;
        return j;
    }

    static NetworkConfig from_json(const json& j) {
        NetworkConfig c;
        c.in_channels = j.at("in_channels").get<std::size_t>();
        c.in_h = j.at("in_h").get<std::size_t>();
        c.in_w = j.at("in_w").get<std::size_t>();
        c.convs.clear();
        for (const auto& cj : j.at("convs"))
            c.convs.push_back({cj.at("out").get<std::size_t>(), cj.at("k").get<std::size_t>(),
                               cj.at("pad").get<std::size_t>()});
        c.fc_widths = j.at("fc").get<std::vector<std::size_t>>();
        c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
        c.num_labels = j.at("num_labels").get<std::size_t>();
        c.validate();
        return c;
    }
};

struct ModelParams {
    NetworkConfig config;
    std::uint64_t init_seed = 0;
    // Conv weights are [out_c, in_c, k, k]; fully-connected weights are
    // [in, out] so the batched forward is a plain row-major matrix product.
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;
};

// Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases, one seeded stream
// consumed in declaration order.
inline ModelParams init_params(const NetworkConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParams p;
    p.config = config;
    p.init_seed = seed;
    Rng rng(seed);

    auto add_layer = [&](std::vector<std::size_t> w_shape, std::size_t bias_len,
                         std::size_t fan_in, std::size_t fan_out) {
        Tensor w(std::move(w_shape));
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (auto& v : w.data) v = rng.uniform(-bound, bound);
        p.weights.push_back(std::move(w));
        p.biases.push_back(Tensor({bias_len}));
    };

    std::size_t c = config.in_channels;
    for (const auto& cs : config.convs) {
        add_layer({cs.out_channels, c, cs.kernel, cs.kernel}, cs.out_channels,
                  c * cs.kernel * cs.kernel, cs.out_channels * cs.kernel * cs.kernel);
        c = cs.out_channels;
    }
    std::size_t width = config.flatten_dim();
    for (std::size_t w : config.fc_widths) {
        add_layer({width, w}, w, width, w);
        width = w;
    }
    add_layer({width, config.embedding_dim}, config.embedding_dim, width, config.embedding_dim);
    add_layer({config.embedding_dim, config.num_labels}, config.num_labels, config.embedding_dim,
              config.num_labels);
    return p;
}

// ---------------------------------------------------------------------------
// Scalar kernels.
// ---------------------------------------------------------------------------

inline constexpr double kSeluLambda = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;

inline double selu(double x) {
    return x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x);
}

inline double selu_grad(double x) {
    return x > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(x);
}

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// im2col / col2im.  cols is [in_c*k*k] x [out_h*out_w]; zero padding.
// ---------------------------------------------------------------------------

inline void im2col(const double* img, std::size_t in_c, std::size_t h, std::size_t w,
                   std::size_t k, std::size_t pad, double* cols) {
    const std::size_t out_h = h + 2 * pad - k + 1;
    const std::size_t out_w = w + 2 * pad - k + 1;
    std::size_t row = 0;
    for (std::size_t c = 0; c < in_c; ++c)
        for (std::size_t kr = 0; kr < k; ++kr)
            for (std::size_t kc = 0; kc < k; ++kc, ++row) {
                double* dst = cols + row * out_h * out_w;
                for (std::size_t oh = 0; oh < out_h; ++oh) {
                    const std::ptrdiff_t ir = static_cast<std::ptrdiff_t>(oh + kr) -
                                              static_cast<std::ptrdiff_t>(pad);
                    if (ir < 0 || ir >= static_cast<std::ptrdiff_t>(h)) {
                        std::fill(dst + oh * out_w, dst + (oh + 1) * out_w, 0.0);
                        continue;
                    }
                    const double* src = img + (c * h + static_cast<std::size_t>(ir)) * w;
                    for (std::size_t ow = 0; ow < out_w; ++ow) {
                        const std::ptrdiff_t ic = static_cast<std::ptrdiff_t>(ow + kc) -
                                                  static_cast<std::ptrdiff_t>(pad);
                        dst[oh * out_w + ow] =
                            (ic < 0 || ic >= static_cast<std::ptrdiff_t>(w))
                                ? 0.0
                                : src[static_cast<std::size_t>(ic)];
                    }
                }
            }
}

inline void col2im_add(const double* cols, std::size_t in_c, std::size_t h, std::size_t w,
                       std::size_t k, std::size_t pad, double* img) {
    const std::size_t out_h = h + 2 * pad - k + 1;
    const std::size_t out_w = w + 2 * pad - k + 1;
    std::size_t row = 0;
    for (std::size_t c = 0; c < in_c; ++c)
        for (std::size_t kr = 0; kr < k; ++kr)
            for (std::size_t kc = 0; kc < k; ++kc, ++row) {
                const double* src = cols + row * out_h * out_w;
                for (std::size_t oh = 0; oh < out_h; ++oh) {
                    const std::ptrdiff_t ir = static_cast<std::ptrdiff_t>(oh + kr) -
                                              static_cast<std::ptrdiff_t>(pad);
                    if (ir < 0 || ir >= static_cast<std::ptrdiff_t>(h)) continue;
                    double* dst = img + (c * h + static_cast<std::size_t>(ir)) * w;
                    for (std::size_t ow = 0; ow < out_w; ++ow) {
                        const std::ptrdiff_t ic = static_cast<std::ptrdiff_t>(ow + kc) -
                                                  static_cast<std::ptrdiff_t>(pad);
                        if (ic >= 0 && ic < static_cast<std::ptrdiff_t>(w))
                            dst[static_cast<std::size_t>(ic)] += src[oh * out_w + ow];
                    }
                }
            }
}

// Single-image convolution via im2col + matrix product; scratch must hold
// in_c*k*k * out_h*out_w doubles.
inline void conv2d_image(const double* img, const Tensor& weight, const Tensor& bias,
                         std::size_t in_c, std::size_t h, std::size_t w, std::size_t pad,
                         double* out, double* scratch) {
    const std::size_t out_c = weight.shape[0];
    const std::size_t k = weight.shape[2];
    const std::size_t out_h = h + 2 * pad - k + 1;
    const std::size_t out_w = w + 2 * pad - k + 1;
    im2col(img, in_c, h, w, k, pad, scratch);
    gemm_nn(out_c, in_c * k * k, out_h * out_w, weight.data.data(), scratch, out);
    for (std::size_t c = 0; c < out_c; ++c) {
        const double b = bias.data[c];
        double* row = out + c * out_h * out_w;
        for (std::size_t i = 0; i < out_h * out_w; ++i) row[i] += b;
    }
}

// 2x2 stride-2 max pool with ceil semantics: a trailing odd row/column forms
// its own window.  argmax records the flat in-plane index of each winner.
inline void maxpool2(const double* in, std::size_t channels, std::size_t h, std::size_t w,
                     double* out, std::int32_t* argmax) {
    const std::size_t ph = (h + 1) / 2, pw = (w + 1) / 2;
    for (std::size_t c = 0; c < channels; ++c) {
        const double* plane = in + c * h * w;
        double* po = out + c * ph * pw;
        std::int32_t* pa = argmax + c * ph * pw;
        for (std::size_t r = 0; r < ph; ++r)
            for (std::size_t col = 0; col < pw; ++col) {
                double best = -1.0;
                std::int32_t best_i = -1;
                for (std::size_t dr = 0; dr < 2 && 2 * r + dr < h; ++dr)
                    for (std::size_t dc = 0; dc < 2 && 2 * col + dc < w; ++dc) {
                        const std::size_t idx = (2 * r + dr) * w + (2 * col + dc);
                        if (best_i < 0 || in[c * h * w + idx] > best) {
                            best = plane[idx];
                            best_i = static_cast<std::int32_t>(idx);
                        }
                    }
                po[r * pw + col] = best;
                pa[r * pw + col] = best_i;
            }
    }
}

inline void maxpool2_backward(const double* dout, std::size_t channels, std::size_t h,
                              std::size_t w, const std::int32_t* argmax, double* din) {
    const std::size_t ph = (h + 1) / 2, pw = (w + 1) / 2;
    std::fill(din, din + channels * h * w, 0.0);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < ph * pw; ++i)
            din[c * h * w + static_cast<std::size_t>(argmax[c * ph * pw + i])] +=
                dout[c * ph * pw + i];
}

// ---------------------------------------------------------------------------
// Forward pass.
// ---------------------------------------------------------------------------

struct ForwardCache {
    std::size_t n = 0;
    std::vector<Tensor> conv_z;                      // pre-SeLU conv outputs
    std::vector<Tensor> conv_p;                      // post SeLU+pool
    std::vector<std::vector<std::int32_t>> pool_arg; // per conv layer
    std::vector<Tensor> fc_u;                        // pre-SeLU, hidden fc + embed
    std::vector<Tensor> fc_h;                        // post-SeLU (last = embeddings)
    Tensor logits;
    Tensor probs;
};

struct ForwardResult {
    Tensor embeddings; // [N, E]
    Tensor probs;      // [N, C]
};

inline void require_finite(const Tensor& t, const std::string& layer) {
    double sum = 0.0;
    for (double v : t.data) sum += v;
    if (!std::isfinite(sum))
        throw Error("non-finite activation in layer " + layer);
}

inline ForwardResult forward(const ModelParams& params, const Tensor& batch,
                             ForwardCache* cache_out = nullptr) {
    const NetworkConfig& cfg = params.config;
    if (batch.shape.size() != 4 || batch.shape[1] != cfg.in_channels ||
        batch.shape[2] != cfg.in_h || batch.shape[3] != cfg.in_w)
        throw ShapeError("forward: batch shape " + batch.shape_str() + " does not match input " +
                         std::to_string(cfg.in_channels) + "x" + std::to_string(cfg.in_h) + "x" +
                         std::to_string(cfg.in_w));
    const std::size_t n = batch.shape[0];

    ForwardCache local;
    ForwardCache& cache = cache_out ? *cache_out : local;
    cache = ForwardCache{};
    cache.n = n;

    const auto dims = cfg.conv_dims();
    std::vector<double> scratch;

    const Tensor* cur = &batch;
    for (std::size_t l = 0; l < cfg.convs.size(); ++l) {
        const auto& cs = cfg.convs[l];
        const auto& d = dims[l];
        Tensor z({n, cs.out_channels, d.out_h, d.out_w});
        Tensor p({n, cs.out_channels, d.pool_h, d.pool_w});
        std::vector<std::int32_t> arg(n * cs.out_channels * d.pool_h * d.pool_w);
        scratch.resize(d.in_c * cs.kernel * cs.kernel * d.out_h * d.out_w);

        const std::size_t in_sz = d.in_c * d.in_h * d.in_w;
        const std::size_t z_sz = cs.out_channels * d.out_h * d.out_w;
        const std::size_t p_sz = cs.out_channels * d.pool_h * d.pool_w;
        std::vector<double> act(z_sz);
        for (std::size_t i = 0; i < n; ++i) {
            double* zi = z.data.data() + i * z_sz;
            conv2d_image(cur->data.data() + i * in_sz, params.weights[l], params.biases[l],
                         d.in_c, d.in_h, d.in_w, cs.padding, zi, scratch.data());
            for (std::size_t j = 0; j < z_sz; ++j) act[j] = selu(zi[j]);
            maxpool2(act.data(), cs.out_channels, d.out_h, d.out_w, p.data.data() + i * p_sz,
                     arg.data() + i * p_sz);
        }
        require_finite(z, cfg.layer_name(l));
        cache.conv_z.push_back(std::move(z));
        cache.pool_arg.push_back(std::move(arg));
        cache.conv_p.push_back(std::move(p));
        cur = &cache.conv_p.back();
    }

    // Flatten: each image's CHW block is already contiguous.
    const std::size_t flat = cfg.flatten_dim();
    Tensor x({n, flat});
    std::copy(cur->data.begin(), cur->data.end(), x.data.begin());

    const std::size_t n_conv = cfg.convs.size();
    Tensor* prev = &x;
    for (std::size_t f = 0; f <= cfg.fc_widths.size(); ++f) {
        const std::size_t li = n_conv + f;
        const Tensor& w = params.weights[li];
        Tensor u({n, w.shape[1]});
        gemm_nn(n, w.shape[0], w.shape[1], prev->data.data(), w.data.data(), u.data.data());
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w.shape[1]; ++j)
                u.data[i * w.shape[1] + j] += params.biases[li].data[j];
        require_finite(u, cfg.layer_name(li));
        Tensor h_act = u;
        for (auto& v : h_act.data) v = selu(v);
        cache.fc_u.push_back(std::move(u));
        cache.fc_h.push_back(std::move(h_act));
        prev = &cache.fc_h.back();
    }

    // Head: logits from the embeddings, sigmoid probabilities.
    const std::size_t li = cfg.layer_count() - 1;
    const Tensor& wh = params.weights[li];
    Tensor logits({n, cfg.num_labels});
    gemm_nn(n, wh.shape[0], wh.shape[1], prev->data.data(), wh.data.data(), logits.data.data());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < cfg.num_labels; ++j)
            logits.data[i * cfg.num_labels + j] += params.biases[li].data[j];
    require_finite(logits, "head");
    Tensor probs = logits;
    for (auto& v : probs.data) v = sigmoid(v);

    cache.logits = logits;
    cache.probs = probs;

    ForwardResult res;
    res.embeddings = cache.fc_h.back();
    res.probs = std::move(probs);
    return res;
}

// ---------------------------------------------------------------------------
// Loss: mean binary cross-entropy over all N*C cells, probabilities clipped
// away from {0,1} before the logs.
// ---------------------------------------------------------------------------

inline constexpr double kProbClip = 1e-7;

inline double multi_label_soft_margin_loss(const Tensor& probs, const Tensor& labels) {
    require_same_shape(probs, labels, "loss");
    if (probs.numel() == 0) throw ValueError("loss: empty inputs");
    double sum = 0.0;
    for (std::size_t i = 0; i < probs.numel(); ++i) {
        const double p = std::clamp(probs.data[i], kProbClip, 1.0 - kProbClip);
        const double y = labels.data[i];
        sum += y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    }
    return -sum / static_cast<double>(probs.numel());
}

// d loss / d logit.  Inside the clip range this is (p - y)/(N*C); outside it
// the clipped loss is locally constant, so the gradient is exactly zero.
inline Tensor loss_logit_grad(const Tensor& probs, const Tensor& labels) {
    require_same_shape(probs, labels, "loss grad");
    Tensor g = probs;
    const double scale = 1.0 / static_cast<double>(probs.numel());
    for (std::size_t i = 0; i < probs.numel(); ++i) {
        const double p = probs.data[i];
        g.data[i] = (p < kProbClip || p > 1.0 - kProbClip)
                        ? 0.0
                        : (p - labels.data[i]) * scale;
    }
    return g;
}

// ---------------------------------------------------------------------------
// Backward pass.
// ---------------------------------------------------------------------------

struct Grads {
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;

    static Grads zeros_like(const ModelParams& p) {
        Grads g;
        for (const auto& w : p.weights) g.weights.push_back(Tensor(w.shape));
        for (const auto& b : p.biases) g.biases.push_back(Tensor(b.shape));
        return g;
    }
};

inline Grads backward(const ModelParams& params, const Tensor& batch, const Tensor& labels,
                      const ForwardCache& cache) {
    const NetworkConfig& cfg = params.config;
    const std::size_t n = cache.n;
    Grads g = Grads::zeros_like(params);

    // Head.
    const std::size_t head = cfg.layer_count() - 1;
    Tensor dz = loss_logit_grad(cache.probs, labels); // [N, C]
    const Tensor& emb = cache.fc_h.back();            // [N, E]
    gemm_tn(cfg.embedding_dim, n, cfg.num_labels, emb.data.data(), dz.data.data(),
            g.weights[head].data.data());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < cfg.num_labels; ++j)
            g.biases[head].data[j] += dz.data[i * cfg.num_labels + j];

    // Through the fc chain (embedding layer first, back to the flatten).
    const std::size_t n_conv = cfg.convs.size();
    const std::size_t n_fc = cfg.fc_widths.size() + 1; // hidden + embedding layer
    Tensor dh({n, cfg.embedding_dim});
    gemm_nt(n, cfg.num_labels, cfg.embedding_dim, dz.data.data(),
            params.weights[head].data.data(), dh.data.data());

    Tensor dx; // gradient w.r.t. the flattened conv output
    for (std::size_t f = n_fc; f-- > 0;) {
        const std::size_t li = n_conv + f;
        const Tensor& u = cache.fc_u[f];
        const std::size_t width = u.shape[1];
        Tensor du({n, width});
        for (std::size_t i = 0; i < n * width; ++i)
            du.data[i] = dh.data[i] * selu_grad(u.data[i]);

        // Input to this layer: previous fc activation, or the flatten.
        const std::size_t in_w = params.weights[li].shape[0];
        const double* x_in;
        if (f > 0) {
            x_in = cache.fc_h[f - 1].data.data();
        } else if (n_conv > 0) {
            x_in = cache.conv_p.back().data.data();
        } else {
            x_in = batch.data.data();
        }
        gemm_tn(in_w, n, width, x_in, du.data.data(), g.weights[li].data.data());
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < width; ++j) g.biases[li].data[j] += du.data[i * width + j];

        Tensor dprev({n, in_w});
        gemm_nt(n, width, in_w, du.data.data(), params.weights[li].data.data(),
                dprev.data.data());
        dh = std::move(dprev);
    }
    dx = std::move(dh); // [n, flatten_dim]

    if (n_conv == 0) return g;

    // Conv stack, image by image so accumulation order is fixed.
    const auto dims = cfg.conv_dims();
    std::vector<double> scratch, dcols, dpool, dz_conv, dinput;
    for (std::size_t i = 0; i < n; ++i) {
        // Gradient flowing into the pooled output of the last conv block.
        const std::size_t last_sz = cfg.flatten_dim();
        dpool.assign(dx.data.data() + i * last_sz, dx.data.data() + (i + 1) * last_sz);

        for (std::size_t l = n_conv; l-- > 0;) {
            const auto& cs = cfg.convs[l];
            const auto& d = dims[l];
            const std::size_t z_sz = cs.out_channels * d.out_h * d.out_w;
            const std::size_t p_sz = cs.out_channels * d.pool_h * d.pool_w;
            const std::size_t in_sz = d.in_c * d.in_h * d.in_w;
            const std::size_t kdim = d.in_c * cs.kernel * cs.kernel;

            // Pool backward, then SeLU backward.
            dz_conv.resize(z_sz);
            maxpool2_backward(dpool.data(), cs.out_channels, d.out_h, d.out_w,
                              cache.pool_arg[l].data() + i * p_sz, dz_conv.data());
            const double* z = cache.conv_z[l].data.data() + i * z_sz;
            for (std::size_t j = 0; j < z_sz; ++j) dz_conv[j] *= selu_grad(z[j]);

            // Recover this layer's im2col matrix from its stored input.
            const double* input = l == 0 ? batch.data.data() + i * in_sz
                                         : cache.conv_p[l - 1].data.data() + i * in_sz;
            scratch.resize(kdim * d.out_h * d.out_w);
            im2col(input, d.in_c, d.in_h, d.in_w, cs.kernel, cs.padding, scratch.data());

            gemm_nt(cs.out_channels, d.out_h * d.out_w, kdim, dz_conv.data(), scratch.data(),
                    g.weights[l].data.data(), /*accumulate=*/true);
            for (std::size_t c = 0; c < cs.out_channels; ++c) {
                double s = 0.0;
                for (std::size_t j = 0; j < d.out_h * d.out_w; ++j)
                    s += dz_conv[c * d.out_h * d.out_w + j];
                g.biases[l].data[c] += s;
            }

            if (l > 0) {
                dcols.resize(kdim * d.out_h * d.out_w);
                gemm_tn(kdim, cs.out_channels, d.out_h * d.out_w,
                        params.weights[l].data.data(), dz_conv.data(), dcols.data());
                dinput.assign(in_sz, 0.0);
                col2im_add(dcols.data(), d.in_c, d.in_h, d.in_w, cs.kernel, cs.padding,
                           dinput.data());
                dpool = dinput;
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Adam with bias correction.
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<Tensor> m_w, v_w, m_b, v_b;
    std::int64_t t = 0;

    static AdamState zeros_like(const ModelParams& p) {
        AdamState s;
        for (const auto& w : p.weights) {
            s.m_w.push_back(Tensor(w.shape));
            s.v_w.push_back(Tensor(w.shape));
        }
        for (const auto& b : p.biases) {
            s.m_b.push_back(Tensor(b.shape));
            s.v_b.push_back(Tensor(b.shape));
        }
        return s;
    }
};

inline void adam_step(ModelParams& params, const Grads& grads, AdamState& state, double lr,
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    ++state.t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    auto update = [&](Tensor& p, const Tensor& g, Tensor& m, Tensor& v) {
        for (std::size_t i = 0; i < p.numel(); ++i) {
            m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g.data[i];
            v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g.data[i] * g.data[i];
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    };
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        update(params.weights[l], grads.weights[l], state.m_w[l], state.v_w[l]);
        update(params.biases[l], grads.biases[l], state.m_b[l], state.v_b[l]);
    }
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::size_t batch_size = 64;
    std::size_t epochs = 20;
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    double split = 0.7;       // train fraction of the corpus
    double fraction = 1.0;    // nested subset of the train half actually used
    bool rotate_augment = false;
    double threshold = 0.5;

    void validate() const {
        if (batch_size == 0) throw ValueError("train: batch_size must be >= 1");
        if (!(learning_rate > 0.0)) throw ValueError("train: learning rate must be positive");
        if (!(split > 0.0 && split < 1.0)) throw ValueError("train: split must be in (0,1)");
        if (!(fraction > 0.0 && fraction <= 1.0)) throw ValueError("train: fraction in (0,1]");
        if (!(threshold > 0.0 && threshold < 1.0)) throw ValueError("train: threshold in (0,1)");
    }

    json to_json() const {
        return json{{"batch_size", batch_size}, {"epochs", epochs},
                    {"learning_rate", learning_rate}, {"beta1", beta1}, {"beta2", beta2},
                    {"adam_eps", adam_eps}, {"seed", seed}, {"split", split},
                    {"fraction", fraction}, {"rotate_augment", rotate_augment},
                    {"threshold", threshold}};
    }
};

struct EpochLog {
    std::size_t epoch = 0; // 1-based
    double loss = 0.0;
    double precision = 0.0, recall = 0.0, f1 = 0.0, mcc = 0.0;
};

inline void write_training_log(const std::filesystem::path& path,
                               const std::vector<EpochLog>& log) {
    std::vector<json> lines;
    for (const auto& e : log)
        lines.push_back(json{{"epoch", e.epoch}, {"loss", e.loss}, {"precision", e.precision},
                             {"recall", e.recall}, {"f1", e.f1}, {"mcc", e.mcc}});
    write_jsonl(path, lines);
}

// Deterministic corpus split: one seeded shuffle, the first split-fraction
// slice trains, the rest tests.  The "fraction" knob then keeps only a prefix
// of the train slice, so smaller fractions are strict subsets of larger ones
// and the test slice never moves.
struct CorpusSplit {
    std::vector<std::size_t> train, test;
};

inline CorpusSplit split_corpus(std::size_t n, double split, double fraction,
                                std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng = Rng::derive(seed, 11);
    rng.shuffle(idx);
    const auto n_train = static_cast<std::size_t>(std::llround(split * static_cast<double>(n)));
    const auto n_used = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(n_train) - 1e-9));
    CorpusSplit s;
    s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::max<std::size_t>(
                                                  1, std::min(n_used, n_train))));
    s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    return s;
}

inline Tensor labels_to_tensor(const std::vector<MetaLabel>& labels,
                               const std::vector<std::size_t>& idx, std::size_t num_labels) {
    Tensor t({idx.size(), num_labels});
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t c = 0; c < num_labels; ++c)
            t.data[i * num_labels + c] = labels[idx[i]].bits[c];
    return t;
}

inline Tensor assemble_batch(const TileCorpus& corpus, const std::vector<std::size_t>& idx,
                             const NetworkConfig& cfg, Rng* rotate_rng = nullptr) {
    Tensor batch({idx.size(), cfg.in_channels, cfg.in_h, cfg.in_w});
    const std::size_t img_sz = cfg.in_channels * cfg.in_h * cfg.in_w;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const TileImage* tile = &corpus.tiles[idx[i]];
        TileImage rotated;
        if (rotate_rng) {
            const int turns = static_cast<int>(rotate_rng->below(4));
            if (turns != 0) {
                rotated = rotate_tile(*tile, turns);
                tile = &rotated;
            }
        }
        if (tile->size != cfg.in_h || tile->pixels.size() != img_sz)
            throw ShapeError("tile size does not match network input");
        std::copy(tile->pixels.begin(), tile->pixels.end(), batch.data.begin() + i * img_sz);
    }
    return batch;
}

struct LabelPrediction {
    Tensor probs;                    // [N, C]
    std::vector<std::uint8_t> bits;  // N*C, 1 iff prob >= threshold
};

inline LabelPrediction predict_labels(const ModelParams& params, const TileCorpus& corpus,
                                      const std::vector<std::size_t>& idx,
                                      double threshold = 0.5, std::size_t batch_size = 64) {
    LabelPrediction out;
    const std::size_t c = params.config.num_labels;
    out.probs = Tensor({idx.size(), c});
    out.bits.assign(idx.size() * c, 0);
    for (std::size_t start = 0; start < idx.size(); start += batch_size) {
        const std::size_t stop = std::min(idx.size(), start + batch_size);
        std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                       idx.begin() + static_cast<std::ptrdiff_t>(stop));
        Tensor batch = assemble_batch(corpus, chunk, params.config);
        ForwardResult res = forward(params, batch);
        std::copy(res.probs.data.begin(), res.probs.data.end(),
                  out.probs.data.begin() + start * c);
    }
    for (std::size_t i = 0; i < out.bits.size(); ++i)
        out.bits[i] = out.probs.data[i] >= threshold ? 1 : 0;
    return out;
}

struct TrainResult {
    ModelParams params;
    std::vector<EpochLog> log;
    CorpusSplit split;
};

inline TrainResult train(const TileCorpus& corpus, const std::vector<MetaLabel>& labels,
                         const NetworkConfig& net_cfg, const TrainConfig& cfg) {
    cfg.validate();
    net_cfg.validate();
    if (corpus.size() == 0) throw ValueError("train: empty corpus");
    if (corpus.size() != labels.size())
        throw ValueError("train: corpus and labels lengths differ");

    TrainResult result;
    result.split = split_corpus(corpus.size(), cfg.split, cfg.fraction, cfg.seed);
    result.params = init_params(net_cfg, Rng::mix_seed(cfg.seed, 1));
    AdamState adam = AdamState::zeros_like(result.params);

    std::vector<std::size_t> order = result.split.train;
    ForwardCache cache;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = Rng::derive(cfg.seed, 1000 + epoch);
        shuffle_rng.shuffle(order);
        Rng rotate_rng = Rng::derive(cfg.seed, 2000 + epoch);

        double loss_sum = 0.0;
        std::size_t cell_count = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            std::vector<std::size_t> chunk(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(stop));
            Tensor batch = assemble_batch(corpus, chunk, net_cfg,
                                          cfg.rotate_augment ? &rotate_rng : nullptr);
            Tensor y = labels_to_tensor(labels, chunk, net_cfg.num_labels);
            forward(result.params, batch, &cache);
            const double loss = multi_label_soft_margin_loss(cache.probs, y);
            if (!std::isfinite(loss))
                throw Error("training diverged at epoch " + std::to_string(epoch + 1) +
                            ", batch " + std::to_string(start / cfg.batch_size));
            loss_sum += loss * static_cast<double>(y.numel());
            cell_count += y.numel();
            Grads g = backward(result.params, batch, y, cache);
            adam_step(result.params, g, adam, cfg.learning_rate, cfg.beta1, cfg.beta2,
                      cfg.adam_eps);
        }

        EpochLog entry;
        entry.epoch = epoch + 1;
        entry.loss = loss_sum / static_cast<double>(cell_count);
        if (!result.split.test.empty()) {
            auto pred = predict_labels(result.params, corpus, result.split.test, cfg.threshold,
                                       cfg.batch_size);
            Tensor y = labels_to_tensor(labels, result.split.test, net_cfg.num_labels);
            std::vector<std::uint8_t> truth(y.numel());
            for (std::size_t i = 0; i < y.numel(); ++i)
                truth[i] = static_cast<std::uint8_t>(y.data[i]);
            auto rep = multilabel_aggregate(pred.bits, truth, net_cfg.num_labels);
            entry.precision = rep.precision;
            entry.recall = rep.recall;
            entry.f1 = rep.f1;
            entry.mcc = rep.mcc;
        }
        result.log.push_back(entry);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Statistical baselines over training label frequencies.
// ---------------------------------------------------------------------------

struct BaselinePredictor {
    enum class Mode { bernoulli, majority };

    std::vector<double> means; // per class
    Mode mode = Mode::bernoulli;
    std::uint64_t seed = 0;

    std::vector<std::uint8_t> predict(std::size_t n) const {
        std::vector<std::uint8_t> bits(n * means.size(), 0);
        Rng rng(seed);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < means.size(); ++c) {
                if (mode == Mode::majority)
                    bits[i * means.size() + c] = means[c] >= 0.5 ? 1 : 0;
                else
                    bits[i * means.size() + c] = rng.uniform() < means[c] ? 1 : 0;
            }
        return bits;
    }
};

inline BaselinePredictor statistical_baseline(const std::vector<MetaLabel>& train_labels,
                                              BaselinePredictor::Mode mode,
                                              std::uint64_t seed = 0) {
    if (train_labels.empty()) throw ValueError("baseline: empty training labels");
    BaselinePredictor b;
    b.mode = mode;
    b.seed = seed;
    b.means.assign(kLabelCount, 0.0);
    for (const auto& y : train_labels)
        for (std::size_t c = 0; c < kLabelCount; ++c) b.means[c] += y.bits[c];
    for (auto& m : b.means) m /= static_cast<double>(train_labels.size());
    return b;
}

// ---------------------------------------------------------------------------
// Gradient verification against central finite differences.
// ---------------------------------------------------------------------------

inline Grads analytic_grads(const ModelParams& params, const Tensor& batch,
                            const Tensor& labels) {
    ForwardCache cache;
    forward(params, batch, &cache);
    return backward(params, batch, labels, cache);
}

inline Grads fd_grads(const ModelParams& params, const Tensor& batch, const Tensor& labels,
                      double h = 1e-5) {
    ModelParams p = params;
    Grads g = Grads::zeros_like(params);
    auto loss_at = [&]() {
        ForwardResult r = forward(p, batch);
        return multi_label_soft_margin_loss(r.probs, labels);
    };
    auto probe = [&](Tensor& t, Tensor& out) {
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double orig = t.data[i];
            t.data[i] = orig + h;
            const double lp = loss_at();
            t.data[i] = orig - h;
            const double lm = loss_at();
            t.data[i] = orig;
            out.data[i] = (lp - lm) / (2.0 * h);
        }
    };
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        probe(p.weights[l], g.weights[l]);
        probe(p.biases[l], g.biases[l]);
    }
    return g;
}

struct GradCheckLayer {
    std::string name;
    double max_rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckLayer> layers;
    double max_rel_error = 0.0;
    double threshold = 1e-4;
    std::vector<std::string> flagged;
};

inline GradCheckReport compare_grads(const NetworkConfig& cfg, const Grads& analytic,
                                     const Grads& fd, double threshold = 1e-4) {
    GradCheckReport rep;
    rep.threshold = threshold;
    auto tensor_err = [](const Tensor& a, const Tensor& f) {
        double worst = 0.0;
        for (std::size_t i = 0; i < a.numel(); ++i) {
            const double denom = std::max({std::abs(a.data[i]), std::abs(f.data[i]), 1e-6});
            worst = std::max(worst, std::abs(a.data[i] - f.data[i]) / denom);
        }
        return worst;
    };
    for (std::size_t l = 0; l < analytic.weights.size(); ++l) {
        GradCheckLayer layer;
        layer.name = cfg.layer_name(l);
        layer.max_rel_error = std::max(tensor_err(analytic.weights[l], fd.weights[l]),
                                       tensor_err(analytic.biases[l], fd.biases[l]));
        rep.max_rel_error = std::max(rep.max_rel_error, layer.max_rel_error);
        if (layer.max_rel_error > threshold) rep.flagged.push_back(layer.name);
        rep.layers.push_back(std::move(layer));
    }
    return rep;
}

inline GradCheckReport grad_check(const NetworkConfig& cfg, std::uint64_t seed,
                                  std::size_t batch_n = 3, double h = 1e-5) {
    cfg.validate();
    ModelParams params = init_params(cfg, seed);
    Rng in_rng = Rng::derive(seed, 1);
    Tensor batch({batch_n, cfg.in_channels, cfg.in_h, cfg.in_w});
    for (auto& v : batch.data) v = in_rng.uniform();
    Rng lab_rng = Rng::derive(seed, 2);
    Tensor labels({batch_n, cfg.num_labels});
    for (auto& v : labels.data) v = lab_rng.uniform() < 0.5 ? 1.0 : 0.0;
    return compare_grads(cfg, analytic_grads(params, batch, labels),
                         fd_grads(params, batch, labels, h));
}

// ---------------------------------------------------------------------------
// Checkpoint: magic, version, length-prefixed config JSON, then every weight
// and bias tensor as little-endian f64 in declaration order.
// ---------------------------------------------------------------------------

inline constexpr char kModelMagic[4] = {'E', 'S', 'L', 'M'};
inline constexpr std::uint32_t kModelVersion = 1;

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
    std::string buf;
    buf.append(kModelMagic, 4);
    put_u32(buf, kModelVersion);
    json cfg = params.config.to_json();
    cfg["init_seed"] = params.init_seed;
    const std::string cfg_text = cfg.dump();
    put_u32(buf, static_cast<std::uint32_t>(cfg_text.size()));
    buf += cfg_text;
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        for (double v : params.weights[l].data) put_f64(buf, v);
        for (double v : params.biases[l].data) put_f64(buf, v);
    }
    write_file(path, buf);
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
    const std::string buf = read_file(path);
    ByteReader rd(buf, path.string());
    if (rd.bytes(4) != std::string(kModelMagic, 4))
        throw FormatError(path.string() + ": bad magic (not a model checkpoint)");
    const std::uint32_t version = rd.u32();
    if (version != kModelVersion)
        throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
    const std::uint32_t cfg_len = rd.u32();
    json cfg = parse_json(rd.bytes(cfg_len), path.string());

    ModelParams params = init_params(NetworkConfig::from_json(cfg), 0);
    params.init_seed = cfg.value("init_seed", std::uint64_t{0});
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        for (auto& v : params.weights[l].data) v = rd.f64();
        for (auto& v : params.biases[l].data) v = rd.f64();
    }
    if (!rd.at_end())
        throw FormatError(path.string() + ": trailing bytes at offset " + std::to_string(rd.pos));
    return params;
}

} // namespace esle
