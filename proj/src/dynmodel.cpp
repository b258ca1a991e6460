#include "gazekit/dynmodel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include "gazekit/error.hpp"
#include "gazekit/rng.hpp"
#include "gazekit/textio.hpp"

namespace gazekit::dyn {

ImageTensor::ImageTensor(int channels, int height, int width, double fill)
    : c(channels), h(height), w(width),
      data(static_cast<std::size_t>(channels) * height * width, fill) {}

ImageTensor to_tensor(const Image& img) {
    ImageTensor t(3, img.h, img.w);
    for (int ch = 0; ch < 3; ++ch) {
        const int src = img.channels == 3 ? ch : 0;
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) t.at(ch, y, x) = img.at(x, y, src) / 255.0;
    }
    return t;
}

ImageTensor assemble_pair(const ImageTensor& pre_frame, const ImageTensor& post_frame) {
    if (pre_frame.c != 3 || post_frame.c != 3)
        throw PreconditionError("pair frames must have 3 channels");
    if (pre_frame.h != post_frame.h || pre_frame.w != post_frame.w)
        throw PreconditionError("pair frames differ in size");
    ImageTensor out(6, pre_frame.h, pre_frame.w);
    std::copy(pre_frame.data.begin(), pre_frame.data.end(), out.data.begin());
    std::copy(post_frame.data.begin(), post_frame.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(pre_frame.data.size()));
    return out;
}

namespace {

// Source taps for resampling n_in -> n_out with half-pixel centres.
struct Tap {
    int i0 = 0;
    int i1 = 0;
    double frac = 0;
};

std::vector<Tap> resample_taps(int n_in, int n_out) {
    std::vector<Tap> taps(static_cast<std::size_t>(n_out));
    const double scale = static_cast<double>(n_in) / n_out;
    for (int o = 0; o < n_out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        Tap t;
        t.i0 = std::min(static_cast<int>(src), n_in - 1);
        t.i1 = std::min(t.i0 + 1, n_in - 1);
        t.frac = src - t.i0;
        taps[static_cast<std::size_t>(o)] = t;
    }
    return taps;
}

void resample_plane(const double* in, int ih, int iw, double* out, int oh, int ow) {
    const auto ty = resample_taps(ih, oh);
    const auto tx = resample_taps(iw, ow);
    for (int y = 0; y < oh; ++y) {
        const auto& a = ty[static_cast<std::size_t>(y)];
        for (int x = 0; x < ow; ++x) {
            const auto& b = tx[static_cast<std::size_t>(x)];
            const double top = in[a.i0 * iw + b.i0] * (1 - b.frac) + in[a.i0 * iw + b.i1] * b.frac;
            const double bot = in[a.i1 * iw + b.i0] * (1 - b.frac) + in[a.i1 * iw + b.i1] * b.frac;
            out[y * ow + x] = top * (1 - a.frac) + bot * a.frac;
        }
    }
}

}  // namespace

ImageTensor resize_bilinear(const ImageTensor& x, int h, int w) {
    if (x.h == h && x.w == w) return x;
    ImageTensor out(x.c, h, w);
    const std::size_t in_plane = static_cast<std::size_t>(x.h) * x.w;
    const std::size_t out_plane = static_cast<std::size_t>(h) * w;
    for (int ch = 0; ch < x.c; ++ch)
        resample_plane(x.data.data() + ch * in_plane, x.h, x.w, out.data.data() + ch * out_plane,
                       h, w);
    return out;
}

SaliencyMap resize_bilinear(const SaliencyMap& m, int w, int h) {
    if (m.w == w && m.h == h) return m;
    SaliencyMap out(w, h);
    resample_plane(m.values.data(), m.h, m.w, out.values.data(), h, w);
    return out;
}

ParamGrads ParamGrads::zeros_like(const ModelParams& p) {
    ParamGrads g;
    g.reduce_w.assign(p.reduce_w.size(), 0.0);
    g.reduce_b.assign(p.reduce_b.size(), 0.0);
    g.bn_gamma.assign(p.bn_gamma.size(), 0.0);
    g.bn_beta.assign(p.bn_beta.size(), 0.0);
    g.enc1_w.assign(p.enc1_w.size(), 0.0);
    g.enc1_b.assign(p.enc1_b.size(), 0.0);
    g.enc2_w.assign(p.enc2_w.size(), 0.0);
    g.enc2_b.assign(p.enc2_b.size(), 0.0);
    g.head_w.assign(p.head_w.size(), 0.0);
    g.head_b.assign(p.head_b.size(), 0.0);
    return g;
}

ModelParams init_params(std::uint64_t seed) {
    Rng rng(seed);
    auto he = [&rng](std::size_t count, int fan_in) {
        std::vector<double> v(count);
        const double sd = std::sqrt(2.0 / fan_in);
        for (double& x : v) x = rng.normal(0.0, sd);
        return v;
    };
    auto uniform_bias = [&rng](std::size_t count, int fan_in) {
        std::vector<double> v(count);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& x : v) x = rng.uniform(-bound, bound);
        return v;
    };
    ModelParams p;
    p.reduce_w = he(kChannels * kReduceIn, kReduceIn);
    p.reduce_b = uniform_bias(kChannels, kReduceIn);
    p.bn_gamma.assign(kChannels, 1.0);
    p.bn_beta.assign(kChannels, 0.0);
    p.bn_running_mean.assign(kChannels, 0.0);
    p.bn_running_var.assign(kChannels, 1.0);
    p.enc1_w = he(kEnc1 * kChannels * 9, kChannels * 9);
    p.enc1_b = uniform_bias(kEnc1, kChannels * 9);
    p.enc2_w = he(kEnc2 * kEnc1 * 9, kEnc1 * 9);
    p.enc2_b = uniform_bias(kEnc2, kEnc1 * 9);
    p.head_w = he(kEnc2, kEnc2);
    p.head_b = uniform_bias(1, kEnc2);
    return p;
}

void LossWeights::validate() const {
    if (!(w_kl > 0)) throw ValidationError("w_kl must be positive");
    if (!std::isfinite(w_cc) || !std::isfinite(w_nss))
        throw ValidationError("loss weights must be finite");
}

// ---------------------------------------------------------------------------
// Layers. All tensors are planar [channel][y][x].

namespace {

void conv3x3_forward(const std::vector<double>& in, int cin, int h, int w,
                     const std::vector<double>& wt, const std::vector<double>& bias, int cout,
                     std::vector<double>& out) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    out.assign(static_cast<std::size_t>(cout) * plane, 0.0);
    for (int o = 0; o < cout; ++o) {
        double* dst = out.data() + o * plane;
        std::fill(dst, dst + plane, bias[static_cast<std::size_t>(o)]);
        for (int i = 0; i < cin; ++i) {
            const double* src = in.data() + i * plane;
            const double* k = wt.data() + (static_cast<std::size_t>(o) * cin + i) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const double kv = k[ky * 3 + kx];
                    const int dy = ky - 1, dx = kx - 1;
                    const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    for (int y = y0; y < y1; ++y) {
                        const double* s = src + (y + dy) * w + dx;
                        double* d = dst + y * w;
                        for (int x = x0; x < x1; ++x) d[x] += kv * s[x];
                    }
                }
            }
        }
    }
}

// Accumulates weight/bias gradients and, when din is non-null, the input gradient.
void conv3x3_backward(const std::vector<double>& in, int cin, int h, int w,
                      const std::vector<double>& wt, int cout, const std::vector<double>& dout,
                      std::vector<double>& dwt, std::vector<double>& dbias,
                      std::vector<double>* din) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    if (din) din->assign(static_cast<std::size_t>(cin) * plane, 0.0);
    for (int o = 0; o < cout; ++o) {
        const double* g = dout.data() + o * plane;
        double bsum = 0;
        for (std::size_t j = 0; j < plane; ++j) bsum += g[j];
        dbias[static_cast<std::size_t>(o)] += bsum;
        for (int i = 0; i < cin; ++i) {
            const double* src = in.data() + i * plane;
            const std::size_t kbase = (static_cast<std::size_t>(o) * cin + i) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const int dy = ky - 1, dx = kx - 1;
                    const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    const double kv = wt[kbase + ky * 3 + kx];
                    double acc = 0;
                    for (int y = y0; y < y1; ++y) {
                        const double* s = src + (y + dy) * w + dx;
                        const double* gg = g + y * w;
                        for (int x = x0; x < x1; ++x) acc += gg[x] * s[x];
                    }
                    dwt[kbase + ky * 3 + kx] += acc;
                    if (din) {
                        double* di = din->data() + i * plane;
                        for (int y = y0; y < y1; ++y) {
                            double* d = di + (y + dy) * w + dx;
                            const double* gg = g + y * w;
                            for (int x = x0; x < x1; ++x) d[x] += kv * gg[x];
                        }
                    }
                }
            }
        }
    }
}

void relu_inplace(std::vector<double>& v) {
    for (double& x : v) x = x > 0 ? x : 0.0;
}

void maxpool2_forward(const std::vector<double>& in, int c, int h, int w,
                      std::vector<double>& out, std::vector<std::uint32_t>& arg) {
    const int oh = h / 2, ow = w / 2;
    out.assign(static_cast<std::size_t>(c) * oh * ow, 0.0);
    arg.assign(out.size(), 0);
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                std::size_t best = (static_cast<std::size_t>(ch) * h + 2 * y) * w + 2 * x;
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const std::size_t idx =
                            (static_cast<std::size_t>(ch) * h + 2 * y + dy) * w + 2 * x + dx;
                        if (in[idx] > in[best]) best = idx;
                    }
                }
                const std::size_t o = (static_cast<std::size_t>(ch) * oh + y) * ow + x;
                out[o] = in[best];
                arg[o] = static_cast<std::uint32_t>(best);
            }
        }
    }
}

void upsample4_forward(const std::vector<double>& in, int c, int h, int w,
                       std::vector<double>& out) {
    const int oh = 4 * h, ow = 4 * w;
    out.assign(static_cast<std::size_t>(c) * oh * ow, 0.0);
    for (int ch = 0; ch < c; ++ch)
        resample_plane(in.data() + static_cast<std::size_t>(ch) * h * w, h, w,
                       out.data() + static_cast<std::size_t>(ch) * oh * ow, oh, ow);
}

void upsample4_backward(const std::vector<double>& dout, int c, int h, int w,
                        std::vector<double>& din) {
    const int oh = 4 * h, ow = 4 * w;
    const auto ty = resample_taps(h, oh);
    const auto tx = resample_taps(w, ow);
    din.assign(static_cast<std::size_t>(c) * h * w, 0.0);
    for (int ch = 0; ch < c; ++ch) {
        const double* g = dout.data() + static_cast<std::size_t>(ch) * oh * ow;
        double* d = din.data() + static_cast<std::size_t>(ch) * h * w;
        for (int y = 0; y < oh; ++y) {
            const auto& a = ty[static_cast<std::size_t>(y)];
            for (int x = 0; x < ow; ++x) {
                const auto& b = tx[static_cast<std::size_t>(x)];
                const double v = g[y * ow + x];
                d[a.i0 * w + b.i0] += v * (1 - a.frac) * (1 - b.frac);
                d[a.i0 * w + b.i1] += v * (1 - a.frac) * b.frac;
                d[a.i1 * w + b.i0] += v * a.frac * (1 - b.frac);
                d[a.i1 * w + b.i1] += v * a.frac * b.frac;
            }
        }
    }
}

double logistic(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace

struct ItemCache {
    std::vector<double> reduced;  // reduce output without its bias (or the 3-channel input)
    std::vector<double> bn_out;   // gamma * xhat + beta, pre-ReLU
    std::vector<double> a0;
    std::vector<double> c1;  // enc1 pre-activation
    std::vector<double> a1;
    std::vector<double> p1;
    std::vector<std::uint32_t> arg1;
    std::vector<double> c2;
    std::vector<double> a2;
    std::vector<double> p2;
    std::vector<std::uint32_t> arg2;
    std::vector<double> up;
    std::vector<double> out;
};

struct ForwardCache {
    Mode mode = Mode::Train;
    int n = 0;
    int in_c = 0;
    int h = 0;
    int w = 0;
    std::vector<ImageTensor> inputs;
    std::vector<ItemCache> items;
    std::vector<double> xhat;  // [item][channel][pixel]
    std::vector<double> bn_invstd;
    std::vector<double> new_running_mean;
    std::vector<double> new_running_var;
    std::vector<SaliencyMap> dpred;
    bool loss_applied = false;
};

ForwardResult forward(const ModelParams& p, std::span<const ImageTensor> batch) {
    if (batch.empty()) throw PreconditionError("empty batch");
    const int c = batch[0].c, h = batch[0].h, w = batch[0].w;
    if (c != 3 && c != 6) throw PreconditionError("input must have 3 or 6 channels");
    if (h <= 0 || w <= 0 || h % 4 != 0 || w % 4 != 0)
        throw PreconditionError("input height and width must be positive multiples of 4");
    for (const auto& x : batch) {
        if (x.c != c || x.h != h || x.w != w)
            throw PreconditionError("batch items differ in shape");
    }

    auto cache = std::make_shared<ForwardCache>();
    cache->mode = p.mode;
    cache->n = static_cast<int>(batch.size());
    cache->in_c = c;
    cache->h = h;
    cache->w = w;
    cache->inputs.assign(batch.begin(), batch.end());
    cache->items.resize(batch.size());

    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t n = batch.size();

    for (std::size_t b = 0; b < n; ++b) {
        auto& it = cache->items[b];
        const auto& x = batch[b];
        if (c == 6) {
            it.reduced.assign(kChannels * plane, 0.0);
            for (int o = 0; o < kChannels; ++o) {
                double* dst = it.reduced.data() + o * plane;
                for (int i = 0; i < kReduceIn; ++i) {
                    const double wv = p.reduce_w[static_cast<std::size_t>(o * kReduceIn + i)];
                    const double* src = x.data.data() + i * plane;
                    for (std::size_t j = 0; j < plane; ++j) dst[j] += wv * src[j];
                }
            }
        } else {
            it.reduced = x.data;
        }
    }

    // Batch normalisation.
    cache->xhat.assign(n * kChannels * plane, 0.0);
    cache->bn_invstd.assign(kChannels, 0.0);
    cache->new_running_mean = p.bn_running_mean;
    cache->new_running_var = p.bn_running_var;
    for (int ch = 0; ch < kChannels; ++ch) {
        // Batch statistics absorb the reduce bias exactly, so it only enters
        // through the running mean.
        const double bias = c == 6 ? p.reduce_b[static_cast<std::size_t>(ch)] : 0.0;
        double mean, var;
        if (p.mode == Mode::Train) {
            const double count = static_cast<double>(n * plane);
            double s = 0;
            for (std::size_t b = 0; b < n; ++b) {
                const double* r = cache->items[b].reduced.data() + ch * plane;
                for (std::size_t j = 0; j < plane; ++j) s += r[j];
            }
            mean = s / count;
            double ss = 0;
            for (std::size_t b = 0; b < n; ++b) {
                const double* r = cache->items[b].reduced.data() + ch * plane;
                for (std::size_t j = 0; j < plane; ++j) ss += (r[j] - mean) * (r[j] - mean);
            }
            var = ss / count;
            const double m = p.bn_momentum;
            const double unbiased = count > 1 ? ss / (count - 1) : var;
            cache->new_running_mean[ch] = (1 - m) * p.bn_running_mean[ch] + m * (mean + bias);
            cache->new_running_var[ch] = (1 - m) * p.bn_running_var[ch] + m * unbiased;
        } else {
            mean = p.bn_running_mean[ch] - bias;
            var = p.bn_running_var[ch];
        }
        const double invstd = 1.0 / std::sqrt(var + kBnEps);
        cache->bn_invstd[ch] = invstd;
        for (std::size_t b = 0; b < n; ++b) {
            const double* r = cache->items[b].reduced.data() + ch * plane;
            double* xh = cache->xhat.data() + (b * kChannels + ch) * plane;
            for (std::size_t j = 0; j < plane; ++j) xh[j] = (r[j] - mean) * invstd;
        }
    }

    ForwardResult res;
    res.maps.reserve(n);
    for (std::size_t b = 0; b < n; ++b) {
        auto& it = cache->items[b];
        it.bn_out.assign(kChannels * plane, 0.0);
        for (int ch = 0; ch < kChannels; ++ch) {
            const double* xh = cache->xhat.data() + (b * kChannels + ch) * plane;
            double* y = it.bn_out.data() + ch * plane;
            for (std::size_t j = 0; j < plane; ++j) y[j] = p.bn_gamma[ch] * xh[j] + p.bn_beta[ch];
        }
        it.a0 = it.bn_out;
        relu_inplace(it.a0);

        conv3x3_forward(it.a0, kChannels, h, w, p.enc1_w, p.enc1_b, kEnc1, it.c1);
        it.a1 = it.c1;
        relu_inplace(it.a1);
        maxpool2_forward(it.a1, kEnc1, h, w, it.p1, it.arg1);

        conv3x3_forward(it.p1, kEnc1, h / 2, w / 2, p.enc2_w, p.enc2_b, kEnc2, it.c2);
        it.a2 = it.c2;
        relu_inplace(it.a2);
        maxpool2_forward(it.a2, kEnc2, h / 2, w / 2, it.p2, it.arg2);

        upsample4_forward(it.p2, kEnc2, h / 4, w / 4, it.up);

        SaliencyMap map(w, h);
        it.out.assign(plane, 0.0);
        for (std::size_t j = 0; j < plane; ++j) {
            double z = p.head_b[0];
            for (int ch = 0; ch < kEnc2; ++ch) z += p.head_w[ch] * it.up[ch * plane + j];
            it.out[j] = logistic(z);
            map.values[j] = it.out[j];
        }
        res.maps.push_back(std::move(map));
    }
    res.cache = std::move(cache);
    return res;
}

SaliencyMap predict(const ModelParams& p, const ImageTensor& x) {
    auto r = forward(p, std::span<const ImageTensor>(&x, 1));
    return std::move(r.maps.front());
}

void commit_running_stats(ModelParams& p, const ForwardCache& cache) {
    if (cache.mode != Mode::Train) return;
    p.bn_running_mean = cache.new_running_mean;
    p.bn_running_var = cache.new_running_var;
}

const std::vector<double>& bn_normalized(const ForwardCache& cache) { return cache.xhat; }

// ---------------------------------------------------------------------------
// Loss.

namespace {

// Reductions run in extended precision: the finite-difference check compares
// against loss differences far below one double ulp of the loss.
using ext = long double;

struct ExtLoss {
    ext value = 0;
    SaliencyMap grad;
};

ExtLoss loss_ext(const SaliencyMap& pred, const SaliencyMap& gt, const FixationSet& fix,
                 const LossWeights& w) {
    if (pred.w != gt.w || pred.h != gt.h || pred.size() != gt.size() || pred.size() == 0)
        throw PreconditionError("prediction and ground truth differ in size");
    if (fix.w != pred.w || fix.h != pred.h)
        throw PreconditionError("fixation set differs in size");
    const std::size_t m = pred.size();
    const ext md = static_cast<ext>(m);

    ExtLoss res;
    res.grad = SaliencyMap(pred.w, pred.h);
    auto& g = res.grad.values;

    if (w.w_kl != 0) {
        ext gt_sum = 0, s = 0;
        for (std::size_t i = 0; i < m; ++i) {
            gt_sum += gt.values[i];
            s += pred.values[i];
        }
        if (!(gt_sum > 0)) throw DegenerateError("ground-truth map has no mass");
        if (!(s > 0)) throw DegenerateError("prediction has no mass");
        const ext eps = kKlEpsilon;
        ext value = 0, qp = 0;
        std::vector<ext> q(m);
        for (std::size_t i = 0; i < m; ++i) {
            const ext gi = gt.values[i] / gt_sum;
            const ext pi = pred.values[i] / s;
            const ext ratio = gi / (pi + eps);
            value += gi * std::log(ratio + eps);
            q[i] = -gi * ratio / ((ratio + eps) * (pi + eps));
            qp += q[i] * pi;
        }
        res.value += w.w_kl * value;
        for (std::size_t i = 0; i < m; ++i)
            g[i] += static_cast<double>(w.w_kl * (q[i] - qp) / s);
    }

    if (w.w_cc != 0) {
        ext mp = 0, mg = 0;
        for (std::size_t i = 0; i < m; ++i) {
            mp += pred.values[i];
            mg += gt.values[i];
        }
        mp /= md;
        mg /= md;
        ext sab = 0, saa = 0, sbb = 0;
        for (std::size_t i = 0; i < m; ++i) {
            const ext a = pred.values[i] - mp, b = gt.values[i] - mg;
            sab += a * b;
            saa += a * a;
            sbb += b * b;
        }
        if (saa == 0 || sbb == 0) throw DegenerateError("correlation undefined for a constant map");
        const ext denom = std::sqrt(saa * sbb);
        const ext r = sab / denom;
        res.value -= w.w_cc * r;
        for (std::size_t i = 0; i < m; ++i) {
            const ext a = pred.values[i] - mp, b = gt.values[i] - mg;
            g[i] -= static_cast<double>(w.w_cc * (b / denom - r * a / saa));
        }
    }

    if (w.w_nss != 0) {
        ext mu = 0;
        for (double v : pred.values) mu += v;
        mu /= md;
        ext var = 0;
        for (double v : pred.values) var += (v - mu) * (v - mu);
        const ext sd = std::sqrt(var / md);
        const ext s = sd + kNssStdOffset;
        ext fix_sum = 0;
        std::size_t k = 0;
        for (std::size_t i = 0; i < m; ++i) {
            if (fix.fixated[i]) {
                fix_sum += pred.values[i];
                ++k;
            }
        }
        if (k == 0) throw DegenerateError("NSS needs at least one fixation");
        const ext kd = static_cast<ext>(k);
        const ext a = fix_sum / kd - mu;
        res.value -= w.w_nss * a / s;
        for (std::size_t i = 0; i < m; ++i) {
            const ext da = (fix.fixated[i] ? 1 / kd : ext(0)) - 1 / md;
            const ext dsd = sd > 0 ? (pred.values[i] - mu) / (md * sd) : ext(0);
            g[i] -= static_cast<double>(w.w_nss * (da / s - a / (s * s) * dsd));
        }
    }
    return res;
}

}  // namespace

LossResult loss(const SaliencyMap& pred, const SaliencyMap& gt, const FixationSet& fix,
                const LossWeights& w) {
    auto e = loss_ext(pred, gt, fix, w);
    return LossResult{static_cast<double>(e.value), std::move(e.grad)};
}

double apply_loss(ForwardCache& cache, std::span<const SaliencyMap> gts,
                  std::span<const FixationSet> fixes, const LossWeights& w) {
    if (gts.size() != static_cast<std::size_t>(cache.n) ||
        fixes.size() != static_cast<std::size_t>(cache.n))
        throw PreconditionError("targets do not match the batch");
    cache.dpred.clear();
    double total = 0;
    const double inv_n = 1.0 / cache.n;
    for (int b = 0; b < cache.n; ++b) {
        SaliencyMap pred(cache.w, cache.h);
        pred.values = cache.items[static_cast<std::size_t>(b)].out;
        auto lr = loss(pred, gts[b], fixes[b], w);
        total += lr.value;
        for (double& v : lr.grad.values) v *= inv_n;
        cache.dpred.push_back(std::move(lr.grad));
    }
    cache.loss_applied = true;
    return total * inv_n;
}

// ---------------------------------------------------------------------------
// Backward.

ParamGrads backward(const ModelParams& p, const ForwardCache& cache, double upstream) {
    if (cache.mode != Mode::Train)
        throw PreconditionError("backward needs a train-mode forward pass");
    if (!cache.loss_applied) throw PreconditionError("apply_loss must run before backward");

    ParamGrads g = ParamGrads::zeros_like(p);
    const int h = cache.h, w = cache.w;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t n = static_cast<std::size_t>(cache.n);
    std::vector<double> dbn(n * kChannels * plane, 0.0);  // d loss / d bn_out

    std::vector<double> dz(plane), dup, dp2, da2, dp1, da1, da0;
    for (std::size_t b = 0; b < n; ++b) {
        const auto& it = cache.items[b];
        const auto& dpred = cache.dpred[b].values;
        for (std::size_t j = 0; j < plane; ++j)
            dz[j] = upstream * dpred[j] * it.out[j] * (1.0 - it.out[j]);

        // head
        dup.assign(kEnc2 * plane, 0.0);
        double hb = 0;
        for (std::size_t j = 0; j < plane; ++j) hb += dz[j];
        g.head_b[0] += hb;
        for (int ch = 0; ch < kEnc2; ++ch) {
            double acc = 0;
            const double* u = it.up.data() + ch * plane;
            double* du = dup.data() + ch * plane;
            const double hw = p.head_w[ch];
            for (std::size_t j = 0; j < plane; ++j) {
                acc += dz[j] * u[j];
                du[j] = dz[j] * hw;
            }
            g.head_w[ch] += acc;
        }

        upsample4_backward(dup, kEnc2, h / 4, w / 4, dp2);

        da2.assign(it.a2.size(), 0.0);
        for (std::size_t o = 0; o < dp2.size(); ++o) da2[it.arg2[o]] += dp2[o];
        for (std::size_t j = 0; j < da2.size(); ++j)
            if (it.c2[j] <= 0) da2[j] = 0;
        conv3x3_backward(it.p1, kEnc1, h / 2, w / 2, p.enc2_w, kEnc2, da2, g.enc2_w, g.enc2_b,
                         &dp1);

        da1.assign(it.a1.size(), 0.0);
        for (std::size_t o = 0; o < dp1.size(); ++o) da1[it.arg1[o]] += dp1[o];
        for (std::size_t j = 0; j < da1.size(); ++j)
            if (it.c1[j] <= 0) da1[j] = 0;
        conv3x3_backward(it.a0, kChannels, h, w, p.enc1_w, kEnc1, da1, g.enc1_w, g.enc1_b, &da0);

        double* d = dbn.data() + b * kChannels * plane;
        for (std::size_t j = 0; j < kChannels * plane; ++j)
            d[j] = it.bn_out[j] > 0 ? da0[j] : 0.0;
    }

    // BN: gamma/beta, then the input gradient through batch statistics.
    std::vector<double> dreduced(n * kChannels * plane, 0.0);
    const double count = static_cast<double>(n * plane);
    for (int ch = 0; ch < kChannels; ++ch) {
        double sum_dy = 0, sum_dy_xhat = 0;
        for (std::size_t b = 0; b < n; ++b) {
            const double* dy = dbn.data() + (b * kChannels + ch) * plane;
            const double* xh = cache.xhat.data() + (b * kChannels + ch) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                sum_dy += dy[j];
                sum_dy_xhat += dy[j] * xh[j];
            }
        }
        g.bn_beta[ch] += sum_dy;
        g.bn_gamma[ch] += sum_dy_xhat;
        const double gamma = p.bn_gamma[ch];
        const double k = gamma * cache.bn_invstd[ch] / count;
        for (std::size_t b = 0; b < n; ++b) {
            const double* dy = dbn.data() + (b * kChannels + ch) * plane;
            const double* xh = cache.xhat.data() + (b * kChannels + ch) * plane;
            double* dr = dreduced.data() + (b * kChannels + ch) * plane;
            for (std::size_t j = 0; j < plane; ++j)
                dr[j] = k * (count * dy[j] - sum_dy - xh[j] * sum_dy_xhat);
        }
    }

    if (cache.in_c == 6) {
        for (std::size_t b = 0; b < n; ++b) {
            const auto& x = cache.inputs[b];
            for (int o = 0; o < kChannels; ++o) {
                const double* dr = dreduced.data() + (b * kChannels + o) * plane;
                double bsum = 0;
                for (std::size_t j = 0; j < plane; ++j) bsum += dr[j];
                g.reduce_b[static_cast<std::size_t>(o)] += bsum;
                for (int i = 0; i < kReduceIn; ++i) {
                    const double* src = x.data.data() + i * plane;
                    double acc = 0;
                    for (std::size_t j = 0; j < plane; ++j) acc += dr[j] * src[j];
                    g.reduce_w[static_cast<std::size_t>(o * kReduceIn + i)] += acc;
                }
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Gradient check.

namespace {

ext single_loss(const ModelParams& p, const ImageTensor& x, const SaliencyMap& gt,
                const FixationSet& fix, const LossWeights& w) {
    return loss_ext(forward(p, std::span<const ImageTensor>(&x, 1)).maps.front(), gt, fix, w).value;
}

}  // namespace

GradCheckReport grad_check(const ModelParams& p, const ImageTensor& x, const SaliencyMap& gt,
                           const FixationSet& fix, const LossWeights& w,
                           const GradCheckOptions& opts) {
    ModelParams base = p;
    base.mode = Mode::Train;
    auto fr = forward(base, std::span<const ImageTensor>(&x, 1));
    apply_loss(*fr.cache, std::span<const SaliencyMap>(&gt, 1),
               std::span<const FixationSet>(&fix, 1), w);
    ParamGrads analytic = backward(base, *fr.cache, 1.0);
    for (double& v : analytic.enc2_w) v *= opts.enc2_corruption;

    GradCheckReport report;
    ModelParams probe = base;
    // Walk the analytic gradients and the probe parameters in lockstep.
    std::vector<std::pair<std::string_view, std::vector<double>*>> probe_arrays;
    for_each_trainable(probe, [&](std::string_view name, std::vector<double>& v) {
        probe_arrays.emplace_back(name, &v);
    });
    std::vector<const std::vector<double>*> grad_arrays;
    for_each_trainable(analytic,
                       [&](std::string_view, std::vector<double>& v) { grad_arrays.push_back(&v); });

    for (std::size_t a = 0; a < probe_arrays.size(); ++a) {
        auto& values = *probe_arrays[a].second;
        const auto& grads = *grad_arrays[a];
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double orig = values[i];
            values[i] = orig + opts.step;
            const ext up = single_loss(probe, x, gt, fix, w);
            values[i] = orig - opts.step;
            const ext down = single_loss(probe, x, gt, fix, w);
            values[i] = orig;
            const double numeric = static_cast<double>((up - down) / (2 * static_cast<ext>(opts.step)));
            const double an = grads[i];
            const double rel =
                std::abs(an - numeric) / std::max(1e-8, std::abs(an) + std::abs(numeric));
            ++report.checked;
            if (report.checked == 1 || rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = std::string(probe_arrays[a].first);
                report.worst_index = i;
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Optimisation.

AdamState AdamState::zeros_like(const ModelParams& p) {
    return AdamState{ParamGrads::zeros_like(p), ParamGrads::zeros_like(p), 0};
}

void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, long step, double lr, const AdamOptions& opts) {
    if (params.size() != grads.size() || m.size() != params.size() || v.size() != params.size())
        throw PreconditionError("ADAM buffers differ in size");
    if (step < 1) throw PreconditionError("ADAM step counter starts at 1");
    const double bc1 = 1.0 - std::pow(opts.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(opts.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = opts.beta1 * m[i] + (1.0 - opts.beta1) * grads[i];
        v[i] = opts.beta2 * v[i] + (1.0 - opts.beta2) * grads[i] * grads[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + opts.eps);
    }
}

void adam_step(ModelParams& p, const ParamGrads& g, AdamState& state, double lr,
               const AdamOptions& opts) {
    ++state.step;
    std::vector<std::vector<double>*> ps, ms, vs;
    std::vector<const std::vector<double>*> gs;
    for_each_trainable(p, [&](std::string_view, std::vector<double>& v) { ps.push_back(&v); });
    for_each_trainable(state.m, [&](std::string_view, std::vector<double>& v) { ms.push_back(&v); });
    for_each_trainable(state.v, [&](std::string_view, std::vector<double>& v) { vs.push_back(&v); });
    for_each_trainable(g, [&](std::string_view, const std::vector<double>& v) { gs.push_back(&v); });
    for (std::size_t a = 0; a < ps.size(); ++a)
        adam_update(*ps[a], *gs[a], *ms[a], *vs[a], state.step, lr, opts);
}

void TrainConfig::validate() const {
    if (!(lr0 > 0)) throw ValidationError("lr0 must be positive");
    if (!(decay_factor > 0)) throw ValidationError("decay_factor must be positive");
    if (decay_every_epochs < 1) throw ValidationError("decay_every_epochs must be >= 1");
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (batch < 1) throw ValidationError("batch must be >= 1");
    if (resolution < 4 || resolution % 4 != 0)
        throw ValidationError("resolution must be a positive multiple of 4");
}

double learning_rate(const TrainConfig& cfg, int epoch) {
    return cfg.lr0 * std::pow(cfg.decay_factor, epoch / cfg.decay_every_epochs);
}

double evaluate_loss(const ModelParams& p, std::span<const TrainSample> data,
                     const LossWeights& w) {
    if (data.empty()) throw PreconditionError("empty dataset");
    ModelParams eval = p;
    eval.mode = Mode::Eval;
    double total = 0;
    for (const auto& s : data) total += loss(predict(eval, s.input), s.gt, s.fix, w).value;
    return total / static_cast<double>(data.size());
}

TrainResult train(std::span<const TrainSample> data, const TrainConfig& cfg,
                  const LossWeights& w) {
    cfg.validate();
    w.validate();
    if (data.empty()) throw PreconditionError("empty training set");
    const auto& first = data.front().input;
    for (const auto& s : data) {
        if (s.input.c != first.c || s.input.h != first.h || s.input.w != first.w)
            throw PreconditionError("training inputs differ in shape");
        if (s.gt.w != first.w || s.gt.h != first.h || s.fix.w != first.w || s.fix.h != first.h)
            throw PreconditionError("targets do not match the input size");
    }

    TrainResult res;
    res.params = init_params(cfg.seed);
    res.params.mode = Mode::Train;
    res.initial_eval_loss = evaluate_loss(res.params, data, w);

    AdamState state = AdamState::zeros_like(res.params);
    Rng order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<ImageTensor> xs;
    std::vector<SaliencyMap> gts;
    std::vector<FixationSet> fixes;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        order_rng.shuffle(order.begin(), order.end());
        const double lr = learning_rate(cfg, epoch);
        double epoch_loss = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch);
            xs.clear();
            gts.clear();
            fixes.clear();
            for (std::size_t k = start; k < stop; ++k) {
                xs.push_back(data[order[k]].input);
                gts.push_back(data[order[k]].gt);
                fixes.push_back(data[order[k]].fix);
            }
            auto fr = forward(res.params, xs);
            const double l = apply_loss(*fr.cache, gts, fixes, w);
            epoch_loss += l * static_cast<double>(stop - start);
            const ParamGrads g = backward(res.params, *fr.cache, 1.0);
            adam_step(res.params, g, state, lr);
            commit_running_stats(res.params, *fr.cache);
            ++res.steps;
        }
        res.history.push_back(epoch_loss / static_cast<double>(data.size()));
    }
    res.final_eval_loss = evaluate_loss(res.params, data, w);
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoints.

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::string_view in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw FormatError("checkpoint truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += 4;
    return v;
}

struct ArraySpec {
    std::vector<std::uint32_t> shape;
    std::vector<double>* values;
};

template <class P>
std::vector<ArraySpec> checkpoint_layout(P& p, std::vector<double>& momentum) {
    return {
        {{kChannels, kReduceIn}, &p.reduce_w},
        {{kChannels}, &p.reduce_b},
        {{kChannels}, &p.bn_gamma},
        {{kChannels}, &p.bn_beta},
        {{kChannels}, &p.bn_running_mean},
        {{kChannels}, &p.bn_running_var},
        {{1}, &momentum},
        {{kEnc1, kChannels, 3, 3}, &p.enc1_w},
        {{kEnc1}, &p.enc1_b},
        {{kEnc2, kEnc1, 3, 3}, &p.enc2_w},
        {{kEnc2}, &p.enc2_b},
        {{1, kEnc2}, &p.head_w},
        {{1}, &p.head_b},
    };
}

}  // namespace

std::string serialize_checkpoint(const ModelParams& p) {
    ModelParams copy = p;
    std::vector<double> momentum{p.bn_momentum};
    std::string out = "GKMP";
    put_u32(out, kCheckpointVersion);
    for (const auto& spec : checkpoint_layout(copy, momentum)) {
        std::size_t expected = 1;
        for (auto d : spec.shape) expected *= d;
        if (spec.values->size() != expected)
            throw PreconditionError("parameter array has unexpected size");
        put_u32(out, static_cast<std::uint32_t>(spec.shape.size()));
        for (auto d : spec.shape) put_u32(out, d);
        for (double v : *spec.values)
            put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    return out;
}

ModelParams deserialize_checkpoint(std::string_view bytes) {
    if (bytes.size() < 8 || bytes.substr(0, 4) != "GKMP")
        throw FormatError("not a GKMP checkpoint");
    std::size_t pos = 4;
    const auto version = get_u32(bytes, pos);
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    ModelParams p;
    std::vector<double> momentum;
    for (auto& spec : checkpoint_layout(p, momentum)) {
        const auto rank = get_u32(bytes, pos);
        if (rank != spec.shape.size()) throw FormatError("checkpoint shape mismatch");
        std::size_t count = 1;
        for (std::size_t i = 0; i < rank; ++i) {
            const auto d = get_u32(bytes, pos);
            if (d != spec.shape[i]) throw FormatError("checkpoint shape mismatch");
            count *= d;
        }
        spec.values->resize(count);
        for (std::size_t i = 0; i < count; ++i)
            (*spec.values)[i] = static_cast<double>(std::bit_cast<float>(get_u32(bytes, pos)));
    }
    if (pos != bytes.size()) throw FormatError("trailing bytes after checkpoint");
    p.bn_momentum = momentum[0];
    p.mode = Mode::Eval;
    for (double v : p.bn_running_var)
        if (!(v > 0)) throw FormatError("checkpoint running variance must be positive");
    return p;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& p) {
    textio::write_file(path, serialize_checkpoint(p));
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(textio::read_file(path));
}

}  // namespace gazekit::dyn
