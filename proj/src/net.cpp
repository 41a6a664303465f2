#include "volscreen/net.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "volscreen/rng.hpp"

namespace volscreen {

void NetSpec::validate() const {
    if (input_h < 4 || input_w < 4 || input_h % 4 != 0 || input_w % 4 != 0)
        throw std::invalid_argument("net spec: input dims must be multiples of 4");
    if (conv1_filters < 1 || conv2_filters < 1 || embed_dim < 1)
        throw std::invalid_argument("net spec: layer sizes must be >= 1");
    if (kernel != 3)
        throw std::invalid_argument("net spec: kernel is fixed at 3");
}

EmbeddingNet init_net(const NetSpec& spec, std::uint64_t seed) {
    spec.validate();
    EmbeddingNet net;
    net.spec = spec;
    net.init_seed = seed;

    const std::size_t k = spec.kernel;
    net.conv1_w = Tensor({spec.conv1_filters, 1, k, k});
    net.conv1_b = Tensor({spec.conv1_filters});
    net.conv2_w = Tensor({spec.conv2_filters, spec.conv1_filters, k, k});
    net.conv2_b = Tensor({spec.conv2_filters});
    net.dense_w = Tensor({spec.embed_dim, spec.flat_dim()});
    net.dense_b = Tensor({spec.embed_dim});

    Rng rng(seed);
    auto fill_he = [&rng](Tensor& w, std::size_t fan_in) {
        const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (double& x : w.data) x = sd * rng.normal();
    };
    fill_he(net.conv1_w, 1 * k * k);
    fill_he(net.conv2_w, spec.conv1_filters * k * k);
    fill_he(net.dense_w, spec.flat_dim());
    return net;
}

namespace {

// conv 3x3, stride 1, pad 1 (zero), C_in -> C_out over an HxW grid
void conv3x3(const double* in, std::size_t cin, std::size_t h, std::size_t w,
             const double* weights, const double* bias, std::size_t cout,
             double* out) {
    const std::size_t plane = h * w;
    for (std::size_t oc = 0; oc < cout; ++oc) {
        double* op = out + oc * plane;
        for (std::size_t i = 0; i < plane; ++i) op[i] = bias[oc];
        for (std::size_t ic = 0; ic < cin; ++ic) {
            const double* ip = in + ic * plane;
            const double* wp = weights + (oc * cin + ic) * 9;
            for (std::size_t y = 0; y < h; ++y) {
                const std::size_t ky_lo = (y == 0) ? 1 : 0;
                const std::size_t ky_hi = (y == h - 1) ? 1 : 2;
                for (std::size_t ky = ky_lo; ky <= ky_hi; ++ky) {
                    const double* row = ip + (y + ky - 1) * w;
                    const double w0 = wp[ky * 3 + 0];
                    const double w1 = wp[ky * 3 + 1];
                    const double w2 = wp[ky * 3 + 2];
                    double* orow = op + y * w;
                    orow[0] += w1 * row[0] + w2 * row[1];
                    for (std::size_t x = 1; x + 1 < w; ++x)
                        orow[x] += w0 * row[x - 1] + w1 * row[x] + w2 * row[x + 1];
                    if (w > 1) orow[w - 1] += w0 * row[w - 2] + w1 * row[w - 1];
                }
            }
        }
    }
}

// max pool 2x2 stride 2 on post-ReLU values; records the flat source index
void maxpool2(const double* pre, std::size_t c, std::size_t h, std::size_t w,
              double* out, std::size_t* src) {
    const std::size_t oh = h / 2, ow = w / 2;
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* ip = pre + ch * h * w;
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                std::size_t best = (2 * y) * w + 2 * x;
                double bv = ip[best];
                const std::size_t cand[3] = {(2 * y) * w + 2 * x + 1,
                                             (2 * y + 1) * w + 2 * x,
                                             (2 * y + 1) * w + 2 * x + 1};
                for (std::size_t idx : cand)
                    if (ip[idx] > bv) {
                        bv = ip[idx];
                        best = idx;
                    }
                const std::size_t o = ch * oh * ow + y * ow + x;
                out[o] = std::max(bv, 0.0);  // ReLU then pool
                src[o] = ch * h * w + best;
            }
    }
}

}  // namespace

Tensor forward(const EmbeddingNet& net, const Tensor& slice, ForwardCache* cache) {
    const NetSpec& sp = net.spec;
    if (slice.shape != std::vector<std::size_t>{sp.input_h, sp.input_w})
        throw std::invalid_argument("forward: slice shape does not match net spec");

    const std::size_t h = sp.input_h, w = sp.input_w;
    const std::size_t h2 = h / 2, w2 = w / 2;
    const std::size_t f1 = sp.conv1_filters, f2 = sp.conv2_filters;

    Tensor pre1({f1, h, w});
    conv3x3(slice.data.data(), 1, h, w, net.conv1_w.data.data(),
            net.conv1_b.data.data(), f1, pre1.data.data());

    Tensor pool1({f1, h2, w2});
    std::vector<std::size_t> pool1_src(pool1.numel());
    maxpool2(pre1.data.data(), f1, h, w, pool1.data.data(), pool1_src.data());

    Tensor pre2({f2, h2, w2});
    conv3x3(pool1.data.data(), f1, h2, w2, net.conv2_w.data.data(),
            net.conv2_b.data.data(), f2, pre2.data.data());

    Tensor pool2({sp.flat_dim()});
    std::vector<std::size_t> pool2_src(pool2.numel());
    maxpool2(pre2.data.data(), f2, h2, w2, pool2.data.data(), pool2_src.data());

    Tensor emb({sp.embed_dim});
    const std::size_t flat = sp.flat_dim();
    for (std::size_t d = 0; d < sp.embed_dim; ++d) {
        const double* wp = net.dense_w.data.data() + d * flat;
        double acc = net.dense_b[d];
        for (std::size_t j = 0; j < flat; ++j) acc += wp[j] * pool2[j];
        emb[d] = acc;
    }

    if (cache) {
        cache->input = slice;
        cache->pre1 = std::move(pre1);
        cache->pool1 = std::move(pool1);
        cache->pool1_src = std::move(pool1_src);
        cache->pre2 = std::move(pre2);
        cache->pool2_flat = std::move(pool2);
        cache->pool2_src = std::move(pool2_src);
    }
    return emb;
}

namespace {

// gradient of a conv3x3 with respect to its weights and bias
void conv3x3_param_grads(const double* d_out, const double* in, std::size_t cin,
                         std::size_t h, std::size_t w, std::size_t cout,
                         double* d_weights, double* d_bias) {
    const std::size_t plane = h * w;
    for (std::size_t oc = 0; oc < cout; ++oc) {
        const double* dop = d_out + oc * plane;
        double bacc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) bacc += dop[i];
        d_bias[oc] += bacc;
        for (std::size_t ic = 0; ic < cin; ++ic) {
            const double* ip = in + ic * plane;
            double* dwp = d_weights + (oc * cin + ic) * 9;
            for (std::size_t ky = 0; ky < 3; ++ky)
                for (std::size_t kx = 0; kx < 3; ++kx) {
                    // out[y][x] sees in[y+ky-1][x+kx-1]
                    double acc = 0.0;
                    const std::size_t y_lo = (ky == 0) ? 1 : 0;
                    const std::size_t y_hi = (ky == 2) ? h - 1 : h;
                    const std::size_t x_lo = (kx == 0) ? 1 : 0;
                    const std::size_t x_hi = (kx == 2) ? w - 1 : w;
                    for (std::size_t y = y_lo; y < y_hi; ++y) {
                        const double* drow = dop + y * w;
                        const double* irow = ip + (y + ky - 1) * w;
                        for (std::size_t x = x_lo; x < x_hi; ++x)
                            acc += drow[x] * irow[x + kx - 1];
                    }
                    dwp[ky * 3 + kx] += acc;
                }
        }
    }
}

// gradient of a conv3x3 with respect to its input (full correlation with
// flipped kernel is expressed directly by bounds on the output index)
void conv3x3_input_grad(const double* d_out, const double* weights, std::size_t cin,
                        std::size_t h, std::size_t w, std::size_t cout,
                        double* d_in) {
    const std::size_t plane = h * w;
    for (std::size_t ic = 0; ic < cin; ++ic) {
        double* dip = d_in + ic * plane;
        for (std::size_t oc = 0; oc < cout; ++oc) {
            const double* dop = d_out + oc * plane;
            const double* wp = weights + (oc * cin + ic) * 9;
            for (std::size_t ky = 0; ky < 3; ++ky)
                for (std::size_t kx = 0; kx < 3; ++kx) {
                    const double wv = wp[ky * 3 + kx];
                    if (wv == 0.0) continue;
                    // in[iy][ix] contributes to out[iy-ky+1][ix-kx+1]
                    const std::size_t iy_lo = (ky == 2) ? 1 : 0;
                    const std::size_t iy_hi = (ky == 0) ? h - 1 : h;
                    const std::size_t ix_lo = (kx == 2) ? 1 : 0;
                    const std::size_t ix_hi = (kx == 0) ? w - 1 : w;
                    for (std::size_t iy = iy_lo; iy < iy_hi; ++iy) {
                        double* dirow = dip + iy * w;
                        const double* drow = dop + (iy + 1 - ky) * w;
                        for (std::size_t ix = ix_lo; ix < ix_hi; ++ix)
                            dirow[ix] += wv * drow[ix + 1 - kx];
                    }
                }
        }
    }
}

}  // namespace

ParamGrads zero_grads(const NetSpec& spec) {
    const std::size_t k = spec.kernel;
    ParamGrads g;
    g.conv1_w = Tensor({spec.conv1_filters, 1, k, k});
    g.conv1_b = Tensor({spec.conv1_filters});
    g.conv2_w = Tensor({spec.conv2_filters, spec.conv1_filters, k, k});
    g.conv2_b = Tensor({spec.conv2_filters});
    g.dense_w = Tensor({spec.embed_dim, spec.flat_dim()});
    g.dense_b = Tensor({spec.embed_dim});
    return g;
}

void accumulate(ParamGrads& into, const ParamGrads& g) {
    auto add = [](Tensor& a, const Tensor& b) {
        for (std::size_t i = 0; i < a.numel(); ++i) a[i] += b[i];
    };
    add(into.conv1_w, g.conv1_w);
    add(into.conv1_b, g.conv1_b);
    add(into.conv2_w, g.conv2_w);
    add(into.conv2_b, g.conv2_b);
    add(into.dense_w, g.dense_w);
    add(into.dense_b, g.dense_b);
}

ParamGrads backward(const EmbeddingNet& net, const ForwardCache& cache,
                    const Tensor& d_embedding) {
    const NetSpec& sp = net.spec;
    if (d_embedding.numel() != sp.embed_dim)
        throw std::invalid_argument("backward: gradient dimension mismatch");
    if (cache.input.shape != std::vector<std::size_t>{sp.input_h, sp.input_w} ||
        cache.pool2_flat.numel() != sp.flat_dim())
        throw std::invalid_argument("backward: cache does not match net spec");

    const std::size_t h = sp.input_h, w = sp.input_w;
    const std::size_t h2 = h / 2, w2 = w / 2;
    const std::size_t f1 = sp.conv1_filters, f2 = sp.conv2_filters;
    const std::size_t flat = sp.flat_dim();

    ParamGrads g = zero_grads(sp);

    // dense
    Tensor d_flat({flat});
    for (std::size_t d = 0; d < sp.embed_dim; ++d) {
        const double gd = d_embedding[d];
        g.dense_b[d] = gd;
        const double* fp = cache.pool2_flat.data.data();
        double* dwp = g.dense_w.data.data() + d * flat;
        const double* wp = net.dense_w.data.data() + d * flat;
        for (std::size_t j = 0; j < flat; ++j) {
            dwp[j] = gd * fp[j];
            d_flat[j] += gd * wp[j];
        }
    }

    // unpool2 + ReLU mask on pre2
    Tensor d_pre2({f2, h2, w2});
    for (std::size_t o = 0; o < flat; ++o) {
        const std::size_t src = cache.pool2_src[o];
        if (cache.pre2[src] > 0.0) d_pre2[src] += d_flat[o];
    }

    conv3x3_param_grads(d_pre2.data.data(), cache.pool1.data.data(), f1, h2, w2, f2,
                        g.conv2_w.data.data(), g.conv2_b.data.data());

    Tensor d_pool1({f1, h2, w2});
    conv3x3_input_grad(d_pre2.data.data(), net.conv2_w.data.data(), f1, h2, w2, f2,
                       d_pool1.data.data());

    // unpool1 + ReLU mask on pre1
    Tensor d_pre1({f1, h, w});
    for (std::size_t o = 0; o < d_pool1.numel(); ++o) {
        const std::size_t src = cache.pool1_src[o];
        if (cache.pre1[src] > 0.0) d_pre1[src] += d_pool1[o];
    }

    conv3x3_param_grads(d_pre1.data.data(), cache.input.data.data(), 1, h, w, f1,
                        g.conv1_w.data.data(), g.conv1_b.data.data());
    return g;
}

void SgdOptimizer::step(EmbeddingNet& net, const ParamGrads& grads) {
    auto check_finite = [](const Tensor& t) {
        for (double v : t.data)
            if (!std::isfinite(v))
                throw std::runtime_error("sgd step rejected: non-finite gradient");
    };
    check_finite(grads.conv1_w);
    check_finite(grads.conv1_b);
    check_finite(grads.conv2_w);
    check_finite(grads.conv2_b);
    check_finite(grads.dense_w);
    check_finite(grads.dense_b);

    const double lr = cfg_.learning_rate;
    const double mu = cfg_.momentum;
    if (mu != 0.0 && !has_velocity_) {
        velocity_ = zero_grads(net.spec);
        has_velocity_ = true;
    }

    auto update = [&](Tensor& w, const Tensor& gt, Tensor* vel) {
        if (w.numel() != gt.numel())
            throw std::invalid_argument("sgd step: gradient shape mismatch");
        if (!vel) {
            for (std::size_t i = 0; i < w.numel(); ++i) w[i] -= lr * gt[i];
        } else {
            for (std::size_t i = 0; i < w.numel(); ++i) {
                (*vel)[i] = mu * (*vel)[i] + gt[i];
                w[i] -= lr * (*vel)[i];
            }
        }
    };
    const bool m = mu != 0.0;
    update(net.conv1_w, grads.conv1_w, m ? &velocity_.conv1_w : nullptr);
    update(net.conv1_b, grads.conv1_b, m ? &velocity_.conv1_b : nullptr);
    update(net.conv2_w, grads.conv2_w, m ? &velocity_.conv2_w : nullptr);
    update(net.conv2_b, grads.conv2_b, m ? &velocity_.conv2_b : nullptr);
    update(net.dense_w, grads.dense_w, m ? &velocity_.dense_w : nullptr);
    update(net.dense_b, grads.dense_b, m ? &velocity_.dense_b : nullptr);
}

double grad_check(const EmbeddingNet& net, const Tensor& input, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be > 0");

    ForwardCache cache;
    forward(net, input, &cache);
    Tensor ones({net.spec.embed_dim});
    for (double& v : ones.data) v = 1.0;
    const ParamGrads analytic = backward(net, cache, ones);

    EmbeddingNet probe = net;
    auto probe_loss = [&probe, &input]() {
        const Tensor emb = forward(probe, input);
        double s = 0.0;
        for (double v : emb.data) s += v;
        return s;
    };

    double worst = 0.0;
    auto sweep = [&](Tensor& w, const Tensor& a) {
        for (std::size_t i = 0; i < w.numel(); ++i) {
            const double saved = w[i];
            w[i] = saved + eps;
            const double lp = probe_loss();
            w[i] = saved - eps;
            const double lm = probe_loss();
            w[i] = saved;
            const double numeric = (lp - lm) / (2.0 * eps);
            const double denom = std::max({std::abs(a[i]), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(a[i] - numeric) / denom);
        }
    };
    sweep(probe.conv1_w, analytic.conv1_w);
    sweep(probe.conv1_b, analytic.conv1_b);
    sweep(probe.conv2_w, analytic.conv2_w);
    sweep(probe.conv2_b, analytic.conv2_b);
    sweep(probe.dense_w, analytic.dense_w);
    sweep(probe.dense_b, analytic.dense_b);
    return worst;
}

std::string to_string(Pooling p) {
    return p == Pooling::mean_slices ? "mean_slices" : "mid_slice";
}

Pooling pooling_from_string(const std::string& s) {
    if (s == "mean_slices") return Pooling::mean_slices;
    if (s == "mid_slice") return Pooling::mid_slice;
    throw std::runtime_error("unknown pooling: '" + s + "'");
}

Tensor embed_volume(const EmbeddingNet& net, const Volume& v, Pooling pooling,
                    std::vector<ForwardCache>* caches) {
    if (v.height != net.spec.input_h || v.width != net.spec.input_w)
        throw std::invalid_argument("embed_volume: volume not preprocessed to net dims");
    if (v.slices == 0) throw std::invalid_argument("embed_volume: empty volume");

    auto slice_tensor = [&v](std::size_t s) {
        Tensor t({v.height, v.width});
        std::copy_n(v.voxels.begin() + static_cast<std::ptrdiff_t>(s * v.height * v.width),
                    v.height * v.width, t.data.begin());
        return t;
    };

    if (caches) caches->clear();
    auto fwd = [&](std::size_t s) {
        if (!caches) return forward(net, slice_tensor(s));
        caches->emplace_back();
        return forward(net, slice_tensor(s), &caches->back());
    };

    if (pooling == Pooling::mid_slice) return fwd(v.slices / 2);

    Tensor mean({net.spec.embed_dim});
    for (std::size_t s = 0; s < v.slices; ++s) {
        const Tensor emb = fwd(s);
        for (std::size_t d = 0; d < mean.numel(); ++d) mean[d] += emb[d];
    }
    for (double& x : mean.data) x /= static_cast<double>(v.slices);
    return mean;
}

namespace {

constexpr int kFormatVersion = 1;

void write_values(std::ostream& out, const char* name, const Tensor& t) {
    out << "layer " << name << " " << t.numel() << "\n";
    char buf[64];
    for (double v : t.data) {
        const auto res = std::to_chars(buf, buf + sizeof(buf), v,
                                       std::chars_format::general, 17);
        out.write(buf, res.ptr - buf);
        out.put('\n');
    }
}

}  // namespace

void save_net(const EmbeddingNet& net, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write weights file: " + path);
    out << "format_version " << kFormatVersion << "\n"
        << "input_h " << net.spec.input_h << "\n"
        << "input_w " << net.spec.input_w << "\n"
        << "conv1_filters " << net.spec.conv1_filters << "\n"
        << "conv2_filters " << net.spec.conv2_filters << "\n"
        << "kernel " << net.spec.kernel << "\n"
        << "embed_dim " << net.spec.embed_dim << "\n"
        << "init_seed " << net.init_seed << "\n";
    write_values(out, "conv1.w", net.conv1_w);
    write_values(out, "conv1.b", net.conv1_b);
    write_values(out, "conv2.w", net.conv2_w);
    write_values(out, "conv2.b", net.conv2_b);
    write_values(out, "dense.w", net.dense_w);
    write_values(out, "dense.b", net.dense_b);
    if (!out) throw std::runtime_error("I/O failure writing " + path);
}

namespace {

std::uint64_t expect_field(std::istream& in, const std::string& key,
                           const std::string& path) {
    std::string k;
    std::uint64_t v = 0;
    if (!(in >> k >> v) || k != key)
        throw std::runtime_error("malformed weights file (" + key + "): " + path);
    return v;
}

void read_values(std::istream& in, const char* name, Tensor& t,
                 const std::string& path) {
    std::string kw, layer;
    std::size_t n = 0;
    if (!(in >> kw >> layer >> n) || kw != "layer" || layer != name)
        throw std::runtime_error(std::string("malformed weights file (layer ") + name +
                                 "): " + path);
    if (n != t.numel())
        throw std::runtime_error(std::string("weights shape mismatch for ") + name +
                                 " in " + path);
    std::string tok;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(in >> tok))
            throw std::runtime_error("truncated weights file: " + path);
        double v = 0.0;
        const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
            throw std::runtime_error("bad numeric value in weights file: " + path);
        t[i] = v;
    }
}

}  // namespace

EmbeddingNet load_net(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open weights file: " + path);

    const std::uint64_t version = expect_field(in, "format_version", path);
    if (version != kFormatVersion)
        throw std::runtime_error("unsupported weights format_version " +
                                 std::to_string(version) + " in " + path);

    NetSpec spec;
    spec.input_h = expect_field(in, "input_h", path);
    spec.input_w = expect_field(in, "input_w", path);
    spec.conv1_filters = expect_field(in, "conv1_filters", path);
    spec.conv2_filters = expect_field(in, "conv2_filters", path);
    spec.kernel = expect_field(in, "kernel", path);
    spec.embed_dim = expect_field(in, "embed_dim", path);
    const std::uint64_t init_seed = expect_field(in, "init_seed", path);
    spec.validate();

    EmbeddingNet net = init_net(spec, 0);
    net.init_seed = init_seed;
    read_values(in, "conv1.w", net.conv1_w, path);
    read_values(in, "conv1.b", net.conv1_b, path);
    read_values(in, "conv2.w", net.conv2_w, path);
    read_values(in, "conv2.b", net.conv2_b, path);
    read_values(in, "dense.w", net.dense_w, path);
    read_values(in, "dense.b", net.dense_b, path);
    return net;
}

}  // namespace volscreen
