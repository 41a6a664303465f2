#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "test_util.hpp"
#include "volscreen/net.hpp"
#include "volscreen/rng.hpp"

using namespace volscreen;

namespace {

NetSpec small_spec() {
    NetSpec sp;
    sp.input_h = 16;
    sp.input_w = 16;
    sp.conv1_filters = 2;
    sp.conv2_filters = 3;
    sp.embed_dim = 4;
    return sp;
}

NetSpec tiny_spec() {
    NetSpec sp;
    sp.input_h = 8;
    sp.input_w = 8;
    sp.conv1_filters = 2;
    sp.conv2_filters = 2;
    sp.embed_dim = 3;
    return sp;
}

Tensor random_slice(std::uint64_t seed, std::size_t h, std::size_t w) {
    Tensor t({h, w});
    Rng rng(seed);
    for (double& v : t.data) v = rng.uniform();
    return t;
}

// ---- reference model, written independently of the library's forward().
// Plain per-pixel loops: conv 3x3 stride 1 zero-pad 1, ReLU, max pool 2x2.

Tensor ref_conv(const Tensor& in, std::size_t cin, std::size_t h, std::size_t w,
                const Tensor& weights, const Tensor& bias, std::size_t cout) {
    Tensor out({cout, h, w});
    for (std::size_t oc = 0; oc < cout; ++oc)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double acc = bias[oc];
                for (std::size_t ic = 0; ic < cin; ++ic)
                    for (int ky = -1; ky <= 1; ++ky)
                        for (int kx = -1; kx <= 1; ++kx) {
                            const long yy = static_cast<long>(y) + ky;
                            const long xx = static_cast<long>(x) + kx;
                            if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) ||
                                xx >= static_cast<long>(w))
                                continue;
                            const double iv =
                                in[(ic * h + static_cast<std::size_t>(yy)) * w +
                                   static_cast<std::size_t>(xx)];
                            const double wv =
                                weights[((oc * cin + ic) * 3 +
                                         static_cast<std::size_t>(ky + 1)) *
                                            3 +
                                        static_cast<std::size_t>(kx + 1)];
                            acc += iv * wv;
                        }
                out[(oc * h + y) * w + x] = acc;
            }
    return out;
}

Tensor ref_relu_pool(const Tensor& in, std::size_t c, std::size_t h, std::size_t w) {
    Tensor out({c, h / 2, w / 2});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h / 2; ++y)
            for (std::size_t x = 0; x < w / 2; ++x) {
                double best = 0.0;  // ReLU floor
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const double v = in[(ch * h + 2 * y + dy) * w + 2 * x + dx];
                        best = std::max(best, v);
                    }
                out[(ch * (h / 2) + y) * (w / 2) + x] = best;
            }
    return out;
}

Tensor ref_forward(const EmbeddingNet& net, const Tensor& slice) {
    const NetSpec& sp = net.spec;
    const std::size_t h = sp.input_h, w = sp.input_w;
    Tensor a = ref_conv(slice, 1, h, w, net.conv1_w, net.conv1_b, sp.conv1_filters);
    Tensor p1 = ref_relu_pool(a, sp.conv1_filters, h, w);
    Tensor b = ref_conv(p1, sp.conv1_filters, h / 2, w / 2, net.conv2_w, net.conv2_b,
                        sp.conv2_filters);
    Tensor p2 = ref_relu_pool(b, sp.conv2_filters, h / 2, w / 2);
    Tensor emb({sp.embed_dim});
    for (std::size_t d = 0; d < sp.embed_dim; ++d) {
        double acc = net.dense_b[d];
        for (std::size_t j = 0; j < sp.flat_dim(); ++j)
            acc += net.dense_w[d * sp.flat_dim() + j] * p2[j];
        emb[d] = acc;
    }
    return emb;
}

void set_all(Tensor& t, double v) {
    for (double& x : t.data) x = v;
}

void set_all_params(EmbeddingNet& net, double v) {
    set_all(net.conv1_w, v);
    set_all(net.conv1_b, v);
    set_all(net.conv2_w, v);
    set_all(net.conv2_b, v);
    set_all(net.dense_w, v);
    set_all(net.dense_b, v);
}

Volume volume_from_slices(const std::vector<Tensor>& slices) {
    Volume v("v", slices.size(), slices[0].shape[0], slices[0].shape[1]);
    std::size_t o = 0;
    for (const Tensor& s : slices)
        for (const double x : s.data) v.voxels[o++] = x;
    return v;
}

}  // namespace

TEST_CASE("spec validation rejects bad geometry") {
    NetSpec sp;
    sp.input_h = 10;  // not a multiple of 4
    CHECK_THROWS_AS(sp.validate(), std::invalid_argument);
    sp = NetSpec{};
    sp.kernel = 5;
    CHECK_THROWS_AS(sp.validate(), std::invalid_argument);
    sp = NetSpec{};
    sp.embed_dim = 0;
    CHECK_THROWS_AS(sp.validate(), std::invalid_argument);
    CHECK_NOTHROW(NetSpec{}.validate());
}

TEST_CASE("init_net is deterministic with zero biases and He-scaled weights") {
    const EmbeddingNet a = init_net(NetSpec{}, 11);
    const EmbeddingNet b = init_net(NetSpec{}, 11);
    const EmbeddingNet c = init_net(NetSpec{}, 12);
    CHECK(a.conv1_w.data == b.conv1_w.data);
    CHECK(a.dense_w.data == b.dense_w.data);
    CHECK(a.conv1_w.data != c.conv1_w.data);

    for (const double v : a.conv1_b.data) CHECK(v == 0.0);
    for (const double v : a.conv2_b.data) CHECK(v == 0.0);
    for (const double v : a.dense_b.data) CHECK(v == 0.0);

    // pooled sample variance of weights normalized by their He scale
    for (std::uint64_t seed : {0ull, 1ull, 2ull}) {
        const EmbeddingNet n = init_net(NetSpec{}, seed);
        double sq = 0.0;
        std::size_t cnt = 0;
        auto tally = [&](const Tensor& w, std::size_t fan_in) {
            const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
            for (const double v : w.data) {
                sq += (v / sd) * (v / sd);
                ++cnt;
            }
        };
        tally(n.conv1_w, 9);
        tally(n.conv2_w, n.spec.conv1_filters * 9);
        tally(n.dense_w, n.spec.flat_dim());
        const double var = sq / static_cast<double>(cnt);
        CHECK(var > 0.8);
        CHECK(var < 1.2);
    }
}

TEST_CASE("forward matches a straight-line reference model") {
    // a handful of seeds on a small net, then the default geometry once
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const EmbeddingNet net = init_net(small_spec(), seed);
        const Tensor slice = random_slice(hash64(seed, 1), 16, 16);
        const Tensor got = forward(net, slice);
        const Tensor want = ref_forward(net, slice);
        REQUIRE(got.numel() == want.numel());
        for (std::size_t d = 0; d < got.numel(); ++d)
            CHECK(std::abs(got[d] - want[d]) <= 1e-12);
    }
    const EmbeddingNet net = init_net(NetSpec{}, 3);
    const Tensor slice = random_slice(123, 64, 64);
    const Tensor got = forward(net, slice);
    const Tensor want = ref_forward(net, slice);
    for (std::size_t d = 0; d < got.numel(); ++d)
        CHECK(std::abs(got[d] - want[d]) <= 1e-12);
}

TEST_CASE("forward edge cases") {
    EmbeddingNet net = init_net(small_spec(), 4);

    // zero input with zero biases embeds to exactly zero
    Tensor zeros({16, 16});
    const Tensor e0 = forward(net, zeros);
    for (const double v : e0.data) CHECK(v == 0.0);

    // zero parameters embed anything to exactly zero
    set_all_params(net, 0.0);
    const Tensor e1 = forward(net, random_slice(9, 16, 16));
    for (const double v : e1.data) CHECK(v == 0.0);

    CHECK_THROWS_AS(forward(net, Tensor({8, 8})), std::invalid_argument);
}

TEST_CASE("backward propagates exact dense gradients") {
    const EmbeddingNet net = init_net(small_spec(), 5);
    const Tensor slice = random_slice(6, 16, 16);
    ForwardCache cache;
    forward(net, slice, &cache);

    Tensor d_emb({4});
    d_emb[0] = 0.5;
    d_emb[1] = -1.25;
    d_emb[2] = 2.0;
    d_emb[3] = 0.0;
    const ParamGrads g = backward(net, cache, d_emb);

    // dense bias gradient is the upstream gradient itself
    for (std::size_t d = 0; d < 4; ++d) CHECK(g.dense_b[d] == d_emb[d]);
    // dense weight gradient is the outer product with the flattened features
    for (std::size_t d = 0; d < 4; ++d)
        for (std::size_t j = 0; j < net.spec.flat_dim(); ++j)
            CHECK(g.dense_w[d * net.spec.flat_dim() + j] ==
                  d_emb[d] * cache.pool2_flat[j]);

    // zero upstream gradient zeroes every parameter gradient
    const ParamGrads z = backward(net, cache, Tensor({4}));
    for (const double v : z.conv1_w.data) CHECK(v == 0.0);
    for (const double v : z.conv2_w.data) CHECK(v == 0.0);
    for (const double v : z.dense_w.data) CHECK(v == 0.0);

    CHECK_THROWS_AS(backward(net, cache, Tensor({5})), std::invalid_argument);
}

TEST_CASE("analytic gradients agree with central finite differences") {
    // pinned seeds whose activations stay away from ReLU kinks; at an exact
    // kink (a pre-activation of 0.0, reachable because biases start at zero)
    // the finite difference straddles two subgradients and no eps helps
    for (std::uint64_t seed : {0ull, 2ull, 3ull}) {
        const EmbeddingNet net = init_net(tiny_spec(), seed);
        const Tensor slice = random_slice(hash64(seed, 7), 8, 8);
        CHECK(grad_check(net, slice, 1e-3) < 1e-4);
        CHECK(grad_check(net, slice, 1e-4) < 1e-4);
    }
    CHECK_THROWS_AS(grad_check(init_net(tiny_spec(), 0), random_slice(1, 8, 8), 0.0),
                    std::invalid_argument);
}

TEST_CASE("sgd applies w -= lr * g") {
    NetSpec sp;
    sp.input_h = 4;
    sp.input_w = 4;
    sp.conv1_filters = 1;
    sp.conv2_filters = 1;
    sp.embed_dim = 1;

    EmbeddingNet net = init_net(sp, 0);
    set_all_params(net, 1.0);
    ParamGrads g = zero_grads(sp);
    set_all(g.conv1_w, 0.5);
    set_all(g.conv1_b, 0.5);
    set_all(g.conv2_w, 0.5);
    set_all(g.conv2_b, 0.5);
    set_all(g.dense_w, 0.5);
    set_all(g.dense_b, 0.5);

    SgdOptimizer opt({0.1, 0.0});
    opt.step(net, g);
    CHECK(net.conv1_w[0] == doctest::Approx(0.95).epsilon(1e-15));
    CHECK(net.dense_b[0] == doctest::Approx(0.95).epsilon(1e-15));

    // zero gradients leave the weights untouched
    EmbeddingNet before = net;
    opt.step(net, zero_grads(sp));
    CHECK(net.conv1_w.data == before.conv1_w.data);
    CHECK(net.dense_w.data == before.dense_w.data);
}

TEST_CASE("sgd momentum accumulates velocity") {
    NetSpec sp;
    sp.input_h = 4;
    sp.input_w = 4;
    sp.conv1_filters = 1;
    sp.conv2_filters = 1;
    sp.embed_dim = 1;

    EmbeddingNet net = init_net(sp, 0);
    set_all_params(net, 1.0);
    ParamGrads g = zero_grads(sp);
    set_all(g.conv1_w, 1.0);

    SgdOptimizer opt({0.1, 0.5});
    opt.step(net, g);
    // v1 = 1, w = 1 - 0.1
    CHECK(net.conv1_w[0] == doctest::Approx(0.9).epsilon(1e-15));
    opt.step(net, g);
    // v2 = 0.5*1 + 1 = 1.5, w = 0.9 - 0.15
    CHECK(net.conv1_w[0] == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("sgd rejects bad gradients") {
    NetSpec sp;
    sp.input_h = 4;
    sp.input_w = 4;
    sp.conv1_filters = 1;
    sp.conv2_filters = 1;
    sp.embed_dim = 1;

    EmbeddingNet net = init_net(sp, 0);
    ParamGrads g = zero_grads(sp);
    g.conv2_w[0] = std::numeric_limits<double>::quiet_NaN();
    SgdOptimizer opt({0.1, 0.0});
    CHECK_THROWS_AS(opt.step(net, g), std::runtime_error);

    CHECK_THROWS_AS(SgdOptimizer({0.1, 0.0}).step(net, zero_grads(small_spec())),
                    std::invalid_argument);
}

TEST_CASE("embed_volume pools per-slice embeddings") {
    const EmbeddingNet net = init_net(small_spec(), 8);
    const Tensor s0 = random_slice(100, 16, 16);
    const Tensor s1 = random_slice(101, 16, 16);
    const Tensor s2 = random_slice(102, 16, 16);

    // two identical slices: the mean is exactly the single-slice embedding
    const Volume twin = volume_from_slices({s0, s0});
    const Tensor single = forward(net, s0);
    const Tensor mean2 = embed_volume(net, twin, Pooling::mean_slices);
    CHECK(mean2.data == single.data);
    CHECK(embed_volume(net, twin, Pooling::mid_slice).data == single.data);

    // a 3-slice volume: mid_slice embeds slice 1 exactly
    const Volume three = volume_from_slices({s0, s1, s2});
    const Tensor mid = embed_volume(net, three, Pooling::mid_slice);
    CHECK(mid.data == forward(net, s1).data);

    // mean pooling is invariant to slice order up to rounding
    const Volume permuted = volume_from_slices({s2, s0, s1});
    const Tensor ma = embed_volume(net, three, Pooling::mean_slices);
    const Tensor mb = embed_volume(net, permuted, Pooling::mean_slices);
    for (std::size_t d = 0; d < ma.numel(); ++d)
        CHECK(std::abs(ma[d] - mb[d]) <= 1e-12);

    // caches mirror exactly the slices that were forwarded
    std::vector<ForwardCache> caches;
    embed_volume(net, three, Pooling::mean_slices, &caches);
    REQUIRE(caches.size() == 3);
    CHECK(caches[1].input.data == s1.data);
    embed_volume(net, three, Pooling::mid_slice, &caches);
    REQUIRE(caches.size() == 1);
    CHECK(caches[0].input.data == s1.data);

    Volume wrong("w", 2, 8, 8);
    CHECK_THROWS_AS(embed_volume(net, wrong, Pooling::mean_slices),
                    std::invalid_argument);
}

TEST_CASE("weights round-trip through the text format bit-exactly") {
    TempDir dir;
    const EmbeddingNet net = init_net(NetSpec{}, 77);
    const std::string path = dir.file("model.txt");
    save_net(net, path);
    const EmbeddingNet back = load_net(path);

    CHECK(back.spec == net.spec);
    CHECK(back.init_seed == net.init_seed);
    CHECK(back.conv1_w.data == net.conv1_w.data);
    CHECK(back.conv1_b.data == net.conv1_b.data);
    CHECK(back.conv2_w.data == net.conv2_w.data);
    CHECK(back.conv2_b.data == net.conv2_b.data);
    CHECK(back.dense_w.data == net.dense_w.data);
    CHECK(back.dense_b.data == net.dense_b.data);

    // saving the loaded net reproduces the file byte for byte
    const std::string again = dir.file("model2.txt");
    save_net(back, again);
    std::ifstream f1(path, std::ios::binary), f2(again, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)),
                         std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)),
                         std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
}

TEST_CASE("load_net rejects damaged files") {
    TempDir dir;
    CHECK_THROWS_AS(load_net(dir.file("missing.txt")), std::runtime_error);

    const std::string junk = dir.file("junk.txt");
    write_file(junk, "not a weights file\n");
    CHECK_THROWS_AS(load_net(junk), std::runtime_error);

    const EmbeddingNet net = init_net(small_spec(), 1);
    const std::string good = dir.file("good.txt");
    save_net(net, good);

    // unsupported version
    std::ifstream in(good);
    std::string content((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
    in.close();
    const std::string versioned = dir.file("versioned.txt");
    write_file(versioned, "format_version 2" + content.substr(content.find('\n')));
    CHECK_THROWS_AS(load_net(versioned), std::runtime_error);

    // truncated value stream
    const std::string cut = dir.file("cut.txt");
    write_file(cut, content.substr(0, content.size() / 2));
    CHECK_THROWS_AS(load_net(cut), std::runtime_error);
}

TEST_CASE("pooling names round-trip") {
    CHECK(to_string(Pooling::mean_slices) == "mean_slices");
    CHECK(to_string(Pooling::mid_slice) == "mid_slice");
    CHECK(pooling_from_string("mean_slices") == Pooling::mean_slices);
    CHECK(pooling_from_string("mid_slice") == Pooling::mid_slice);
    CHECK_THROWS_AS(pooling_from_string("median"), std::runtime_error);
}
