#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "test_util.hpp"
#include "volscreen/rng.hpp"
#include "volscreen/synth.hpp"
#include "volscreen/trainer.hpp"

using namespace volscreen;

namespace {

NetSpec tiny_spec() {
    NetSpec sp;
    sp.input_h = 8;
    sp.input_w = 8;
    sp.conv1_filters = 2;
    sp.conv2_filters = 2;
    sp.embed_dim = 3;
    return sp;
}

Tensor embedding(std::initializer_list<double> vals) {
    Tensor t({vals.size()});
    std::size_t i = 0;
    for (const double v : vals) t[i++] = v;
    return t;
}

double euclid(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

// small reference set of real phantoms, preprocessed to the tiny net's dims
ReferenceSet phantom_refs(std::size_t k, std::uint64_t seed) {
    ReferenceSet refs;
    for (std::size_t i = 0; i < k; ++i) {
        refs.ids.push_back("ref_" + std::to_string(i));
        refs.volumes.push_back(preprocess(gen_good(hash64(seed, i), 2, 16, 16), 8, 8));
    }
    return refs;
}

// constant-intensity volumes: embeddings differ only through the input level
ReferenceSet flat_refs(std::initializer_list<double> levels) {
    ReferenceSet refs;
    std::size_t i = 0;
    for (const double level : levels) {
        Volume v("flat_" + std::to_string(i++), 1, 8, 8);
        for (double& x : v.voxels) x = level;
        refs.ids.push_back(v.id);
        refs.volumes.push_back(v);
    }
    return refs;
}

std::vector<Tensor> embed_refs(const EmbeddingNet& net, const ReferenceSet& refs,
                               Pooling pooling) {
    std::vector<Tensor> out;
    for (const Volume& v : refs.volumes) out.push_back(embed_volume(net, v, pooling));
    return out;
}

double mean_intra_ed(const std::vector<Tensor>& e) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < e.size(); ++i)
        for (std::size_t j = i + 1; j < e.size(); ++j) {
            sum += euclid(e[i], e[j]);
            ++n;
        }
    return sum / static_cast<double>(n);
}

}  // namespace

TEST_CASE("enumerate_pairs emits every unordered pair exactly once") {
    const auto pairs = enumerate_pairs(20, 5);
    CHECK(pairs.size() == 190);
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const PairSample& p : pairs) {
        CHECK(p.a < p.b);
        CHECK(p.b < 20);
        CHECK(p.y == 1);
        seen.insert({p.a, p.b});
    }
    CHECK(seen.size() == 190);

    const auto two = enumerate_pairs(2, 0);
    REQUIRE(two.size() == 1);
    CHECK(two[0].a == 0);
    CHECK(two[0].b == 1);

    // the seed permutes the order but never the set
    const auto p1 = enumerate_pairs(8, 1);
    const auto p2 = enumerate_pairs(8, 1);
    const auto p3 = enumerate_pairs(8, 2);
    auto key = [](const std::vector<PairSample>& v) {
        std::vector<std::pair<std::size_t, std::size_t>> k;
        for (const PairSample& p : v) k.push_back({p.a, p.b});
        return k;
    };
    CHECK(key(p1) == key(p2));
    CHECK(key(p1) != key(p3));
    auto sorted1 = key(p1), sorted3 = key(p3);
    std::sort(sorted1.begin(), sorted1.end());
    std::sort(sorted3.begin(), sorted3.end());
    CHECK(sorted1 == sorted3);

    CHECK_THROWS_AS(enumerate_pairs(1, 0), std::invalid_argument);
}

TEST_CASE("contrastive_loss matches hand-computed cases") {
    // identical similar embeddings: zero loss, zero gradient
    const auto same = contrastive_loss(embedding({1.0, 2.0}), embedding({1.0, 2.0}), 1, 1.0);
    CHECK(same.loss == 0.0);
    CHECK(same.d_a[0] == 0.0);
    CHECK(same.d_b[1] == 0.0);

    // similar at distance 2: loss = 4, d_a = 2(a-b) = (4, 0)
    const auto sim = contrastive_loss(embedding({2.0, 0.0}), embedding({0.0, 0.0}), 1, 1.0);
    CHECK(sim.loss == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(sim.d_a[0] == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(sim.d_a[1] == 0.0);
    CHECK(sim.d_b[0] == doctest::Approx(-4.0).epsilon(1e-15));

    // dissimilar inside the margin: loss = (1 - 0.5)^2 = 0.25
    const auto in_margin =
        contrastive_loss(embedding({0.5, 0.0}), embedding({0.0, 0.0}), 0, 1.0);
    CHECK(in_margin.loss == doctest::Approx(0.25).epsilon(1e-15));

    // dissimilar beyond the margin: hinge inactive
    const auto beyond =
        contrastive_loss(embedding({1.5, 0.0}), embedding({0.0, 0.0}), 0, 1.0);
    CHECK(beyond.loss == 0.0);
    CHECK(beyond.d_a[0] == 0.0);

    // dissimilar at exactly zero distance: subgradient pinned to zero
    const auto at_zero =
        contrastive_loss(embedding({1.0, 1.0}), embedding({1.0, 1.0}), 0, 1.0);
    CHECK(at_zero.loss == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(at_zero.d_a[0] == 0.0);
    CHECK(at_zero.d_b[0] == 0.0);

    CHECK_THROWS_AS(contrastive_loss(embedding({1.0}), embedding({1.0, 2.0}), 1, 1.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(contrastive_loss(embedding({1.0}), embedding({2.0}), 2, 1.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(contrastive_loss(embedding({1.0}), embedding({2.0}), 1, 0.0),
                    std::invalid_argument);
}

TEST_CASE("contrastive_loss gradients agree with finite differences") {
    Rng rng(31);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor a({4}), b({4});
        for (double& v : a.data) v = rng.uniform(-2.0, 2.0);
        for (double& v : b.data) v = rng.uniform(-2.0, 2.0);
        const int y = rep % 2;
        const double m = 1.0 + rng.uniform();

        const auto g = contrastive_loss(a, b, y, m);
        CHECK(g.loss >= 0.0);

        const double eps = 1e-6;
        for (std::size_t i = 0; i < 4; ++i) {
            Tensor ap = a, am = a;
            ap[i] += eps;
            am[i] -= eps;
            const double num = (contrastive_loss(ap, b, y, m).loss -
                                contrastive_loss(am, b, y, m).loss) /
                               (2 * eps);
            CHECK(std::abs(g.d_a[i] - num) <
                  1e-6 * std::max({std::abs(num), std::abs(g.d_a[i]), 1.0}));
        }
        // the pair is symmetric: swapping arguments swaps the gradients
        const auto swapped = contrastive_loss(b, a, y, m);
        CHECK(swapped.loss == g.loss);
        for (std::size_t i = 0; i < 4; ++i) CHECK(swapped.d_a[i] == g.d_b[i]);
    }
}

TEST_CASE("similar loss grows with distance") {
    double prev = -1.0;
    for (double d = 0.0; d <= 3.0; d += 0.25) {
        const auto g = contrastive_loss(embedding({d, 0.0}), embedding({0.0, 0.0}), 1, 1.0);
        CHECK(g.loss > prev);
        prev = g.loss;
    }
}

TEST_CASE("detect_collapse compares mean pairwise distance to the tolerance") {
    std::vector<Tensor> spread = {embedding({0.0, 0.0}), embedding({1.0, 0.0})};
    CHECK_FALSE(detect_collapse(spread, 1e-6));
    std::vector<Tensor> together = {embedding({0.5, 0.5}), embedding({0.5, 0.5 + 1e-9})};
    CHECK(detect_collapse(together, 1e-6));
    // tolerance is a strict upper bound on the mean
    std::vector<Tensor> at_tol = {embedding({0.0}), embedding({1e-6})};
    CHECK_FALSE(detect_collapse(at_tol, 1e-6));
}

TEST_CASE("reference set validation") {
    ReferenceSet refs = phantom_refs(3, 1);
    CHECK_NOTHROW(refs.validate());

    ReferenceSet too_small = phantom_refs(1, 1);
    CHECK_THROWS_AS(too_small.validate(), std::invalid_argument);

    ReferenceSet dup = phantom_refs(3, 1);
    dup.ids[2] = dup.ids[0];
    CHECK_THROWS_AS(dup.validate(), std::invalid_argument);

    ReferenceSet skewed = phantom_refs(3, 1);
    skewed.volumes.pop_back();
    CHECK_THROWS_AS(skewed.validate(), std::invalid_argument);
}

TEST_CASE("sample_reference_ids draws distinct good ids deterministically") {
    DatasetManifest m;
    for (int i = 0; i < 8; ++i)
        m.entries.push_back({"good_" + std::to_string(i), "p" + std::to_string(i),
                             Label::good, std::nullopt});
    m.entries.push_back({"bad_0", "pb", Label::bad, CorruptionKind::blank_noise});

    const auto a = sample_reference_ids(m, 4, 17);
    const auto b = sample_reference_ids(m, 4, 17);
    const auto c = sample_reference_ids(m, 4, 18);
    CHECK(a == b);
    CHECK(a != c);
    CHECK(a.size() == 4);
    std::set<std::string> distinct(a.begin(), a.end());
    CHECK(distinct.size() == 4);
    for (const std::string& id : a) CHECK(id.rfind("good_", 0) == 0);

    CHECK_THROWS_AS(sample_reference_ids(m, 9, 0), std::runtime_error);
}

TEST_CASE("train with zero epochs is a no-op that still reports") {
    const ReferenceSet refs = phantom_refs(3, 2);
    EmbeddingNet net = init_net(tiny_spec(), 5);
    const EmbeddingNet before = net;

    TrainConfig cfg;
    cfg.epochs = 0;
    const TrainReport rep = train(net, refs, cfg);

    CHECK(net.conv1_w.data == before.conv1_w.data);
    CHECK(net.dense_w.data == before.dense_w.data);
    CHECK(rep.epoch_mean_loss.empty());
    CHECK(rep.sgd_steps == 0);
    CHECK_FALSE(rep.collapsed);
    CHECK(rep.initial_mean_intra_ref_ed == rep.final_mean_intra_ref_ed);
}

TEST_CASE("training tightens the reference cluster") {
    const ReferenceSet refs = phantom_refs(4, 3);
    EmbeddingNet net = init_net(tiny_spec(), 7);

    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.sgd.learning_rate = 1e-3;
    cfg.shuffle_seed = 11;
    const TrainReport rep = train(net, refs, cfg);

    CHECK(rep.sgd_steps == 3 * 6);  // epochs * C(4,2)
    REQUIRE(rep.epoch_mean_loss.size() == 3);
    for (const double l : rep.epoch_mean_loss) CHECK(l >= 0.0);
    CHECK(rep.final_mean_intra_ref_ed < rep.initial_mean_intra_ref_ed);
    CHECK_FALSE(rep.collapsed);

    // report distances match recomputing them from the trained weights
    const double recomputed = mean_intra_ed(embed_refs(net, refs, cfg.pooling));
    CHECK(recomputed == doctest::Approx(rep.final_mean_intra_ref_ed).epsilon(1e-12));
}

TEST_CASE("training is bit-for-bit deterministic") {
    const ReferenceSet refs = phantom_refs(4, 4);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.shuffle_seed = 9;

    EmbeddingNet n1 = init_net(tiny_spec(), 8);
    EmbeddingNet n2 = init_net(tiny_spec(), 8);
    const TrainReport r1 = train(n1, refs, cfg);
    const TrainReport r2 = train(n2, refs, cfg);

    CHECK(n1.conv1_w.data == n2.conv1_w.data);
    CHECK(n1.conv2_w.data == n2.conv2_w.data);
    CHECK(n1.dense_w.data == n2.dense_w.data);
    CHECK(n1.dense_b.data == n2.dense_b.data);
    CHECK(r1.epoch_mean_loss == r2.epoch_mean_loss);
    CHECK(r1.final_mean_intra_ref_ed == r2.final_mean_intra_ref_ed);

    // a different shuffle seed trains through a different pair order
    EmbeddingNet n3 = init_net(tiny_spec(), 8);
    TrainConfig other = cfg;
    other.shuffle_seed = 10;
    train(n3, refs, other);
    CHECK(n1.dense_w.data != n3.dense_w.data);
}

TEST_CASE("similar-only contrastive training collapses under an aggressive rate") {
    // constant inputs cannot be told apart by structure, so a large learning
    // rate drives all embeddings to one point
    const ReferenceSet refs = flat_refs({0.2, 0.5, 0.8});
    EmbeddingNet net = init_net(tiny_spec(), 2);

    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.sgd.learning_rate = 1.0;
    CHECK_THROWS_AS(train(net, refs, cfg), collapse_error);

    // the carried report marks the collapse
    EmbeddingNet net2 = init_net(tiny_spec(), 2);
    try {
        train(net2, refs, cfg);
    } catch (const collapse_error& e) {
        CHECK(e.report().collapsed);
        CHECK(e.report().final_mean_intra_ref_ed < cfg.collapse_tolerance);
    }
}

TEST_CASE("a diverging learning rate raises training_error") {
    const ReferenceSet refs = phantom_refs(2, 6);
    EmbeddingNet net = init_net(tiny_spec(), 1);
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.sgd.learning_rate = 1e200;
    CHECK_THROWS_AS(train(net, refs, cfg), training_error);
}

TEST_CASE("train validates its inputs") {
    const ReferenceSet refs = phantom_refs(3, 1);
    EmbeddingNet net = init_net(tiny_spec(), 0);

    TrainConfig cfg;
    cfg.batch_size = 2;
    CHECK_THROWS_AS(train(net, refs, cfg), std::invalid_argument);

    ReferenceSet wrong = phantom_refs(3, 1);
    wrong.volumes[1] = gen_good(0, 2, 16, 16);  // not preprocessed to 8x8
    CHECK_THROWS_AS(train(net, wrong, TrainConfig{}), std::invalid_argument);
}

TEST_CASE("train report serializes to key-value lines") {
    TempDir dir;
    TrainReport rep;
    rep.epoch_mean_loss = {0.5, 0.25};
    rep.initial_mean_intra_ref_ed = 1.5;
    rep.final_mean_intra_ref_ed = 0.75;
    rep.sgd_steps = 12;
    const std::string path = dir.file("report.txt");
    save_train_report(rep, path);

    std::ifstream in(path);
    std::string content((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
    CHECK(content.find("epochs 2") != std::string::npos);
    CHECK(content.find("sgd_steps 12") != std::string::npos);
    CHECK(content.find("collapsed 0") != std::string::npos);
}
