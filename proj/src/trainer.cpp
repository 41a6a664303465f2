#include "volscreen/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "volscreen/rng.hpp"

namespace volscreen {

namespace {

double ed(const Tensor& a, const Tensor& b) {
    double sq = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double diff = a[i] - b[i];
        sq += diff * diff;
    }
    return std::sqrt(sq);
}

double mean_pairwise_ed(const std::vector<Tensor>& embs) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < embs.size(); ++i)
        for (std::size_t j = i + 1; j < embs.size(); ++j) {
            sum += ed(embs[i], embs[j]);
            ++count;
        }
    return sum / static_cast<double>(count);
}

std::vector<Tensor> embed_all(const EmbeddingNet& net, const ReferenceSet& refs,
                              Pooling pooling) {
    std::vector<Tensor> embs;
    embs.reserve(refs.size());
    for (const Volume& v : refs.volumes) embs.push_back(embed_volume(net, v, pooling));
    return embs;
}

// Routes dloss/dembedding back through the pooled forward passes of one
// branch; for mean pooling each slice receives d_emb/S.
void backprop_branch(const EmbeddingNet& net, const std::vector<ForwardCache>& caches,
                     const Tensor& d_emb, Pooling pooling, ParamGrads& into) {
    if (pooling == Pooling::mid_slice) {
        accumulate(into, backward(net, caches.front(), d_emb));
        return;
    }
    Tensor scaled = d_emb;
    const double inv = 1.0 / static_cast<double>(caches.size());
    for (double& x : scaled.data) x *= inv;
    for (const ForwardCache& cache : caches) accumulate(into, backward(net, cache, scaled));
}

}  // namespace

void ReferenceSet::validate() const {
    if (ids.size() != volumes.size())
        throw std::invalid_argument("reference set: ids and volumes differ in length");
    if (ids.size() < 2)
        throw std::invalid_argument("reference set: need at least 2 members, got " +
                                    std::to_string(ids.size()));
    std::set<std::string> seen(ids.begin(), ids.end());
    if (seen.size() != ids.size())
        throw std::invalid_argument("reference set: duplicate member ids");
}

std::vector<std::string> sample_reference_ids(const DatasetManifest& m, std::size_t k,
                                              std::uint64_t seed) {
    std::vector<std::string> good;
    for (const DatasetEntry& e : m.entries)
        if (e.label == Label::good) good.push_back(e.id);
    if (good.size() < k)
        throw std::runtime_error("reference sampling: manifest has " +
                                 std::to_string(good.size()) + " good entries, need " +
                                 std::to_string(k));
    Rng rng(seed);
    rng.shuffle(good);
    good.resize(k);
    return good;
}

std::vector<PairSample> enumerate_pairs(std::size_t k, std::uint64_t shuffle_seed) {
    if (k < 2) throw std::invalid_argument("enumerate_pairs: need k >= 2");
    std::vector<PairSample> pairs;
    pairs.reserve(k * (k - 1) / 2);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j) pairs.push_back({i, j, 1});
    Rng rng(shuffle_seed);
    rng.shuffle(pairs);
    return pairs;
}

ContrastiveGrads contrastive_loss(const Tensor& a, const Tensor& b, int y, double m) {
    if (m <= 0.0) throw std::invalid_argument("contrastive_loss: margin must be positive");
    if (a.numel() != b.numel())
        throw std::invalid_argument("contrastive_loss: embedding dims differ");
    if (y != 0 && y != 1)
        throw std::invalid_argument("contrastive_loss: y must be 0 or 1");

    ContrastiveGrads out;
    const std::size_t n = a.numel();
    out.d_a = Tensor({n});
    out.d_b = Tensor({n});

    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double diff = a[i] - b[i];
        sq += diff * diff;
    }
    const double d = std::sqrt(sq);

    if (y == 1) {
        out.loss = sq;
        for (std::size_t i = 0; i < n; ++i) {
            const double g = 2.0 * (a[i] - b[i]);
            out.d_a[i] = g;
            out.d_b[i] = -g;
        }
        return out;
    }

    const double hinge = m - d;
    if (hinge <= 0.0) return out;  // past the margin: zero loss, zero gradients
    out.loss = hinge * hinge;
    if (d > 0.0) {
        const double scale = -2.0 * hinge / d;
        for (std::size_t i = 0; i < n; ++i) {
            const double g = scale * (a[i] - b[i]);
            out.d_a[i] = g;
            out.d_b[i] = -g;
        }
    }
    return out;
}

bool detect_collapse(const std::vector<Tensor>& embeddings, double tol) {
    if (embeddings.size() < 2)
        throw std::invalid_argument("detect_collapse: need at least 2 embeddings");
    return mean_pairwise_ed(embeddings) < tol;
}

TrainReport train(EmbeddingNet& net, const ReferenceSet& refs, const TrainConfig& cfg) {
    refs.validate();
    if (cfg.batch_size != 1)
        throw std::invalid_argument("train: batch_size is fixed at 1");
    for (const Volume& v : refs.volumes)
        if (v.height != net.spec.input_h || v.width != net.spec.input_w)
            throw std::invalid_argument("train: reference '" + v.id +
                                        "' not preprocessed to net input dims");

    TrainReport report;
    report.initial_mean_intra_ref_ed = mean_pairwise_ed(embed_all(net, refs, cfg.pooling));

    SgdOptimizer opt(cfg.sgd);
    std::vector<ForwardCache> caches_a, caches_b;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto pairs = enumerate_pairs(refs.size(), hash64(cfg.shuffle_seed, epoch));
        double loss_sum = 0.0;
        for (const PairSample& p : pairs) {
            const Tensor ea = embed_volume(net, refs.volumes[p.a], cfg.pooling, &caches_a);
            const Tensor eb = embed_volume(net, refs.volumes[p.b], cfg.pooling, &caches_b);
            const ContrastiveGrads g = contrastive_loss(ea, eb, p.y, cfg.margin);
            if (!std::isfinite(g.loss))
                throw training_error(
                    "train: non-finite loss at epoch " + std::to_string(epoch) + " pair " +
                    refs.ids[p.a] + "/" + refs.ids[p.b] + " (try a smaller learning rate)");
            loss_sum += g.loss;

            ParamGrads grads = zero_grads(net.spec);
            backprop_branch(net, caches_a, g.d_a, cfg.pooling, grads);
            backprop_branch(net, caches_b, g.d_b, cfg.pooling, grads);
            try {
                opt.step(net, grads);
            } catch (const std::runtime_error& ex) {
                throw training_error("train: " + std::string(ex.what()) + " at epoch " +
                                     std::to_string(epoch));
            }
            ++report.sgd_steps;
        }
        report.epoch_mean_loss.push_back(loss_sum / static_cast<double>(pairs.size()));
    }

    const std::vector<Tensor> final_embs = embed_all(net, refs, cfg.pooling);
    report.final_mean_intra_ref_ed = mean_pairwise_ed(final_embs);
    report.collapsed = detect_collapse(final_embs, cfg.collapse_tolerance);
    if (report.collapsed) {
        std::ostringstream msg;
        msg << "training collapsed: mean intra-reference embedding distance "
            << report.final_mean_intra_ref_ed << " is below tolerance "
            << cfg.collapse_tolerance;
        throw collapse_error(msg.str(), report);
    }
    return report;
}

void save_train_report(const TrainReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write train report: " + path);
    char buf[64];
    auto fmt = [&buf](double v) {
        const auto res =
            std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
        return std::string(buf, res.ptr);
    };
    out << "epochs " << report.epoch_mean_loss.size() << "\n";
    out << "sgd_steps " << report.sgd_steps << "\n";
    out << "initial_mean_intra_ref_ed " << fmt(report.initial_mean_intra_ref_ed) << "\n";
    out << "final_mean_intra_ref_ed " << fmt(report.final_mean_intra_ref_ed) << "\n";
    out << "collapsed " << (report.collapsed ? 1 : 0) << "\n";
    for (std::size_t e = 0; e < report.epoch_mean_loss.size(); ++e)
        out << "epoch_mean_loss " << e << " " << fmt(report.epoch_mean_loss[e]) << "\n";
    if (!out) throw std::runtime_error("short write: " + path);
}

}  // namespace volscreen
