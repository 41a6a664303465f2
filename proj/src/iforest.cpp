#include "volscreen/iforest.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace volscreen {

namespace {

std::size_t ceil_log2(std::size_t n) {
    return n <= 1 ? 0 : static_cast<std::size_t>(std::bit_width(n - 1));
}

std::size_t build_rec(std::vector<ITree::Node>& nodes,
                      const std::vector<std::vector<double>>& points,
                      const std::vector<std::size_t>& items, std::size_t depth,
                      std::size_t height_limit, Rng& rng) {
    const std::size_t me = nodes.size();
    nodes.emplace_back();
    nodes[me].depth = depth;

    auto make_external = [&] {
        nodes[me].size = items.size();
        return me;
    };
    if (depth >= height_limit || items.size() <= 1) return make_external();

    const std::size_t dim_count = points[items[0]].size();
    std::vector<double> lo(points[items[0]]);
    std::vector<double> hi(points[items[0]]);
    for (std::size_t k = 1; k < items.size(); ++k)
        for (std::size_t d = 0; d < dim_count; ++d) {
            const double v = points[items[k]][d];
            lo[d] = std::min(lo[d], v);
            hi[d] = std::max(hi[d], v);
        }
    // a dimension is splittable only if some double lies strictly between its
    // extremes; a 1-ulp span (e.g. two rounding-noise variants of the same
    // quantized mean) has no interior value to draw and counts as constant
    std::vector<std::size_t> spread_dims;
    for (std::size_t d = 0; d < dim_count; ++d)
        if (std::nextafter(lo[d], hi[d]) < hi[d]) spread_dims.push_back(d);
    if (spread_dims.empty()) return make_external();  // no splittable dimension

    const std::size_t dim = spread_dims[rng.below(spread_dims.size())];
    // uniform(lo, hi) can land on lo by rounding; the split must cut off a
    // non-empty set on both sides, so redraw until strictly inside.
    double split;
    do {
        split = rng.uniform(lo[dim], hi[dim]);
    } while (!(split > lo[dim] && split < hi[dim]));

    std::vector<std::size_t> left_items, right_items;
    for (const std::size_t i : items)
        (points[i][dim] < split ? left_items : right_items).push_back(i);

    nodes[me].internal = true;
    nodes[me].split_dim = dim;
    nodes[me].split_value = split;
    const std::size_t l = build_rec(nodes, points, left_items, depth + 1, height_limit, rng);
    const std::size_t r = build_rec(nodes, points, right_items, depth + 1, height_limit, rng);
    nodes[me].left = l;
    nodes[me].right = r;
    return me;
}

}  // namespace

std::vector<double> extract_features(const Volume& v, std::size_t grid) {
    if (grid < 1) throw std::invalid_argument("extract_features: grid must be >= 1");
    if (v.slices == 0 || v.height == 0 || v.width == 0)
        throw std::invalid_argument("extract_features: empty volume");

    const std::size_t mid = v.slices / 2;
    std::vector<double> features(grid * grid, 0.0);
    for (std::size_t gy = 0; gy < grid; ++gy)
        for (std::size_t gx = 0; gx < grid; ++gx) {
            std::size_t y0 = gy * v.height / grid;
            std::size_t y1 = (gy + 1) * v.height / grid;
            std::size_t x0 = gx * v.width / grid;
            std::size_t x1 = (gx + 1) * v.width / grid;
            // tiny inputs: keep every cell non-empty by widening to one pixel
            if (y1 == y0) {
                y0 = std::min(y0, v.height - 1);
                y1 = y0 + 1;
            }
            if (x1 == x0) {
                x0 = std::min(x0, v.width - 1);
                x1 = x0 + 1;
            }
            double sum = 0.0;
            for (std::size_t y = y0; y < y1; ++y)
                for (std::size_t x = x0; x < x1; ++x) sum += v.at(mid, y, x);
            features[gy * grid + gx] =
                sum / static_cast<double>((y1 - y0) * (x1 - x0));
        }
    return features;
}

double avg_path_c(std::size_t n) {
    if (n < 2) return 0.0;
    constexpr double kEulerGamma = 0.5772156649;
    const double nn = static_cast<double>(n);
    return 2.0 * (std::log(nn - 1.0) + kEulerGamma) - 2.0 * (nn - 1.0) / nn;
}

ITree build_tree(const std::vector<std::vector<double>>& points, std::size_t height_limit,
                 Rng& rng) {
    if (points.empty()) throw std::invalid_argument("build_tree: no points");
    const std::size_t dim = points[0].size();
    for (const auto& p : points)
        if (p.size() != dim)
            throw std::invalid_argument("build_tree: inconsistent feature dims");

    std::vector<std::size_t> items(points.size());
    std::iota(items.begin(), items.end(), std::size_t{0});
    ITree tree;
    build_rec(tree.nodes, points, items, 0, height_limit, rng);
    return tree;
}

double path_length(const std::vector<double>& x, const ITree& tree) {
    if (tree.nodes.empty()) throw std::invalid_argument("path_length: empty tree");
    std::size_t at = 0;
    while (tree.nodes[at].internal) {
        const ITree::Node& node = tree.nodes[at];
        if (node.split_dim >= x.size())
            throw std::invalid_argument("path_length: feature dimension mismatch");
        at = x[node.split_dim] < node.split_value ? node.left : node.right;
        if (at >= tree.nodes.size())
            throw std::runtime_error("path_length: malformed tree (child out of range)");
    }
    return static_cast<double>(tree.nodes[at].depth) + avg_path_c(tree.nodes[at].size);
}

IsolationForest fit(const std::vector<std::vector<double>>& features,
                    const ForestConfig& cfg, std::size_t threads) {
    if (features.size() < 2) throw std::invalid_argument("fit: need at least 2 points");
    if (cfg.trees < 1) throw std::invalid_argument("fit: trees must be >= 1");
    if (cfg.subsample < 2) throw std::invalid_argument("fit: subsample must be >= 2");
    const std::size_t dim = features[0].size();
    if (dim == 0) throw std::invalid_argument("fit: zero-dimensional features");
    for (const auto& f : features)
        if (f.size() != dim) throw std::invalid_argument("fit: inconsistent feature dims");

    IsolationForest forest;
    forest.feature_dim = dim;
    forest.subsample_size = std::min(cfg.subsample, features.size());
    forest.height_limit = ceil_log2(forest.subsample_size);
    forest.trees.resize(cfg.trees);

    auto build_one = [&](std::size_t t) {
        Rng rng(hash64(cfg.seed, t));
        std::vector<std::size_t> idx(features.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        rng.shuffle(idx);
        idx.resize(forest.subsample_size);
        std::vector<std::vector<double>> sample;
        sample.reserve(idx.size());
        for (const std::size_t i : idx) sample.push_back(features[i]);
        forest.trees[t] = build_tree(sample, forest.height_limit, rng);
    };

    if (threads <= 1 || cfg.trees == 1) {
        for (std::size_t t = 0; t < cfg.trees; ++t) build_one(t);
    } else {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t t = next.fetch_add(1); t < cfg.trees; t = next.fetch_add(1))
                build_one(t);
        };
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(threads, cfg.trees); ++t)
            pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    return forest;
}

double anomaly_score(const std::vector<double>& x, const IsolationForest& forest) {
    if (forest.trees.empty()) throw std::invalid_argument("anomaly_score: unfitted forest");
    if (x.size() != forest.feature_dim)
        throw std::invalid_argument("anomaly_score: feature dimension mismatch");
    double sum = 0.0;
    for (const ITree& tree : forest.trees) sum += path_length(x, tree);
    const double mean_path = sum / static_cast<double>(forest.trees.size());
    return std::exp2(-mean_path / avg_path_c(forest.subsample_size));
}

}  // namespace volscreen
