#pragma once

#include <cstdint>
#include <vector>

#include "volscreen/rng.hpp"
#include "volscreen/volume.hpp"

namespace volscreen {

// Isolation tree stored as a flat node array; nodes[0] is the root.
struct ITree {
    struct Node {
        bool internal = false;
        // internal nodes
        std::size_t split_dim = 0;
        double split_value = 0.0;
        std::size_t left = 0;
        std::size_t right = 0;
        // external nodes
        std::size_t size = 0;
        std::size_t depth = 0;
    };
    std::vector<Node> nodes;
};

struct IsolationForest {
    std::vector<ITree> trees;
    std::size_t subsample_size = 0;  // effective psi after clamping
    std::size_t height_limit = 0;
    std::size_t feature_dim = 0;
};

struct ForestConfig {
    std::size_t trees = 100;
    std::size_t subsample = 256;  // clamped to the dataset size
    std::uint64_t seed = 0;
};

// Mean-pools the mid-slice (index S/2) into a grid x grid feature vector,
// flattened row-major.
std::vector<double> extract_features(const Volume& v, std::size_t grid);

// Average unsuccessful-search path length of a BST with n points:
// c(n) = 2(ln(n-1) + gamma) - 2(n-1)/n, with c(0) = c(1) = 0.
double avg_path_c(std::size_t n);

// Recursive random splitting: at each node pick a uniform random dimension
// with some double strictly between its min and max (a 1-ulp span cannot be
// split and counts as constant), then a uniform split strictly inside
// (min, max); stops at the height limit, singletons, or unsplittable sets.
ITree build_tree(const std::vector<std::vector<double>>& points, std::size_t height_limit,
                 Rng& rng);

// Depth of the external node x lands in, plus c(size of that node).
double path_length(const std::vector<double>& x, const ITree& tree);

// Builds cfg.trees trees, each over a without-replacement subsample of
// min(cfg.subsample, N) points with height limit ceil(log2 psi). Per-tree
// seeds derive from cfg.seed, so threads > 1 changes nothing in the result.
IsolationForest fit(const std::vector<std::vector<double>>& features,
                    const ForestConfig& cfg, std::size_t threads = 1);

// s(x) = 2^(-E[path_length] / c(psi)), in (0, 1); higher = more anomalous.
double anomaly_score(const std::vector<double>& x, const IsolationForest& forest);

}  // namespace volscreen
