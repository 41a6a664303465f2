#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "volscreen/net.hpp"
#include "volscreen/volume.hpp"

namespace volscreen {

// The K good volumes the embedder trains on, already preprocessed to the
// net's input dims. ids and volumes are parallel.
struct ReferenceSet {
    std::vector<std::string> ids;
    std::vector<Volume> volumes;

    std::size_t size() const { return ids.size(); }
    void validate() const;
};

// Draws k distinct good-labeled ids from the manifest: seeded shuffle of the
// good entries (in manifest order), then the first k.
std::vector<std::string> sample_reference_ids(const DatasetManifest& m, std::size_t k,
                                              std::uint64_t seed);

// One training pair; a and b index into the ReferenceSet. y=1 means similar.
struct PairSample {
    std::size_t a = 0;
    std::size_t b = 0;
    int y = 1;
};

struct TrainConfig {
    std::size_t epochs = 6;
    std::size_t batch_size = 1;  // one pair per SGD step; fixed
    SgdConfig sgd;
    double margin = 1.0;
    Pooling pooling = Pooling::mean_slices;
    std::uint64_t shuffle_seed = 0;
    double collapse_tolerance = 1e-6;
};

struct TrainReport {
    std::vector<double> epoch_mean_loss;  // one entry per epoch
    double initial_mean_intra_ref_ed = 0.0;
    double final_mean_intra_ref_ed = 0.0;
    bool collapsed = false;
    std::size_t sgd_steps = 0;
};

// Any failure of the training run itself (as opposed to bad inputs), e.g. a
// non-finite loss from a diverging learning rate.
class training_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Training drove every reference to (nearly) one embedding point — the
// degenerate optimum of similar-only contrastive loss. Carries the report so
// callers can still inspect the loss curve.
class collapse_error : public training_error {
public:
    collapse_error(const std::string& msg, TrainReport report)
        : training_error(msg), report_(std::move(report)) {}
    const TrainReport& report() const { return report_; }

private:
    TrainReport report_;
};

// All k(k-1)/2 unordered pairs exactly once, order shuffled by seed, all y=1.
std::vector<PairSample> enumerate_pairs(std::size_t k, std::uint64_t shuffle_seed);

struct ContrastiveGrads {
    double loss = 0.0;
    Tensor d_a, d_b;  // dloss/dembedding for each branch
};

// loss = y*d^2 + (1-y)*max(0, m-d)^2 with d = ED(a, b). For the dissimilar
// hinge at d = 0 the returned (sub)gradients are zero.
ContrastiveGrads contrastive_loss(const Tensor& a, const Tensor& b, int y, double m);

// True iff the mean pairwise ED over the embeddings is below tol.
bool detect_collapse(const std::vector<Tensor>& embeddings, double tol);

// Contrastive training over the reference set: per pair, embed both members
// with the shared weights, backpropagate the loss through both branches into
// one gradient, take one SGD step. The pair order is reshuffled every epoch
// (seed derived from shuffle_seed and the epoch index). Throws collapse_error
// when the trained embeddings collapse and runtime_error on non-finite loss.
TrainReport train(EmbeddingNet& net, const ReferenceSet& refs, const TrainConfig& cfg);

// Structured text dump of a TrainReport (key-value lines), written by the
// CLI next to the weights file.
void save_train_report(const TrainReport& report, const std::string& path);

}  // namespace volscreen
