#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "volscreen/net.hpp"
#include "volscreen/volume.hpp"

namespace volscreen {

inline constexpr std::size_t knpos = std::numeric_limits<std::size_t>::max();

double euclidean(const std::vector<double>& a, const std::vector<double>& b);

// Mean ED from query to the references, skipping refs[exclude] when exclude
// is a valid index (used to self-exclude a scored reference member).
double med(const std::vector<double>& query, const std::vector<std::vector<double>>& refs,
           std::size_t exclude = knpos);

// tau = the largest pairwise ED among the references.
double compute_threshold(const std::vector<std::vector<double>>& refs);

// Reference embeddings with their ids plus the decision threshold tau.
struct ThresholdModel {
    std::vector<std::string> ids;
    std::vector<std::vector<double>> embeddings;
    double threshold = 0.0;

    std::size_t index_of(const std::string& id) const;  // knpos if absent
};

ThresholdModel make_threshold_model(std::vector<std::string> ids,
                                    std::vector<std::vector<double>> embeddings);

struct ScoreRecord {
    std::string id;
    double med = 0.0;
    bool flagged = false;   // med > tau, strict
    std::size_t rank = 0;   // 1 = highest MED; ties broken by id ascending
};

struct ScoreFailure {
    std::string id;
    std::string message;
};

struct ScoreResult {
    std::vector<ScoreRecord> records;    // rank order; one per scoreable entry
    std::vector<ScoreFailure> failures;  // entries whose volume could not be scored
};

// Embeds every manifest entry (loading and preprocessing its volume to the
// net dims) and scores it against the model. Unreadable entries become
// failures; the rest are still scored and ranked. threads > 1 scores items
// concurrently with output identical to the serial run.
ScoreResult score_dataset(const EmbeddingNet& net, const DatasetManifest& manifest,
                          const ThresholdModel& model, Pooling pooling,
                          std::size_t threads = 1);

// CSV with header exactly `id,med,flagged,rank`; med carries 17 significant
// digits so reloading is bit-exact.
void save_scores(const std::vector<ScoreRecord>& records, const std::string& path);
std::vector<ScoreRecord> load_scores(const std::string& path);

}  // namespace volscreen
