#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "volscreen/net.hpp"
#include "volscreen/trainer.hpp"
#include "volscreen/volume.hpp"

namespace volscreen {

// Parallel lists; positive class = bad (higher score = more anomalous).
struct LabeledScores {
    std::vector<double> score;
    std::vector<bool> is_bad;
    std::vector<std::string> id;

    std::size_t size() const { return score.size(); }
    void push(double s, bool bad, std::string item_id) {
        score.push_back(s);
        is_bad.push_back(bad);
        id.push_back(std::move(item_id));
    }
};

// Mann-Whitney AUC: P(score_bad > score_good) + half the ties, via midranks.
double auc(const LabeledScores& s);

struct RocCurve {
    std::vector<std::pair<double, double>> points;  // (fpr, tpr), threshold descending
    double auc = 0.0;                               // trapezoidal area under the points
};

// Threshold sweep over the distinct scores; the trapezoidal area agrees with
// the rank-based auc to within 1e-12.
RocCurve roc_points(const LabeledScores& s);

struct ConfusionCounts {
    std::size_t tp = 0, fn = 0, tn = 0, fp = 0;

    std::optional<double> sensitivity() const;  // tp/(tp+fn); absent without positives
    std::optional<double> specificity() const;  // tn/(tn+fp); absent without negatives
};

// Predicted-bad iff score > tau (strict, the flagging rule).
ConfusionCounts confusion_at(const LabeledScores& s, double tau);

// Confusion of an explicit flag column (e.g. a scores CSV) against labels.
ConfusionCounts confusion_from_flags(const std::vector<bool>& is_bad,
                                     const std::vector<bool>& flagged);

// The distinct score maximizing Youden's J = sensitivity + specificity - 1
// under the strict-> rule; ties resolve to the largest threshold.
double youden_threshold(const LabeledScores& s);

struct EvalReport {
    std::string method;
    std::size_t n = 0, n_bad = 0, n_good = 0;
    double auc = 0.0;
    ConfusionCounts flag_counts;  // confusion of the scores' flag column
    std::optional<double> youden_tau;
    std::optional<ConfusionCounts> youden_counts;
    std::vector<std::pair<std::string, std::string>> config_echo;
};

// Key-value text document, one metric per line.
void save_eval_report(const EvalReport& r, const std::string& path);

// 512x512 viewport with 48px margins: axes, chance diagonal, the ROC
// polyline, and an AUC caption.
void write_roc_svg(const RocCurve& curve, const std::string& path);

// One retrain-from-scratch run of the reference-set stability experiment.
struct StabilityRun {
    std::uint64_t run_seed = 0;
    std::vector<std::string> ref_ids;
    double auc_value = 0.0;        // over the non-reference items
    std::size_t flagged_refs = 0;  // references flagged by their own model
};

struct StabilitySummary {
    std::vector<StabilityRun> runs;
    double min_auc = 0.0;
    double max_auc = 0.0;
    double spread = 0.0;  // max - min
};

struct StabilityConfig {
    std::size_t runs = 5;
    std::uint64_t base_seed = 0;
    std::size_t ref_size = 20;
    NetSpec net_spec;
    TrainConfig train;  // per-run seeds are derived, overriding shuffle_seed
};

// For each run: sample a fresh reference set from the good entries, train a
// fresh net, and record the AUC over everything else. All run seeds derive
// from base_seed, so the summary is reproducible; threads > 1 executes runs
// concurrently without changing it.
StabilitySummary ref_sensitivity_experiment(const DatasetManifest& manifest,
                                            const StabilityConfig& cfg,
                                            std::size_t threads = 1);

void save_stability_summary(const StabilitySummary& s, const std::string& path);

}  // namespace volscreen
