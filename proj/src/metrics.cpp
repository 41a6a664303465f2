#include "volscreen/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <thread>

#include "volscreen/rng.hpp"
#include "volscreen/scorer.hpp"

namespace volscreen {

namespace {

void validate_scores(const LabeledScores& s, bool need_both_classes) {
    if (s.score.size() != s.is_bad.size() || s.score.size() != s.id.size())
        throw std::invalid_argument("labeled scores: parallel lists differ in length");
    if (s.score.empty()) throw std::invalid_argument("labeled scores: empty");
    for (const double v : s.score)
        if (!std::isfinite(v))
            throw std::invalid_argument("labeled scores: non-finite score");
    if (need_both_classes) {
        const std::size_t bad =
            static_cast<std::size_t>(std::count(s.is_bad.begin(), s.is_bad.end(), true));
        if (bad == 0 || bad == s.is_bad.size())
            throw std::invalid_argument(
                "labeled scores: need at least one bad and one good item");
    }
}

std::string fmt_double(double v) {
    char buf[64];
    const auto res =
        std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

// short fixed-point for SVG coordinates/captions
std::string fmt_fixed(double v, int precision) {
    char buf[64];
    const auto res =
        std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, precision);
    return std::string(buf, res.ptr);
}

}  // namespace

double auc(const LabeledScores& s) {
    validate_scores(s, true);
    const std::size_t n = s.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return s.score[a] < s.score[b]; });

    std::size_t n_bad = 0;
    double rank_sum_bad = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && s.score[order[j]] == s.score[order[i]]) ++j;
        const double midrank = static_cast<double>(i + 1 + j) / 2.0;  // ranks i+1..j
        for (std::size_t k = i; k < j; ++k)
            if (s.is_bad[order[k]]) {
                rank_sum_bad += midrank;
                ++n_bad;
            }
        i = j;
    }
    const std::size_t n_good = n - n_bad;
    const double u = rank_sum_bad -
                     static_cast<double>(n_bad) * static_cast<double>(n_bad + 1) / 2.0;
    return u / (static_cast<double>(n_bad) * static_cast<double>(n_good));
}

RocCurve roc_points(const LabeledScores& s) {
    validate_scores(s, true);
    const std::size_t n = s.size();
    const std::size_t n_bad =
        static_cast<std::size_t>(std::count(s.is_bad.begin(), s.is_bad.end(), true));
    const std::size_t n_good = n - n_bad;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return s.score[a] > s.score[b]; });

    RocCurve curve;
    curve.points.emplace_back(0.0, 0.0);
    std::size_t tp = 0, fp = 0, i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && s.score[order[j]] == s.score[order[i]]) ++j;
        for (std::size_t k = i; k < j; ++k) {
            if (s.is_bad[order[k]])
                ++tp;
            else
                ++fp;
        }
        curve.points.emplace_back(static_cast<double>(fp) / static_cast<double>(n_good),
                                  static_cast<double>(tp) / static_cast<double>(n_bad));
        i = j;
    }

    for (std::size_t k = 1; k < curve.points.size(); ++k) {
        const auto& [x0, y0] = curve.points[k - 1];
        const auto& [x1, y1] = curve.points[k];
        curve.auc += 0.5 * (y0 + y1) * (x1 - x0);
    }
    return curve;
}

std::optional<double> ConfusionCounts::sensitivity() const {
    if (tp + fn == 0) return std::nullopt;
    return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

std::optional<double> ConfusionCounts::specificity() const {
    if (tn + fp == 0) return std::nullopt;
    return static_cast<double>(tn) / static_cast<double>(tn + fp);
}

ConfusionCounts confusion_at(const LabeledScores& s, double tau) {
    validate_scores(s, false);
    ConfusionCounts c;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const bool predicted_bad = s.score[i] > tau;
        if (s.is_bad[i])
            ++(predicted_bad ? c.tp : c.fn);
        else
            ++(predicted_bad ? c.fp : c.tn);
    }
    return c;
}

ConfusionCounts confusion_from_flags(const std::vector<bool>& is_bad,
                                     const std::vector<bool>& flagged) {
    if (is_bad.size() != flagged.size())
        throw std::invalid_argument("confusion_from_flags: length mismatch");
    ConfusionCounts c;
    for (std::size_t i = 0; i < is_bad.size(); ++i) {
        if (is_bad[i])
            ++(flagged[i] ? c.tp : c.fn);
        else
            ++(flagged[i] ? c.fp : c.tn);
    }
    return c;
}

double youden_threshold(const LabeledScores& s) {
    validate_scores(s, true);
    std::vector<double> candidates(s.score);
    std::sort(candidates.begin(), candidates.end(), std::greater<>());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    double best_j = -2.0;
    double best_tau = candidates.front();
    for (const double tau : candidates) {  // descending: first max keeps largest tau
        const ConfusionCounts c = confusion_at(s, tau);
        const double j = *c.sensitivity() + *c.specificity() - 1.0;
        if (j > best_j) {
            best_j = j;
            best_tau = tau;
        }
    }
    return best_tau;
}

void save_eval_report(const EvalReport& r, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write eval report: " + path);
    auto rate = [](const std::optional<double>& v) {
        return v ? fmt_double(*v) : std::string("n/a");
    };
    out << "method " << r.method << "\n";
    out << "n " << r.n << "\n";
    out << "n_bad " << r.n_bad << "\n";
    out << "n_good " << r.n_good << "\n";
    out << "auc " << fmt_double(r.auc) << "\n";
    out << "flag_tp " << r.flag_counts.tp << "\n";
    out << "flag_fn " << r.flag_counts.fn << "\n";
    out << "flag_tn " << r.flag_counts.tn << "\n";
    out << "flag_fp " << r.flag_counts.fp << "\n";
    out << "flag_sensitivity " << rate(r.flag_counts.sensitivity()) << "\n";
    out << "flag_specificity " << rate(r.flag_counts.specificity()) << "\n";
    if (r.youden_tau) {
        out << "youden_tau " << fmt_double(*r.youden_tau) << "\n";
        out << "youden_tp " << r.youden_counts->tp << "\n";
        out << "youden_fn " << r.youden_counts->fn << "\n";
        out << "youden_tn " << r.youden_counts->tn << "\n";
        out << "youden_fp " << r.youden_counts->fp << "\n";
        out << "youden_sensitivity " << rate(r.youden_counts->sensitivity()) << "\n";
        out << "youden_specificity " << rate(r.youden_counts->specificity()) << "\n";
    }
    for (const auto& [key, value] : r.config_echo)
        out << "config " << key << " " << value << "\n";
    if (!out) throw std::runtime_error("short write: " + path);
}

void write_roc_svg(const RocCurve& curve, const std::string& path) {
    constexpr double kSize = 512.0;
    constexpr double kMargin = 48.0;
    const double span = kSize - 2.0 * kMargin;
    auto px = [&](double fpr) { return kMargin + fpr * span; };
    auto py = [&](double tpr) { return kSize - kMargin - tpr * span; };

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write roc svg: " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"512\" height=\"512\" "
           "viewBox=\"0 0 512 512\">\n";
    out << "<rect width=\"512\" height=\"512\" fill=\"white\"/>\n";
    // axes
    out << "<line x1=\"" << fmt_fixed(px(0), 2) << "\" y1=\"" << fmt_fixed(py(0), 2)
        << "\" x2=\"" << fmt_fixed(px(1), 2) << "\" y2=\"" << fmt_fixed(py(0), 2)
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << fmt_fixed(px(0), 2) << "\" y1=\"" << fmt_fixed(py(0), 2)
        << "\" x2=\"" << fmt_fixed(px(0), 2) << "\" y2=\"" << fmt_fixed(py(1), 2)
        << "\" stroke=\"black\"/>\n";
    // ticks at 0, 0.5, 1 on both axes
    for (const double t : {0.0, 0.5, 1.0}) {
        out << "<line x1=\"" << fmt_fixed(px(t), 2) << "\" y1=\"" << fmt_fixed(py(0), 2)
            << "\" x2=\"" << fmt_fixed(px(t), 2) << "\" y2=\""
            << fmt_fixed(py(0) + 6.0, 2) << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << fmt_fixed(px(t), 2) << "\" y=\""
            << fmt_fixed(py(0) + 20.0, 2)
            << "\" font-size=\"12\" text-anchor=\"middle\">" << fmt_fixed(t, 1)
            << "</text>\n";
        out << "<line x1=\"" << fmt_fixed(px(0), 2) << "\" y1=\"" << fmt_fixed(py(t), 2)
            << "\" x2=\"" << fmt_fixed(px(0) - 6.0, 2) << "\" y2=\""
            << fmt_fixed(py(t), 2) << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << fmt_fixed(px(0) - 10.0, 2) << "\" y=\""
            << fmt_fixed(py(t) + 4.0, 2)
            << "\" font-size=\"12\" text-anchor=\"end\">" << fmt_fixed(t, 1)
            << "</text>\n";
    }
    // axis labels and caption
    out << "<text x=\"256\" y=\"502\" font-size=\"14\" text-anchor=\"middle\">"
           "false positive rate</text>\n";
    out << "<text x=\"14\" y=\"256\" font-size=\"14\" text-anchor=\"middle\" "
           "transform=\"rotate(-90 14 256)\">true positive rate</text>\n";
    out << "<text x=\"256\" y=\"28\" font-size=\"14\" text-anchor=\"middle\">ROC (AUC = "
        << fmt_fixed(curve.auc, 3) << ")</text>\n";
    // chance diagonal
    out << "<line x1=\"" << fmt_fixed(px(0), 2) << "\" y1=\"" << fmt_fixed(py(0), 2)
        << "\" x2=\"" << fmt_fixed(px(1), 2) << "\" y2=\"" << fmt_fixed(py(1), 2)
        << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
    // the curve itself
    out << "<polyline fill=\"none\" stroke=\"crimson\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < curve.points.size(); ++i) {
        if (i) out << ' ';
        out << fmt_fixed(px(curve.points[i].first), 2) << ','
            << fmt_fixed(py(curve.points[i].second), 2);
    }
    out << "\"/>\n</svg>\n";
    if (!out) throw std::runtime_error("short write: " + path);
}

StabilitySummary ref_sensitivity_experiment(const DatasetManifest& manifest,
                                            const StabilityConfig& cfg,
                                            std::size_t threads) {
    if (cfg.runs < 2)
        throw std::invalid_argument("stability experiment: need at least 2 runs");
    for (const DatasetEntry& e : manifest.entries)
        if (e.label == Label::unknown)
            throw std::runtime_error("stability experiment: entry '" + e.id +
                                     "' has no label");

    StabilitySummary summary;
    summary.runs.resize(cfg.runs);
    std::vector<std::string> run_errors(cfg.runs);

    auto execute_run = [&](std::size_t r) {
        try {
            StabilityRun& run = summary.runs[r];
            run.run_seed = hash64(cfg.base_seed, r);
            run.ref_ids =
                sample_reference_ids(manifest, cfg.ref_size, hash64(run.run_seed, 1));
            const std::set<std::string> ref_set(run.ref_ids.begin(), run.ref_ids.end());

            ReferenceSet refs;
            refs.ids = run.ref_ids;
            for (const std::string& id : run.ref_ids) {
                const DatasetEntry* entry = nullptr;
                for (const DatasetEntry& e : manifest.entries)
                    if (e.id == id) {
                        entry = &e;
                        break;
                    }
                const Volume raw = load_volume(resolve_entry_path(manifest, *entry));
                refs.volumes.push_back(
                    preprocess(raw, cfg.net_spec.input_h, cfg.net_spec.input_w));
            }

            EmbeddingNet net = init_net(cfg.net_spec, hash64(run.run_seed, 2));
            TrainConfig tc = cfg.train;
            tc.shuffle_seed = hash64(run.run_seed, 3);
            train(net, refs, tc);

            std::vector<std::vector<double>> ref_embs;
            for (const Volume& v : refs.volumes)
                ref_embs.push_back(embed_volume(net, v, tc.pooling).data);
            const ThresholdModel model =
                make_threshold_model(run.ref_ids, std::move(ref_embs));

            const ScoreResult scored =
                score_dataset(net, manifest, model, tc.pooling, 1);
            if (!scored.failures.empty())
                throw std::runtime_error("run " + std::to_string(r) +
                                         ": could not score '" +
                                         scored.failures.front().id +
                                         "': " + scored.failures.front().message);

            std::map<std::string, bool> bad_by_id;
            for (const DatasetEntry& e : manifest.entries)
                bad_by_id[e.id] = e.label == Label::bad;
            LabeledScores held_out;
            for (const ScoreRecord& rec : scored.records) {
                if (ref_set.count(rec.id)) {
                    if (rec.flagged) ++run.flagged_refs;
                    continue;
                }
                held_out.push(rec.med, bad_by_id.at(rec.id), rec.id);
            }
            run.auc_value = auc(held_out);
        } catch (const std::exception& ex) {
            run_errors[r] = ex.what();
            if (run_errors[r].empty()) run_errors[r] = "unknown error";
        }
    };

    if (threads <= 1 || cfg.runs == 1) {
        for (std::size_t r = 0; r < cfg.runs; ++r) execute_run(r);
    } else {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t r = next.fetch_add(1); r < cfg.runs; r = next.fetch_add(1))
                execute_run(r);
        };
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(threads, cfg.runs); ++t)
            pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    for (std::size_t r = 0; r < cfg.runs; ++r)
        if (!run_errors[r].empty())
            throw std::runtime_error("stability run " + std::to_string(r) +
                                     " failed: " + run_errors[r]);

    summary.min_auc = summary.runs.front().auc_value;
    summary.max_auc = summary.min_auc;
    for (const StabilityRun& run : summary.runs) {
        summary.min_auc = std::min(summary.min_auc, run.auc_value);
        summary.max_auc = std::max(summary.max_auc, run.auc_value);
    }
    summary.spread = summary.max_auc - summary.min_auc;
    return summary;
}

void save_stability_summary(const StabilitySummary& s, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write stability summary: " + path);
    out << "runs " << s.runs.size() << "\n";
    for (std::size_t r = 0; r < s.runs.size(); ++r) {
        const StabilityRun& run = s.runs[r];
        out << "run " << r << " seed " << run.run_seed << " auc "
            << fmt_double(run.auc_value) << " flagged_refs " << run.flagged_refs << "\n";
        out << "run_refs " << r;
        for (const std::string& id : run.ref_ids) out << " " << id;
        out << "\n";
    }
    out << "min_auc " << fmt_double(s.min_auc) << "\n";
    out << "max_auc " << fmt_double(s.max_auc) << "\n";
    out << "spread " << fmt_double(s.spread) << "\n";
    if (!out) throw std::runtime_error("short write: " + path);
}

}  // namespace volscreen
