#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "volscreen/iforest.hpp"
#include "volscreen/metrics.hpp"
#include "volscreen/net.hpp"
#include "volscreen/rng.hpp"
#include "volscreen/scorer.hpp"
#include "volscreen/synth.hpp"
#include "volscreen/trainer.hpp"
#include "volscreen/volume.hpp"

namespace {

using namespace volscreen;

using Echo = std::vector<std::pair<std::string, std::string>>;

std::string fmt_double(double v) {
    char buf[64];
    const auto res =
        std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

// model.txt -> model.refs.txt, scores.csv -> scores.config.txt, ...
std::string sibling_path(const std::string& path, const std::string& new_ext) {
    std::filesystem::path p(path);
    p.replace_extension(new_ext);
    return p.string();
}

// Every run leaves the fully resolved configuration next to its outputs so
// any published number can be regenerated from files alone.
void write_echo(const std::string& path, const std::string& subcommand, const Echo& kv) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write config echo: " + path);
    out << "subcommand " << subcommand << "\n";
    for (const auto& [key, value] : kv) out << key << " " << value << "\n";
    if (!out) throw std::runtime_error("short write: " + path);
}

std::vector<std::string> read_id_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open id list: " + path);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) ids.push_back(line);
    }
    return ids;
}

void write_id_lines(const std::vector<std::string>& ids, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write id list: " + path);
    for (const std::string& id : ids) out << id << "\n";
    if (!out) throw std::runtime_error("short write: " + path);
}

const DatasetEntry& entry_by_id(const DatasetManifest& m, const std::string& id) {
    for (const DatasetEntry& e : m.entries)
        if (e.id == id) return e;
    throw std::runtime_error("id '" + id + "' not found in manifest");
}

Volume load_preprocessed(const DatasetManifest& m, const DatasetEntry& e,
                         const NetSpec& spec) {
    return preprocess(load_volume(resolve_entry_path(m, e)), spec.input_h, spec.input_w);
}

ReferenceSet build_reference_set(const DatasetManifest& m,
                                 const std::vector<std::string>& ids, const NetSpec& spec,
                                 bool require_good) {
    ReferenceSet refs;
    refs.ids = ids;
    for (const std::string& id : ids) {
        const DatasetEntry& e = entry_by_id(m, id);
        if (require_good && e.label != Label::good)
            throw std::runtime_error("reference '" + id + "' is not labeled good");
        refs.volumes.push_back(load_preprocessed(m, e, spec));
    }
    refs.validate();
    return refs;
}

ThresholdModel model_from_refs(const EmbeddingNet& net, const ReferenceSet& refs,
                               Pooling pooling) {
    std::vector<std::vector<double>> embeddings;
    embeddings.reserve(refs.size());
    for (const Volume& v : refs.volumes)
        embeddings.push_back(embed_volume(net, v, pooling).data);
    return make_threshold_model(refs.ids, std::move(embeddings));
}

std::map<std::string, bool> bad_label_by_id(const DatasetManifest& m) {
    std::map<std::string, bool> labels;
    for (const DatasetEntry& e : m.entries) {
        if (e.label == Label::unknown)
            throw std::runtime_error("entry '" + e.id + "' has no label");
        labels[e.id] = e.label == Label::bad;
    }
    return labels;
}

// ----- gen ---------------------------------------------------------------

struct GenArgs {
    std::string out;
    GenConfig cfg;
};

int run_gen(const GenArgs& a) {
    const DatasetManifest manifest = gen_corpus(a.cfg, a.out);
    write_echo((std::filesystem::path(a.out) / "config.txt").string(), "gen",
               {{"out", a.out},
                {"seed", std::to_string(a.cfg.seed)},
                {"good", std::to_string(a.cfg.n_good)},
                {"bad_per_kind", std::to_string(a.cfg.n_bad_per_kind)},
                {"slices", std::to_string(a.cfg.slices)},
                {"height", std::to_string(a.cfg.height)},
                {"width", std::to_string(a.cfg.width)}});
    std::cout << "wrote " << manifest.entries.size() << " volumes under " << a.out
              << "\n";
    return 0;
}

// ----- train ---------------------------------------------------------------

struct TrainArgs {
    std::string manifest_path;
    std::string model_path;
    std::string ref_ids_path;  // empty = sample
    std::size_t ref_size = 20;
    std::uint64_t ref_seed = 0;
    bool ref_seed_given = false;
    std::uint64_t seed = 0;
    std::size_t epochs = 6;
    double lr = 1e-3;
    double momentum = 0.0;
    double margin = 1.0;
    std::string pooling = "mean_slices";
    double collapse_tol = 1e-6;
};

int run_train(const TrainArgs& a) {
    const DatasetManifest manifest = load_manifest(a.manifest_path);
    const NetSpec spec;

    std::vector<std::string> ref_ids;
    std::uint64_t ref_seed = a.ref_seed_given ? a.ref_seed : hash64(a.seed, 2);
    if (!a.ref_ids_path.empty())
        ref_ids = read_id_lines(a.ref_ids_path);
    else
        ref_ids = sample_reference_ids(manifest, a.ref_size, ref_seed);
    const ReferenceSet refs = build_reference_set(manifest, ref_ids, spec, true);

    EmbeddingNet net = init_net(spec, hash64(a.seed, 0));
    TrainConfig cfg;
    cfg.epochs = a.epochs;
    cfg.sgd = {a.lr, a.momentum};
    cfg.margin = a.margin;
    cfg.pooling = pooling_from_string(a.pooling);
    cfg.shuffle_seed = hash64(a.seed, 1);
    cfg.collapse_tolerance = a.collapse_tol;

    Echo echo{{"manifest", a.manifest_path},
              {"model", a.model_path},
              {"ref_ids_file", a.ref_ids_path.empty() ? "(sampled)" : a.ref_ids_path},
              {"ref_size", std::to_string(refs.size())},
              {"ref_seed", a.ref_ids_path.empty() ? std::to_string(ref_seed) : "(unused)"},
              {"seed", std::to_string(a.seed)},
              {"init_seed", std::to_string(hash64(a.seed, 0))},
              {"shuffle_seed", std::to_string(cfg.shuffle_seed)},
              {"epochs", std::to_string(cfg.epochs)},
              {"lr", fmt_double(a.lr)},
              {"momentum", fmt_double(a.momentum)},
              {"margin", fmt_double(a.margin)},
              {"pooling", a.pooling},
              {"collapse_tolerance", fmt_double(a.collapse_tol)}};

    TrainReport report;
    try {
        report = train(net, refs, cfg);
    } catch (const collapse_error& ex) {
        // keep the diagnostics on disk even though no model is saved
        save_train_report(ex.report(), sibling_path(a.model_path, ".report.txt"));
        write_echo(sibling_path(a.model_path, ".config.txt"), "train", echo);
        throw;
    }

    save_net(net, a.model_path);
    write_id_lines(refs.ids, sibling_path(a.model_path, ".refs.txt"));
    save_train_report(report, sibling_path(a.model_path, ".report.txt"));
    write_echo(sibling_path(a.model_path, ".config.txt"), "train", echo);

    for (std::size_t e = 0; e < report.epoch_mean_loss.size(); ++e)
        std::cout << "epoch " << e << " mean_loss " << fmt_double(report.epoch_mean_loss[e])
                  << "\n";
    std::cout << "intra_ref_ed " << fmt_double(report.initial_mean_intra_ref_ed) << " -> "
              << fmt_double(report.final_mean_intra_ref_ed) << "\n";
    std::cout << "model saved to " << a.model_path << "\n";
    return 0;
}

// ----- score ---------------------------------------------------------------

struct ScoreArgs {
    std::string model_path;
    std::string manifest_path;
    std::string ref_manifest_path;  // empty = same as manifest
    std::string refs_path;          // empty = <model>.refs.txt
    std::string out_path;
    std::string pooling = "mean_slices";
    std::size_t threads = 1;
};

int run_score(const ScoreArgs& a) {
    const EmbeddingNet net = load_net(a.model_path);
    const DatasetManifest manifest = load_manifest(a.manifest_path);
    const DatasetManifest ref_manifest = a.ref_manifest_path.empty()
                                             ? manifest
                                             : load_manifest(a.ref_manifest_path);
    const std::string refs_path =
        a.refs_path.empty() ? sibling_path(a.model_path, ".refs.txt") : a.refs_path;
    const Pooling pooling = pooling_from_string(a.pooling);

    const ReferenceSet refs =
        build_reference_set(ref_manifest, read_id_lines(refs_path), net.spec, false);
    const ThresholdModel model = model_from_refs(net, refs, pooling);
    if (model.threshold == 0.0)
        std::cerr << "warning: threshold is 0 — the reference embeddings are collapsed "
                     "(see the training collapse diagnostic); every non-identical item "
                     "will be flagged\n";

    const ScoreResult result = score_dataset(net, manifest, model, pooling, a.threads);
    save_scores(result.records, a.out_path);
    write_echo(sibling_path(a.out_path, ".config.txt"), "score",
               {{"model", a.model_path},
                {"manifest", a.manifest_path},
                {"ref_manifest",
                 a.ref_manifest_path.empty() ? a.manifest_path : a.ref_manifest_path},
                {"refs", refs_path},
                {"out", a.out_path},
                {"pooling", a.pooling},
                {"threads", std::to_string(a.threads)},
                {"threshold", fmt_double(model.threshold)}});

    std::size_t flagged = 0;
    for (const ScoreRecord& r : result.records) flagged += r.flagged ? 1 : 0;
    std::cout << "scored " << result.records.size() << " items, flagged " << flagged
              << " (threshold " << fmt_double(model.threshold) << ")\n";
    if (!result.failures.empty()) {
        for (const ScoreFailure& f : result.failures)
            std::cerr << "failed to score '" << f.id << "': " << f.message << "\n";
        std::cerr << result.failures.size() << " of " << manifest.entries.size()
                  << " items could not be scored\n";
        return 4;
    }
    return 0;
}

// ----- baseline ------------------------------------------------------------

struct BaselineArgs {
    std::string manifest_path;
    std::string out_path;
    ForestConfig cfg;
    std::size_t grid = 16;
    std::size_t threads = 1;
};

int run_baseline(const BaselineArgs& a) {
    const DatasetManifest manifest = load_manifest(a.manifest_path);
    if (manifest.entries.empty()) throw std::runtime_error("manifest is empty");

    std::vector<std::vector<double>> features;
    features.reserve(manifest.entries.size());
    for (const DatasetEntry& e : manifest.entries)
        features.push_back(
            extract_features(load_volume(resolve_entry_path(manifest, e)), a.grid));

    const IsolationForest forest = fit(features, a.cfg, a.threads);
    std::vector<double> scores(features.size());
    for (std::size_t i = 0; i < features.size(); ++i)
        scores[i] = anomaly_score(features[i], forest);

    // The forest has no native decision threshold here; when the manifest is
    // fully labeled the flags use the Youden-J threshold (recorded in the
    // echo), otherwise no item is flagged.
    bool labeled = true;
    for (const DatasetEntry& e : manifest.entries)
        if (e.label == Label::unknown) labeled = false;
    std::string tau_note = "(none: unlabeled data, no flags)";
    double tau = 0.0;
    bool have_tau = false;
    if (labeled) {
        LabeledScores ls;
        for (std::size_t i = 0; i < scores.size(); ++i)
            ls.push(scores[i], manifest.entries[i].label == Label::bad,
                    manifest.entries[i].id);
        tau = youden_threshold(ls);
        have_tau = true;
        tau_note = fmt_double(tau) + " (youden-j)";
    }

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t lhs, std::size_t rhs) {
        if (scores[lhs] != scores[rhs]) return scores[lhs] > scores[rhs];
        return manifest.entries[lhs].id < manifest.entries[rhs].id;
    });
    std::vector<ScoreRecord> records;
    records.reserve(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) {
        const std::size_t i = order[r];
        records.push_back({manifest.entries[i].id, scores[i],
                            have_tau && scores[i] > tau, r + 1});
    }
    save_scores(records, a.out_path);
    write_echo(sibling_path(a.out_path, ".config.txt"), "baseline",
               {{"manifest", a.manifest_path},
                {"out", a.out_path},
                {"trees", std::to_string(a.cfg.trees)},
                {"subsample", std::to_string(a.cfg.subsample)},
                {"seed", std::to_string(a.cfg.seed)},
                {"grid", std::to_string(a.grid)},
                {"threads", std::to_string(a.threads)},
                {"flag_threshold", tau_note}});
    std::cout << "scored " << records.size() << " items with " << a.cfg.trees
              << " trees (threshold " << tau_note << ")\n";
    return 0;
}

// ----- eval ------------------------------------------------------------

struct EvalArgs {
    std::string scores_path;
    std::string manifest_path;
    std::string out_path;
    std::string roc_path;  // empty = skip
    std::string method = "med";
};

int run_eval(const EvalArgs& a) {
    const std::vector<ScoreRecord> records = load_scores(a.scores_path);
    if (records.empty()) throw std::runtime_error("no scores in " + a.scores_path);
    const DatasetManifest manifest = load_manifest(a.manifest_path);
    const std::map<std::string, bool> bad_by_id = bad_label_by_id(manifest);

    LabeledScores ls;
    std::vector<bool> flags;
    for (const ScoreRecord& r : records) {
        const auto it = bad_by_id.find(r.id);
        if (it == bad_by_id.end())
            throw std::runtime_error("scored id '" + r.id + "' not in manifest");
        ls.push(r.med, it->second, r.id);
        flags.push_back(r.flagged);
    }

    EvalReport report;
    report.method = a.method;
    report.n = ls.size();
    for (const bool b : ls.is_bad) (b ? report.n_bad : report.n_good) += 1;
    report.auc = auc(ls);
    report.flag_counts = confusion_from_flags(ls.is_bad, flags);
    report.youden_tau = youden_threshold(ls);
    report.youden_counts = confusion_at(ls, *report.youden_tau);
    report.config_echo = {{"scores", a.scores_path},
                          {"manifest", a.manifest_path},
                          {"method", a.method}};
    save_eval_report(report, a.out_path);
    write_echo(sibling_path(a.out_path, ".config.txt"), "eval",
               {{"scores", a.scores_path},
                {"manifest", a.manifest_path},
                {"out", a.out_path},
                {"roc", a.roc_path.empty() ? "(none)" : a.roc_path},
                {"method", a.method}});
    if (!a.roc_path.empty()) write_roc_svg(roc_points(ls), a.roc_path);

    const auto sens = report.flag_counts.sensitivity();
    const auto spec = report.flag_counts.specificity();
    std::cout << "auc " << fmt_double(report.auc) << "\n";
    std::cout << "flag_sensitivity " << (sens ? fmt_double(*sens) : "n/a") << "\n";
    std::cout << "flag_specificity " << (spec ? fmt_double(*spec) : "n/a") << "\n";
    std::cout << "report saved to " << a.out_path << "\n";
    return 0;
}

// ----- stability -------------------------------------------------------

struct StabilityArgs {
    std::string manifest_path;
    std::string out_path;
    std::size_t runs = 5;
    std::uint64_t seed = 0;
    std::size_t ref_size = 20;
    std::size_t epochs = 6;
    double lr = 1e-3;
    double momentum = 0.0;
    double margin = 1.0;
    std::string pooling = "mean_slices";
    double collapse_tol = 1e-6;
    std::size_t threads = 1;
};

int run_stability(const StabilityArgs& a) {
    const DatasetManifest manifest = load_manifest(a.manifest_path);
    StabilityConfig cfg;
    cfg.runs = a.runs;
    cfg.base_seed = a.seed;
    cfg.ref_size = a.ref_size;
    cfg.train.epochs = a.epochs;
    cfg.train.sgd = {a.lr, a.momentum};
    cfg.train.margin = a.margin;
    cfg.train.pooling = pooling_from_string(a.pooling);
    cfg.train.collapse_tolerance = a.collapse_tol;

    const StabilitySummary summary = ref_sensitivity_experiment(manifest, cfg, a.threads);
    save_stability_summary(summary, a.out_path);
    write_echo(sibling_path(a.out_path, ".config.txt"), "stability",
               {{"manifest", a.manifest_path},
                {"out", a.out_path},
                {"runs", std::to_string(a.runs)},
                {"seed", std::to_string(a.seed)},
                {"ref_size", std::to_string(a.ref_size)},
                {"epochs", std::to_string(a.epochs)},
                {"lr", fmt_double(a.lr)},
                {"momentum", fmt_double(a.momentum)},
                {"margin", fmt_double(a.margin)},
                {"pooling", a.pooling},
                {"collapse_tolerance", fmt_double(a.collapse_tol)},
                {"threads", std::to_string(a.threads)}});

    for (std::size_t r = 0; r < summary.runs.size(); ++r)
        std::cout << "run " << r << " auc " << fmt_double(summary.runs[r].auc_value)
                  << " flagged_refs " << summary.runs[r].flagged_refs << "\n";
    std::cout << "auc range [" << fmt_double(summary.min_auc) << ", "
              << fmt_double(summary.max_auc) << "] spread " << fmt_double(summary.spread)
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"volscreen — screening toolkit for bad volumes in slice datasets"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "volscreen 1.0");
    app.set_config("--config", "",
                   "read option defaults from a TOML file (flags take precedence)");

    GenArgs gen_args;
    CLI::App* gen = app.add_subcommand("gen", "generate a seeded synthetic corpus");
    gen->add_option("--out", gen_args.out, "output directory")->required();
    gen->add_option("--seed", gen_args.cfg.seed, "corpus seed")->capture_default_str();
    gen->add_option("--good", gen_args.cfg.n_good, "number of good volumes")
        ->capture_default_str();
    gen->add_option("--bad-per-kind", gen_args.cfg.n_bad_per_kind,
                    "corrupted volumes per corruption kind")
        ->capture_default_str();
    gen->add_option("--slices", gen_args.cfg.slices, "slices per volume")
        ->check(CLI::Range(std::size_t{2}, std::size_t{9999}))
        ->capture_default_str();
    gen->add_option("--height", gen_args.cfg.height, "slice height")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    gen->add_option("--width", gen_args.cfg.width, "slice width")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "train the embedder on a reference set");
    train->add_option("--manifest", train_args.manifest_path, "dataset manifest CSV")
        ->required();
    train->add_option("--model", train_args.model_path, "output model path")->required();
    train->add_option("--ref-ids", train_args.ref_ids_path,
                      "file with one reference id per line (overrides sampling)");
    train->add_option("--ref-size", train_args.ref_size,
                      "references to sample from the good entries")
        ->check(CLI::Range(std::size_t{2}, std::size_t{100000}))
        ->capture_default_str();
    train->add_option("--ref-seed", train_args.ref_seed,
                      "sampling seed (default: derived from --seed)");
    train->add_option("--seed", train_args.seed, "master seed (init + shuffle derive from it)")
        ->capture_default_str();
    train->add_option("--epochs", train_args.epochs, "training epochs")
        ->capture_default_str();
    train->add_option("--lr", train_args.lr, "SGD learning rate")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    train->add_option("--momentum", train_args.momentum, "SGD momentum")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    train->add_option("--margin", train_args.margin, "contrastive margin")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    train->add_option("--pooling", train_args.pooling, "slice pooling")
        ->check(CLI::IsMember({"mean_slices", "mid_slice"}))
        ->capture_default_str();
    train->add_option("--collapse-tol", train_args.collapse_tol,
                      "mean intra-reference ED below this is a collapse")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    ScoreArgs score_args;
    CLI::App* score = app.add_subcommand("score", "score a dataset against a trained model");
    score->add_option("--model", score_args.model_path, "trained model path")->required();
    score->add_option("--manifest", score_args.manifest_path, "dataset manifest CSV")
        ->required();
    score->add_option("--out", score_args.out_path, "output scores CSV")->required();
    score->add_option("--refs", score_args.refs_path,
                      "reference id list (default: <model>.refs.txt)");
    score->add_option("--ref-manifest", score_args.ref_manifest_path,
                      "manifest holding the reference volumes (default: --manifest)");
    score->add_option("--pooling", score_args.pooling, "slice pooling")
        ->check(CLI::IsMember({"mean_slices", "mid_slice"}))
        ->capture_default_str();
    score->add_option("--threads", score_args.threads, "worker threads")
        ->check(CLI::Range(std::size_t{1}, std::size_t{256}))
        ->capture_default_str();

    BaselineArgs baseline_args;
    CLI::App* baseline =
        app.add_subcommand("baseline", "isolation-forest baseline scores");
    baseline->add_option("--manifest", baseline_args.manifest_path, "dataset manifest CSV")
        ->required();
    baseline->add_option("--out", baseline_args.out_path, "output scores CSV")->required();
    baseline->add_option("--trees", baseline_args.cfg.trees, "trees in the forest")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    baseline->add_option("--subsample", baseline_args.cfg.subsample,
                         "per-tree subsample size (clamped to the dataset)")
        ->check(CLI::Range(std::size_t{2}, std::size_t{1000000}))
        ->capture_default_str();
    baseline->add_option("--seed", baseline_args.cfg.seed, "forest seed")
        ->capture_default_str();
    baseline->add_option("--grid", baseline_args.grid, "mid-slice pooling grid (g x g)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    baseline->add_option("--threads", baseline_args.threads, "worker threads")
        ->check(CLI::Range(std::size_t{1}, std::size_t{256}))
        ->capture_default_str();

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "ROC/AUC and confusion report");
    eval->add_option("--scores", eval_args.scores_path, "scores CSV")->required();
    eval->add_option("--manifest", eval_args.manifest_path, "labeled manifest CSV")
        ->required();
    eval->add_option("--out", eval_args.out_path, "output report path")->required();
    eval->add_option("--roc", eval_args.roc_path, "also write the ROC curve SVG here");
    eval->add_option("--method", eval_args.method, "method name recorded in the report")
        ->capture_default_str();

    StabilityArgs stability_args;
    CLI::App* stability =
        app.add_subcommand("stability", "reference-set stability experiment");
    stability->add_option("--manifest", stability_args.manifest_path, "dataset manifest CSV")
        ->required();
    stability->add_option("--out", stability_args.out_path, "output summary path")
        ->required();
    stability->add_option("--runs", stability_args.runs, "independent retraining runs")
        ->check(CLI::Range(std::size_t{2}, std::size_t{1000}))
        ->capture_default_str();
    stability->add_option("--seed", stability_args.seed, "base seed (per-run seeds derive)")
        ->capture_default_str();
    stability->add_option("--ref-size", stability_args.ref_size, "references per run")
        ->check(CLI::Range(std::size_t{2}, std::size_t{100000}))
        ->capture_default_str();
    stability->add_option("--epochs", stability_args.epochs, "training epochs per run")
        ->capture_default_str();
    stability->add_option("--lr", stability_args.lr, "SGD learning rate")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    stability->add_option("--momentum", stability_args.momentum, "SGD momentum")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    stability->add_option("--margin", stability_args.margin, "contrastive margin")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    stability->add_option("--pooling", stability_args.pooling, "slice pooling")
        ->check(CLI::IsMember({"mean_slices", "mid_slice"}))
        ->capture_default_str();
    stability->add_option("--collapse-tol", stability_args.collapse_tol,
                          "collapse tolerance per run")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    stability->add_option("--threads", stability_args.threads, "concurrent runs")
        ->check(CLI::Range(std::size_t{1}, std::size_t{256}))
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);  // prints help or the parse error
        return code == 0 ? 0 : 1;
    }
    train_args.ref_seed_given = train->count("--ref-seed") > 0;

    try {
        if (gen->parsed()) return run_gen(gen_args);
        if (train->parsed()) return run_train(train_args);
        if (score->parsed()) return run_score(score_args);
        if (baseline->parsed()) return run_baseline(baseline_args);
        if (eval->parsed()) return run_eval(eval_args);
        if (stability->parsed()) return run_stability(stability_args);
    } catch (const training_error& e) {
        std::cerr << "training failed: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
