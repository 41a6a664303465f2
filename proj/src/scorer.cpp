#include "volscreen/scorer.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace volscreen {

double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("euclidean: dimension mismatch (" +
                                    std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + ")");
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        sq += diff * diff;
    }
    return std::sqrt(sq);
}

double med(const std::vector<double>& query, const std::vector<std::vector<double>>& refs,
           std::size_t exclude) {
    const std::size_t used = refs.size() - (exclude < refs.size() ? 1 : 0);
    if (used == 0) throw std::invalid_argument("med: no references left to average over");
    double sum = 0.0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (i == exclude) continue;
        sum += euclidean(query, refs[i]);
    }
    return sum / static_cast<double>(used);
}

double compute_threshold(const std::vector<std::vector<double>>& refs) {
    if (refs.size() < 2)
        throw std::invalid_argument("compute_threshold: need at least 2 references");
    double max_ed = 0.0;
    for (std::size_t i = 0; i < refs.size(); ++i)
        for (std::size_t j = i + 1; j < refs.size(); ++j)
            max_ed = std::max(max_ed, euclidean(refs[i], refs[j]));
    return max_ed;
}

std::size_t ThresholdModel::index_of(const std::string& id) const {
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == id) return i;
    return knpos;
}

ThresholdModel make_threshold_model(std::vector<std::string> ids,
                                    std::vector<std::vector<double>> embeddings) {
    if (ids.size() != embeddings.size())
        throw std::invalid_argument("threshold model: ids and embeddings differ in length");
    std::set<std::string> distinct(ids.begin(), ids.end());
    if (distinct.size() != ids.size())
        throw std::invalid_argument("threshold model: duplicate reference ids");
    ThresholdModel model;
    model.threshold = compute_threshold(embeddings);
    model.ids = std::move(ids);
    model.embeddings = std::move(embeddings);
    return model;
}

ScoreResult score_dataset(const EmbeddingNet& net, const DatasetManifest& manifest,
                          const ThresholdModel& model, Pooling pooling,
                          std::size_t threads) {
    const std::size_t n = manifest.entries.size();
    std::vector<std::optional<double>> meds(n);
    std::vector<std::string> errors(n);

    auto score_one = [&](std::size_t i) {
        const DatasetEntry& e = manifest.entries[i];
        try {
            const Volume raw = load_volume(resolve_entry_path(manifest, e));
            const Volume prep = preprocess(raw, net.spec.input_h, net.spec.input_w);
            const Tensor emb = embed_volume(net, prep, pooling);
            meds[i] = med(emb.data, model.embeddings, model.index_of(e.id));
        } catch (const std::exception& ex) {
            errors[i] = ex.what();
        }
    };

    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) score_one(i);
    } else {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1))
                score_one(i);
        };
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    ScoreResult result;
    std::vector<std::size_t> scored;
    for (std::size_t i = 0; i < n; ++i) {
        if (meds[i])
            scored.push_back(i);
        else
            result.failures.push_back({manifest.entries[i].id, errors[i]});
    }
    std::sort(scored.begin(), scored.end(), [&](std::size_t lhs, std::size_t rhs) {
        if (*meds[lhs] != *meds[rhs]) return *meds[lhs] > *meds[rhs];
        return manifest.entries[lhs].id < manifest.entries[rhs].id;
    });
    result.records.reserve(scored.size());
    for (std::size_t r = 0; r < scored.size(); ++r) {
        const std::size_t i = scored[r];
        result.records.push_back({manifest.entries[i].id, *meds[i],
                                  *meds[i] > model.threshold, r + 1});
    }
    return result;
}

void save_scores(const std::vector<ScoreRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write scores: " + path);
    out << "id,med,flagged,rank\n";
    char buf[64];
    for (const ScoreRecord& r : records) {
        const auto res = std::to_chars(buf, buf + sizeof(buf), r.med,
                                       std::chars_format::general, 17);
        out << r.id << ',' << std::string_view(buf, res.ptr - buf) << ','
            << (r.flagged ? 1 : 0) << ',' << r.rank << "\n";
    }
    if (!out) throw std::runtime_error("short write: " + path);
}

std::vector<ScoreRecord> load_scores(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open scores: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty scores file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "id,med,flagged,rank")
        throw std::runtime_error("bad scores header in " + path + ": '" + line + "'");

    std::vector<ScoreRecord> records;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 4)
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": expected 4 fields, got " +
                                     std::to_string(fields.size()));
        ScoreRecord r;
        r.id = fields[0];
        const char* b = fields[1].data();
        const char* e = b + fields[1].size();
        auto [p1, ec1] = std::from_chars(b, e, r.med);
        if (ec1 != std::errc{} || p1 != e)
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad med '" +
                                     fields[1] + "'");
        if (fields[2] == "0")
            r.flagged = false;
        else if (fields[2] == "1")
            r.flagged = true;
        else
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": bad flagged '" + fields[2] + "'");
        b = fields[3].data();
        e = b + fields[3].size();
        auto [p2, ec2] = std::from_chars(b, e, r.rank);
        if (ec2 != std::errc{} || p2 != e || r.rank == 0)
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad rank '" +
                                     fields[3] + "'");
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace volscreen
