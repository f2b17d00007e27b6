#include "camtraj/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "camtraj/training.hpp"

namespace camtraj::eval {

using nlohmann::json;

std::string extract_verb(const data::PairManifestRecord& rec) {
    if (rec.verb && !rec.verb->empty()) return *rec.verb;
    static const std::set<std::string> kStopPrefixes = {"the", "a", "an", "camera"};
    std::istringstream ss(rec.text);
    std::string tok;
    while (ss >> tok) {
        std::transform(tok.begin(), tok.end(), tok.begin(),
                       [](unsigned char c) { return (char)std::tolower(c); });
        if (!kStopPrefixes.count(tok)) return tok;
    }
    return "";
}

namespace {

std::string group_key(const MCQItem& item, const std::vector<std::string>& balance_keys) {
    std::string key;
    for (const auto& k : balance_keys) {
        if (k == "activity")
            key += "activity=" + item.activity + ";";
        else if (k == "visibility")
            key += "visibility=" + item.visibility + ";";
        else
            throw InvalidInputError("build_mcq: unknown balance key " + k);
    }
    return key;
}

}  // namespace

MCQBuildResult build_mcq(const std::vector<data::PairManifestRecord>& manifest, Rng& rng,
                         const std::vector<std::string>& balance_keys,
                         const MCQBuildOptions& opts) {
    MCQBuildResult result;
    std::vector<std::string> verbs(manifest.size());
    for (size_t i = 0; i < manifest.size(); ++i) verbs[i] = extract_verb(manifest[i]);

    for (size_t q = 0; q < manifest.size(); ++q) {
        const auto& rec = manifest[q];
        // Same-take pool first, distinct embedding ids, non-overlapping verbs.
        std::set<std::string> pool;
        for (size_t j = 0; j < manifest.size(); ++j) {
            if (j == q || manifest[j].take_id != rec.take_id) continue;
            if (verbs[j] == verbs[q]) continue;
            if (manifest[j].embedding_id == rec.embedding_id) continue;
            pool.insert(manifest[j].embedding_id);
        }
        bool fallback = false;
        if (pool.size() < 4 && rec.activity_label) {
            fallback = true;
            for (size_t j = 0; j < manifest.size(); ++j) {
                if (j == q || manifest[j].activity_label != rec.activity_label) continue;
                if (verbs[j] == verbs[q]) continue;
                if (manifest[j].embedding_id == rec.embedding_id) continue;
                pool.insert(manifest[j].embedding_id);
            }
        }
        if (pool.size() < 4) {
            ++result.skipped;
            continue;
        }
        std::vector<std::string> ids(pool.begin(), pool.end());
        rng.shuffle(ids);
        ids.resize(4);
        ids.push_back(rec.embedding_id);
        rng.shuffle(ids);

        MCQItem item;
        item.query_index = q;
        std::copy(ids.begin(), ids.end(), item.candidates.begin());
        item.correct_index =
            (int)(std::find(ids.begin(), ids.end(), rec.embedding_id) - ids.begin());
        item.activity = rec.activity_label.value_or("");
        item.visibility = rec.visibility
                              ? (*rec.visibility == data::Visibility::InView ? "iv" : "oov")
                              : "";
        item.fallback_same_activity = fallback;
        result.items.push_back(std::move(item));
    }

    if (!balance_keys.empty() && !result.items.empty()) {
        std::map<std::string, std::vector<MCQItem>> cells;
        for (auto& item : result.items)
            cells[group_key(item, balance_keys)].push_back(item);
        size_t cap = SIZE_MAX;
        for (const auto& [key, cell] : cells) cap = std::min(cap, cell.size());
        if (opts.per_cell_cap > 0) cap = std::min(cap, (size_t)opts.per_cell_cap);
        std::vector<MCQItem> balanced;
        for (auto& [key, cell] : cells) {
            rng.shuffle(cell);
            cell.resize(cap);
            balanced.insert(balanced.end(), cell.begin(), cell.end());
        }
        std::sort(balanced.begin(), balanced.end(),
                  [](const MCQItem& a, const MCQItem& b) { return a.query_index < b.query_index; });
        result.items = std::move(balanced);
    }
    return result;
}

MCQEvalResult eval_mcq(const EmbedFn& embed, const std::vector<MCQItem>& items,
                       const std::vector<data::PairManifestRecord>& manifest,
                       const data::TextEmbeddingStore& store) {
    MCQEvalResult result;
    std::map<std::string, std::pair<int, int>> groups;  // key -> (correct, total)
    for (const auto& item : items) {
        if (item.query_index >= manifest.size())
            throw InvalidInputError("eval_mcq: item query index out of range");
        std::vector<float> z = embed(manifest[item.query_index]);
        int best = 0;
        double best_score = -1e30;
        for (int c = 0; c < 5; ++c) {
            const auto& cand = store.get(item.candidates[(size_t)c]);
            if (cand.size() != z.size())
                throw ShapeError("eval_mcq: embedding dimension mismatch");
            double s = 0;
            for (size_t j = 0; j < z.size(); ++j) s += (double)z[j] * cand[j];
            if (s > best_score) {
                best_score = s;
                best = c;
            }
        }
        bool correct = best == item.correct_index;
        result.predictions.push_back(best);
        result.overall += correct ? 1 : 0;
        ++result.n_items;
        if (!item.activity.empty()) {
            auto& g = groups["activity:" + item.activity];
            g.first += correct ? 1 : 0;
            ++g.second;
        }
        if (!item.visibility.empty()) {
            auto& g = groups["visibility:" + item.visibility];
            g.first += correct ? 1 : 0;
            ++g.second;
        }
    }
    if (result.n_items > 0) result.overall /= result.n_items;
    for (const auto& [key, g] : groups)
        result.per_group[key] = (double)g.first / (double)g.second;
    return result;
}

std::vector<float> fuse(const std::vector<float>& z_traj, const std::vector<float>& z_video) {
    if (z_traj.size() != z_video.size())
        throw ShapeError("fuse: dimension mismatch " + std::to_string(z_traj.size()) +
                         " vs " + std::to_string(z_video.size()));
    std::vector<float> out(z_traj.size());
    double norm2 = 0;
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = 0.5f * (z_traj[i] + z_video[i]);
        norm2 += (double)out[i] * out[i];
    }
    double n = std::sqrt(norm2);
    if (n == 0) throw InvalidInputError("fuse: inputs cancel to the zero vector");
    for (auto& v : out) v = (float)(v / n);
    return out;
}

int LinearProbe::predict(const float* x, int64_t d) const {
    if (d != weights.cols()) throw ShapeError("probe: feature dimension mismatch");
    int best = 0;
    double best_score = -1e300;
    for (int64_t c = 0; c < weights.rows(); ++c) {
        double s = bias[(size_t)c];
        const float* w = weights.data.data() + c * d;
        for (int64_t j = 0; j < d; ++j) s += (double)w[j] * x[j];
        if (s > best_score) {
            best_score = s;
            best = (int)c;
        }
    }
    return best;
}

LinearProbe train_probe(const Tensor<float>& features, const std::vector<int>& labels,
                        const std::vector<std::string>& class_names, double lambda,
                        int epochs, Rng* rng) {
    int64_t m = features.rows(), d = features.cols();
    int c = (int)class_names.size();
    if ((int64_t)labels.size() != m)
        throw ShapeError("train_probe: labels length vs feature rows");
    if (c < 2) throw InvalidInputError("train_probe: need at least 2 classes");
    if (m < c) throw InvalidInputError("train_probe: fewer samples than classes");
    std::set<int> seen(labels.begin(), labels.end());
    if (seen.size() < 2) throw InvalidInputError("train_probe: single-class labels");
    for (int l : seen)
        if (l < 0 || l >= c) throw InvalidInputError("train_probe: label out of range");

    LinearProbe probe;
    probe.weights = Tensor<float>::zeros({(int64_t)c, d});
    probe.bias.assign((size_t)c, 0.0f);
    probe.class_names = class_names;
    probe.lambda = lambda;
    probe.epochs = epochs;

    Rng local(12345);
    Rng& r = rng ? *rng : local;
    std::vector<size_t> order((size_t)m);
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        r.shuffle(order);
        double eta = 0.1 / (1.0 + 0.05 * epoch);
        for (size_t i : order) {
            const float* x = features.data.data() + (int64_t)i * d;
            for (int k = 0; k < c; ++k) {
                double y = labels[i] == k ? 1.0 : -1.0;
                float* w = probe.weights.data.data() + (int64_t)k * d;
                double margin = probe.bias[(size_t)k];
                for (int64_t j = 0; j < d; ++j) margin += (double)w[j] * x[j];
                margin *= y;
                double shrink = 1.0 - eta * lambda;
                for (int64_t j = 0; j < d; ++j) w[j] = (float)(w[j] * shrink);
                if (margin < 1.0) {
                    for (int64_t j = 0; j < d; ++j) w[j] += (float)(eta * y * x[j]);
                    probe.bias[(size_t)k] += (float)(eta * y);
                }
            }
        }
    }
    if (!probe.weights.all_finite())
        throw NumericError("train_probe: non-finite weights");
    return probe;
}

double probe_accuracy(const LinearProbe& probe, const Tensor<float>& features,
                      const std::vector<int>& labels) {
    int64_t m = features.rows();
    if ((int64_t)labels.size() != m)
        throw ShapeError("probe_accuracy: labels length vs feature rows");
    int correct = 0;
    for (int64_t i = 0; i < m; ++i)
        if (probe.predict(features.data.data() + i * features.cols(), features.cols()) ==
            labels[(size_t)i])
            ++correct;
    return m == 0 ? 0.0 : (double)correct / (double)m;
}

SimilarityMap self_similarity(const Tensor<float>& features, double hz) {
    int64_t n = features.rows(), d = features.cols();
    if (n < 2) throw InvalidInputError("self_similarity: need at least 2 rows");
    SimilarityMap map;
    map.n = (size_t)n;
    map.hz = hz;
    map.data.assign((size_t)(n * n), 0.0);

    std::vector<double> norms((size_t)n);
    for (int64_t i = 0; i < n; ++i) {
        double s = 0;
        const float* x = features.data.data() + i * d;
        for (int64_t j = 0; j < d; ++j) s += (double)x[j] * x[j];
        norms[(size_t)i] = std::sqrt(s);
        if (norms[(size_t)i] == 0) ++map.zero_norm_rows;
    }
    for (int64_t i = 0; i < n; ++i) {
        map.data[(size_t)(i * n + i)] = 1.0;
        for (int64_t j = i + 1; j < n; ++j) {
            double s = 0;
            if (norms[(size_t)i] > 0 && norms[(size_t)j] > 0) {
                const float* xi = features.data.data() + i * d;
                const float* xj = features.data.data() + j * d;
                for (int64_t k = 0; k < d; ++k) s += (double)xi[k] * xj[k];
                s /= norms[(size_t)i] * norms[(size_t)j];
            }
            map.data[(size_t)(i * n + j)] = s;
            map.data[(size_t)(j * n + i)] = s;
        }
    }
    return map;
}

Tensor<float> motion_features(const geometry::Trajectory& traj,
                              const model::CamFormerConfig& cfg,
                              const ParamMap<float>& weights) {
    bool gravity = traj.gravity_world.has_value();
    auto seq = geometry::relative_to_midpoint(traj, gravity);
    std::vector<bool> mask(seq.n, true);
    Tensor<float> feats = model::temporal_features(seq, mask, cfg, weights);

    geometry::RelativePoseSequence still;
    still.n = seq.n;
    still.midpoint_index = seq.midpoint_index;
    still.gravity_ref = seq.gravity_ref;
    still.rows.assign(seq.n * 9, 0.0);
    for (size_t i = 0; i < seq.n; ++i) {
        double* r = still.rows.data() + i * 9;
        r[3] = 1.0;  // identity rotation in 6D form
        r[7] = 1.0;
    }
    Tensor<float> base = model::temporal_features(still, mask, cfg, weights);
    for (size_t i = 0; i < feats.data.size(); ++i) feats.data[i] -= base.data[i];
    return feats;
}

RepetitionResult count_repetitions(const SimilarityMap& map) {
    size_t n = map.n;
    if (n < 8) throw InvalidInputError("count_repetitions: need N >= 8");
    if (map.hz <= 0) throw InvalidInputError("count_repetitions: frame rate must be positive");

    // Lag profile over l in [2, N/2], mean-subtracted.
    size_t lmin = 2, lmax = n / 2;
    std::vector<double> a;
    for (size_t l = lmin; l <= lmax; ++l) {
        double s = 0;
        for (size_t i = 0; i + l < n; ++i) s += map.at(i, i + l);
        a.push_back(s / (double)(n - l));
    }
    double mean = 0;
    for (double v : a) mean += v;
    mean /= (double)a.size();
    for (double& v : a) v -= mean;

    RepetitionResult result;
    double peak = *std::max_element(a.begin(), a.end());
    if (peak <= 0) {
        result.aperiodic = true;
        return result;
    }

    // Skip the zero-lag lobe (short lags are trivially similar), then pick
    // the smallest local maximum within 85% of the global one so the
    // fundamental period wins over its harmonics.
    size_t start = 0;
    while (start < a.size() && a[start] > 0) ++start;
    if (start >= a.size()) start = 0;
    size_t best = start;
    for (size_t j = start; j < a.size(); ++j)
        if (a[j] > a[best]) best = j;
    double thr = 0.85 * peak;
    for (size_t j = start; j < a.size(); ++j) {
        double left = j > 0 ? a[j - 1] : -1e300;
        double right = j + 1 < a.size() ? a[j + 1] : -1e300;
        if (a[j] >= thr && a[j] >= left && a[j] >= right) {
            best = j;
            break;
        }
    }

    double lstar = (double)(lmin + best);
    // Parabolic sub-sample refinement, only where a neighbor carries real
    // peak mass (refining an isolated spike just adds noise).
    if (best > 0 && best + 1 < a.size() &&
        std::max(a[best - 1], a[best + 1]) > 0.3 * a[best]) {
        double den = a[best - 1] - 2 * a[best] + a[best + 1];
        if (den < 0) {
            double delta = 0.5 * (a[best - 1] - a[best + 1]) / den;
            lstar += std::clamp(delta, -0.5, 0.5);
        }
    }

    // Noise floor from lags away from multiples of l*.
    double s2 = 0, s1 = 0;
    int cnt = 0;
    for (size_t j = 0; j < a.size(); ++j) {
        double lag = (double)(lmin + j);
        double r = std::fmod(lag, lstar);
        double dist = std::min(r, lstar - r);
        if (dist > lstar / 4) {
            s1 += a[j];
            s2 += a[j] * a[j];
            ++cnt;
        }
    }
    double sigma = 0;
    if (cnt > 3) {
        double mu = s1 / cnt;
        sigma = std::sqrt(std::max(0.0, s2 / cnt - mu * mu));
    }

    result.peak = a[best];
    result.noise_sigma = sigma;
    if (sigma > 0 && a[best] < 3 * sigma) {
        result.aperiodic = true;
        return result;
    }
    // Tolerance guards against refinement moving lstar one ulp past an
    // exact divisor of n, which would knock off a whole repetition.
    result.count = (int)std::floor((double)n / lstar + 1e-9);
    result.period_s = lstar / map.hz;
    return result;
}

std::vector<float> embed_record(const model::Checkpoint& ckpt, const data::Dataset& dataset,
                                const data::PairManifestRecord& rec, double w,
                                double rate_hz, bool* clipped) {
    auto it = dataset.trajectories.find(rec.trajectory_id);
    if (it == dataset.trajectories.end())
        throw InvalidInputError("embed_record: unknown trajectory " + rec.trajectory_id);
    const geometry::Trajectory& traj = it->second;
    auto spec = training::symmetric_context(rec.t1, rec.t2, w, traj.start_time(),
                                            traj.end_time());
    if (clipped) *clipped = spec.clipped_left || spec.clipped_right;
    auto enc = training::encode_window(traj, spec, rate_hz);
    Tensor<float> z = model::forward(enc.seq, enc.mask, ckpt.config, ckpt.weights);
    return std::vector<float>(z.data.begin(), z.data.end());
}

std::vector<SweepPoint> context_sweep(const model::Checkpoint& ckpt,
                                      const data::Dataset& dataset,
                                      const std::vector<MCQItem>& items,
                                      const std::vector<double>& w_values, double rate_hz) {
    std::vector<SweepPoint> points;
    for (double w : w_values) {
        if (w < 0) throw InvalidInputError("context_sweep: negative w");
        int clipped_items = 0;
        auto embed = [&](const data::PairManifestRecord& rec) {
            bool clipped = false;
            auto z = embed_record(ckpt, dataset, rec, w, rate_hz, &clipped);
            if (clipped) ++clipped_items;
            return z;
        };
        auto result = eval_mcq(embed, items, dataset.records, dataset.store);
        points.push_back({w, result.overall, clipped_items});
    }
    return points;
}

// ---- exports ----

void save_mcq_items(const std::vector<MCQItem>& items,
                    const std::vector<data::PairManifestRecord>& manifest,
                    const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("save_mcq_items: cannot open " + path);
    for (const auto& item : items) {
        const auto& rec = manifest.at(item.query_index);
        json j = {
            {"query_index", item.query_index},
            {"trajectory_id", rec.trajectory_id},
            {"t1", rec.t1},
            {"t2", rec.t2},
            {"candidates", item.candidates},
            {"correct_index", item.correct_index},
            {"activity", item.activity},
            {"visibility", item.visibility},
            {"fallback_same_activity", item.fallback_same_activity},
        };
        out << j.dump() << '\n';
    }
}

std::vector<MCQItem> load_mcq_items(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_mcq_items: cannot open " + path);
    std::vector<MCQItem> items;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError("mcq items line " + std::to_string(lineno) + ": " + e.what());
        }
        MCQItem item;
        try {
            item.query_index = j.at("query_index").get<size_t>();
            auto cands = j.at("candidates").get<std::vector<std::string>>();
            if (cands.size() != 5)
                throw FormatError("mcq items line " + std::to_string(lineno) +
                                  ": need exactly 5 candidates");
            std::copy(cands.begin(), cands.end(), item.candidates.begin());
            item.correct_index = j.at("correct_index").get<int>();
            item.activity = j.value("activity", "");
            item.visibility = j.value("visibility", "");
            item.fallback_same_activity = j.value("fallback_same_activity", false);
        } catch (const json::exception& e) {
            throw FormatError("mcq items line " + std::to_string(lineno) + ": " + e.what());
        }
        if (item.correct_index < 0 || item.correct_index >= 5)
            throw FormatError("mcq items line " + std::to_string(lineno) +
                              ": correct_index out of range");
        items.push_back(std::move(item));
    }
    return items;
}

void save_mcq_results(const MCQEvalResult& result, const std::vector<MCQItem>& items,
                      const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("save_mcq_results: cannot open " + path);
    for (size_t i = 0; i < items.size(); ++i) {
        json j = {
            {"query_index", items[i].query_index},
            {"predicted", result.predictions.at(i)},
            {"correct_index", items[i].correct_index},
            {"correct", result.predictions.at(i) == items[i].correct_index},
            {"activity", items[i].activity},
            {"visibility", items[i].visibility},
        };
        out << j.dump() << '\n';
    }
    json summary = {{"overall", result.overall}, {"n_items", result.n_items}};
    for (const auto& [key, acc] : result.per_group) summary["group/" + key] = acc;
    out << summary.dump() << '\n';
}

void write_sweep_csv(const std::vector<SweepPoint>& points, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_sweep_csv: cannot open " + path);
    out << "w,accuracy,clipped_items\n";
    for (const auto& p : points)
        out << p.w << ',' << p.accuracy << ',' << p.clipped_items << '\n';
}

void export_ssm_csv(const SimilarityMap& map, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("export_ssm_csv: cannot open " + path);
    for (size_t i = 0; i < map.n; ++i) {
        for (size_t j = 0; j < map.n; ++j) out << (j ? "," : "") << map.at(i, j);
        out << '\n';
    }
}

void export_ssm_pgm(const SimilarityMap& map, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("export_ssm_pgm: cannot open " + path);
    out << "P5\n" << map.n << ' ' << map.n << "\n255\n";
    for (double v : map.data) {
        double scaled = (std::clamp(v, -1.0, 1.0) + 1.0) * 0.5 * 255.0;
        unsigned char byte = (unsigned char)std::lround(scaled);
        out.write((const char*)&byte, 1);
    }
}

}  // namespace camtraj::eval
