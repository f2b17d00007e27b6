#include "camtraj/data.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "camtraj/error.hpp"
#include "camtraj/kernels.hpp"

namespace camtraj::data {

namespace fs = std::filesystem;

std::string split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    throw InvalidInputError("bad split enum");
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    throw FormatError("unknown split value: " + name);
}

namespace {

std::string vis_name(Visibility v) { return v == Visibility::InView ? "iv" : "oov"; }

Visibility vis_from_name(const std::string& name) {
    if (name == "iv") return Visibility::InView;
    if (name == "oov") return Visibility::OutOfView;
    throw FormatError("unknown visibility value: " + name);
}

}  // namespace

std::vector<PairManifestRecord> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);
    std::vector<PairManifestRecord> records;
    std::set<std::tuple<std::string, double, double, std::string>> seen;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto ctx = [&](const std::string& msg) {
            return FormatError(path + ":" + std::to_string(lineno) + ": " + msg);
        };
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ctx(std::string("malformed JSON: ") + e.what());
        }
        PairManifestRecord r;
        for (const char* field : {"trajectory_id", "t1", "t2", "text", "embedding_id",
                                  "take_id", "split"})
            if (!j.contains(field)) throw ctx(std::string("missing field: ") + field);
        r.trajectory_id = j["trajectory_id"].get<std::string>();
        r.t1 = j["t1"].get<double>();
        r.t2 = j["t2"].get<double>();
        r.text = j["text"].get<std::string>();
        r.embedding_id = j["embedding_id"].get<std::string>();
        r.take_id = j["take_id"].get<std::string>();
        if (r.embedding_id.empty()) throw ctx("embedding_id must be nonempty");
        if (!(r.t1 < r.t2)) throw ctx("t1 must be < t2");
        try {
            r.split = split_from_name(j["split"].get<std::string>());
            if (j.contains("visibility") && !j["visibility"].is_null())
                r.visibility = vis_from_name(j["visibility"].get<std::string>());
        } catch (const FormatError& e) {
            throw ctx(e.what());
        }
        if (j.contains("verb") && !j["verb"].is_null()) r.verb = j["verb"].get<std::string>();
        if (j.contains("activity_label") && !j["activity_label"].is_null())
            r.activity_label = j["activity_label"].get<std::string>();
        if (!seen.insert({r.trajectory_id, r.t1, r.t2, r.text}).second)
            throw ctx("duplicate record (trajectory_id, t1, t2, text)");
        records.push_back(std::move(r));
    }
    return records;
}

void save_manifest(const std::vector<PairManifestRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest: " + path);
    for (const auto& r : records) {
        nlohmann::json j;
        j["trajectory_id"] = r.trajectory_id;
        j["t1"] = r.t1;
        j["t2"] = r.t2;
        j["text"] = r.text;
        j["embedding_id"] = r.embedding_id;
        j["take_id"] = r.take_id;
        if (r.verb) j["verb"] = *r.verb;
        if (r.activity_label) j["activity_label"] = *r.activity_label;
        if (r.visibility) j["visibility"] = vis_name(*r.visibility);
        j["split"] = split_name(r.split);
        out << j.dump() << '\n';
    }
}

// ---- embedding store ----

void TextEmbeddingStore::put(const std::string& id, const std::vector<float>& vec) {
    if ((int)vec.size() != kEmbedDim)
        throw InvalidInputError("embedding for '" + id + "' has dimension " +
                                std::to_string(vec.size()) + ", expected " +
                                std::to_string(kEmbedDim));
    float n = std::sqrt(kern::dot(vec.data(), vec.data(), vec.size()));
    if (n == 0.0f) throw InvalidInputError("embedding for '" + id + "' is all zero");
    std::vector<float> unit(vec.size());
    kern::scale(vec.data(), 1.0f / n, unit.data(), vec.size());
    vectors_[id] = std::move(unit);
}

const std::vector<float>& TextEmbeddingStore::get(const std::string& id) const {
    auto it = vectors_.find(id);
    if (it == vectors_.end())
        throw InvalidInputError("embedding id not in store: " + id);
    return it->second;
}

namespace {
constexpr char kEmbMagic[8] = {'C', 'T', 'E', 'M', 'B', 'E', 'D', '1'};
}

void TextEmbeddingStore::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write embedding store: " + path);
    out.write(kEmbMagic, sizeof(kEmbMagic));
    uint32_t count = (uint32_t)vectors_.size(), dim = kEmbedDim;
    out.write(reinterpret_cast<const char*>(&count), 4);
    out.write(reinterpret_cast<const char*>(&dim), 4);
    for (const auto& [id, vec] : vectors_) {
        uint32_t len = (uint32_t)id.size();
        out.write(reinterpret_cast<const char*>(&len), 4);
        out.write(id.data(), len);
    }
    for (const auto& [id, vec] : vectors_)
        out.write(reinterpret_cast<const char*>(vec.data()),
                  (std::streamsize)(vec.size() * sizeof(float)));
    if (!out) throw IoError("short write on embedding store: " + path);
}

TextEmbeddingStore TextEmbeddingStore::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open embedding store: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kEmbMagic, 8) != 0)
        throw FormatError("embedding store: bad magic in " + path);
    uint32_t count = 0, dim = 0;
    in.read(reinterpret_cast<char*>(&count), 4);
    in.read(reinterpret_cast<char*>(&dim), 4);
    if (!in || dim != kEmbedDim)
        throw FormatError("embedding store: unexpected dimension in " + path);
    std::vector<std::string> ids(count);
    for (auto& id : ids) {
        uint32_t len = 0;
        in.read(reinterpret_cast<char*>(&len), 4);
        if (!in || len > (1u << 20)) throw FormatError("embedding store: bad id length");
        id.resize(len);
        in.read(id.data(), len);
        if (!in) throw FormatError("embedding store: truncated id table");
    }
    TextEmbeddingStore store;
    for (const auto& id : ids) {
        std::vector<float> vec(dim);
        in.read(reinterpret_cast<char*>(vec.data()),
                (std::streamsize)(vec.size() * sizeof(float)));
        if (!in) throw FormatError("embedding store: truncated payload");
        store.put(id, vec);  // re-normalizes on load
    }
    return store;
}

// ---- embedding service client ----

EmbeddingClient::EmbeddingClient(std::string endpoint, std::string cache_path)
    : endpoint_(std::move(endpoint)), cache_path_(std::move(cache_path)) {
    if (!cache_path_.empty() && fs::exists(cache_path_))
        store_ = TextEmbeddingStore::load(cache_path_);
}

void EmbeddingClient::fetch(const std::vector<std::string>& ids,
                            const std::vector<std::string>& texts) {
    if (ids.size() != texts.size())
        throw InvalidInputError("fetch_embeddings: ids/texts size mismatch");
    std::vector<size_t> missing;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (store_.contains(ids[i]))
            ++cache_hits_;
        else
            missing.push_back(i);
    }
    if (missing.empty()) return;

    auto scheme_end = endpoint_.find("://");
    if (scheme_end == std::string::npos)
        throw InvalidInputError("embedding endpoint must be a full URL: " + endpoint_);
    auto path_start = endpoint_.find('/', scheme_end + 3);
    std::string base = path_start == std::string::npos ? endpoint_
                                                       : endpoint_.substr(0, path_start);
    std::string path = path_start == std::string::npos ? "/embed"
                                                       : endpoint_.substr(path_start);

    nlohmann::json req;
    req["texts"] = nlohmann::json::array();
    for (size_t i : missing) req["texts"].push_back(texts[i]);

    httplib::Client cli(base);
    cli.set_connection_timeout(5, 0);
    cli.set_read_timeout(10, 0);

    const int kAttempts = 3;
    std::string last_error;
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
        if (attempt > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(100 << (attempt - 1)));
        auto res = cli.Post(path, req.dump(), "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP status " + std::to_string(res->status);
            continue;
        }
        nlohmann::json body;
        try {
            body = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw ServiceError(std::string("embedding service: invalid JSON: ") + e.what());
        }
        if (!body.contains("embeddings") || !body["embeddings"].is_array() ||
            body["embeddings"].size() != missing.size())
            throw ServiceError("embedding service: expected " +
                               std::to_string(missing.size()) + " embeddings");
        // Validate the whole batch before caching anything.
        std::vector<std::vector<float>> vecs;
        vecs.reserve(missing.size());
        for (const auto& e : body["embeddings"]) {
            if (!e.is_array() || (int)e.size() != kEmbedDim)
                throw ServiceError("embedding service: wrong dimensionality " +
                                   std::to_string(e.size()) + ", expected " +
                                   std::to_string(kEmbedDim));
            vecs.push_back(e.get<std::vector<float>>());
        }
        ++network_calls_;
        for (size_t i = 0; i < missing.size(); ++i) store_.put(ids[missing[i]], vecs[i]);
        store_.provenance = TextEmbeddingStore::Provenance::Service;
        if (!cache_path_.empty()) store_.save(cache_path_);
        return;
    }
    throw ServiceError("embedding service unreachable after " + std::to_string(kAttempts) +
                       " attempts: " + last_error);
}

// ---- synthetic trajectories ----

std::string family_name(SynthFamily f) {
    switch (f) {
        case SynthFamily::Orbit: return "orbit";
        case SynthFamily::OscillatingWalk: return "oscillating_walk";
        case SynthFamily::UpwardTilt: return "upward_tilt";
        case SynthFamily::DownwardSweep: return "downward_sweep";
        case SynthFamily::PeriodicChop: return "periodic_chop";
        case SynthFamily::StaticJitter: return "static_jitter";
    }
    throw InvalidInputError("bad family enum");
}

SynthFamily family_from_name(const std::string& name) {
    for (SynthFamily f : all_families())
        if (family_name(f) == name) return f;
    throw FormatError("unknown synth family: " + name);
}

const std::vector<SynthFamily>& all_families() {
    static const std::vector<SynthFamily> fams = {
        SynthFamily::Orbit,          SynthFamily::OscillatingWalk,
        SynthFamily::UpwardTilt,     SynthFamily::DownwardSweep,
        SynthFamily::PeriodicChop,   SynthFamily::StaticJitter,
    };
    return fams;
}

namespace {

using geometry::Mat3;
using geometry::Pose;
using geometry::Trajectory;
using geometry::Vec3;

Mat3 rot_y(double a) {
    Mat3 r;
    r(0, 0) = std::cos(a);  r(0, 1) = 0; r(0, 2) = std::sin(a);
    r(1, 0) = 0;            r(1, 1) = 1; r(1, 2) = 0;
    r(2, 0) = -std::sin(a); r(2, 1) = 0; r(2, 2) = std::cos(a);
    return r;
}

Mat3 rot_x(double a) {
    Mat3 r;
    r(0, 0) = 1; r(0, 1) = 0;            r(0, 2) = 0;
    r(1, 0) = 0; r(1, 1) = std::cos(a);  r(1, 2) = -std::sin(a);
    r(2, 0) = 0; r(2, 1) = std::sin(a);  r(2, 2) = std::cos(a);
    return r;
}

struct FamilyText {
    const char* text;
    const char* verb;
};

FamilyText family_text(SynthFamily f) {
    switch (f) {
        case SynthFamily::Orbit: return {"circle around the workbench", "circle"};
        case SynthFamily::OscillatingWalk: return {"walk forward along the corridor", "walk"};
        case SynthFamily::UpwardTilt: return {"tilt up toward the basket", "tilt"};
        case SynthFamily::DownwardSweep: return {"sweep down across the floor", "sweep"};
        case SynthFamily::PeriodicChop: return {"chop vegetables on the cutting board", "chop"};
        case SynthFamily::StaticJitter: return {"stand still at the counter", "stand"};
    }
    throw InvalidInputError("bad family enum");
}

}  // namespace

SynthResult synth_generate(SynthFamily family, const SynthParams& params,
                           double duration_s, double rate_hz, Rng& rng) {
    if (!(duration_s > 0) || !(rate_hz > 0))
        throw InvalidInputError("synth_generate: duration and rate must be positive");
    if (params.amplitude_m < 0 || params.noise_sigma < 0)
        throw InvalidInputError("synth_generate: negative amplitude or noise");
    if (family == SynthFamily::PeriodicChop && params.repetitions < 1)
        throw InvalidInputError("synth_generate: periodic_chop needs repetitions >= 1");

    size_t n = (size_t)std::llround(duration_s * rate_hz) + 1;  // endpoint inclusive
    Trajectory traj;
    traj.frame = geometry::Frame::Aria;
    traj.sample_rate_hz = rate_hz;
    traj.gravity_world = Vec3{0.0, -9.81, 0.0};
    traj.poses.reserve(n);

    const double A = params.amplitude_m;
    const double f = params.frequency_hz;
    for (size_t i = 0; i < n; ++i) {
        double t = (double)i / rate_hz;
        double u = t / duration_s;  // normalized time in [0, 1]
        Pose p;
        p.timestamp = t;
        switch (family) {
            case SynthFamily::Orbit: {
                double theta = 2.0 * M_PI * f * t;
                p.translation = {A * std::cos(theta), 0.0, A * std::sin(theta)};
                p.rotation = rot_y(theta);
                break;
            }
            case SynthFamily::OscillatingWalk: {
                p.translation = {0.0, A * std::sin(2.0 * M_PI * f * t), 1.0 * t};
                p.rotation = rot_y(0.05 * std::sin(2.0 * M_PI * f * t));
                break;
            }
            case SynthFamily::UpwardTilt: {
                p.translation = {0.0, 0.2 * u, 0.0};
                p.rotation = rot_x(A * u);
                break;
            }
            case SynthFamily::DownwardSweep: {
                p.translation = {0.5 - u, -0.2 * u, 0.0};
                p.rotation = rot_y(A * (1.0 - 2.0 * u)) * rot_x(-0.5 * A * u);
                break;
            }
            case SynthFamily::PeriodicChop: {
                // Narrow dip-and-return pulse per repetition with a slight
                // lateral stroke; the rest pose sits at a constant offset.
                const double pulse_frac = 0.4;
                double phi = std::fmod(params.repetitions * u, 1.0);
                double dip = 0.0, lateral = 0.0;
                if (phi < pulse_frac) {
                    double s = 2.0 * M_PI * phi / pulse_frac;
                    dip = 0.5 * (1.0 - std::cos(s));
                    lateral = 0.5 * A * std::sin(s);
                }
                p.translation = {0.25 + lateral, -A * dip, 0.15};
                p.rotation = rot_x(-0.3 * dip);
                break;
            }
            case SynthFamily::StaticJitter: {
                p.translation = {0.0, 0.0, 0.0};
                p.rotation = Mat3::identity();
                break;
            }
        }
        if (params.noise_sigma > 0) {
            p.translation.x += rng.normal() * params.noise_sigma;
            p.translation.y += rng.normal() * params.noise_sigma;
            p.translation.z += rng.normal() * params.noise_sigma;
        }
        traj.poses.push_back(p);
    }
    traj.validate();

    FamilyText ft = family_text(family);
    return SynthResult{std::move(traj), family_name(family), ft.text, ft.verb};
}

std::vector<PairManifestRecord> Dataset::split_records(Split s) const {
    std::vector<PairManifestRecord> out;
    for (const auto& r : records)
        if (r.split == s) out.push_back(r);
    return out;
}

void Dataset::preflight() const {
    for (const auto& r : records) {
        if (!store.contains(r.embedding_id))
            throw InvalidInputError("preflight: unresolvable embedding id " + r.embedding_id);
        if (!trajectories.count(r.trajectory_id))
            throw InvalidInputError("preflight: unknown trajectory " + r.trajectory_id);
    }
}

Dataset make_synth_dataset(const SynthDatasetOptions& opts, Rng& rng,
                           const std::string& out_dir) {
    if (opts.n_per_family < 1)
        throw InvalidInputError("make_synth_dataset: n_per_family must be >= 1");
    if ((int)opts.families.size() > kEmbedDim)
        throw InvalidInputError("make_synth_dataset: more families than embedding "
                                "dimensions, orthogonal texts impossible");
    if (opts.window_s > opts.duration_s)
        throw InvalidInputError("make_synth_dataset: window longer than trajectory");

    Dataset ds;
    // Per-family canonical texts as mutually orthogonal unit vectors.
    for (size_t fi = 0; fi < opts.families.size(); ++fi) {
        std::vector<float> e(kEmbedDim, 0.0f);
        e[fi] = 1.0f;
        ds.store.put("synth_" + family_name(opts.families[fi]), e);
    }

    int n_train = (int)std::floor(opts.n_per_family * 0.70);
    int n_val = (int)std::floor(opts.n_per_family * 0.15);
    double t1 = 0.5 * (opts.duration_s - opts.window_s);
    double t2 = t1 + opts.window_s;

    for (int j = 0; j < opts.n_per_family; ++j) {
        for (size_t fi = 0; fi < opts.families.size(); ++fi) {
            SynthFamily fam = opts.families[fi];
            Rng traj_rng = rng.fork(((uint64_t)j << 8) | fi);
            SynthParams params;
            params.noise_sigma = opts.noise_sigma;
            switch (fam) {
                case SynthFamily::Orbit:
                    params.amplitude_m = traj_rng.uniform(0.5, 2.0);
                    params.frequency_hz = traj_rng.uniform(0.08, 0.15);
                    break;
                case SynthFamily::OscillatingWalk:
                    params.amplitude_m = traj_rng.uniform(0.03, 0.10);
                    params.frequency_hz = traj_rng.uniform(1.2, 2.5);
                    break;
                case SynthFamily::UpwardTilt:
                    params.amplitude_m = traj_rng.uniform(0.5, 1.2);
                    break;
                case SynthFamily::DownwardSweep:
                    params.amplitude_m = traj_rng.uniform(0.4, 1.0);
                    break;
                case SynthFamily::PeriodicChop:
                    params.amplitude_m = traj_rng.uniform(0.10, 0.30);
                    params.repetitions = 3 + (int)traj_rng.below(8);
                    break;
                case SynthFamily::StaticJitter:
                    break;
            }
            SynthResult res =
                synth_generate(fam, params, opts.duration_s, opts.rate_hz, traj_rng);

            char idbuf[64];
            std::snprintf(idbuf, sizeof(idbuf), "%s_%04d", res.label.c_str(), j);
            std::string traj_id = idbuf;
            std::snprintf(idbuf, sizeof(idbuf), "take_%04d", j);

            PairManifestRecord r;
            r.trajectory_id = traj_id;
            r.t1 = t1;
            r.t2 = t2;
            r.text = res.text;
            r.embedding_id = "synth_" + res.label;
            r.take_id = idbuf;
            r.verb = res.verb;
            r.activity_label = res.label;
            r.visibility = j % 2 == 0 ? Visibility::InView : Visibility::OutOfView;
            r.split = j < n_train ? Split::Train
                                  : (j < n_train + n_val ? Split::Val : Split::Test);
            ds.records.push_back(std::move(r));
            ds.trajectories.emplace(traj_id, std::move(res.trajectory));
        }
    }

    if (!out_dir.empty()) {
        fs::create_directories(fs::path(out_dir) / "trajs");
        save_manifest(ds.records, (fs::path(out_dir) / "manifest.jsonl").string());
        ds.store.save((fs::path(out_dir) / "embeddings.bin").string());
        for (const auto& [id, traj] : ds.trajectories) {
            auto base = fs::path(out_dir) / "trajs" / id;
            geometry::save_tum(traj, base.string() + ".tum", base.string() + ".meta.json");
        }
    }
    return ds;
}

Dataset load_dataset(const std::string& dir) {
    Dataset ds;
    ds.records = load_manifest((fs::path(dir) / "manifest.jsonl").string());
    ds.store = TextEmbeddingStore::load((fs::path(dir) / "embeddings.bin").string());
    std::set<std::string> ids;
    for (const auto& r : ds.records) ids.insert(r.trajectory_id);
    for (const auto& id : ids) {
        auto base = fs::path(dir) / "trajs" / id;
        ds.trajectories.emplace(
            id, geometry::load_tum(base.string() + ".tum", base.string() + ".meta.json"));
    }
    ds.preflight();
    return ds;
}

}  // namespace camtraj::data
