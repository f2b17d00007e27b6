#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "camtraj/geometry.hpp"
#include "camtraj/rng.hpp"
#include "camtraj/tensor.hpp"

namespace camtraj::data {

constexpr int kEmbedDim = 512;

enum class Split { Train, Val, Test };
enum class Visibility { InView, OutOfView };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct PairManifestRecord {
    std::string trajectory_id;
    double t1 = 0, t2 = 0;  // seconds
    std::string text;
    std::string embedding_id;
    std::string take_id;
    std::optional<std::string> verb;
    std::optional<std::string> activity_label;
    std::optional<Visibility> visibility;
    Split split = Split::Train;
};

// JSON-lines manifest, one record per line. Malformed lines fail with the
// line number; duplicate (trajectory_id, t1, t2, text) records are rejected.
std::vector<PairManifestRecord> load_manifest(const std::string& path);
void save_manifest(const std::vector<PairManifestRecord>& records, const std::string& path);

// In-memory embedding_id -> unit-norm 512-d vector map with a versioned
// binary file representation (header, id string table, float32 matrix).
class TextEmbeddingStore {
public:
    enum class Provenance { File, Service };

    // Normalizes on insert; rejects wrong dimensionality.
    void put(const std::string& id, const std::vector<float>& vec);
    bool contains(const std::string& id) const { return vectors_.count(id) > 0; }
    // Throws InvalidInputError for unknown ids.
    const std::vector<float>& get(const std::string& id) const;
    size_t size() const { return vectors_.size(); }
    const std::map<std::string, std::vector<float>>& entries() const { return vectors_; }

    Provenance provenance = Provenance::File;

    void save(const std::string& path) const;
    static TextEmbeddingStore load(const std::string& path);

private:
    std::map<std::string, std::vector<float>> vectors_;
};

// Client for an external frozen text encoder: POST {"texts": [...]} ->
// {"embeddings": [[...], ...]}. Successful batches are cached to the file
// store; partial results are never cached.
class EmbeddingClient {
public:
    EmbeddingClient(std::string endpoint, std::string cache_path);

    // Ensures every (id, text) pair is present in the store, fetching the
    // missing ones in one batch. Results come back in input order.
    void fetch(const std::vector<std::string>& ids, const std::vector<std::string>& texts);

    TextEmbeddingStore& store() { return store_; }
    int network_calls() const { return network_calls_; }
    int cache_hits() const { return cache_hits_; }

private:
    std::string endpoint_;
    std::string cache_path_;
    TextEmbeddingStore store_;
    int network_calls_ = 0;
    int cache_hits_ = 0;
};

enum class SynthFamily { Orbit, OscillatingWalk, UpwardTilt, DownwardSweep, PeriodicChop, StaticJitter };

std::string family_name(SynthFamily f);
SynthFamily family_from_name(const std::string& name);
const std::vector<SynthFamily>& all_families();

// Motion-shape parameters; ranges are validated per family.
struct SynthParams {
    double amplitude_m = 0.5;
    double frequency_hz = 0.2;
    int repetitions = 5;      // periodic_chop only
    double noise_sigma = 0.0; // Gaussian translation noise, meters
};

struct SynthResult {
    geometry::Trajectory trajectory;
    std::string label;  // family name
    std::string text;   // canonical narration
    std::string verb;
};

// Deterministic given (family, params, seed). Gravity is (0, -9.81, 0) in
// the Aria world frame. Sample count is duration_s * rate_hz + 1 (endpoint
// inclusive, so a full-period orbit closes exactly).
SynthResult synth_generate(SynthFamily family, const SynthParams& params,
                           double duration_s, double rate_hz, Rng& rng);

struct SynthDatasetOptions {
    int n_per_family = 200;
    std::vector<SynthFamily> families = all_families();
    double duration_s = 12.0;
    double rate_hz = 20.0;
    double window_s = 4.0;      // labeled [t1, t2] centered in the trajectory
    double noise_sigma = 0.01;
};

struct Dataset {
    std::vector<PairManifestRecord> records;
    std::map<std::string, geometry::Trajectory> trajectories;
    TextEmbeddingStore store;

    std::vector<PairManifestRecord> split_records(Split s) const;
    // Every manifest embedding_id and trajectory_id must resolve.
    void preflight() const;
};

// Generates the desk-scale corpus: balanced 70/15/15 split per family,
// per-family canonical texts mapped to mutually orthogonal unit vectors,
// take ids grouping one trajectory of each family. When out_dir is
// nonempty, writes trajs/, manifest.jsonl and embeddings.bin under it.
Dataset make_synth_dataset(const SynthDatasetOptions& opts, Rng& rng,
                           const std::string& out_dir = "");

// Loads manifest.jsonl, embeddings.bin and trajs/ from a dataset directory.
Dataset load_dataset(const std::string& dir);

}  // namespace camtraj::data
