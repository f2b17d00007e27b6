#pragma once

#include <array>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "camtraj/data.hpp"
#include "camtraj/model.hpp"
#include "camtraj/rng.hpp"
#include "camtraj/tensor.hpp"

namespace camtraj::eval {

// One 5-way retrieval question: a trajectory window must pick its own text
// among one correct and four hard-negative candidates.
struct MCQItem {
    size_t query_index = 0;  // position in the source manifest
    std::array<std::string, 5> candidates{};  // embedding ids
    int correct_index = 0;
    std::string activity;    // group tags; empty when the manifest lacks them
    std::string visibility;
    bool fallback_same_activity = false;  // same-take pool was too small
};

struct MCQBuildOptions {
    int per_cell_cap = 0;  // 0 = balance to the smallest cell only
};

struct MCQBuildResult {
    std::vector<MCQItem> items;
    int skipped = 0;  // queries without 4 usable distractors
};

// Manifest verb, falling back to the first whitespace token of the
// lowercased narration (skipping a small stop-prefix list).
std::string extract_verb(const data::PairManifestRecord& rec);

// Distractors prefer the same take_id and must carry a different verb; when
// balance_keys are given (subset of {"activity", "visibility"}), items are
// balanced across cells by capped sampling.
MCQBuildResult build_mcq(const std::vector<data::PairManifestRecord>& manifest, Rng& rng,
                         const std::vector<std::string>& balance_keys,
                         const MCQBuildOptions& opts = {});

using EmbedFn = std::function<std::vector<float>(const data::PairManifestRecord&)>;

struct MCQEvalResult {
    double overall = 0;
    int n_items = 0;
    std::map<std::string, double> per_group;  // "activity:<v>" / "visibility:<v>"
    std::vector<int> predictions;             // chosen candidate index per item
};

// Prediction = argmax cosine similarity over the 5 candidates; ties break
// to the lowest candidate index.
MCQEvalResult eval_mcq(const EmbedFn& embed, const std::vector<MCQItem>& items,
                       const std::vector<data::PairManifestRecord>& manifest,
                       const data::TextEmbeddingStore& store);

// Elementwise mean of two unit vectors, re-normalized.
std::vector<float> fuse(const std::vector<float>& z_traj, const std::vector<float>& z_video);

struct LinearProbe {
    Tensor<float> weights;  // C x D
    std::vector<float> bias;
    std::vector<std::string> class_names;
    double lambda = 1e-3;
    int epochs = 200;

    int predict(const float* x, int64_t d) const;
};

// One-vs-rest hinge loss + L2 via subgradient descent; deterministic given
// the rng. labels are class indices into class_names.
LinearProbe train_probe(const Tensor<float>& features, const std::vector<int>& labels,
                        const std::vector<std::string>& class_names, double lambda = 1e-3,
                        int epochs = 200, Rng* rng = nullptr);

double probe_accuracy(const LinearProbe& probe, const Tensor<float>& features,
                      const std::vector<int>& labels);

struct SimilarityMap {
    size_t n = 0;
    double hz = 0;  // frame rate of the feature rows
    std::vector<double> data;  // n*n row-major cosine similarities
    int zero_norm_rows = 0;

    double at(size_t i, size_t j) const { return data[i * n + j]; }
};

// Pairwise cosine similarities of feature rows; zero-norm rows similarity 0
// off-diagonal (diagonal stays 1) with a warning count.
SimilarityMap self_similarity(const Tensor<float>& features, double hz);

// Model temporal features of the full trajectory with the positional trend
// removed. Learned positional embeddings add a strong index-dependent
// component to every token that drowns periodic motion structure in the
// self-similarity map; subtracting the features of a same-length motionless
// sequence (identity relative poses, same gravity) cancels it.
Tensor<float> motion_features(const geometry::Trajectory& traj,
                              const model::CamFormerConfig& cfg,
                              const ParamMap<float>& weights);

struct RepetitionResult {
    int count = 0;
    double period_s = 0;
    bool aperiodic = false;
    double peak = 0;         // mean-subtracted lag-profile value at l*
    double noise_sigma = 0;  // off-period profile noise estimate
};

// Lag-profile periodicity: a(l) = mean_i map[i, i+l] over l in [2, N/2],
// mean-subtracted; l* = smallest dominant peak with parabolic sub-sample
// refinement; count = floor(N / l*). Flat or sub-noise profiles report
// aperiodic with count 0.
RepetitionResult count_repetitions(const SimilarityMap& map);

struct SweepPoint {
    double w = 0;
    double accuracy = 0;
    int clipped_items = 0;
};

// Re-embeds every item with the window extended symmetrically by w (w1 =
// w2 = w/2) and re-runs the MCQ evaluation for each w.
std::vector<SweepPoint> context_sweep(const model::Checkpoint& ckpt,
                                      const data::Dataset& dataset,
                                      const std::vector<MCQItem>& items,
                                      const std::vector<double>& w_values, double rate_hz);

// Inference helper shared by eval_mcq callers and the sweep: embeds the
// record's window extended symmetrically by w seconds.
std::vector<float> embed_record(const model::Checkpoint& ckpt, const data::Dataset& dataset,
                                const data::PairManifestRecord& rec, double w,
                                double rate_hz, bool* clipped = nullptr);

// ---- exports ----
void save_mcq_items(const std::vector<MCQItem>& items,
                    const std::vector<data::PairManifestRecord>& manifest,
                    const std::string& path);
std::vector<MCQItem> load_mcq_items(const std::string& path);
void save_mcq_results(const MCQEvalResult& result, const std::vector<MCQItem>& items,
                      const std::string& path);
void write_sweep_csv(const std::vector<SweepPoint>& points, const std::string& path);
void export_ssm_csv(const SimilarityMap& map, const std::string& path);
// 8-bit binary PGM, [-1, 1] mapped linearly to [0, 255].
void export_ssm_pgm(const SimilarityMap& map, const std::string& path);

}  // namespace camtraj::eval
