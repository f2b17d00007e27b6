#pragma once

#include <functional>
#include <string>
#include <vector>

#include "camtraj/adamw.hpp"
#include "camtraj/data.hpp"
#include "camtraj/model.hpp"
#include "camtraj/tape.hpp"

namespace camtraj::training {

struct TrainConfig {
    int batch_size = 64;
    double temperature = 0.07;
    int epochs = 10;
    uint64_t seed = 0;
    double w_max_s = 8.0;         // max total context extension, seconds
    double sample_rate_hz = 20.0;
    AdamWConfig optimizer;
    bool diagnostic_single = false;  // permit B = 1 batches

    void validate() const;
};

// Extended window bookkeeping: [t1 - w1, t2 + w2], with w1/w2 already
// clipped to the trajectory extent and the clipping recorded.
struct ContextWindowSpec {
    double t1 = 0, t2 = 0;
    double w1 = 0, w2 = 0;
    bool clipped_left = false, clipped_right = false;

    double start() const { return t1 - w1; }
    double end() const { return t2 + w2; }
};

// w ~ U(0, w_max), split point u ~ U(0, w); w1 = u, w2 = w - u.
ContextWindowSpec sample_context(double t1, double t2, double w_max, Rng& rng,
                                 double extent_start, double extent_end);

// Deterministic variant with a fixed symmetric extension (w1 = w2 = w/2).
ContextWindowSpec symmetric_context(double t1, double t2, double w, double extent_start,
                                    double extent_end);

// Uniformly samples the window [spec.start, spec.end] at rate_hz, converts
// to the Aria frame if needed, and encodes relative to the midpoint. The
// pooling mask is true for samples inside the original [t1, t2].
struct WindowEncoding {
    geometry::RelativePoseSequence seq;
    std::vector<bool> mask;
};
WindowEncoding encode_window(const geometry::Trajectory& traj, const ContextWindowSpec& spec,
                             double rate_hz);

struct Batch {
    // Right-padded to the batch max length with identity rows; padded
    // positions are mask-false and beyond valid_len.
    std::vector<geometry::RelativePoseSequence> sequences;
    std::vector<std::vector<bool>> masks;
    std::vector<size_t> valid_len;
    Tensor<float> text;  // B x 512, unit rows
    std::vector<std::string> embedding_ids;
    size_t max_len = 0;
};

Batch build_batch(const std::vector<data::PairManifestRecord>& slice,
                  const std::map<std::string, geometry::Trajectory>& trajectories,
                  const data::TextEmbeddingStore& store, const TrainConfig& cfg, Rng& rng);

// Symmetric InfoNCE on the tape. Rows of both inputs must be unit norm
// within 1e-3. Returns the scalar loss node and the scaled logits node.
struct InfoNceNodes {
    int loss = -1;
    int logits = -1;  // B x B similarities divided by tau
};
InfoNceNodes infonce_loss(Tape<float>& tape, int z_traj, int z_text, double tau);

// Plain-value convenience used by tests and evaluation.
double infonce_loss_value(const Tensor<float>& z_traj, const Tensor<float>& z_text,
                          double tau);

// In-batch top-1 retrieval accuracy over a logits matrix; a prediction is
// correct when the argmax candidate carries the same embedding id (ties
// break to the lowest index).
double top1_accuracy(const Tensor<float>& logits, const std::vector<std::string>& ids,
                     bool text_to_traj);

struct TrainResult {
    model::Checkpoint checkpoint;
    double final_loss = 0;
    int steps = 0;
};

// Full contrastive training loop. Metrics are written as JSON-lines to
// metrics_path (one record per step plus one per-epoch validation record).
TrainResult train(const model::CamFormerConfig& mcfg, const TrainConfig& tcfg,
                  const data::Dataset& dataset, const std::string& metrics_path);

}  // namespace camtraj::training
