#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "camtraj/adamw.hpp"
#include "camtraj/geometry.hpp"
#include "camtraj/rng.hpp"
#include "camtraj/tape.hpp"
#include "camtraj/tensor.hpp"

namespace camtraj::model {

struct CamFormerConfig {
    int d_in = 128;
    int layers = 4;
    int heads = 4;
    int ffn_dim = 256;
    double dropout = 0.1;
    int d_out = 512;
    int max_seq_len = 512;
    bool use_gravity_token = true;

    void validate() const;
    std::string to_json() const;
    static CamFormerConfig from_json(const std::string& text);
};

// Fresh parameter set; transformer weights N(0, 0.02), gains 1, biases 0.
ParamMap<float> init_weights(const CamFormerConfig& cfg, Rng& rng);

int64_t param_count(const ParamMap<float>& weights);

// Node handles of interest from one encoder pass.
template <typename T>
struct ForwardNodes {
    int tokens = -1;     // T x d_in, after the last transformer block
    int pooled = -1;     // 1 x d_in, masked mean (pre-projection)
    int embedding = -1;  // 1 x d_out, unit norm
};

// Builds the full encoder graph on the tape. `params` maps parameter names
// to already-created leaf nodes. `mask` is over pose rows; the gravity
// token (when present) is prepended internally and never pooled.
template <typename T>
ForwardNodes<T> build_forward(Tape<T>& tape, const std::map<std::string, int>& params,
                              const geometry::RelativePoseSequence& seq,
                              const std::vector<bool>& mask, const CamFormerConfig& cfg,
                              bool train, Rng& rng);

// Leaf nodes for every parameter, in name order.
template <typename T>
std::map<std::string, int> param_leaves(Tape<T>& tape, const ParamMap<T>& weights);

// Inference-mode embedding (1 x d_out, unit norm).
Tensor<float> forward(const geometry::RelativePoseSequence& seq,
                      const std::vector<bool>& mask, const CamFormerConfig& cfg,
                      const ParamMap<float>& weights);

// Per-token features after the last block, masked-true positions only,
// temporal order (K x d_in).
Tensor<float> temporal_features(const geometry::RelativePoseSequence& seq,
                                const std::vector<bool>& mask, const CamFormerConfig& cfg,
                                const ParamMap<float>& weights);

struct CheckpointMeta {
    uint64_t seed = 0;
    int64_t step = 0;
};

struct Checkpoint {
    CamFormerConfig config;
    ParamMap<float> weights;
    CheckpointMeta meta;
};

// Versioned binary container: magic + version, config/meta JSON, tensor
// manifest (names, shapes) and raw little-endian float32 payload.
void save_checkpoint(const std::string& path, const CamFormerConfig& cfg,
                     const ParamMap<float>& weights, const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace camtraj::model
