#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "camtraj/error.hpp"
#include "camtraj/tensor.hpp"

namespace camtraj {

template <typename T>
using ParamMap = std::map<std::string, Tensor<T>>;

// Decoupled weight decay Adam. Decay is applied to the parameter directly,
// not folded into the gradient; moments are bias-corrected.
struct AdamWConfig {
    double lr = 1e-4;
    double weight_decay = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    const AdamWConfig& config() const { return cfg_; }
    int64_t step_count() const { return step_; }

    void step(ParamMap<float>& params, const ParamMap<float>& grads) {
        if (step_ == INT64_MAX) throw NumericError("adamw: step counter overflow");
        ++step_;
        double bc1 = 1.0 - std::pow(cfg_.beta1, (double)step_);
        double bc2 = 1.0 - std::pow(cfg_.beta2, (double)step_);
        for (auto& [name, p] : params) {
            auto git = grads.find(name);
            const float* g = nullptr;
            if (git != grads.end()) {
                if (!git->second.same_shape(p))
                    throw ShapeError("adamw: gradient shape mismatch for " + name);
                g = git->second.data.data();
            }
            Tensor<float>& m = moment(m1_, name, p);
            Tensor<float>& v = moment(m2_, name, p);
            for (size_t i = 0; i < p.data.size(); ++i) {
                float gi = g ? g[i] : 0.0f;
                m.data[i] = (float)(cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * gi);
                v.data[i] = (float)(cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * gi * gi);
                double mhat = m.data[i] / bc1;
                double vhat = v.data[i] / bc2;
                double upd = cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
                p.data[i] = (float)(p.data[i] * (1.0 - cfg_.lr * cfg_.weight_decay) - upd);
            }
        }
    }

private:
    static Tensor<float>& moment(ParamMap<float>& store, const std::string& name,
                                 const Tensor<float>& p) {
        auto it = store.find(name);
        if (it == store.end()) it = store.emplace(name, Tensor<float>::zeros(p.shape)).first;
        return it->second;
    }

    AdamWConfig cfg_;
    int64_t step_ = 0;
    ParamMap<float> m1_, m2_;
};

}  // namespace camtraj
