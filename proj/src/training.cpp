#include "camtraj/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace camtraj::training {

using nlohmann::json;

void TrainConfig::validate() const {
    if (batch_size < (diagnostic_single ? 1 : 2))
        throw ConfigError("train.batch_size must be >= 2 (or 1 in diagnostic mode)");
    if (temperature <= 0) throw ConfigError("train.temperature must be positive");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (w_max_s < 0) throw ConfigError("train.w_max_s must be non-negative");
    if (sample_rate_hz <= 0) throw ConfigError("train.sample_rate_hz must be positive");
    if (optimizer.lr <= 0) throw ConfigError("train.lr must be positive");
}

ContextWindowSpec sample_context(double t1, double t2, double w_max, Rng& rng,
                                 double extent_start, double extent_end) {
    if (t2 <= t1) throw InvalidInputError("sample_context: t2 must exceed t1");
    double w = rng.uniform(0.0, w_max);
    double u = rng.uniform(0.0, w);
    ContextWindowSpec s;
    s.t1 = t1;
    s.t2 = t2;
    s.w1 = u;
    s.w2 = w - u;
    if (t1 - s.w1 < extent_start) {
        s.w1 = t1 - extent_start;
        s.clipped_left = true;
    }
    if (t2 + s.w2 > extent_end) {
        s.w2 = extent_end - t2;
        s.clipped_right = true;
    }
    return s;
}

ContextWindowSpec symmetric_context(double t1, double t2, double w, double extent_start,
                                    double extent_end) {
    if (t2 <= t1) throw InvalidInputError("symmetric_context: t2 must exceed t1");
    if (w < 0) throw InvalidInputError("symmetric_context: w must be non-negative");
    ContextWindowSpec s;
    s.t1 = t1;
    s.t2 = t2;
    s.w1 = w / 2;
    s.w2 = w / 2;
    if (t1 - s.w1 < extent_start) {
        s.w1 = t1 - extent_start;
        s.clipped_left = true;
    }
    if (t2 + s.w2 > extent_end) {
        s.w2 = extent_end - t2;
        s.clipped_right = true;
    }
    return s;
}

WindowEncoding encode_window(const geometry::Trajectory& traj, const ContextWindowSpec& spec,
                             double rate_hz) {
    if (rate_hz <= 0) throw InvalidInputError("encode_window: rate must be positive");
    double a = spec.start();
    double b = spec.end();
    auto n = (size_t)std::llround((b - a) * rate_hz);
    if (n < 2) throw InvalidInputError("encode_window: window too short");
    std::vector<double> times(n);
    for (size_t i = 0; i < n; ++i) times[i] = a + (double)i / rate_hz;
    // Guard the last sample against rounding past the trajectory extent.
    times.back() = std::min(times.back(), traj.end_time());

    geometry::Trajectory sub;
    sub.frame = traj.frame;
    sub.sample_rate_hz = rate_hz;
    sub.gravity_world = traj.gravity_world;
    sub.poses = geometry::sample_at(traj, times);
    if (sub.frame != geometry::Frame::Aria)
        sub = geometry::convert_frame(sub, geometry::Frame::Aria);

    WindowEncoding enc;
    enc.seq = geometry::relative_to_midpoint(sub, sub.gravity_world.has_value());
    enc.mask.resize(n);
    for (size_t i = 0; i < n; ++i) enc.mask[i] = times[i] >= spec.t1 && times[i] < spec.t2;
    return enc;
}

Batch build_batch(const std::vector<data::PairManifestRecord>& slice,
                  const std::map<std::string, geometry::Trajectory>& trajectories,
                  const data::TextEmbeddingStore& store, const TrainConfig& cfg, Rng& rng) {
    if (slice.empty()) throw InvalidInputError("build_batch: empty batch");
    Batch batch;
    batch.text = Tensor<float>({(int64_t)slice.size(), data::kEmbedDim});
    for (size_t i = 0; i < slice.size(); ++i) {
        const auto& rec = slice[i];
        auto it = trajectories.find(rec.trajectory_id);
        if (it == trajectories.end())
            throw InvalidInputError("build_batch: unknown trajectory " + rec.trajectory_id);
        const geometry::Trajectory& traj = it->second;
        auto spec = sample_context(rec.t1, rec.t2, cfg.w_max_s, rng, traj.start_time(),
                                   traj.end_time());
        WindowEncoding enc = encode_window(traj, spec, cfg.sample_rate_hz);
        batch.valid_len.push_back(enc.seq.n);
        batch.max_len = std::max(batch.max_len, enc.seq.n);
        batch.sequences.push_back(std::move(enc.seq));
        batch.masks.push_back(std::move(enc.mask));
        const auto& emb = store.get(rec.embedding_id);
        std::copy(emb.begin(), emb.end(), batch.text.data.begin() + (int64_t)i * data::kEmbedDim);
        batch.embedding_ids.push_back(rec.embedding_id);
    }
    // Right-pad with identity rows; padded positions stay mask-false.
    static const double kIdentityRow[9] = {0, 0, 0, 1, 0, 0, 0, 1, 0};
    for (size_t i = 0; i < batch.sequences.size(); ++i) {
        auto& seq = batch.sequences[i];
        while (seq.n < batch.max_len) {
            seq.rows.insert(seq.rows.end(), kIdentityRow, kIdentityRow + 9);
            ++seq.n;
        }
        batch.masks[i].resize(batch.max_len, false);
    }
    return batch;
}

namespace {

void check_unit_rows(const Tensor<float>& z, const char* which) {
    for (int64_t i = 0; i < z.rows(); ++i) {
        const float* x = z.data.data() + i * z.cols();
        double n2 = 0;
        for (int64_t j = 0; j < z.cols(); ++j) n2 += (double)x[j] * x[j];
        if (std::fabs(std::sqrt(n2) - 1.0) > 1e-3)
            throw InvalidInputError(std::string("infonce_loss: non-unit ") + which +
                                    " row " + std::to_string(i));
    }
}

// Un-pads one batch entry back to its valid prefix.
geometry::RelativePoseSequence trim_sequence(const geometry::RelativePoseSequence& seq,
                                             size_t valid) {
    geometry::RelativePoseSequence out;
    out.n = valid;
    out.rows.assign(seq.rows.begin(), seq.rows.begin() + (ptrdiff_t)(valid * 9));
    out.midpoint_index = seq.midpoint_index;
    out.gravity_ref = seq.gravity_ref;
    return out;
}

}  // namespace

InfoNceNodes infonce_loss(Tape<float>& tape, int z_traj, int z_text, double tau) {
    if (tau <= 0) throw InvalidInputError("infonce_loss: tau must be positive");
    const Tensor<float>& zp = tape.value(z_traj);
    const Tensor<float>& zt = tape.value(z_text);
    if (zp.rows() != zt.rows() || zp.cols() != zt.cols())
        throw ShapeError("infonce_loss: shape mismatch " + shape_str(zp.shape) + " vs " +
                         shape_str(zt.shape));
    check_unit_rows(zp, "trajectory");
    check_unit_rows(zt, "text");
    InfoNceNodes nodes;
    nodes.logits = tape.scale(tape.matmul_nt(z_traj, z_text), (float)(1.0 / tau));
    int l_p2t = tape.softmax_xent_diag(nodes.logits);
    int l_t2p = tape.softmax_xent_diag(tape.transpose(nodes.logits));
    nodes.loss = tape.add(l_p2t, l_t2p);
    return nodes;
}

double infonce_loss_value(const Tensor<float>& z_traj, const Tensor<float>& z_text,
                          double tau) {
    // Double-precision path so oracle comparisons are not limited by
    // float32 logsumexp error; validation mirrors the tape op.
    if (tau <= 0) throw InvalidInputError("infonce_loss: tau must be positive");
    if (z_traj.rows() != z_text.rows() || z_traj.cols() != z_text.cols())
        throw ShapeError("infonce_loss: shape mismatch " + shape_str(z_traj.shape) +
                         " vs " + shape_str(z_text.shape));
    check_unit_rows(z_traj, "trajectory");
    check_unit_rows(z_text, "text");
    Tensor<double> zp = z_traj.cast<double>();
    Tensor<double> zt = z_text.cast<double>();
    Tape<double> tape;
    int logits = tape.scale(tape.matmul_nt(tape.leaf(zp), tape.leaf(zt)), 1.0 / tau);
    int l_p2t = tape.softmax_xent_diag(logits);
    int l_t2p = tape.softmax_xent_diag(tape.transpose(logits));
    return tape.value(tape.add(l_p2t, l_t2p)).data[0];
}

double top1_accuracy(const Tensor<float>& logits, const std::vector<std::string>& ids,
                     bool text_to_traj) {
    int64_t b = logits.rows();
    if (logits.cols() != b || (int64_t)ids.size() != b)
        throw ShapeError("top1_accuracy: square logits and matching ids required");
    int correct = 0;
    for (int64_t i = 0; i < b; ++i) {
        int64_t best = 0;
        for (int64_t j = 1; j < b; ++j) {
            float v = text_to_traj ? logits.at(j, i) : logits.at(i, j);
            float cur = text_to_traj ? logits.at(best, i) : logits.at(i, best);
            if (v > cur) best = j;
        }
        if (ids[(size_t)best] == ids[(size_t)i]) ++correct;
    }
    return (double)correct / (double)b;
}

namespace {

struct StepOutput {
    double loss = 0;
    double p2t = 0, t2p = 0;
    Tensor<float> logits;
};

// One forward over a batch; fills grads and applies the optimizer when
// training, otherwise evaluates only.
StepOutput run_batch(const model::CamFormerConfig& mcfg, const TrainConfig& tcfg,
                     ParamMap<float>& params, AdamW* opt, const Batch& batch, bool train,
                     Rng& model_rng, const std::string& where) {
    Tape<float> tape;
    auto leaves = model::param_leaves(tape, params);
    int z_traj = -1;
    for (size_t i = 0; i < batch.sequences.size(); ++i) {
        auto seq = trim_sequence(batch.sequences[i], batch.valid_len[i]);
        std::vector<bool> mask(batch.masks[i].begin(),
                               batch.masks[i].begin() + (ptrdiff_t)batch.valid_len[i]);
        Rng item_rng = model_rng.fork(i);
        auto fwd = model::build_forward(tape, leaves, seq, mask, mcfg, train, item_rng);
        z_traj = i == 0 ? fwd.embedding : tape.concat_rows(z_traj, fwd.embedding);
    }
    int z_text = tape.leaf(batch.text);
    auto nodes = infonce_loss(tape, z_traj, z_text, tcfg.temperature);

    StepOutput out;
    out.loss = tape.value(nodes.loss).data[0];
    out.logits = tape.value(nodes.logits);
    if (!std::isfinite(out.loss) || !out.logits.all_finite()) {
        std::ostringstream msg;
        msg << "non-finite loss at " << where << "; batch embedding ids:";
        for (const auto& id : batch.embedding_ids) msg << ' ' << id;
        throw NumericError(msg.str());
    }
    out.p2t = top1_accuracy(out.logits, batch.embedding_ids, false);
    out.t2p = top1_accuracy(out.logits, batch.embedding_ids, true);

    if (train && opt) {
        tape.backward(nodes.loss);
        ParamMap<float> grads;
        for (const auto& [name, id] : leaves) grads.emplace(name, tape.grad(id));
        opt->step(params, grads);
    }
    return out;
}

Batch build_eval_batch(const std::vector<data::PairManifestRecord>& slice,
                       const data::Dataset& ds, const TrainConfig& cfg) {
    // Deterministic zero-context batches for validation.
    TrainConfig eval_cfg = cfg;
    eval_cfg.w_max_s = 0.0;
    Rng dummy(0);
    return build_batch(slice, ds.trajectories, ds.store, eval_cfg, dummy);
}

}  // namespace

TrainResult train(const model::CamFormerConfig& mcfg, const TrainConfig& tcfg,
                  const data::Dataset& dataset, const std::string& metrics_path) {
    mcfg.validate();
    tcfg.validate();
    dataset.preflight();

    auto train_recs = dataset.split_records(data::Split::Train);
    auto val_recs = dataset.split_records(data::Split::Val);
    if (train_recs.size() < 2) throw InvalidInputError("train: need at least 2 train records");

    std::ofstream metrics(metrics_path);
    if (!metrics) throw IoError("train: cannot open metrics file " + metrics_path);

    Rng root(tcfg.seed);
    Rng init_rng = root.fork(1);
    ParamMap<float> params = model::init_weights(mcfg, init_rng);
    AdamW opt(tcfg.optimizer);

    auto wall_start = std::chrono::steady_clock::now();
    int step = 0;
    double last_loss = 0;
    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        std::vector<size_t> order(train_recs.size());
        std::iota(order.begin(), order.end(), (size_t)0);
        Rng shuffle_rng = root.fork(2).fork((uint64_t)epoch);
        shuffle_rng.shuffle(order);

        for (size_t pos = 0; pos < order.size(); pos += (size_t)tcfg.batch_size) {
            size_t take = std::min((size_t)tcfg.batch_size, order.size() - pos);
            if (take < 2 && !tcfg.diagnostic_single) continue;  // drop trailing singleton
            std::vector<data::PairManifestRecord> slice;
            for (size_t k = 0; k < take; ++k) slice.push_back(train_recs[order[pos + k]]);

            Rng step_rng = root.fork(3).fork((uint64_t)step);
            Rng ctx_rng = step_rng.fork(1);
            Rng model_rng = step_rng.fork(2);
            Batch batch = build_batch(slice, dataset.trajectories, dataset.store, tcfg, ctx_rng);
            StepOutput out = run_batch(mcfg, tcfg, params, &opt, batch, true, model_rng,
                                       "step " + std::to_string(step));
            last_loss = out.loss;

            auto now = std::chrono::steady_clock::now();
            json rec = {
                {"step", step},
                {"loss", out.loss},
                {"p2t_top1", out.p2t},
                {"t2p_top1", out.t2p},
                {"lr", tcfg.optimizer.lr},
                {"wall_ms",
                 std::chrono::duration_cast<std::chrono::milliseconds>(now - wall_start)
                     .count()},
            };
            metrics << rec.dump() << '\n';
            ++step;
        }

        if (!val_recs.empty()) {
            double vloss = 0, vp2t = 0, vt2p = 0;
            int nb = 0;
            Rng eval_rng = root.fork(4).fork((uint64_t)epoch);
            for (size_t pos = 0; pos < val_recs.size(); pos += (size_t)tcfg.batch_size) {
                size_t take = std::min((size_t)tcfg.batch_size, val_recs.size() - pos);
                if (take < 2) break;
                std::vector<data::PairManifestRecord> slice(val_recs.begin() + (ptrdiff_t)pos,
                                                            val_recs.begin() +
                                                                (ptrdiff_t)(pos + take));
                Batch batch = build_eval_batch(slice, dataset, tcfg);
                StepOutput out = run_batch(mcfg, tcfg, params, nullptr, batch, false, eval_rng,
                                           "validation epoch " + std::to_string(epoch));
                vloss += out.loss;
                vp2t += out.p2t;
                vt2p += out.t2p;
                ++nb;
            }
            if (nb > 0) {
                json rec = {
                    {"epoch", epoch},
                    {"val_loss", vloss / nb},
                    {"val_p2t_top1", vp2t / nb},
                    {"val_t2p_top1", vt2p / nb},
                };
                metrics << rec.dump() << '\n';
            }
        }
        metrics.flush();
    }

    TrainResult result;
    result.checkpoint.config = mcfg;
    result.checkpoint.weights = std::move(params);
    result.checkpoint.meta = {tcfg.seed, step};
    result.final_loss = last_loss;
    result.steps = step;
    return result;
}

}  // namespace camtraj::training
