// Acceptance gate: runs every release criterion end to end and prints one
// PASS/FAIL line each. Exit code is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "camtraj/data.hpp"
#include "camtraj/eval.hpp"
#include "camtraj/geometry.hpp"
#include "camtraj/model.hpp"
#include "camtraj/training.hpp"

using namespace camtraj;
namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = false;
    std::string note;
};

geometry::Mat3 random_rotation(Rng& rng) {
    geometry::Quaternion q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    return geometry::quat_to_matrix(q.normalized());
}

geometry::Trajectory random_trajectory(Rng& rng, size_t n) {
    geometry::Trajectory traj;
    traj.sample_rate_hz = 20.0;
    for (size_t i = 0; i < n; ++i) {
        geometry::Pose p;
        p.timestamp = (double)i / traj.sample_rate_hz;
        p.translation = {rng.normal(), rng.normal(), rng.normal()};
        p.rotation = random_rotation(rng);
        traj.poses.push_back(p);
    }
    return traj;
}

// Shared desk-scale fixture: dataset, trained checkpoint and cached
// inference embeddings, built once and reused by several criteria.
struct Fixture {
    data::Dataset dataset;
    model::Checkpoint ckpt;
    double train_seconds = 0;
    bool trained = false;
    std::map<std::string, std::vector<float>> embed_cache;  // record key, w = 0

    static std::string key(const data::PairManifestRecord& r) {
        return r.trajectory_id + "|" + std::to_string(r.t1);
    }

    const std::vector<float>& embed(const data::PairManifestRecord& r) {
        auto it = embed_cache.find(key(r));
        if (it == embed_cache.end()) {
            auto z = eval::embed_record(ckpt, dataset, r, 0.0, 20.0);
            it = embed_cache.emplace(key(r), std::move(z)).first;
        }
        return it->second;
    }
};

Fixture g_fixture;

void build_fixture() {
    auto t0 = Clock::now();
    data::SynthDatasetOptions opts;
    opts.n_per_family = 200;
    opts.families = {data::SynthFamily::Orbit, data::SynthFamily::OscillatingWalk,
                     data::SynthFamily::UpwardTilt, data::SynthFamily::DownwardSweep,
                     data::SynthFamily::PeriodicChop};
    Rng data_rng(7);
    g_fixture.dataset = data::make_synth_dataset(opts, data_rng);

    model::CamFormerConfig mcfg;  // default architecture
    training::TrainConfig tcfg;
    tcfg.batch_size = 64;
    tcfg.temperature = 0.07;
    tcfg.optimizer.lr = 1e-4;
    tcfg.epochs = 18;
    tcfg.seed = 7;

    fs::path metrics = fs::temp_directory_path() / "camtraj_acceptance_metrics.jsonl";
    auto result = training::train(mcfg, tcfg, g_fixture.dataset, metrics.string());
    g_fixture.ckpt = std::move(result.checkpoint);
    g_fixture.train_seconds = seconds_since(t0);
    g_fixture.trained = true;
    fs::remove(metrics);
}

// ---- criteria --------------------------------------------------------------

Outcome criterion_rigid_invariance() {
    auto t0 = Clock::now();
    Rng rng(17);
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        geometry::Trajectory traj = random_trajectory(rng, 5 + rng.below(12));
        auto base = geometry::relative_to_midpoint(traj, false);
        geometry::Mat3 g_rot = random_rotation(rng);
        geometry::Vec3 g_t{rng.normal(), rng.normal(), rng.normal()};
        for (auto& pose : traj.poses) {
            pose.translation = g_rot * pose.translation + g_t;
            pose.rotation = g_rot * pose.rotation;
        }
        auto moved = geometry::relative_to_midpoint(traj, false);
        for (size_t i = 0; i < base.rows.size(); ++i)
            worst = std::max(worst, std::fabs(moved.rows[i] - base.rows[i]));
    }
    double secs = seconds_since(t0);
    std::ostringstream note;
    note << "max row deviation " << worst << ", " << secs << " s";
    return {worst < 1e-9 && secs < 10.0, note.str()};
}

Outcome criterion_sixd_roundtrip() {
    Rng rng(7);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
        geometry::Mat3 r = random_rotation(rng);
        geometry::Mat3 back = geometry::sixd_to_matrix(geometry::matrix_to_6d(r));
        double err = 0;
        for (int j = 0; j < 9; ++j)
            err += (r.m[(size_t)j] - back.m[(size_t)j]) * (r.m[(size_t)j] - back.m[(size_t)j]);
        worst = std::max(worst, std::sqrt(err));
    }
    return {worst < 1e-9, "max Frobenius error " + std::to_string(worst)};
}

Outcome criterion_grad_fidelity() {
    model::CamFormerConfig cfg;
    cfg.d_in = 16;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.ffn_dim = 32;
    cfg.dropout = 0.0;
    cfg.d_out = 16;
    cfg.max_seq_len = 16;

    Rng init_rng(3);
    ParamMap<float> wf = model::init_weights(cfg, init_rng);
    ParamMap<double> weights;
    for (const auto& [name, t] : wf) weights.emplace(name, t.cast<double>());

    Rng data_rng(5);
    geometry::Trajectory traj = random_trajectory(data_rng, 6);
    traj.gravity_world = geometry::Vec3{0, -9.81, 0};
    auto seq = geometry::relative_to_midpoint(traj, true);
    std::vector<bool> mask(seq.n, true);
    mask[0] = false;

    // scalar head: fixed random weighting of the embedding
    std::vector<double> head((size_t)cfg.d_out);
    Rng head_rng(9);
    for (auto& v : head) v = head_rng.normal();

    auto loss_of = [&](const ParamMap<double>& params) {
        Tape<double> tape;
        auto leaves = model::param_leaves(tape, params);
        Rng fwd(0);
        auto nodes = model::build_forward(tape, leaves, seq, mask, cfg, false, fwd);
        const Tensor<double>& z = tape.value(nodes.embedding);
        double loss = 0;
        for (size_t j = 0; j < z.data.size(); ++j) loss += head[j] * z.data[j];
        return loss;
    };

    Tape<double> tape;
    auto leaves = model::param_leaves(tape, weights);
    Rng fwd(0);
    auto nodes = model::build_forward(tape, leaves, seq, mask, cfg, false, fwd);
    Tensor<double> hw({1, (int64_t)cfg.d_out});
    hw.data.assign(head.begin(), head.end());
    int loss_node = tape.sum(tape.mul(nodes.embedding, tape.leaf(hw)));
    tape.backward(loss_node);

    // At init the pre-normalization projection output has tiny norm, so the
    // l2-normalize curvature is large; h must be small enough that central-
    // difference truncation (~h^2 / ||v||^3) stays below the 1e-4 bound.
    const double h = 1e-5;
    double worst = 0;
    std::string worst_param;
    for (auto& [name, p] : weights) {
        const Tensor<double>& g = tape.grad(leaves.at(name));
        for (size_t i = 0; i < p.data.size(); ++i) {
            double keep = p.data[i];
            p.data[i] = keep + h;
            double up = loss_of(weights);
            p.data[i] = keep - h;
            double down = loss_of(weights);
            p.data[i] = keep;
            double fd = (up - down) / (2 * h);
            double rel = std::fabs(g.data[i] - fd) /
                         std::max({1.0, std::fabs(g.data[i]), std::fabs(fd)});
            if (rel > worst) {
                worst = rel;
                worst_param = name;
            }
        }
    }
    std::ostringstream note;
    note << "max relative error " << worst << " (" << worst_param << ")";
    return {worst < 1e-4, note.str()};
}

Outcome criterion_loss_oracles() {
    // B = 1: loss exactly 0 (within double rounding)
    Tensor<float> one({1, 8});
    one.data[3] = 1.0f;
    double l1 = training::infonce_loss_value(one, one, 0.07);
    if (std::fabs(l1) > 1e-12) return {false, "B=1 loss " + std::to_string(l1)};

    // uniform similarities: 2 ln B within 1e-6
    int64_t b = 64;
    Tensor<float> rows({b, 8});
    for (int64_t i = 0; i < b; ++i) rows.at(i, 3) = 1.0f;
    double lu = training::infonce_loss_value(rows, rows, 0.07);
    double dev = std::fabs(lu - 2.0 * std::log((double)b));
    if (dev > 1e-6) return {false, "uniform deviation " + std::to_string(dev)};

    // first step at random init: within 2 ln B +- 0.5 over 20 seeds. Each
    // batch item carries a distinct text embedding, as in real narration
    // batches; with only 5 distinct oracle texts the between-family logit
    // spread is estimated from 5 values and the deviation fluctuates past
    // the bound for ~10% of inits.
    auto test_recs = g_fixture.dataset.split_records(data::Split::Test);
    model::CamFormerConfig mcfg;
    int64_t bs = 64;
    std::vector<training::WindowEncoding> encs;
    for (size_t i = 0; i < (size_t)bs; ++i) {
        const auto& rec = test_recs[i * 2];
        const auto& traj = g_fixture.dataset.trajectories.at(rec.trajectory_id);
        auto spec = training::symmetric_context(rec.t1, rec.t2, 0.0, traj.start_time(),
                                                traj.end_time());
        encs.push_back(training::encode_window(traj, spec, 20.0));
    }
    double expect = 2.0 * std::log((double)bs);
    double worst_dev = 0;
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        auto weights = model::init_weights(mcfg, rng);
        Rng trng = rng.fork(99);
        Tensor<float> text({bs, (int64_t)data::kEmbedDim});
        for (int64_t i = 0; i < bs; ++i) {
            double nrm = 0;
            for (int64_t j = 0; j < (int64_t)data::kEmbedDim; ++j) {
                double v = trng.normal();
                text.at(i, j) = (float)v;
                nrm += v * v;
            }
            nrm = std::sqrt(nrm);
            for (int64_t j = 0; j < (int64_t)data::kEmbedDim; ++j)
                text.at(i, j) = (float)(text.at(i, j) / nrm);
        }
        Tensor<float> z({bs, (int64_t)mcfg.d_out});
        for (int64_t i = 0; i < bs; ++i) {
            auto e = model::forward(encs[(size_t)i].seq, encs[(size_t)i].mask, mcfg, weights);
            std::copy(e.data.begin(), e.data.end(), z.data.begin() + i * mcfg.d_out);
        }
        double loss = training::infonce_loss_value(z, text, 0.07);
        worst_dev = std::max(worst_dev, std::fabs(loss - expect));
    }
    std::ostringstream note;
    note << "uniform dev " << dev << ", worst first-step |loss - 2lnB| = " << worst_dev;
    return {worst_dev < 0.5, note.str()};
}

Outcome criterion_desk_scale_mcq() {
    if (!g_fixture.trained) return {false, "fixture training failed"};
    auto test_recs = g_fixture.dataset.split_records(data::Split::Test);
    Rng rng(11);
    auto built = eval::build_mcq(test_recs, rng, {});
    eval::EmbedFn embed = [&](const data::PairManifestRecord& r) {
        return g_fixture.embed(r);
    };
    auto result = eval::eval_mcq(embed, built.items, test_recs, g_fixture.dataset.store);
    std::ostringstream note;
    note << "MCQ " << result.overall << " over " << result.n_items << " items, training "
         << g_fixture.train_seconds << " s";
    return {result.overall >= 0.90 && g_fixture.train_seconds < 900.0, note.str()};
}

Outcome criterion_random_embedding_control() {
    std::vector<data::PairManifestRecord> manifest;
    data::TextEmbeddingStore store;
    const char* verbs[5] = {"orbit", "walk", "tilt", "sweep", "chop"};
    for (int take = 0; take < 1100; ++take) {
        for (int v = 0; v < 5; ++v) {
            data::PairManifestRecord r;
            r.trajectory_id = "t" + std::to_string(take * 5 + v);
            r.t1 = 0;
            r.t2 = 4;
            r.text = std::string(verbs[v]) + " variant " + std::to_string(take);
            r.embedding_id = "emb:" + r.text;
            r.take_id = "take" + std::to_string(take);
            r.verb = verbs[v];
            manifest.push_back(r);
            std::vector<float> e((size_t)data::kEmbedDim, 0.0f);
            e[(size_t)((take * 5 + v) % data::kEmbedDim)] = 1.0f;
            store.put(r.embedding_id, e);
        }
    }
    Rng rng(5);
    auto built = eval::build_mcq(manifest, rng, {});
    if (built.items.size() < 5000)
        return {false, "only " + std::to_string(built.items.size()) + " items"};
    Rng emb_rng(23);
    eval::EmbedFn random_embed = [&emb_rng](const data::PairManifestRecord&) {
        std::vector<float> v((size_t)data::kEmbedDim);
        double n = 0;
        for (auto& x : v) {
            x = (float)emb_rng.normal();
            n += (double)x * x;
        }
        n = std::sqrt(n);
        for (auto& x : v) x = (float)(x / n);
        return v;
    };
    auto result = eval::eval_mcq(random_embed, built.items, manifest, store);
    std::ostringstream note;
    note << "accuracy " << result.overall << " over " << result.n_items << " items";
    return {std::fabs(result.overall - 0.20) <= 0.02, note.str()};
}

Outcome criterion_linear_probe() {
    if (!g_fixture.trained) return {false, "fixture training failed"};
    auto collect = [&](data::Split split, Tensor<float>& feats, std::vector<int>& labels,
                       std::vector<std::string>& classes) {
        auto recs = g_fixture.dataset.split_records(split);
        feats = Tensor<float>({(int64_t)recs.size(), (int64_t)data::kEmbedDim});
        for (size_t i = 0; i < recs.size(); ++i) {
            const auto& z = g_fixture.embed(recs[i]);
            std::copy(z.begin(), z.end(),
                      feats.data.begin() + (int64_t)i * data::kEmbedDim);
            const std::string& label = *recs[i].activity_label;
            auto it = std::find(classes.begin(), classes.end(), label);
            if (it == classes.end()) {
                classes.push_back(label);
                it = classes.end() - 1;
            }
            labels.push_back((int)(it - classes.begin()));
        }
    };
    std::vector<std::string> classes;
    Tensor<float> train_x, test_x;
    std::vector<int> train_y, test_y;
    collect(data::Split::Train, train_x, train_y, classes);
    collect(data::Split::Test, test_x, test_y, classes);

    Rng probe_rng(13);
    auto probe = eval::train_probe(train_x, train_y, classes, 1e-3, 200, &probe_rng);
    double acc = eval::probe_accuracy(probe, test_x, test_y);

    std::vector<int> shuffled = train_y;
    Rng shuffle_rng(17);
    shuffle_rng.shuffle(shuffled);
    Rng probe_rng2(13);
    auto chance_probe = eval::train_probe(train_x, shuffled, classes, 1e-3, 200, &probe_rng2);
    double chance = eval::probe_accuracy(chance_probe, test_x, test_y);

    std::ostringstream note;
    note << "probe " << acc << ", shuffled-label control " << chance;
    return {acc >= 0.95 && std::fabs(chance - 0.20) <= 0.03, note.str()};
}

Outcome criterion_contextual_pooling() {
    if (!g_fixture.trained) return {false, "fixture training failed"};
    auto test_recs = g_fixture.dataset.split_records(data::Split::Test);
    const auto& rec = test_recs.front();
    const auto& traj = g_fixture.dataset.trajectories.at(rec.trajectory_id);

    // w = 0 extension must be bit-exact against the base window forward
    auto base_spec = training::symmetric_context(rec.t1, rec.t2, 0.0, traj.start_time(),
                                                 traj.end_time());
    auto base = training::encode_window(traj, base_spec, 20.0);
    auto z_base = model::forward(base.seq, base.mask, g_fixture.ckpt.config,
                                 g_fixture.ckpt.weights);
    auto z_ext = eval::embed_record(g_fixture.ckpt, g_fixture.dataset, rec, 0.0, 20.0);
    for (size_t j = 0; j < z_ext.size(); ++j)
        if (z_ext[j] != z_base.data[j])
            return {false, "w=0 embedding differs at component " + std::to_string(j)};

    // masked mean over an extended window equals the arithmetic mean of the
    // selected temporal features
    auto spec = training::symmetric_context(rec.t1, rec.t2, 4.0, traj.start_time(),
                                            traj.end_time());
    auto enc = training::encode_window(traj, spec, 20.0);
    Tape<float> tape;
    auto leaves = model::param_leaves(tape, g_fixture.ckpt.weights);
    Rng fwd(0);
    auto nodes = model::build_forward(tape, leaves, enc.seq, enc.mask,
                                      g_fixture.ckpt.config, false, fwd);
    const Tensor<float>& tokens = tape.value(nodes.tokens);
    const Tensor<float>& pooled = tape.value(nodes.pooled);
    int64_t offset = tokens.rows() - (int64_t)enc.seq.n;  // gravity token rows
    double worst = 0;
    for (int64_t j = 0; j < pooled.cols(); ++j) {
        double mean = 0;
        int cnt = 0;
        for (size_t i = 0; i < enc.seq.n; ++i) {
            if (!enc.mask[i]) continue;
            mean += tokens.at((int64_t)i + offset, j);
            ++cnt;
        }
        worst = std::max(worst, std::fabs(pooled.at(0, j) - mean / cnt));
    }
    std::ostringstream note;
    note << "w=0 bit-exact, pooled-vs-mean max deviation " << worst;
    return {worst < 1e-6, note.str()};
}

// Sweep fixtures: classification-style MCQ items where every item carries
// the five family texts as candidates.
struct SweepTask {
    data::Dataset dataset;
    std::vector<eval::MCQItem> items;
};

std::vector<std::string> family_embedding_ids(const data::Dataset& ds) {
    std::vector<std::string> ids;
    for (const auto& [id, v] : ds.store.entries()) ids.push_back(id);
    return ids;
}

eval::MCQItem classification_item(size_t query_index, const std::vector<std::string>& ids,
                                  const std::string& correct_id,
                                  const std::string& activity) {
    eval::MCQItem item;
    item.query_index = query_index;
    item.activity = activity;
    for (size_t c = 0; c < 5; ++c) {
        item.candidates[c] = ids[c];
        if (ids[c] == correct_id) item.correct_index = (int)c;
    }
    return item;
}

// Global task: whole trajectory carries the family; the labeled window is a
// short 1-second slice, so added context only brings more evidence.
SweepTask build_global_task() {
    SweepTask task;
    task.dataset.store = g_fixture.dataset.store;
    auto ids = family_embedding_ids(task.dataset);
    auto test_recs = g_fixture.dataset.split_records(data::Split::Test);
    for (const auto& rec : test_recs) {
        task.dataset.trajectories[rec.trajectory_id] =
            g_fixture.dataset.trajectories.at(rec.trajectory_id);
        data::PairManifestRecord r = rec;
        double mid = 0.5 * (rec.t1 + rec.t2);
        r.t1 = mid - 0.5;
        r.t2 = mid + 0.5;
        task.items.push_back(classification_item(task.dataset.records.size(), ids,
                                                 r.embedding_id, *r.activity_label));
        task.dataset.records.push_back(r);
    }
    return task;
}

// Localized task: a 4 s center segment of the labeled family is stitched
// between flanking segments from two other families; only the center
// carries the label, so wide context mixes in contradictory motion.
SweepTask build_localized_task() {
    SweepTask task;
    task.dataset.store = g_fixture.dataset.store;
    auto ids = family_embedding_ids(task.dataset);
    const auto& families = std::vector<data::SynthFamily>{
        data::SynthFamily::Orbit, data::SynthFamily::OscillatingWalk,
        data::SynthFamily::UpwardTilt, data::SynthFamily::DownwardSweep,
        data::SynthFamily::PeriodicChop};

    Rng rng(29);
    int per_family = 30;
    for (size_t fi = 0; fi < families.size(); ++fi) {
        for (int k = 0; k < per_family; ++k) {
            data::SynthFamily center = families[fi];
            data::SynthFamily left = families[rng.below(families.size())];
            while (left == center) left = families[rng.below(families.size())];
            data::SynthFamily right = families[rng.below(families.size())];
            while (right == center) right = families[rng.below(families.size())];

            data::SynthParams params;
            params.noise_sigma = 0.01;
            params.repetitions = 3 + (int)rng.below(6);
            auto seg_l = data::synth_generate(left, params, 4.0, 20.0, rng);
            auto seg_c = data::synth_generate(center, params, 4.0, 20.0, rng);
            auto seg_r = data::synth_generate(right, params, 4.0, 20.0, rng);

            geometry::Trajectory stitched;
            stitched.frame = geometry::Frame::Aria;
            stitched.sample_rate_hz = 20.0;
            stitched.gravity_world = geometry::Vec3{0, -9.81, 0};
            geometry::Vec3 shift{0, 0, 0};
            double t_off = 0;
            for (const auto* seg :
                 {&seg_l.trajectory, &seg_c.trajectory, &seg_r.trajectory}) {
                geometry::Vec3 seg_origin = seg->poses.front().translation;
                size_t start = stitched.poses.empty() ? 0 : 1;  // drop shared endpoint
                for (size_t i = start; i < seg->poses.size(); ++i) {
                    geometry::Pose p = seg->poses[i];
                    p.translation = p.translation - seg_origin + shift;
                    p.timestamp = t_off + (double)i / 20.0;
                    stitched.poses.push_back(p);
                }
                shift = stitched.poses.back().translation;
                t_off += 4.0;
            }
            stitched.validate();

            std::string tid = "stitched_" + std::to_string(fi) + "_" + std::to_string(k);
            data::PairManifestRecord r;
            r.trajectory_id = tid;
            r.t1 = 5.5;  // 1 s slice inside the center segment [4, 8]
            r.t2 = 6.5;
            r.text = seg_c.text;
            r.embedding_id = "synth_" + seg_c.label;
            r.take_id = tid;
            r.activity_label = seg_c.label;
            r.split = data::Split::Test;

            task.dataset.trajectories[tid] = std::move(stitched);
            task.items.push_back(classification_item(task.dataset.records.size(), ids,
                                                     r.embedding_id, seg_c.label));
            task.dataset.records.push_back(r);
        }
    }
    return task;
}

Outcome criterion_context_sweep() {
    if (!g_fixture.trained) return {false, "fixture training failed"};

    SweepTask global = build_global_task();
    auto g_points = eval::context_sweep(g_fixture.ckpt, global.dataset, global.items,
                                        {0.0, 2.0, 8.0}, 20.0);
    bool monotone = true;
    for (size_t i = 1; i < g_points.size(); ++i)
        monotone &= g_points[i].accuracy >= g_points[i - 1].accuracy;

    SweepTask local = build_localized_task();
    auto l_points = eval::context_sweep(g_fixture.ckpt, local.dataset, local.items,
                                        {0.0, 2.0, 8.0}, 20.0);
    double peak = l_points[1].accuracy;
    bool humped = peak > l_points.front().accuracy && peak > l_points.back().accuracy;

    std::ostringstream note;
    note << "global";
    for (const auto& p : g_points) note << " " << p.accuracy;
    note << "; localized";
    for (const auto& p : l_points) note << " " << p.accuracy;
    return {monotone && humped, note.str()};
}

Outcome criterion_repetition_counting() {
    // raw translation oracle: exact for every k in {3..10}
    int oracle_total = 0, oracle_exact = 0;
    int model_total = 0, model_exact = 0;
    Rng rng(31);
    for (int k = 3; k <= 10; ++k) {
        for (int variant = 0; variant < 5; ++variant) {
            data::SynthParams params;
            params.amplitude_m = 0.3 + 0.1 * variant;
            params.noise_sigma = 0.01;
            params.repetitions = k;
            auto synth =
                data::synth_generate(data::SynthFamily::PeriodicChop, params, 12.0, 20.0, rng);
            const auto& poses = synth.trajectory.poses;

            Tensor<float> tr({(int64_t)poses.size(), 3});
            for (size_t i = 0; i < poses.size(); ++i) {
                tr.at((int64_t)i, 0) = (float)poses[i].translation.x;
                tr.at((int64_t)i, 1) = (float)poses[i].translation.y;
                tr.at((int64_t)i, 2) = (float)poses[i].translation.z;
            }
            auto oracle = eval::count_repetitions(eval::self_similarity(tr, 20.0));
            ++oracle_total;
            if (!oracle.aperiodic && oracle.count == k) ++oracle_exact;

            if (g_fixture.trained) {
                auto feats = eval::motion_features(synth.trajectory, g_fixture.ckpt.config,
                                                   g_fixture.ckpt.weights);
                auto counted = eval::count_repetitions(eval::self_similarity(feats, 20.0));
                ++model_total;
                if (!counted.aperiodic && counted.count == k) ++model_exact;
            }
        }
    }
    std::ostringstream note;
    note << "oracle " << oracle_exact << "/" << oracle_total << ", model " << model_exact
         << "/" << model_total;
    bool oracle_ok = oracle_exact == oracle_total;
    bool model_ok = model_total > 0 && model_exact * 5 >= model_total * 4;  // >= 80%
    return {oracle_ok && model_ok, note.str()};
}

Outcome criterion_checkpoint_roundtrip() {
    if (!g_fixture.trained) return {false, "fixture training failed"};
    fs::path dir = fs::temp_directory_path() / "camtraj_acceptance_ckpt";
    fs::create_directories(dir);
    std::string path = (dir / "ckpt.bin").string();
    model::save_checkpoint(path, g_fixture.ckpt.config, g_fixture.ckpt.weights,
                           g_fixture.ckpt.meta);
    auto loaded = model::load_checkpoint(path);

    Rng rng(37);
    for (int trial = 0; trial < 100; ++trial) {
        geometry::Trajectory traj = random_trajectory(rng, 6 + rng.below(20));
        traj.gravity_world = geometry::Vec3{0, -9.81, 0};
        auto seq = geometry::relative_to_midpoint(traj, true);
        std::vector<bool> mask(seq.n, true);
        auto a = model::forward(seq, mask, g_fixture.ckpt.config, g_fixture.ckpt.weights);
        auto b = model::forward(seq, mask, loaded.config, loaded.weights);
        for (size_t j = 0; j < a.data.size(); ++j)
            if (a.data[j] != b.data[j]) {
                fs::remove_all(dir);
                return {false, "embedding mismatch on input " + std::to_string(trial)};
            }
    }

    // corrupted variants are rejected with typed errors
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    in.close();
    std::string magic_path = (dir / "magic.bin").string();
    {
        std::string bad = bytes;
        bad[0] ^= 0x5a;
        std::ofstream out(magic_path, std::ios::binary);
        out.write(bad.data(), (std::streamsize)bad.size());
    }
    std::string trunc_path = (dir / "trunc.bin").string();
    {
        std::ofstream out(trunc_path, std::ios::binary);
        out.write(bytes.data(), (std::streamsize)(bytes.size() / 3));
    }
    bool typed = false;
    try {
        model::load_checkpoint(magic_path);
    } catch (const FormatError&) {
        typed = true;
    }
    bool typed2 = false;
    try {
        model::load_checkpoint(trunc_path);
    } catch (const FormatError&) {
        typed2 = true;
    }
    bool typed3 = false;
    try {
        model::load_checkpoint((dir / "missing.bin").string());
    } catch (const IoError&) {
        typed3 = true;
    }
    fs::remove_all(dir);
    std::ostringstream note;
    note << "100 inputs bit-identical; corrupted rejections " << typed << "/" << typed2
         << "/" << typed3;
    return {typed && typed2 && typed3, note.str()};
}

// Full CLI pipeline, run twice with one seed; metrics must match after
// stripping wall-clock fields.
Outcome criterion_pipeline_determinism() {
#ifndef CAMTRAJ_CLI_PATH
    return {false, "CLI path not compiled in"};
#else
    fs::path root = fs::temp_directory_path() / "camtraj_acceptance_pipeline";
    fs::remove_all(root);
    fs::create_directories(root);

    auto run_pipeline = [&](const std::string& tag) -> fs::path {
        fs::path dir = root / tag;
        fs::create_directories(dir);
        json cfg = {
            {"seed", 21},
            {"data",
             {{"n_per_family", 20},
              {"families", {"orbit", "upward_tilt", "periodic_chop"}}}},
            {"model",
             {{"d_in", 32}, {"layers", 1}, {"heads", 2}, {"ffn_dim", 64},
              {"max_seq_len", 256}}},
            {"train", {{"batch_size", 8}, {"epochs", 1}}},
        };
        std::ofstream((dir / "config.json").string()) << cfg.dump();
        std::string base = std::string(CAMTRAJ_CLI_PATH) + " --config " +
                           (dir / "config.json").string();
        std::string log = " >> " + (dir / "log.txt").string() + " 2>&1";
        std::string ds = (dir / "ds").string();
        std::string run = (dir / "run").string();
        if (std::system((base + " --out " + ds + " gen-synth" + log).c_str()) != 0)
            throw Error("gen-synth failed in " + tag);
        if (std::system((base + " --out " + run + " train --data " + ds + log).c_str()) != 0)
            throw Error("train failed in " + tag);
        if (std::system((base + " --out " + run + " eval-mcq --ckpt " + run +
                         "/checkpoint.bin --data " + ds + log)
                            .c_str()) != 0)
            throw Error("eval-mcq failed in " + tag);
        return dir;
    };

    fs::path a = run_pipeline("a");
    fs::path b = run_pipeline("b");

    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)), {});
    };
    auto strip_wall = [](const fs::path& p) {
        std::ifstream in(p);
        std::string line, out;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            json j = json::parse(line);
            j.erase("wall_ms");
            out += j.dump() + "\n";
        }
        return out;
    };

    bool ds_same = slurp(a / "ds/manifest.jsonl") == slurp(b / "ds/manifest.jsonl") &&
                   slurp(a / "ds/embeddings.bin") == slurp(b / "ds/embeddings.bin");
    bool ckpt_same = slurp(a / "run/checkpoint.bin") == slurp(b / "run/checkpoint.bin");
    bool metrics_same =
        strip_wall(a / "run/metrics.jsonl") == strip_wall(b / "run/metrics.jsonl");
    bool mcq_same =
        slurp(a / "run/mcq_results.jsonl") == slurp(b / "run/mcq_results.jsonl") &&
        slurp(a / "run/mcq_items.jsonl") == slurp(b / "run/mcq_items.jsonl");
    fs::remove_all(root);
    std::ostringstream note;
    note << "dataset=" << ds_same << " checkpoint=" << ckpt_same
         << " metrics=" << metrics_same << " mcq=" << mcq_same;
    return {ds_same && ckpt_same && metrics_same && mcq_same, note.str()};
#endif
}

}  // namespace

int main() {
    struct Entry {
        int id;
        const char* desc;
        Outcome (*fn)();
    };
    const Entry entries[] = {
        {1, "rigid invariance over 1000 transformed trajectories", criterion_rigid_invariance},
        {2, "6D rotation round-trip over 1000 rotations", criterion_sixd_roundtrip},
        {3, "analytic gradients match central finite differences", criterion_grad_fidelity},
        {4, "InfoNCE loss oracles (B=1, uniform, first step)", criterion_loss_oracles},
        {5, "desk-scale contrastive training reaches 0.90 MCQ", criterion_desk_scale_mcq},
        {6, "random-embedding MCQ control at chance", criterion_random_embedding_control},
        {7, "linear probe on frozen embeddings", criterion_linear_probe},
        {8, "contextual pooling correctness", criterion_contextual_pooling},
        {9, "context sweep shapes (global / localized)", criterion_context_sweep},
        {10, "repetition counting from self-similarity maps", criterion_repetition_counting},
        {11, "checkpoint round-trip and corruption handling", criterion_checkpoint_roundtrip},
        {12, "pipeline determinism under a fixed seed", criterion_pipeline_determinism},
    };

    try {
        build_fixture();
    } catch (const std::exception& e) {
        std::cout << "fixture training failed: " << e.what() << "\n";
    }

    int failed = 0;
    for (const auto& entry : entries) {
        Outcome outcome;
        try {
            outcome = entry.fn();
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        if (!outcome.pass) ++failed;
        std::cout << "[" << entry.id << "] " << (outcome.pass ? "PASS" : "FAIL") << " "
                  << entry.desc;
        if (!outcome.note.empty()) std::cout << " — " << outcome.note;
        std::cout << "\n" << std::flush;
    }
    return failed;
}
