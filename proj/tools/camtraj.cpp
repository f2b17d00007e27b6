#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "camtraj/data.hpp"
#include "camtraj/eval.hpp"
#include "camtraj/geometry.hpp"
#include "camtraj/kernels.hpp"
#include "camtraj/model.hpp"
#include "camtraj/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace camtraj;

namespace {

constexpr const char* kVersion = "0.1.0";

int log_level() {
    const char* env = std::getenv("CAMTRAJ_LOG");
    if (!env) return 1;  // info
    std::string v = env;
    if (v == "debug") return 2;
    if (v == "info") return 1;
    if (v == "error" || v == "quiet") return 0;
    return 1;
}

void log_info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[camtraj] " << msg << "\n";
}

// ---- RunConfig -------------------------------------------------------------

struct RunConfig {
    uint64_t seed = 0;
    bool seed_set = false;
    std::string output_dir = "out";

    data::SynthDatasetOptions data;
    model::CamFormerConfig model;
    training::TrainConfig train;

    // eval section
    std::vector<std::string> balance_keys;
    int per_cell_cap = 0;
    std::vector<double> w_values = {0, 1, 2, 4, 8};
    std::string eval_split = "test";

    json snapshot;  // validated config document
};

void reject_unknown(const json& obj, const std::string& path,
                    const std::vector<std::string>& allowed) {
    std::vector<std::string> bad;
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            bad.push_back(path + it.key());
    if (!bad.empty()) {
        std::string msg = "unknown config key(s):";
        for (const auto& b : bad) msg += " " + b;
        throw ConfigError(msg);
    }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

RunConfig parse_config(const std::string& path) {
    RunConfig cfg;
    cfg.snapshot = json::object();
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config root must be a JSON object");
    reject_unknown(doc, "", {"seed", "output_dir", "data", "model", "train", "eval"});

    if (doc.contains("seed")) {
        cfg.seed = doc.at("seed").get<uint64_t>();
        cfg.seed_set = true;
    }
    read_field(doc, "output_dir", cfg.output_dir);

    if (doc.contains("data")) {
        const json& d = doc.at("data");
        reject_unknown(d, "data.",
                       {"n_per_family", "families", "duration_s", "rate_hz", "window_s",
                        "noise_sigma"});
        read_field(d, "n_per_family", cfg.data.n_per_family);
        read_field(d, "duration_s", cfg.data.duration_s);
        read_field(d, "rate_hz", cfg.data.rate_hz);
        read_field(d, "window_s", cfg.data.window_s);
        read_field(d, "noise_sigma", cfg.data.noise_sigma);
        if (d.contains("families")) {
            cfg.data.families.clear();
            for (const auto& name : d.at("families"))
                cfg.data.families.push_back(data::family_from_name(name.get<std::string>()));
        }
    }
    if (doc.contains("model")) {
        const json& m = doc.at("model");
        reject_unknown(m, "model.",
                       {"d_in", "layers", "heads", "ffn_dim", "dropout", "d_out",
                        "max_seq_len", "use_gravity_token"});
        read_field(m, "d_in", cfg.model.d_in);
        read_field(m, "layers", cfg.model.layers);
        read_field(m, "heads", cfg.model.heads);
        read_field(m, "ffn_dim", cfg.model.ffn_dim);
        read_field(m, "dropout", cfg.model.dropout);
        read_field(m, "d_out", cfg.model.d_out);
        read_field(m, "max_seq_len", cfg.model.max_seq_len);
        read_field(m, "use_gravity_token", cfg.model.use_gravity_token);
        cfg.model.validate();
    }
    if (doc.contains("train")) {
        const json& t = doc.at("train");
        reject_unknown(t, "train.",
                       {"batch_size", "temperature", "epochs", "w_max_s", "sample_rate_hz",
                        "lr", "weight_decay", "beta1", "beta2", "eps"});
        read_field(t, "batch_size", cfg.train.batch_size);
        read_field(t, "temperature", cfg.train.temperature);
        read_field(t, "epochs", cfg.train.epochs);
        read_field(t, "w_max_s", cfg.train.w_max_s);
        read_field(t, "sample_rate_hz", cfg.train.sample_rate_hz);
        read_field(t, "lr", cfg.train.optimizer.lr);
        read_field(t, "weight_decay", cfg.train.optimizer.weight_decay);
        read_field(t, "beta1", cfg.train.optimizer.beta1);
        read_field(t, "beta2", cfg.train.optimizer.beta2);
        read_field(t, "eps", cfg.train.optimizer.eps);
    }
    if (doc.contains("eval")) {
        const json& e = doc.at("eval");
        reject_unknown(e, "eval.", {"balance_keys", "per_cell_cap", "w_values", "split"});
        read_field(e, "per_cell_cap", cfg.per_cell_cap);
        read_field(e, "split", cfg.eval_split);
        if (e.contains("balance_keys"))
            cfg.balance_keys = e.at("balance_keys").get<std::vector<std::string>>();
        if (e.contains("w_values"))
            cfg.w_values = e.at("w_values").get<std::vector<double>>();
    }
    cfg.snapshot = doc;
    return cfg;
}

void write_run_manifest(const RunConfig& cfg, const std::string& command,
                        const fs::path& out_dir, int64_t wall_ms) {
    json manifest = {
        {"command", command},
        {"version", kVersion},
        {"seed", cfg.seed},
        {"config", cfg.snapshot},
        {"wall_ms", wall_ms},
    };
    std::ofstream out(out_dir / "run_manifest.json");
    if (!out) throw IoError("cannot write run manifest under " + out_dir.string());
    out << manifest.dump(2) << '\n';
}

geometry::Trajectory load_traj_with_meta(const std::string& traj_path,
                                         std::string meta_path) {
    if (meta_path.empty()) {
        fs::path p(traj_path);
        p.replace_extension(".meta.json");
        meta_path = p.string();
    }
    return geometry::load_tum(traj_path, meta_path);
}

std::vector<data::PairManifestRecord> split_for_eval(const data::Dataset& ds,
                                                     const std::string& split) {
    return ds.split_records(data::split_from_name(split));
}

eval::EmbedFn model_embedder(const model::Checkpoint& ckpt, const data::Dataset& ds,
                             double rate_hz) {
    return [&ckpt, &ds, rate_hz](const data::PairManifestRecord& rec) {
        return eval::embed_record(ckpt, ds, rec, 0.0, rate_hz);
    };
}

// ---- commands --------------------------------------------------------------

struct CommandCtx {
    RunConfig cfg;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    int64_t wall_ms() const {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now() - start)
            .count();
    }

    fs::path out_dir() const {
        fs::path dir(cfg.output_dir);
        fs::create_directories(dir);
        return dir;
    }

    void finish(const std::string& command, json summary) {
        summary["command"] = command;
        summary["wall_ms"] = wall_ms();
        write_run_manifest(cfg, command, out_dir(), wall_ms());
        std::cout << summary.dump() << std::endl;
    }
};

int cmd_gen_synth(CommandCtx& ctx) {
    fs::path dir = ctx.out_dir();
    Rng rng(ctx.cfg.seed);
    data::Dataset ds = data::make_synth_dataset(ctx.cfg.data, rng, dir.string());
    ctx.finish("gen-synth", {{"records", ds.records.size()},
                             {"trajectories", ds.trajectories.size()},
                             {"embeddings", ds.store.size()},
                             {"out_dir", dir.string()}});
    return 0;
}

int cmd_train(CommandCtx& ctx, const std::string& data_dir) {
    fs::path dir = ctx.out_dir();
    data::Dataset ds = data::load_dataset(data_dir);
    training::TrainConfig tcfg = ctx.cfg.train;
    tcfg.seed = ctx.cfg.seed;
    std::string metrics_path = (dir / "metrics.jsonl").string();
    auto result = training::train(ctx.cfg.model, tcfg, ds, metrics_path);
    std::string ckpt_path = (dir / "checkpoint.bin").string();
    model::save_checkpoint(ckpt_path, result.checkpoint.config, result.checkpoint.weights,
                           result.checkpoint.meta);
    ctx.finish("train", {{"steps", result.steps},
                         {"final_loss", result.final_loss},
                         {"checkpoint", ckpt_path},
                         {"metrics", metrics_path}});
    return 0;
}

int cmd_embed(CommandCtx& ctx, const std::string& manifest_path,
              const std::string& cache_path, std::string endpoint) {
    if (endpoint.empty()) {
        const char* env = std::getenv("CAMTRAJ_EMBED_ENDPOINT");
        if (env) endpoint = env;
    }
    if (endpoint.empty())
        throw ConfigError("embed: no endpoint (flag --endpoint or CAMTRAJ_EMBED_ENDPOINT)");
    auto records = data::load_manifest(manifest_path);
    std::vector<std::string> ids, texts;
    for (const auto& r : records) {
        ids.push_back(r.embedding_id);
        texts.push_back(r.text);
    }
    data::EmbeddingClient client(endpoint, cache_path);
    client.fetch(ids, texts);
    ctx.finish("embed", {{"records", records.size()},
                         {"cache_hits", client.cache_hits()},
                         {"network_calls", client.network_calls()},
                         {"cache", cache_path}});
    return 0;
}

int cmd_eval_mcq(CommandCtx& ctx, const std::string& ckpt_path, const std::string& data_dir) {
    fs::path dir = ctx.out_dir();
    auto ckpt = model::load_checkpoint(ckpt_path);
    data::Dataset ds = data::load_dataset(data_dir);
    auto records = split_for_eval(ds, ctx.cfg.eval_split);
    Rng rng(ctx.cfg.seed);
    auto built = eval::build_mcq(records, rng, ctx.cfg.balance_keys,
                                 {ctx.cfg.per_cell_cap});
    if (built.skipped > 0)
        log_info("eval-mcq: skipped " + std::to_string(built.skipped) +
                 " queries without enough distractors");
    auto result = eval::eval_mcq(model_embedder(ckpt, ds, ctx.cfg.train.sample_rate_hz),
                                 built.items, records, ds.store);
    eval::save_mcq_items(built.items, records, (dir / "mcq_items.jsonl").string());
    eval::save_mcq_results(result, built.items, (dir / "mcq_results.jsonl").string());
    json summary = {{"overall", result.overall},
                    {"n_items", result.n_items},
                    {"skipped", built.skipped}};
    for (const auto& [key, acc] : result.per_group) summary["group/" + key] = acc;
    ctx.finish("eval-mcq", summary);
    return 0;
}

int cmd_probe(CommandCtx& ctx, const std::string& ckpt_path, const std::string& data_dir) {
    fs::path dir = ctx.out_dir();
    auto ckpt = model::load_checkpoint(ckpt_path);
    data::Dataset ds = data::load_dataset(data_dir);

    // Class = activity label; embeddings from the labeled window (w = 0).
    std::vector<std::string> classes;
    auto class_index = [&classes](const std::string& name) {
        for (size_t i = 0; i < classes.size(); ++i)
            if (classes[i] == name) return (int)i;
        classes.push_back(name);
        return (int)classes.size() - 1;
    };
    auto embed_split = [&](data::Split split, std::vector<int>& labels) {
        auto recs = ds.split_records(split);
        Tensor<float> feats({(int64_t)recs.size(), ckpt.config.d_out});
        for (size_t i = 0; i < recs.size(); ++i) {
            auto z = eval::embed_record(ckpt, ds, recs[i], 0.0,
                                        ctx.cfg.train.sample_rate_hz);
            std::copy(z.begin(), z.end(),
                      feats.data.begin() + (int64_t)i * ckpt.config.d_out);
            labels.push_back(class_index(recs[i].activity_label.value_or("")));
        }
        return feats;
    };
    std::vector<int> train_labels, test_labels;
    Tensor<float> train_feats = embed_split(data::Split::Train, train_labels);
    Tensor<float> test_feats = embed_split(data::Split::Test, test_labels);

    Rng rng(ctx.cfg.seed);
    auto probe = eval::train_probe(train_feats, train_labels, classes, 1e-3, 200, &rng);
    double train_acc = eval::probe_accuracy(probe, train_feats, train_labels);
    double test_acc = eval::probe_accuracy(probe, test_feats, test_labels);

    std::ofstream csv(dir / "probe.csv");
    csv << "split,accuracy\ntrain," << train_acc << "\ntest," << test_acc << "\n";
    ctx.finish("probe", {{"train_accuracy", train_acc},
                         {"test_accuracy", test_acc},
                         {"classes", classes.size()}});
    return 0;
}

int cmd_count(CommandCtx& ctx, const std::string& traj_path, const std::string& meta_path,
              const std::string& ckpt_path, const std::string& features) {
    geometry::Trajectory traj = load_traj_with_meta(traj_path, meta_path);
    Tensor<float> feats;
    double hz = traj.sample_rate_hz;
    if (features == "translation") {
        feats = Tensor<float>({(int64_t)traj.poses.size(), 3});
        for (size_t i = 0; i < traj.poses.size(); ++i) {
            feats.at((int64_t)i, 0) = (float)traj.poses[i].translation.x;
            feats.at((int64_t)i, 1) = (float)traj.poses[i].translation.y;
            feats.at((int64_t)i, 2) = (float)traj.poses[i].translation.z;
        }
    } else if (features == "model") {
        if (ckpt_path.empty()) throw ConfigError("count: --ckpt required for model features");
        auto ckpt = model::load_checkpoint(ckpt_path);
        feats = eval::motion_features(traj, ckpt.config, ckpt.weights);
    } else {
        throw ConfigError("count: --features must be 'model' or 'translation'");
    }
    auto map = eval::self_similarity(feats, hz);
    auto result = eval::count_repetitions(map);
    ctx.finish("count", {{"count", result.count},
                         {"period_s", result.period_s},
                         {"aperiodic", result.aperiodic}});
    return 0;
}

int cmd_context_sweep(CommandCtx& ctx, const std::string& ckpt_path,
                      const std::string& data_dir) {
    fs::path dir = ctx.out_dir();
    auto ckpt = model::load_checkpoint(ckpt_path);
    data::Dataset ds = data::load_dataset(data_dir);
    auto records = split_for_eval(ds, ctx.cfg.eval_split);
    Rng rng(ctx.cfg.seed);
    auto built = eval::build_mcq(records, rng, ctx.cfg.balance_keys,
                                 {ctx.cfg.per_cell_cap});
    data::Dataset view = std::move(ds);
    view.records = records;  // sweep indexes into the evaluated split
    auto points = eval::context_sweep(ckpt, view, built.items, ctx.cfg.w_values,
                                      ctx.cfg.train.sample_rate_hz);
    std::string csv_path = (dir / "context_sweep.csv").string();
    eval::write_sweep_csv(points, csv_path);
    json rows = json::array();
    for (const auto& p : points)
        rows.push_back({{"w", p.w}, {"accuracy", p.accuracy}, {"clipped", p.clipped_items}});
    ctx.finish("context-sweep", {{"points", rows}, {"csv", csv_path}});
    return 0;
}

int cmd_inspect(CommandCtx& ctx, const std::string& ckpt_path, const std::string& data_dir,
                const std::string& traj_path, const std::string& meta_path) {
    json info = json::object();
    if (!ckpt_path.empty()) {
        auto ckpt = model::load_checkpoint(ckpt_path);
        info["checkpoint"] = {{"config", json::parse(ckpt.config.to_json())},
                              {"param_count", model::param_count(ckpt.weights)},
                              {"seed", ckpt.meta.seed},
                              {"step", ckpt.meta.step}};
    }
    if (!data_dir.empty()) {
        data::Dataset ds = data::load_dataset(data_dir);
        info["dataset"] = {{"records", ds.records.size()},
                           {"trajectories", ds.trajectories.size()},
                           {"embeddings", ds.store.size()},
                           {"train", ds.split_records(data::Split::Train).size()},
                           {"val", ds.split_records(data::Split::Val).size()},
                           {"test", ds.split_records(data::Split::Test).size()}};
    }
    if (!traj_path.empty()) {
        auto traj = load_traj_with_meta(traj_path, meta_path);
        info["trajectory"] = {{"poses", traj.poses.size()},
                              {"frame", geometry::frame_name(traj.frame)},
                              {"sample_rate_hz", traj.sample_rate_hz},
                              {"start", traj.start_time()},
                              {"end", traj.end_time()},
                              {"has_gravity", traj.gravity_world.has_value()}};
    }
    if (info.empty()) throw ConfigError("inspect: give --ckpt, --data or --traj");
    ctx.finish("inspect", info);
    return 0;
}

int cmd_export_ssm(CommandCtx& ctx, const std::string& traj_path,
                   const std::string& meta_path, const std::string& ckpt_path,
                   const std::string& features) {
    fs::path dir = ctx.out_dir();
    geometry::Trajectory traj = load_traj_with_meta(traj_path, meta_path);
    Tensor<float> feats;
    if (features == "translation") {
        feats = Tensor<float>({(int64_t)traj.poses.size(), 3});
        for (size_t i = 0; i < traj.poses.size(); ++i) {
            feats.at((int64_t)i, 0) = (float)traj.poses[i].translation.x;
            feats.at((int64_t)i, 1) = (float)traj.poses[i].translation.y;
            feats.at((int64_t)i, 2) = (float)traj.poses[i].translation.z;
        }
    } else {
        if (ckpt_path.empty())
            throw ConfigError("export-ssm: --ckpt required for model features");
        auto ckpt = model::load_checkpoint(ckpt_path);
        feats = eval::motion_features(traj, ckpt.config, ckpt.weights);
    }
    auto map = eval::self_similarity(feats, traj.sample_rate_hz);
    std::string csv = (dir / "ssm.csv").string();
    std::string pgm = (dir / "ssm.pgm").string();
    eval::export_ssm_csv(map, csv);
    eval::export_ssm_pgm(map, pgm);
    ctx.finish("export-ssm",
               {{"n", map.n}, {"zero_norm_rows", map.zero_norm_rows}, {"csv", csv},
                {"pgm", pgm}});
    return 0;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const FormatError*>(&e)) return 3;
    if (dynamic_cast<const InvalidInputError*>(&e)) return 3;
    if (dynamic_cast<const ShapeError*>(&e)) return 3;
    if (dynamic_cast<const MissingGravityError*>(&e)) return 3;
    if (dynamic_cast<const IoError*>(&e)) return 4;
    if (dynamic_cast<const ServiceError*>(&e)) return 5;
    if (dynamic_cast<const NumericError*>(&e)) return 6;
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"camtraj: camera-trajectory embedding toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_override;
    uint64_t seed_flag = 0;
    bool seed_given = false;
    int threads = 1;
    app.add_option("--config", config_path, "RunConfig JSON path")->capture_default_str();
    app.add_option("--out", out_override, "output directory override");
    auto* seed_opt = app.add_option("--seed", seed_flag, "global RNG seed");
    app.add_option("--threads", threads, "worker thread cap")->check(CLI::PositiveNumber);

    std::string data_dir, ckpt_path, traj_path, meta_path, manifest_path;
    std::string cache_path = "embeddings.bin", endpoint, features = "model";

    auto* gen = app.add_subcommand("gen-synth", "generate the synthetic dataset");
    auto* train = app.add_subcommand("train", "contrastive training run");
    train->add_option("--data", data_dir, "dataset directory")->required();
    auto* embed = app.add_subcommand("embed", "fetch text embeddings into a cache");
    embed->add_option("--manifest", manifest_path, "pair manifest JSONL")->required();
    embed->add_option("--cache", cache_path, "embedding cache file");
    embed->add_option("--endpoint", endpoint, "embedding service URL");
    auto* mcq = app.add_subcommand("eval-mcq", "5-way MCQ retrieval evaluation");
    mcq->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    mcq->add_option("--data", data_dir, "dataset directory")->required();
    auto* probe = app.add_subcommand("probe", "linear probe on frozen embeddings");
    probe->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    probe->add_option("--data", data_dir, "dataset directory")->required();
    auto* count = app.add_subcommand("count", "repetition counting on one trajectory");
    count->add_option("--traj", traj_path, "TUM trajectory path")->required();
    count->add_option("--meta", meta_path, "sidecar metadata path");
    count->add_option("--ckpt", ckpt_path, "checkpoint path");
    count->add_option("--features", features, "'model' or 'translation'");
    auto* sweep = app.add_subcommand("context-sweep", "MCQ accuracy vs. context length");
    sweep->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    sweep->add_option("--data", data_dir, "dataset directory")->required();
    auto* inspect = app.add_subcommand("inspect", "describe artifacts as JSON");
    inspect->add_option("--ckpt", ckpt_path, "checkpoint path");
    inspect->add_option("--data", data_dir, "dataset directory");
    inspect->add_option("--traj", traj_path, "TUM trajectory path");
    inspect->add_option("--meta", meta_path, "sidecar metadata path");
    auto* exp = app.add_subcommand("export-ssm", "export a self-similarity map");
    exp->add_option("--traj", traj_path, "TUM trajectory path")->required();
    exp->add_option("--meta", meta_path, "sidecar metadata path");
    exp->add_option("--ckpt", ckpt_path, "checkpoint path");
    exp->add_option("--features", features, "'model' or 'translation'");

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    CLI11_PARSE(app, argc, argv);
    seed_given = seed_opt->count() > 0;

    try {
        CommandCtx ctx;
        ctx.cfg = parse_config(config_path);
        if (!out_override.empty()) ctx.cfg.output_dir = out_override;
        if (seed_given) {
            ctx.cfg.seed = seed_flag;
            ctx.cfg.seed_set = true;
        }
        // --threads is accepted for interface stability; execution is
        // single-threaded, so anything >= 1 behaves identically.
        (void)threads;

        bool stochastic = gen->parsed() || train->parsed() || mcq->parsed() ||
                          probe->parsed() || sweep->parsed();
        if (stochastic && !ctx.cfg.seed_set)
            throw ConfigError("--seed (or config seed) is required for this command");

        if (gen->parsed()) return cmd_gen_synth(ctx);
        if (train->parsed()) return cmd_train(ctx, data_dir);
        if (embed->parsed()) return cmd_embed(ctx, manifest_path, cache_path, endpoint);
        if (mcq->parsed()) return cmd_eval_mcq(ctx, ckpt_path, data_dir);
        if (probe->parsed()) return cmd_probe(ctx, ckpt_path, data_dir);
        if (count->parsed()) return cmd_count(ctx, traj_path, meta_path, ckpt_path, features);
        if (sweep->parsed()) return cmd_context_sweep(ctx, ckpt_path, data_dir);
        if (inspect->parsed()) return cmd_inspect(ctx, ckpt_path, data_dir, traj_path, meta_path);
        if (exp->parsed()) return cmd_export_ssm(ctx, traj_path, meta_path, ckpt_path, features);
        throw ConfigError("no command given");
    } catch (const std::exception& e) {
        json err = {{"error", e.what()}};
        std::cout << err.dump() << std::endl;
        return exit_code_for(e);
    }
}
