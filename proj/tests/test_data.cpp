#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "camtraj/data.hpp"

using namespace camtraj;
using namespace camtraj::data;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

PairManifestRecord record(const std::string& traj, double t1, double t2,
                          const std::string& text) {
    PairManifestRecord r;
    r.trajectory_id = traj;
    r.t1 = t1;
    r.t2 = t2;
    r.text = text;
    r.embedding_id = "emb:" + text;
    r.take_id = "take0";
    return r;
}

// Minimal embedding service: deterministic unit vector per text, one-hot
// style with an index derived from text length.
class FakeService {
public:
    explicit FakeService(int dim = kEmbedDim) : dim_(dim) {
        server_.Post("/embed", [this](const httplib::Request& req, httplib::Response& res) {
            ++requests_;
            auto body = json::parse(req.body);
            json out = json::array();
            for (const auto& t : body.at("texts")) {
                std::vector<float> v((size_t)dim_, 0.0f);
                v[t.get<std::string>().size() % (size_t)dim_] = 1.0f;
                out.push_back(v);
            }
            res.set_content(json{{"embeddings", out}}.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeService() {
        server_.stop();
        thread_.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    int requests() const { return requests_; }

private:
    httplib::Server server_;
    std::thread thread_;
    int dim_;
    int port_ = 0;
    std::atomic<int> requests_{0};
};

}  // namespace

TEST_CASE("manifest round-trip and validation") {
    fs::path dir = scratch("camtraj_data_manifest");
    std::vector<PairManifestRecord> recs;
    auto r0 = record("traj0", 1.0, 5.0, "orbiting the mug");
    r0.verb = "orbit";
    r0.activity_label = "orbit";
    r0.visibility = Visibility::InView;
    r0.split = Split::Test;
    recs.push_back(r0);
    recs.push_back(record("traj1", 0.0, 4.0, "tilting upward"));

    std::string path = (dir / "manifest.jsonl").string();
    save_manifest(recs, path);
    auto back = load_manifest(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].trajectory_id == "traj0");
    CHECK(back[0].verb == std::optional<std::string>("orbit"));
    CHECK(back[0].visibility == std::optional<Visibility>(Visibility::InView));
    CHECK(back[0].split == Split::Test);
    CHECK(!back[1].verb.has_value());
    CHECK(back[1].split == Split::Train);

    // malformed line reports its line number
    {
        std::ofstream out(path, std::ios::app);
        out << "{\"trajectory_id\": 12}\n";
    }
    try {
        load_manifest(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }

    // duplicate (trajectory_id, t1, t2, text) is rejected
    recs.push_back(record("traj0", 1.0, 5.0, "orbiting the mug"));
    std::string dup_path = (dir / "dup.jsonl").string();
    save_manifest(recs, dup_path);
    CHECK_THROWS_AS(load_manifest(dup_path), FormatError);

    CHECK_THROWS_AS(load_manifest((dir / "missing.jsonl").string()), IoError);
    fs::remove_all(dir);
}

TEST_CASE("embedding store normalizes, validates and round-trips") {
    TextEmbeddingStore store;
    std::vector<float> v((size_t)kEmbedDim, 0.0f);
    v[0] = 3.0f;
    v[1] = 4.0f;
    store.put("a", v);
    const auto& got = store.get("a");
    CHECK(got[0] == doctest::Approx(0.6f));
    CHECK(got[1] == doctest::Approx(0.8f));
    CHECK_THROWS_AS(store.put("bad", std::vector<float>(7, 1.0f)), InvalidInputError);
    CHECK_THROWS_AS(store.put("zero", std::vector<float>((size_t)kEmbedDim, 0.0f)),
                    InvalidInputError);
    CHECK_THROWS_AS(store.get("unknown"), InvalidInputError);

    fs::path dir = scratch("camtraj_data_store");
    std::string path = (dir / "emb.bin").string();
    std::vector<float> w((size_t)kEmbedDim, 0.0f);
    w[5] = 1.0f;
    store.put("b", w);
    store.save(path);
    TextEmbeddingStore back = TextEmbeddingStore::load(path);
    CHECK(back.size() == 2);
    for (size_t i = 0; i < (size_t)kEmbedDim; ++i) CHECK(back.get("a")[i] == store.get("a")[i]);

    // corrupted header
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('X');
    }
    CHECK_THROWS_AS(TextEmbeddingStore::load(path), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("embedding client batches, caches and rejects bad responses") {
    fs::path dir = scratch("camtraj_data_client");
    std::string cache = (dir / "cache.bin").string();

    {
        FakeService svc;
        EmbeddingClient client(svc.url(), cache);
        client.fetch({"id1", "id2", "id3"}, {"one", "twoo", "threee"});
        CHECK(svc.requests() == 1);  // one batched call
        CHECK(client.network_calls() == 1);
        CHECK(client.store().size() == 3);
        // one-hot index = text length
        CHECK(client.store().get("id2")[4] == doctest::Approx(1.0f));

        // all cached now: no further network traffic
        client.fetch({"id1", "id3"}, {"one", "threee"});
        CHECK(svc.requests() == 1);
        CHECK(client.cache_hits() >= 2);
    }

    // a fresh client reads the on-disk cache without any service running
    {
        EmbeddingClient offline("http://127.0.0.1:1", cache);
        offline.fetch({"id1"}, {"one"});
        CHECK(offline.network_calls() == 0);
        CHECK(offline.store().get("id1")[3] == doctest::Approx(1.0f));
        // unknown id with a dead endpoint fails loudly
        CHECK_THROWS_AS(offline.fetch({"nope"}, {"untouched"}), ServiceError);
    }

    // wrong dimensionality: typed error, nothing cached
    {
        FakeService bad(16);
        std::string cache2 = (dir / "cache2.bin").string();
        EmbeddingClient client(bad.url(), cache2);
        CHECK_THROWS_AS(client.fetch({"x"}, {"text"}), ServiceError);
        CHECK(!client.store().contains("x"));
        CHECK(!fs::exists(cache2));
    }
    fs::remove_all(dir);
}

TEST_CASE("synthetic families have the advertised shapes") {
    SynthParams params;
    params.noise_sigma = 0.0;

    // deterministic given (family, params, seed)
    Rng r1(5), r2(5);
    auto a = synth_generate(SynthFamily::Orbit, params, 12.0, 20.0, r1);
    auto b = synth_generate(SynthFamily::Orbit, params, 12.0, 20.0, r2);
    REQUIRE(a.trajectory.poses.size() == b.trajectory.poses.size());
    CHECK(a.trajectory.poses.size() == 241);  // 12 s * 20 Hz + 1
    for (size_t i = 0; i < a.trajectory.poses.size(); ++i) {
        CHECK(a.trajectory.poses[i].translation.x == b.trajectory.poses[i].translation.x);
        CHECK(a.trajectory.poses[i].translation.z == b.trajectory.poses[i].translation.z);
    }
    CHECK(a.label == "orbit");
    CHECK(!a.text.empty());
    REQUIRE(a.trajectory.gravity_world.has_value());
    CHECK(a.trajectory.gravity_world->y == doctest::Approx(-9.81));

    // noise-free full-period orbit closes on itself
    SynthParams closed = params;
    closed.frequency_hz = 1.0 / 12.0;
    Rng r3(5);
    auto orb = synth_generate(SynthFamily::Orbit, closed, 12.0, 20.0, r3);
    auto& first = orb.trajectory.poses.front().translation;
    auto& last = orb.trajectory.poses.back().translation;
    CHECK(std::fabs(first.x - last.x) < 1e-9);
    CHECK(std::fabs(first.y - last.y) < 1e-9);
    CHECK(std::fabs(first.z - last.z) < 1e-9);

    // static jitter stays within a noise ball around a fixed point
    SynthParams still = params;
    still.noise_sigma = 0.005;
    Rng r4(7);
    auto sj = synth_generate(SynthFamily::StaticJitter, still, 12.0, 20.0, r4);
    for (const auto& p : sj.trajectory.poses) {
        CHECK(std::fabs(p.translation.x - sj.trajectory.poses[0].translation.x) < 0.1);
        CHECK(std::fabs(p.translation.z - sj.trajectory.poses[0].translation.z) < 0.1);
    }

    // periodic chop repeats with the requested count
    SynthParams chop = params;
    chop.repetitions = 6;
    Rng r5(11);
    auto ch = synth_generate(SynthFamily::PeriodicChop, chop, 12.0, 20.0, r5);
    const auto& poses = ch.trajectory.poses;
    size_t period = (poses.size() - 1) / 6;
    for (size_t i = 0; i + period < poses.size() - 1; ++i)
        CHECK(std::fabs(poses[i].translation.y - poses[i + period].translation.y) < 1e-9);

    CHECK(family_from_name("periodic_chop") == SynthFamily::PeriodicChop);
    CHECK_THROWS_AS(family_from_name("unknown"), FormatError);
    SynthParams bad = params;
    bad.amplitude_m = -1;
    Rng r6(1);
    CHECK_THROWS_AS(synth_generate(SynthFamily::Orbit, bad, 12.0, 20.0, r6),
                    InvalidInputError);
}

TEST_CASE("synthetic dataset counts, splits and embeddings") {
    SynthDatasetOptions opts;
    opts.n_per_family = 200;
    Rng rng(7);
    Dataset ds = make_synth_dataset(opts, rng);
    ds.preflight();

    size_t families = all_families().size();
    CHECK(ds.records.size() == 200 * families);
    CHECK(ds.trajectories.size() == 200 * families);
    CHECK(ds.split_records(Split::Train).size() == 140 * families);
    CHECK(ds.split_records(Split::Val).size() == 30 * families);
    CHECK(ds.split_records(Split::Test).size() == 30 * families);

    // one canonical text/embedding per family, mutually orthogonal
    CHECK(ds.store.size() == families);
    std::vector<const std::vector<float>*> vecs;
    for (const auto& [id, v] : ds.store.entries()) vecs.push_back(&v);
    for (size_t i = 0; i < vecs.size(); ++i)
        for (size_t j = i + 1; j < vecs.size(); ++j) {
            double dot = 0;
            for (size_t k = 0; k < (size_t)kEmbedDim; ++k)
                dot += (double)(*vecs[i])[k] * (*vecs[j])[k];
            CHECK(std::fabs(dot) < 1e-6);
        }

    // centered labeled window
    const auto& rec = ds.records.front();
    CHECK(rec.t2 - rec.t1 == doctest::Approx(opts.window_s));
    CHECK(rec.verb.has_value());
    CHECK(rec.activity_label.has_value());
}

TEST_CASE("dataset directory round-trip is byte-stable") {
    fs::path d1 = scratch("camtraj_data_ds1");
    fs::path d2 = scratch("camtraj_data_ds2");
    SynthDatasetOptions opts;
    opts.n_per_family = 3;
    opts.families = {SynthFamily::Orbit, SynthFamily::UpwardTilt};

    Rng r1(42);
    Dataset a = make_synth_dataset(opts, r1, d1.string());
    Rng r2(42);
    Dataset b = make_synth_dataset(opts, r2, d2.string());

    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)), {});
    };
    CHECK(slurp(d1 / "manifest.jsonl") == slurp(d2 / "manifest.jsonl"));
    CHECK(slurp(d1 / "embeddings.bin") == slurp(d2 / "embeddings.bin"));
    for (const auto& entry : fs::directory_iterator(d1 / "trajs")) {
        fs::path rel = entry.path().filename();
        CHECK(slurp(entry.path()) == slurp(d2 / "trajs" / rel));
    }

    Dataset loaded = load_dataset(d1.string());
    loaded.preflight();
    CHECK(loaded.records.size() == a.records.size());
    CHECK(loaded.trajectories.size() == a.trajectories.size());
    CHECK(loaded.store.size() == a.store.size());

    CHECK_THROWS_AS(load_dataset((d1 / "nope").string()), IoError);
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("preflight catches dangling references") {
    SynthDatasetOptions opts;
    opts.n_per_family = 2;
    opts.families = {SynthFamily::Orbit};
    Rng rng(3);
    Dataset ds = make_synth_dataset(opts, rng);
    ds.records.push_back(record("ghost", 0.0, 4.0, "missing trajectory"));
    CHECK_THROWS_AS(ds.preflight(), InvalidInputError);
}
