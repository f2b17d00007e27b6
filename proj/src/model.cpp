#include "camtraj/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace camtraj::model {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

void CamFormerConfig::validate() const {
    if (d_in <= 0 || layers <= 0 || heads <= 0 || ffn_dim <= 0 || d_out <= 0)
        throw InvalidInputError("config: dimensions must be positive");
    if (d_in % heads != 0) throw InvalidInputError("config: d_in must be divisible by heads");
    if (max_seq_len < 1) throw InvalidInputError("config: max_seq_len must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0)
        throw InvalidInputError("config: dropout must be in [0, 1)");
}

std::string CamFormerConfig::to_json() const {
    nlohmann::json j;
    j["d_in"] = d_in;
    j["layers"] = layers;
    j["heads"] = heads;
    j["ffn_dim"] = ffn_dim;
    j["dropout"] = dropout;
    j["d_out"] = d_out;
    j["max_seq_len"] = max_seq_len;
    j["use_gravity_token"] = use_gravity_token;
    return j.dump();
}

CamFormerConfig CamFormerConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("config JSON: ") + e.what());
    }
    CamFormerConfig cfg;
    cfg.d_in = j.value("d_in", cfg.d_in);
    cfg.layers = j.value("layers", cfg.layers);
    cfg.heads = j.value("heads", cfg.heads);
    cfg.ffn_dim = j.value("ffn_dim", cfg.ffn_dim);
    cfg.dropout = j.value("dropout", cfg.dropout);
    cfg.d_out = j.value("d_out", cfg.d_out);
    cfg.max_seq_len = j.value("max_seq_len", cfg.max_seq_len);
    cfg.use_gravity_token = j.value("use_gravity_token", cfg.use_gravity_token);
    cfg.validate();
    return cfg;
}

ParamMap<float> init_weights(const CamFormerConfig& cfg, Rng& rng) {
    cfg.validate();
    const float s = 0.02f;
    ParamMap<float> w;
    auto randn = [&](std::vector<int64_t> shape) {
        return Tensor<float>::randn(std::move(shape), rng, s);
    };
    w["input_proj.w"] = randn({9, cfg.d_in});
    w["input_proj.b"] = Tensor<float>::zeros({1, cfg.d_in});
    if (cfg.use_gravity_token) {
        w["gravity_proj.w"] = randn({3, cfg.d_in});
        w["gravity_proj.b"] = Tensor<float>::zeros({1, cfg.d_in});
    }
    w["pos_embed"] = randn({cfg.max_seq_len, cfg.d_in});
    for (int l = 0; l < cfg.layers; ++l) {
        std::string p = "layers." + std::to_string(l) + ".";
        w[p + "ln1.g"] = Tensor<float>::full({1, cfg.d_in}, 1.0f);
        w[p + "ln1.b"] = Tensor<float>::zeros({1, cfg.d_in});
        for (const char* nm : {"wq", "wk", "wv", "wo"})
            w[p + "attn." + nm] = randn({cfg.d_in, cfg.d_in});
        for (const char* nm : {"bq", "bk", "bv", "bo"})
            w[p + "attn." + nm] = Tensor<float>::zeros({1, cfg.d_in});
        w[p + "ln2.g"] = Tensor<float>::full({1, cfg.d_in}, 1.0f);
        w[p + "ln2.b"] = Tensor<float>::zeros({1, cfg.d_in});
        w[p + "ffn.w1"] = randn({cfg.d_in, cfg.ffn_dim});
        w[p + "ffn.b1"] = Tensor<float>::zeros({1, cfg.ffn_dim});
        w[p + "ffn.w2"] = randn({cfg.ffn_dim, cfg.d_in});
        w[p + "ffn.b2"] = Tensor<float>::zeros({1, cfg.d_in});
    }
    w["out_proj.w"] = randn({cfg.d_in, cfg.d_out});
    w["out_proj.b"] = Tensor<float>::zeros({1, cfg.d_out});
    return w;
}

int64_t param_count(const ParamMap<float>& weights) {
    int64_t n = 0;
    for (const auto& [name, t] : weights) n += t.numel();
    return n;
}

template <typename T>
std::map<std::string, int> param_leaves(Tape<T>& tape, const ParamMap<T>& weights) {
    std::map<std::string, int> nodes;
    for (const auto& [name, t] : weights) nodes[name] = tape.leaf(t);
    return nodes;
}

namespace {

constexpr double kLayerNormEps = 1e-5;

template <typename T>
int linear(Tape<T>& tape, int x, int w, int b) {
    return tape.add_rowvec(tape.matmul(x, w), b);
}

}  // namespace

template <typename T>
ForwardNodes<T> build_forward(Tape<T>& tape, const std::map<std::string, int>& params,
                              const geometry::RelativePoseSequence& seq,
                              const std::vector<bool>& mask, const CamFormerConfig& cfg,
                              bool train, Rng& rng) {
    cfg.validate();
    if (seq.n == 0) throw InvalidInputError("forward: empty pose sequence");
    if (mask.size() != seq.n) throw InvalidInputError("forward: mask length != row count");
    bool any_true = false;
    for (bool m : mask) any_true |= m;
    if (!any_true) throw InvalidInputError("forward: empty pooling mask");

    bool gravity = cfg.use_gravity_token && seq.gravity_ref.has_value();
    int64_t n_tokens = (int64_t)seq.n + (gravity ? 1 : 0);
    if (n_tokens > cfg.max_seq_len)
        throw InvalidInputError("forward: sequence of " + std::to_string(n_tokens) +
                                " tokens exceeds max_seq_len " +
                                std::to_string(cfg.max_seq_len));

    auto at = [&](const std::string& name) {
        auto it = params.find(name);
        if (it == params.end()) throw InvalidInputError("forward: missing parameter " + name);
        return it->second;
    };

    // 9 -> d_in projection of the pose rows.
    Tensor<T> rows({(int64_t)seq.n, 9});
    for (size_t i = 0; i < seq.rows.size(); ++i) rows.data[i] = (T)seq.rows[i];
    int x = linear(tape, tape.leaf(std::move(rows)), at("input_proj.w"), at("input_proj.b"));

    // Optional gravity token from its own 3 -> d_in projection, prepended.
    if (gravity) {
        Tensor<T> g({1, 3});
        g.data = {(T)seq.gravity_ref->x, (T)seq.gravity_ref->y, (T)seq.gravity_ref->z};
        int gtok = linear(tape, tape.leaf(std::move(g)), at("gravity_proj.w"),
                          at("gravity_proj.b"));
        x = tape.concat_rows(gtok, x);
    }

    // Learned positional embeddings over the full token sequence.
    std::vector<int64_t> positions(n_tokens);
    for (int64_t i = 0; i < n_tokens; ++i) positions[i] = i;
    x = tape.add(x, tape.embedding_lookup(at("pos_embed"), positions));

    const int dh = cfg.d_in / cfg.heads;
    const T attn_scale = (T)(1.0 / std::sqrt((double)dh));
    Rng drop_rng = rng.fork(0x64726f70);  // independent dropout stream

    for (int l = 0; l < cfg.layers; ++l) {
        std::string p = "layers." + std::to_string(l) + ".";
        // Pre-norm multi-head self-attention with residual.
        int h = tape.layer_norm(x, at(p + "ln1.g"), at(p + "ln1.b"), (T)kLayerNormEps);
        int q = linear(tape, h, at(p + "attn.wq"), at(p + "attn.bq"));
        int k = linear(tape, h, at(p + "attn.wk"), at(p + "attn.bk"));
        int v = linear(tape, h, at(p + "attn.wv"), at(p + "attn.bv"));
        int heads_out = -1;
        for (int hd = 0; hd < cfg.heads; ++hd) {
            int64_t c0 = (int64_t)hd * dh, c1 = c0 + dh;
            int qh = tape.slice_cols(q, c0, c1);
            int kh = tape.slice_cols(k, c0, c1);
            int vh = tape.slice_cols(v, c0, c1);
            int scores = tape.scale(tape.matmul_nt(qh, kh), attn_scale);
            int probs = tape.softmax(scores);
            probs = tape.dropout(probs, cfg.dropout, drop_rng, train);
            int oh = tape.matmul(probs, vh);
            heads_out = hd == 0 ? oh : tape.concat_cols(heads_out, oh);
        }
        int attn = linear(tape, heads_out, at(p + "attn.wo"), at(p + "attn.bo"));
        attn = tape.dropout(attn, cfg.dropout, drop_rng, train);
        x = tape.add(x, attn);

        // Pre-norm feed-forward with residual.
        int f = tape.layer_norm(x, at(p + "ln2.g"), at(p + "ln2.b"), (T)kLayerNormEps);
        f = linear(tape, tape.gelu(linear(tape, f, at(p + "ffn.w1"), at(p + "ffn.b1"))),
                   at(p + "ffn.w2"), at(p + "ffn.b2"));
        f = tape.dropout(f, cfg.dropout, drop_rng, train);
        x = tape.add(x, f);
    }

    // Pool only positions inside the original window; the gravity token
    // attends but is never pooled.
    std::vector<bool> token_mask;
    token_mask.reserve((size_t)n_tokens);
    if (gravity) token_mask.push_back(false);
    token_mask.insert(token_mask.end(), mask.begin(), mask.end());

    ForwardNodes<T> out;
    out.tokens = x;
    out.pooled = tape.masked_mean(x, token_mask);
    out.embedding = tape.l2_normalize(
        linear(tape, out.pooled, at("out_proj.w"), at("out_proj.b")));
    return out;
}

Tensor<float> forward(const geometry::RelativePoseSequence& seq,
                      const std::vector<bool>& mask, const CamFormerConfig& cfg,
                      const ParamMap<float>& weights) {
    Tape<float> tape;
    auto leaves = param_leaves(tape, weights);
    Rng rng(0);  // unused in inference mode
    auto nodes = build_forward(tape, leaves, seq, mask, cfg, /*train=*/false, rng);
    return tape.value(nodes.embedding);
}

Tensor<float> temporal_features(const geometry::RelativePoseSequence& seq,
                                const std::vector<bool>& mask, const CamFormerConfig& cfg,
                                const ParamMap<float>& weights) {
    Tape<float> tape;
    auto leaves = param_leaves(tape, weights);
    Rng rng(0);
    auto nodes = build_forward(tape, leaves, seq, mask, cfg, /*train=*/false, rng);
    const Tensor<float>& tokens = tape.value(nodes.tokens);
    bool gravity = cfg.use_gravity_token && seq.gravity_ref.has_value();
    int64_t offset = gravity ? 1 : 0;
    size_t count = 0;
    for (bool m : mask) count += m ? 1 : 0;
    Tensor<float> out({(int64_t)count, tokens.cols()});
    int64_t r = 0;
    for (size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) {
            std::copy_n(tokens.data.data() + ((int64_t)i + offset) * tokens.cols(),
                        tokens.cols(), out.data.data() + r * tokens.cols());
            ++r;
        }
    return out;
}

template std::map<std::string, int> param_leaves<float>(Tape<float>&, const ParamMap<float>&);
template std::map<std::string, int> param_leaves<double>(Tape<double>&,
                                                         const ParamMap<double>&);
template ForwardNodes<float> build_forward<float>(Tape<float>&,
                                                  const std::map<std::string, int>&,
                                                  const geometry::RelativePoseSequence&,
                                                  const std::vector<bool>&,
                                                  const CamFormerConfig&, bool, Rng&);
template ForwardNodes<double> build_forward<double>(Tape<double>&,
                                                    const std::map<std::string, int>&,
                                                    const geometry::RelativePoseSequence&,
                                                    const std::vector<bool>&,
                                                    const CamFormerConfig&, bool, Rng&);

// ---- checkpoint serialization ----

namespace {

constexpr char kMagic[8] = {'C', 'A', 'M', 'T', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

template <typename V>
void write_raw(std::ofstream& out, const V& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

void write_str(std::ofstream& out, const std::string& s) {
    write_raw(out, (uint32_t)s.size());
    out.write(s.data(), (std::streamsize)s.size());
}

template <typename V>
V read_raw(std::ifstream& in, const std::string& what) {
    V v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!in) throw FormatError("checkpoint truncated while reading " + what);
    return v;
}

std::string read_str(std::ifstream& in, const std::string& what) {
    uint32_t len = read_raw<uint32_t>(in, what + " length");
    if (len > (1u << 28)) throw FormatError("checkpoint: implausible " + what + " length");
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw FormatError("checkpoint truncated while reading " + what);
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const CamFormerConfig& cfg,
                     const ParamMap<float>& weights, const CheckpointMeta& meta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_raw(out, kVersion);
    write_str(out, cfg.to_json());
    nlohmann::json mj;
    mj["seed"] = meta.seed;
    mj["step"] = meta.step;
    write_str(out, mj.dump());
    write_raw(out, (uint32_t)weights.size());
    for (const auto& [name, t] : weights) {
        write_str(out, name);
        write_raw(out, (uint32_t)t.shape.size());
        for (int64_t d : t.shape) write_raw(out, d);
    }
    for (const auto& [name, t] : weights)
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  (std::streamsize)(t.data.size() * sizeof(float)));
    if (!out) throw IoError("short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw FormatError("checkpoint: bad magic in " + path);
    uint32_t version = read_raw<uint32_t>(in, "version");
    if (version != kVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));

    Checkpoint ck;
    ck.config = CamFormerConfig::from_json(read_str(in, "config"));
    nlohmann::json mj;
    try {
        mj = nlohmann::json::parse(read_str(in, "meta"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint meta JSON: ") + e.what());
    }
    ck.meta.seed = mj.value("seed", 0ull);
    ck.meta.step = mj.value("step", 0ll);

    uint32_t count = read_raw<uint32_t>(in, "tensor count");
    std::vector<std::pair<std::string, std::vector<int64_t>>> manifest;
    manifest.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = read_str(in, "tensor name");
        uint32_t ndim = read_raw<uint32_t>(in, "tensor rank");
        if (ndim == 0 || ndim > 8) throw FormatError("checkpoint: bad rank for " + name);
        std::vector<int64_t> shape(ndim);
        for (auto& d : shape) {
            d = read_raw<int64_t>(in, "tensor dim");
            if (d <= 0 || d > (1ll << 32))
                throw FormatError("checkpoint: manifest shape mismatch for " + name);
        }
        manifest.emplace_back(std::move(name), std::move(shape));
    }
    for (auto& [name, shape] : manifest) {
        Tensor<float> t(shape);
        in.read(reinterpret_cast<char*>(t.data.data()),
                (std::streamsize)(t.data.size() * sizeof(float)));
        if (!in)
            throw FormatError("checkpoint: payload shorter than manifest for " + name);
        if (ck.weights.count(name))
            throw FormatError("checkpoint: duplicate tensor " + name);
        ck.weights.emplace(name, std::move(t));
    }
    in.peek();
    if (!in.eof()) throw FormatError("checkpoint: trailing bytes after payload");
    return ck;
}

}  // namespace camtraj::model
