#pragma once

#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "fewcount/correlation.hpp"
#include "fewcount/dataset.hpp"
#include "fewcount/heads.hpp"

namespace fewcount {

enum class Variant { acfamnet, pro };

inline std::string variant_name(Variant v) { return v == Variant::acfamnet ? "acfamnet" : "pro"; }

// Every architecture hyper-parameter of both model variants. Pro-only fields
// (C, N, k_embed, residual_similarity) are ignored by the acfamnet variant.
struct ModelConfig {
    Variant variant = Variant::acfamnet;
    int k = 256;           // backbone kernel count
    int C = 256;           // projected feature dimension (pro)
    int N = 4;             // enhancement blocks (pro)
    int k_embed = 1024;    // pro head embedding width
    int roi_out_h = 3;
    int roi_out_w = 3;
    RoiMode roi_mode = RoiMode::align;
    std::vector<double> scales = {1.0};
    bool backbone_trainable = true;
    bool residual_similarity = true;
    double dropout_p = 0.1;
    double leaky_slope = 0.01;
    uint64_t seed = 0;

    void validate() const {
        if (k <= 0) throw ConfigError("config: k must be positive");
        if (roi_out_h <= 0 || roi_out_w <= 0) throw ConfigError("config: roi_out must be positive");
        if (scales.empty()) throw ConfigError("config: scales must be non-empty");
        for (double s : scales)
            if (!(s > 0.0)) throw ConfigError("config: scale factors must be positive");
        if (!(dropout_p >= 0.0 && dropout_p < 1.0))
            throw ConfigError("config: dropout_p must be in [0,1)");
        if (leaky_slope < 0.0) throw ConfigError("config: leaky_slope must be >= 0");
        if (variant == Variant::pro) {
            if (C <= 0 || N <= 0) throw ConfigError("config: C and N must be positive");
            if (k_embed < 4 || k_embed % 4 != 0)
                throw ConfigError("config: k_embed must be >= 4 and divisible by 4");
        }
    }
};

// ---- config <-> JSON --------------------------------------------------------

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["variant"] = variant_name(c.variant);
    j["k"] = c.k;
    j["C"] = c.C;
    j["N"] = c.N;
    j["k_embed"] = c.k_embed;
    j["roi_out"] = {c.roi_out_h, c.roi_out_w};
    j["roi_mode"] = c.roi_mode == RoiMode::align ? "align" : "pool";
    j["scales"] = c.scales;
    j["backbone_trainable"] = c.backbone_trainable;
    j["residual_similarity"] = c.residual_similarity;
    j["dropout_p"] = c.dropout_p;
    j["leaky_slope"] = c.leaky_slope;
    j["seed"] = c.seed;
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known = {
        "variant", "k", "C", "N", "k_embed", "roi_out", "roi_mode", "scales",
        "backbone_trainable", "residual_similarity", "dropout_p", "leaky_slope", "seed"};
    std::string bad;
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            bad += (bad.empty() ? "" : ", ") + it.key();
    if (!bad.empty()) throw ConfigError("unknown model config keys: " + bad);
    ModelConfig c;
    std::string v = j.value("variant", "acfamnet");
    if (v == "acfamnet") c.variant = Variant::acfamnet;
    else if (v == "pro") c.variant = Variant::pro;
    else throw ConfigError("config: variant must be 'acfamnet' or 'pro', got '" + v + "'");
    c.k = j.value("k", c.k);
    c.C = j.value("C", c.C);
    c.N = j.value("N", c.N);
    c.k_embed = j.value("k_embed", c.k_embed);
    if (j.contains("roi_out")) {
        if (!j["roi_out"].is_array() || j["roi_out"].size() != 2)
            throw ConfigError("config: roi_out must be [h, w]");
        c.roi_out_h = j["roi_out"][0].get<int>();
        c.roi_out_w = j["roi_out"][1].get<int>();
    }
    std::string rm = j.value("roi_mode", "align");
    if (rm == "align") c.roi_mode = RoiMode::align;
    else if (rm == "pool") c.roi_mode = RoiMode::pool;
    else throw ConfigError("config: roi_mode must be 'align' or 'pool', got '" + rm + "'");
    if (j.contains("scales")) c.scales = j["scales"].get<std::vector<double>>();
    c.backbone_trainable = j.value("backbone_trainable", c.backbone_trainable);
    c.residual_similarity = j.value("residual_similarity", c.residual_similarity);
    c.dropout_p = j.value("dropout_p", c.dropout_p);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

// ---- parameter storage ------------------------------------------------------

// Named parameter grids with shapes fixed at construction. Entry order is the
// creation order and defines the checkpoint layout and init stream.
template <typename T>
class ParamBundle {
public:
    struct Entry {
        std::string name;
        Tensor<T> value;
        bool trainable;
    };

    Tensor<T>& add(const std::string& name, Tensor<T> value, bool trainable) {
        if (index_.count(name)) throw Error("duplicate parameter name: " + name);
        index_[name] = entries_.size();
        entries_.push_back(Entry{name, std::move(value), trainable});
        return entries_.back().value;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("unknown parameter: " + name);
        return entries_[it->second].value;
    }
    const Tensor<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("unknown parameter: " + name);
        return entries_[it->second].value;
    }

    bool trainable(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("unknown parameter: " + name);
        return entries_[it->second].trainable;
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

// ---- model ------------------------------------------------------------------

template <typename T>
struct BoundParams {
    std::unordered_map<std::string, Var<T>> vars;

    Var<T> at(const std::string& name) const {
        auto it = vars.find(name);
        if (it == vars.end()) throw Error("unbound parameter: " + name);
        return it->second;
    }
};

template <typename T>
class Model {
public:
    // Builds a model with every parameter drawn from N(0, 0.01^2), seeded by
    // cfg.seed; batch/layer-norm scales start at 1, shifts at 0.
    static Model build(const ModelConfig& cfg) {
        cfg.validate();
        Model m;
        m.cfg_ = cfg;
        Rng rng(cfg.seed);
        const T sigma = T(0.01);
        auto gauss = [&](Shape shape, bool trainable, const std::string& name) {
            Tensor<T> t(std::move(shape));
            for (long long i = 0; i < t.size(); ++i)
                t[i] = static_cast<T>(rng.gaussian(0.0, static_cast<double>(sigma)));
            m.params_.add(name, std::move(t), trainable);
        };
        auto affine = [&](const std::string& prefix, int c, bool trainable) {
            m.params_.add(prefix + ".gamma", Tensor<T>::full(Shape{c}, T(1)), trainable);
            m.params_.add(prefix + ".beta", Tensor<T>(Shape{c}), trainable);
        };
        int s_count = static_cast<int>(cfg.scales.size());
        bool bb_train = cfg.backbone_trainable;
        gauss({cfg.k, 3, 7, 7}, bb_train, "backbone.conv.w");
        affine("backbone.bn", cfg.k, bb_train);
        m.params_.add("backbone.bn.running_mean", Tensor<T>(Shape{cfg.k}), false);
        m.params_.add("backbone.bn.running_var", Tensor<T>::full(Shape{cfg.k}, T(1)), false);
        if (cfg.variant == Variant::acfamnet) {
            gauss({196, s_count, 7, 7}, true, "head.conv1.w");
            gauss({196}, true, "head.conv1.b");
            gauss({128, 196, 5, 5}, true, "head.conv2.w");
            gauss({128}, true, "head.conv2.b");
            gauss({64, 128, 3, 3}, true, "head.conv3.w");
            gauss({64}, true, "head.conv3.b");
            gauss({32, 64, 1, 1}, true, "head.conv4.w");
            gauss({32}, true, "head.conv4.b");
            gauss({1, 32, 1, 1}, true, "head.conv5.w");
            gauss({1}, true, "head.conv5.b");
        } else {
            for (int j = 1; j <= cfg.N; ++j) {
                std::string p = "rfe" + std::to_string(j);
                int cin = j == 1 ? cfg.k : cfg.C;
                gauss({cfg.C, cin, 1, 1}, true, p + ".proj.w");
                gauss({cfg.C}, true, p + ".proj.b");
                affine(p + ".proj_ln", cfg.C, true);
                gauss({1}, true, p + ".fuse.proj.w");
                gauss({1}, true, p + ".fuse.proj.b");
                affine(p + ".fuse.ln1", cfg.C, true);
                gauss({cfg.C, cfg.C, 3, 3}, true, p + ".fuse.conv1.w");
                gauss({cfg.C}, true, p + ".fuse.conv1.b");
                gauss({cfg.C, cfg.C, 3, 3}, true, p + ".fuse.conv2.w");
                gauss({cfg.C}, true, p + ".fuse.conv2.b");
                affine(p + ".fuse.ln2", cfg.C, true);
            }
            int m_ch = cfg.k_embed / 2;
            gauss({cfg.k_embed, cfg.C, 7, 7}, true, "head.conv1.w");
            gauss({cfg.k_embed}, true, "head.conv1.b");
            gauss({m_ch, cfg.k_embed, 5, 5}, true, "head.conv2.w");
            gauss({m_ch}, true, "head.conv2.b");
            gauss({m_ch, cfg.C, 1, 1}, true, "head.res1.w");
            gauss({m_ch}, true, "head.res1.b");
            if (cfg.residual_similarity) {
                gauss({m_ch, 1, 1, 1}, true, "head.res2.w");
                gauss({m_ch}, true, "head.res2.b");
            }
            gauss({m_ch, m_ch, 3, 3}, true, "head.conv3.w");
            gauss({m_ch}, true, "head.conv3.b");
            gauss({m_ch, m_ch, 3, 3}, true, "head.conv4.w");
            gauss({m_ch}, true, "head.conv4.b");
            gauss({1, m_ch, 1, 1}, true, "head.out.w");
            gauss({1}, true, "head.out.b");
        }
        return m;
    }

    const ModelConfig& config() const { return cfg_; }
    ParamBundle<T>& params() { return params_; }
    const ParamBundle<T>& params() const { return params_; }

    std::vector<std::string> trainable_names() const {
        std::vector<std::string> names;
        for (const auto& e : params_.entries())
            if (e.trainable) names.push_back(e.name);
        return names;
    }

    // Adds one graph leaf per parameter. Gradients are requested only for
    // trainable parameters in train mode.
    BoundParams<T> bind(Graph<T>& g, Mode mode) const {
        BoundParams<T> bound;
        for (const auto& e : params_.entries())
            bound.vars.emplace(e.name, g.leaf(e.value, mode == Mode::train && e.trainable));
        return bound;
    }

    struct ForwardResult {
        Var<T> density; // (H, W)
        BoundParams<T> bound;
    };

    ForwardResult forward(Graph<T>& g, const Tensor<T>& image,
                          const std::vector<BoundingBox>& boxes, Mode mode) {
        if (boxes.empty()) throw ValidationError("forward: at least one exemplar box required");
        if (image.rank() != 3 || image.dim(0) != 3)
            throw ShapeError("forward: image must be (3,H,W)");
        for (size_t i = 0; i < boxes.size(); ++i)
            if (!box_in_bounds(boxes[i], image.dim(2), image.dim(1)))
                throw ValidationError("forward: exemplar box " + std::to_string(i) +
                                      " outside the image: " + box_str(boxes[i]));
        BoundParams<T> bound = bind(g, mode);
        Var<T> img = g.leaf(image, false);
        BackboneVars<T> bb{bound.at("backbone.conv.w"), bound.at("backbone.bn.gamma"),
                           bound.at("backbone.bn.beta"),
                           &params_.at("backbone.bn.running_mean"),
                           &params_.at("backbone.bn.running_var")};
        // a frozen backbone keeps eval-mode batch norm even while training
        Mode bn_mode = (mode == Mode::train && cfg_.backbone_trainable) ? Mode::train : Mode::eval;
        Var<T> f_q = extract_query_feature(img, bb, bn_mode);
        Var<T> density;
        if (cfg_.variant == Variant::acfamnet) {
            SupportFeatures<T> supports = extract_support_features(
                f_q, boxes, cfg_.roi_out_h, cfg_.roi_out_w, cfg_.scales, cfg_.roi_mode);
            std::vector<Var<T>> sim = acfamnet_similarity(f_q, supports);
            AcfamnetHeadVars<T> hv{bound.at("head.conv1.w"), bound.at("head.conv1.b"),
                                   bound.at("head.conv2.w"), bound.at("head.conv2.b"),
                                   bound.at("head.conv3.w"), bound.at("head.conv3.b"),
                                   bound.at("head.conv4.w"), bound.at("head.conv4.b"),
                                   bound.at("head.conv5.w"), bound.at("head.conv5.b")};
            density = acfamnet_head(sim, hv);
        } else {
            std::vector<RfeBlockVars<T>> blocks;
            for (int j = 1; j <= cfg_.N; ++j) {
                std::string p = "rfe" + std::to_string(j);
                RfeBlockVars<T> bv;
                bv.proj = ProjectionVars<T>{bound.at(p + ".proj.w"), bound.at(p + ".proj.b"),
                                            bound.at(p + ".proj_ln.gamma"),
                                            bound.at(p + ".proj_ln.beta")};
                bv.fuse = FusionVars<T>{
                    bound.at(p + ".fuse.proj.w"),   bound.at(p + ".fuse.proj.b"),
                    bound.at(p + ".fuse.ln1.gamma"), bound.at(p + ".fuse.ln1.beta"),
                    bound.at(p + ".fuse.conv1.w"),  bound.at(p + ".fuse.conv1.b"),
                    bound.at(p + ".fuse.conv2.w"),  bound.at(p + ".fuse.conv2.b"),
                    bound.at(p + ".fuse.ln2.gamma"), bound.at(p + ".fuse.ln2.beta")};
                blocks.push_back(bv);
            }
            RfeConfig<T> rc;
            rc.roi_out_h = cfg_.roi_out_h;
            rc.roi_out_w = cfg_.roi_out_w;
            rc.roi_mode = cfg_.roi_mode;
            rc.scales = cfg_.scales;
            rc.dropout_p = static_cast<T>(cfg_.dropout_p);
            rc.leaky_slope = static_cast<T>(cfg_.leaky_slope);
            RfeResult<T> rr = rfe_stack(f_q, boxes, blocks, rc, mode);
            ProHeadVars<T> hv;
            hv.w1 = bound.at("head.conv1.w");
            hv.b1 = bound.at("head.conv1.b");
            hv.w2 = bound.at("head.conv2.w");
            hv.b2 = bound.at("head.conv2.b");
            hv.res1_w = bound.at("head.res1.w");
            hv.res1_b = bound.at("head.res1.b");
            if (cfg_.residual_similarity) {
                hv.res2_w = bound.at("head.res2.w");
                hv.res2_b = bound.at("head.res2.b");
            }
            hv.w3 = bound.at("head.conv3.w");
            hv.b3 = bound.at("head.conv3.b");
            hv.w4 = bound.at("head.conv4.w");
            hv.b4 = bound.at("head.conv4.b");
            hv.out_w = bound.at("head.out.w");
            hv.out_b = bound.at("head.out.b");
            density = pro_head(rr.enhanced, rr.scores, hv, cfg_.residual_similarity,
                               static_cast<T>(cfg_.leaky_slope));
        }
        const Shape ds = density.shape(); // (1, H, W)
        ForwardResult out{reshape(density, {ds[1], ds[2]}), std::move(bound)};
        return out;
    }

    // Eval-mode convenience pass on a throwaway graph.
    Tensor<T> predict(const Tensor<T>& image, const std::vector<BoundingBox>& boxes) {
        Graph<T> g(0);
        return forward(g, image, boxes, Mode::eval).density.value();
    }

private:
    ModelConfig cfg_;
    ParamBundle<T> params_;
};

// Predicted count is the integral of the density map.
template <typename T>
double count(const Tensor<T>& density) {
    if (!density.all_finite()) throw NumericError("count: non-finite density map");
    return density.dsum();
}

// ---- checkpoints --------------------------------------------------------------

// Single-file archive: magic, version header, config + metadata JSON, then
// fixed-order named entries stored as little-endian 32-bit floats.
struct CheckpointMeta {
    int epoch = 0;
    double best_val_mnae = -1.0; // negative = not recorded
    bool has_norm_stats = false;
    NormStats norm;
};

namespace ckpt_detail {

constexpr char kMagic[8] = {'F', 'C', 'C', 'K', 'P', 'T', '0', '0'};
constexpr uint32_t kVersion = 1;

inline bool host_little_endian() {
    uint32_t v = 1;
    uint8_t b;
    std::memcpy(&b, &v, 1);
    return b == 1;
}

template <typename U>
void write_pod(std::ostream& out, U v) {
    if (!host_little_endian()) {
        uint8_t bytes[sizeof(U)];
        std::memcpy(bytes, &v, sizeof(U));
        std::reverse(bytes, bytes + sizeof(U));
        out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
        return;
    }
    out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_pod(std::istream& in) {
    uint8_t bytes[sizeof(U)];
    in.read(reinterpret_cast<char*>(bytes), sizeof(U));
    if (in.gcount() != sizeof(U)) throw CheckpointError("truncated checkpoint");
    if (!host_little_endian()) std::reverse(bytes, bytes + sizeof(U));
    U v;
    std::memcpy(&v, bytes, sizeof(U));
    return v;
}

inline nlohmann::json meta_to_json(const CheckpointMeta& m) {
    nlohmann::json j;
    j["epoch"] = m.epoch;
    j["best_val_mnae"] = m.best_val_mnae;
    if (m.has_norm_stats) {
        j["norm_mean"] = {m.norm.mean[0], m.norm.mean[1], m.norm.mean[2]};
        j["norm_std"] = {m.norm.std[0], m.norm.std[1], m.norm.std[2]};
    }
    return j;
}

inline CheckpointMeta meta_from_json(const nlohmann::json& j) {
    CheckpointMeta m;
    m.epoch = j.value("epoch", 0);
    m.best_val_mnae = j.value("best_val_mnae", -1.0);
    if (j.contains("norm_mean") && j.contains("norm_std")) {
        m.has_norm_stats = true;
        for (int c = 0; c < 3; ++c) {
            m.norm.mean[c] = j["norm_mean"][static_cast<size_t>(c)].get<double>();
            m.norm.std[c] = j["norm_std"][static_cast<size_t>(c)].get<double>();
        }
    }
    return m;
}

} // namespace ckpt_detail

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model, const CheckpointMeta& meta) {
    using namespace ckpt_detail;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_pod<uint32_t>(out, kVersion);
    nlohmann::json j;
    j["config"] = model_config_to_json(model.config());
    j["meta"] = meta_to_json(meta);
    std::string js = j.dump();
    write_pod<uint32_t>(out, static_cast<uint32_t>(js.size()));
    out.write(js.data(), static_cast<std::streamsize>(js.size()));
    write_pod<uint32_t>(out, static_cast<uint32_t>(model.params().entries().size()));
    for (const auto& e : model.params().entries()) {
        write_pod<uint16_t>(out, static_cast<uint16_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        write_pod<uint8_t>(out, e.trainable ? 1 : 0);
        write_pod<uint8_t>(out, static_cast<uint8_t>(e.value.rank()));
        for (int d = 0; d < e.value.rank(); ++d)
            write_pod<uint32_t>(out, static_cast<uint32_t>(e.value.dim(d)));
        for (long long i = 0; i < e.value.size(); ++i)
            write_pod<float>(out, static_cast<float>(e.value[i]));
    }
    if (!out) throw Error("short write on checkpoint: " + path);
}

template <typename T>
struct LoadedCheckpoint {
    Model<T> model;
    CheckpointMeta meta;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path,
                                    std::optional<Variant> expected_variant = std::nullopt) {
    using namespace ckpt_detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (in.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw CheckpointError("not a checkpoint file: " + path);
    uint32_t version = read_pod<uint32_t>(in);
    if (version != kVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    uint32_t js_len = read_pod<uint32_t>(in);
    std::string js(js_len, '\0');
    in.read(js.data(), js_len);
    if (in.gcount() != static_cast<std::streamsize>(js_len))
        throw CheckpointError("truncated checkpoint");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(js);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    }
    ModelConfig cfg = model_config_from_json(j.at("config"));
    if (expected_variant && cfg.variant != *expected_variant)
        throw CheckpointError("variant mismatch: checkpoint holds '" +
                              variant_name(cfg.variant) + "' but '" +
                              variant_name(*expected_variant) + "' was requested");
    LoadedCheckpoint<T> out{Model<T>::build(cfg), meta_from_json(j.at("meta"))};
    uint32_t n_entries = read_pod<uint32_t>(in);
    if (n_entries != out.model.params().entries().size())
        throw CheckpointError("checkpoint entry count does not match the configuration");
    for (uint32_t i = 0; i < n_entries; ++i) {
        uint16_t name_len = read_pod<uint16_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (in.gcount() != static_cast<std::streamsize>(name_len))
            throw CheckpointError("truncated checkpoint");
        read_pod<uint8_t>(in); // trainable flag is derived from the config on load
        uint8_t rank = read_pod<uint8_t>(in);
        Shape shape(rank);
        for (int d = 0; d < rank; ++d)
            shape[static_cast<size_t>(d)] = static_cast<int>(read_pod<uint32_t>(in));
        if (!out.model.params().has(name))
            throw CheckpointError("checkpoint holds unknown parameter '" + name + "'");
        Tensor<T>& dst = out.model.params().at(name);
        if (dst.shape() != shape)
            throw CheckpointError("parameter '" + name + "' has shape " + shape_str(shape) +
                                  " but the configuration requires " + shape_str(dst.shape()));
        for (long long e = 0; e < dst.size(); ++e) dst[e] = static_cast<T>(read_pod<float>(in));
    }
    if (in.peek() != std::char_traits<char>::eof())
        throw CheckpointError("trailing bytes in checkpoint: " + path);
    return out;
}

} // namespace fewcount
