#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "circuitkl/errors.hpp"
#include "circuitkl/matrix.hpp"
#include "circuitkl/rng.hpp"

namespace circuitkl {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ModelConfig {
    int n_layers = 0;
    int n_heads = 0;
    int d_model = 0;
    int d_head = 0;
    bool use_mlp = false;
    int d_mlp = 0;
    int vocab_size = 0;
    int max_seq_len = 0;
    bool use_layernorm = true;
};

inline void validate_config(const ModelConfig& c) {
    if (c.n_layers < 1) throw UsageError("config: n_layers must be >= 1");
    if (c.n_heads < 1) throw UsageError("config: n_heads must be >= 1");
    if (c.d_model < 1) throw UsageError("config: d_model must be >= 1");
    if (c.d_head < 1) throw UsageError("config: d_head must be >= 1");
    if (c.vocab_size < 2) throw UsageError("config: vocab_size must be >= 2");
    if (c.max_seq_len < 1) throw UsageError("config: max_seq_len must be >= 1");
    if (c.use_mlp && c.d_mlp < 1) throw UsageError("config: d_mlp must be >= 1 when use_mlp is set");
    if (!c.use_mlp && c.d_mlp != 0) throw UsageError("config: d_mlp must be 0 when use_mlp is unset");
}

// Short stable fingerprint of the architecture, stored inside circuit files so
// a circuit can refuse to run against a model with a different shape.
inline std::string config_hash(const ModelConfig& c) {
    std::string canon = "v1|n_layers=" + std::to_string(c.n_layers) +
                        "|n_heads=" + std::to_string(c.n_heads) +
                        "|d_model=" + std::to_string(c.d_model) +
                        "|d_head=" + std::to_string(c.d_head) +
                        "|use_mlp=" + std::to_string(c.use_mlp ? 1 : 0) +
                        "|d_mlp=" + std::to_string(c.use_mlp ? c.d_mlp : 0) +
                        "|vocab_size=" + std::to_string(c.vocab_size) +
                        "|max_seq_len=" + std::to_string(c.max_seq_len) +
                        "|use_layernorm=" + std::to_string(c.use_layernorm ? 1 : 0);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(canon)));
    return std::string(buf);
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

struct HeadWeights {
    Matrix w_q, w_k, w_v; // [d_model, d_head]
    Vector b_q, b_k, b_v; // [d_head]
    Matrix w_o;           // [d_head, d_model]
    Vector b_o;           // [d_model]
    Vector ln_w, ln_b;    // [d_model], present only with layernorm
};

struct MlpWeights {
    Matrix w_in;       // [d_model, d_mlp]
    Vector b_in;       // [d_mlp]
    Matrix w_out;      // [d_mlp, d_model]
    Vector b_out;      // [d_model]
    Vector ln_w, ln_b; // [d_model], present only with layernorm
};

struct Model {
    ModelConfig config;
    Matrix token_embedding;                      // [vocab_size, d_model]
    Matrix pos_embedding;                        // [max_seq_len, d_model]
    std::vector<std::vector<HeadWeights>> heads; // [layer][head]
    std::vector<MlpWeights> mlps;                // [layer], only with use_mlp
    Vector final_ln_w, final_ln_b;               // [d_model], only with layernorm
    Matrix unembedding;                          // [d_model, vocab_size]
};

// All entries i.i.d. zero-mean Gaussian with scale 1/sqrt(d_model), filled in
// a fixed documented order (embeddings, then per layer: heads in index order
// with W_Q,b_Q,W_K,b_K,W_V,b_V,W_O,b_O,ln; then the layer's MLP; then the
// final layernorm; then the unembedding). Identical seeds give bitwise
// identical models.
inline Model random_model(const ModelConfig& config, uint64_t seed) {
    validate_config(config);
    Model m;
    m.config = config;
    Rng rng(derive_seed(seed, "model-init", 0));
    const double sigma = 1.0 / std::sqrt(static_cast<double>(config.d_model));
    auto fill_mat = [&](Matrix& mat, int r, int c) {
        mat = Matrix(r, c);
        for (double& v : mat.data) v = sigma * rng.gaussian();
    };
    auto fill_vec = [&](Vector& v, int n) {
        v.assign(static_cast<size_t>(n), 0.0);
        for (double& x : v) x = sigma * rng.gaussian();
    };
    fill_mat(m.token_embedding, config.vocab_size, config.d_model);
    fill_mat(m.pos_embedding, config.max_seq_len, config.d_model);
    m.heads.resize(config.n_layers);
    if (config.use_mlp) m.mlps.resize(config.n_layers);
    for (int l = 0; l < config.n_layers; ++l) {
        m.heads[l].resize(config.n_heads);
        for (int h = 0; h < config.n_heads; ++h) {
            HeadWeights& hw = m.heads[l][h];
            fill_mat(hw.w_q, config.d_model, config.d_head);
            fill_vec(hw.b_q, config.d_head);
            fill_mat(hw.w_k, config.d_model, config.d_head);
            fill_vec(hw.b_k, config.d_head);
            fill_mat(hw.w_v, config.d_model, config.d_head);
            fill_vec(hw.b_v, config.d_head);
            fill_mat(hw.w_o, config.d_head, config.d_model);
            fill_vec(hw.b_o, config.d_model);
            if (config.use_layernorm) {
                fill_vec(hw.ln_w, config.d_model);
                fill_vec(hw.ln_b, config.d_model);
            }
        }
        if (config.use_mlp) {
            MlpWeights& mw = m.mlps[l];
            fill_mat(mw.w_in, config.d_model, config.d_mlp);
            fill_vec(mw.b_in, config.d_mlp);
            fill_mat(mw.w_out, config.d_mlp, config.d_model);
            fill_vec(mw.b_out, config.d_model);
            if (config.use_layernorm) {
                fill_vec(mw.ln_w, config.d_model);
                fill_vec(mw.ln_b, config.d_model);
            }
        }
    }
    if (config.use_layernorm) {
        fill_vec(m.final_ln_w, config.d_model);
        fill_vec(m.final_ln_b, config.d_model);
    }
    fill_mat(m.unembedding, config.d_model, config.vocab_size);
    return m;
}

// ---------------------------------------------------------------------------
// JSON serialization
//
// File layout: {"format_version": 1, "config": {...}, "tensors": {...}}.
// Matrices are nested arrays of numbers (row-major), vectors flat arrays.
// Tensor names: embed.token, embed.pos, a{l}.h{h}.{W_Q,b_Q,W_K,b_K,W_V,b_V,
// W_O,b_O,ln_w,ln_b}, m{l}.{W_in,b_in,W_out,b_out,ln_w,ln_b}, final.ln_w,
// final.ln_b, unembed.W. Unknown keys anywhere are an error; doubles survive
// a save/load round trip exactly.
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json mat_to_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < m.rows; ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < m.cols; ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline nlohmann::json vec_to_json(const Vector& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (double x : v) arr.push_back(x);
    return arr;
}

inline Matrix mat_from_json(const nlohmann::json& j, const std::string& name, int rows, int cols) {
    if (!j.is_array() || static_cast<int>(j.size()) != rows)
        throw DataError("tensor '" + name + "': expected " + std::to_string(rows) + " rows");
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        const auto& row = j[r];
        if (!row.is_array() || static_cast<int>(row.size()) != cols)
            throw DataError("tensor '" + name + "': row " + std::to_string(r) + " expected " +
                            std::to_string(cols) + " columns");
        for (int c = 0; c < cols; ++c) {
            if (!row[c].is_number())
                throw DataError("tensor '" + name + "': non-numeric entry");
            double v = row[c].get<double>();
            if (!std::isfinite(v))
                throw DataError("tensor '" + name + "': non-finite entry");
            m(r, c) = v;
        }
    }
    return m;
}

inline Vector vec_from_json(const nlohmann::json& j, const std::string& name, int n) {
    if (!j.is_array() || static_cast<int>(j.size()) != n)
        throw DataError("tensor '" + name + "': expected length " + std::to_string(n));
    Vector v(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        if (!j[i].is_number())
            throw DataError("tensor '" + name + "': non-numeric entry");
        double x = j[i].get<double>();
        if (!std::isfinite(x))
            throw DataError("tensor '" + name + "': non-finite entry");
        v[static_cast<size_t>(i)] = x;
    }
    return v;
}

} // namespace detail

inline nlohmann::json model_to_json(const Model& m) {
    const ModelConfig& c = m.config;
    nlohmann::json cfg;
    cfg["n_layers"] = c.n_layers;
    cfg["n_heads"] = c.n_heads;
    cfg["d_model"] = c.d_model;
    cfg["d_head"] = c.d_head;
    cfg["use_mlp"] = c.use_mlp;
    cfg["d_mlp"] = c.d_mlp;
    cfg["vocab_size"] = c.vocab_size;
    cfg["max_seq_len"] = c.max_seq_len;
    cfg["use_layernorm"] = c.use_layernorm;

    nlohmann::json t;
    t["embed.token"] = detail::mat_to_json(m.token_embedding);
    t["embed.pos"] = detail::mat_to_json(m.pos_embedding);
    for (int l = 0; l < c.n_layers; ++l) {
        for (int h = 0; h < c.n_heads; ++h) {
            const HeadWeights& hw = m.heads[l][h];
            std::string p = "a" + std::to_string(l) + ".h" + std::to_string(h) + ".";
            t[p + "W_Q"] = detail::mat_to_json(hw.w_q);
            t[p + "b_Q"] = detail::vec_to_json(hw.b_q);
            t[p + "W_K"] = detail::mat_to_json(hw.w_k);
            t[p + "b_K"] = detail::vec_to_json(hw.b_k);
            t[p + "W_V"] = detail::mat_to_json(hw.w_v);
            t[p + "b_V"] = detail::vec_to_json(hw.b_v);
            t[p + "W_O"] = detail::mat_to_json(hw.w_o);
            t[p + "b_O"] = detail::vec_to_json(hw.b_o);
            if (c.use_layernorm) {
                t[p + "ln_w"] = detail::vec_to_json(hw.ln_w);
                t[p + "ln_b"] = detail::vec_to_json(hw.ln_b);
            }
        }
        if (c.use_mlp) {
            const MlpWeights& mw = m.mlps[l];
            std::string p = "m" + std::to_string(l) + ".";
            t[p + "W_in"] = detail::mat_to_json(mw.w_in);
            t[p + "b_in"] = detail::vec_to_json(mw.b_in);
            t[p + "W_out"] = detail::mat_to_json(mw.w_out);
            t[p + "b_out"] = detail::vec_to_json(mw.b_out);
            if (c.use_layernorm) {
                t[p + "ln_w"] = detail::vec_to_json(mw.ln_w);
                t[p + "ln_b"] = detail::vec_to_json(mw.ln_b);
            }
        }
    }
    if (c.use_layernorm) {
        t["final.ln_w"] = detail::vec_to_json(m.final_ln_w);
        t["final.ln_b"] = detail::vec_to_json(m.final_ln_b);
    }
    t["unembed.W"] = detail::mat_to_json(m.unembedding);

    nlohmann::json doc;
    doc["format_version"] = 1;
    doc["config"] = std::move(cfg);
    doc["tensors"] = std::move(t);
    return doc;
}

inline Model model_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw DataError("model file: top level must be an object");
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const std::string& k = it.key();
        if (k != "format_version" && k != "config" && k != "tensors")
            throw DataError("model file: unknown key '" + k + "'");
    }
    if (!doc.contains("format_version") || !doc["format_version"].is_number_integer() ||
        doc["format_version"].get<int>() != 1)
        throw DataError("model file: missing or unsupported format_version (expected 1)");
    if (!doc.contains("config") || !doc["config"].is_object())
        throw DataError("model file: missing config object");
    if (!doc.contains("tensors") || !doc["tensors"].is_object())
        throw DataError("model file: missing tensors object");

    const auto& cfg = doc["config"];
    ModelConfig c;
    auto get_int = [&](const char* key) {
        if (!cfg.contains(key) || !cfg[key].is_number_integer())
            throw DataError(std::string("model file: config field '") + key +
                            "' missing or not an integer");
        return cfg[key].get<int>();
    };
    auto get_bool = [&](const char* key) {
        if (!cfg.contains(key) || !cfg[key].is_boolean())
            throw DataError(std::string("model file: config field '") + key +
                            "' missing or not a boolean");
        return cfg[key].get<bool>();
    };
    for (auto it = cfg.begin(); it != cfg.end(); ++it) {
        const std::string& k = it.key();
        if (k != "n_layers" && k != "n_heads" && k != "d_model" && k != "d_head" &&
            k != "use_mlp" && k != "d_mlp" && k != "vocab_size" && k != "max_seq_len" &&
            k != "use_layernorm")
            throw DataError("model file: unknown config key '" + k + "'");
    }
    c.n_layers = get_int("n_layers");
    c.n_heads = get_int("n_heads");
    c.d_model = get_int("d_model");
    c.d_head = get_int("d_head");
    c.use_mlp = get_bool("use_mlp");
    c.d_mlp = get_int("d_mlp");
    c.vocab_size = get_int("vocab_size");
    c.max_seq_len = get_int("max_seq_len");
    c.use_layernorm = get_bool("use_layernorm");
    try {
        validate_config(c);
    } catch (const UsageError& e) {
        throw DataError(std::string("model file: ") + e.what());
    }

    const auto& t = doc["tensors"];
    std::vector<std::string> expected;
    expected.emplace_back("embed.token");
    expected.emplace_back("embed.pos");
    for (int l = 0; l < c.n_layers; ++l) {
        for (int h = 0; h < c.n_heads; ++h) {
            std::string p = "a" + std::to_string(l) + ".h" + std::to_string(h) + ".";
            for (const char* s : {"W_Q", "b_Q", "W_K", "b_K", "W_V", "b_V", "W_O", "b_O"})
                expected.push_back(p + s);
            if (c.use_layernorm) {
                expected.push_back(p + "ln_w");
                expected.push_back(p + "ln_b");
            }
        }
        if (c.use_mlp) {
            std::string p = "m" + std::to_string(l) + ".";
            for (const char* s : {"W_in", "b_in", "W_out", "b_out"}) expected.push_back(p + s);
            if (c.use_layernorm) {
                expected.push_back(p + "ln_w");
                expected.push_back(p + "ln_b");
            }
        }
    }
    if (c.use_layernorm) {
        expected.emplace_back("final.ln_w");
        expected.emplace_back("final.ln_b");
    }
    expected.emplace_back("unembed.W");

    for (const std::string& name : expected)
        if (!t.contains(name)) throw DataError("model file: missing tensor '" + name + "'");
    for (auto it = t.begin(); it != t.end(); ++it) {
        bool known = false;
        for (const std::string& name : expected)
            if (it.key() == name) { known = true; break; }
        if (!known) throw DataError("model file: unknown tensor '" + it.key() + "'");
    }

    Model m;
    m.config = c;
    m.token_embedding = detail::mat_from_json(t["embed.token"], "embed.token", c.vocab_size, c.d_model);
    m.pos_embedding = detail::mat_from_json(t["embed.pos"], "embed.pos", c.max_seq_len, c.d_model);
    m.heads.resize(c.n_layers);
    if (c.use_mlp) m.mlps.resize(c.n_layers);
    for (int l = 0; l < c.n_layers; ++l) {
        m.heads[l].resize(c.n_heads);
        for (int h = 0; h < c.n_heads; ++h) {
            HeadWeights& hw = m.heads[l][h];
            std::string p = "a" + std::to_string(l) + ".h" + std::to_string(h) + ".";
            hw.w_q = detail::mat_from_json(t[p + "W_Q"], p + "W_Q", c.d_model, c.d_head);
            hw.b_q = detail::vec_from_json(t[p + "b_Q"], p + "b_Q", c.d_head);
            hw.w_k = detail::mat_from_json(t[p + "W_K"], p + "W_K", c.d_model, c.d_head);
            hw.b_k = detail::vec_from_json(t[p + "b_K"], p + "b_K", c.d_head);
            hw.w_v = detail::mat_from_json(t[p + "W_V"], p + "W_V", c.d_model, c.d_head);
            hw.b_v = detail::vec_from_json(t[p + "b_V"], p + "b_V", c.d_head);
            hw.w_o = detail::mat_from_json(t[p + "W_O"], p + "W_O", c.d_head, c.d_model);
            hw.b_o = detail::vec_from_json(t[p + "b_O"], p + "b_O", c.d_model);
            if (c.use_layernorm) {
                hw.ln_w = detail::vec_from_json(t[p + "ln_w"], p + "ln_w", c.d_model);
                hw.ln_b = detail::vec_from_json(t[p + "ln_b"], p + "ln_b", c.d_model);
            }
        }
        if (c.use_mlp) {
            MlpWeights& mw = m.mlps[l];
            std::string p = "m" + std::to_string(l) + ".";
            mw.w_in = detail::mat_from_json(t[p + "W_in"], p + "W_in", c.d_model, c.d_mlp);
            mw.b_in = detail::vec_from_json(t[p + "b_in"], p + "b_in", c.d_mlp);
            mw.w_out = detail::mat_from_json(t[p + "W_out"], p + "W_out", c.d_mlp, c.d_model);
            mw.b_out = detail::vec_from_json(t[p + "b_out"], p + "b_out", c.d_model);
            if (c.use_layernorm) {
                mw.ln_w = detail::vec_from_json(t[p + "ln_w"], p + "ln_w", c.d_model);
                mw.ln_b = detail::vec_from_json(t[p + "ln_b"], p + "ln_b", c.d_model);
            }
        }
    }
    if (c.use_layernorm) {
        m.final_ln_w = detail::vec_from_json(t["final.ln_w"], "final.ln_w", c.d_model);
        m.final_ln_b = detail::vec_from_json(t["final.ln_b"], "final.ln_b", c.d_model);
    }
    m.unembedding = detail::mat_from_json(t["unembed.W"], "unembed.W", c.d_model, c.vocab_size);
    return m;
}

inline void save_model(const Model& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << model_to_json(m).dump() << "\n";
    if (!out) throw DataError("write failed for '" + path + "'");
}

inline Model load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open model file '" + path + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("model file '" + path + "': " + e.what());
    }
    return model_from_json(doc);
}

} // namespace circuitkl
