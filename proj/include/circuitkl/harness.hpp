#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "circuitkl/ablation.hpp"
#include "circuitkl/circuit.hpp"
#include "circuitkl/errors.hpp"
#include "circuitkl/model.hpp"
#include "circuitkl/stats.hpp"
#include "circuitkl/tasks.hpp"

namespace circuitkl {

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct ReportToggles {
    bool summary = true;
    bool histogram = true;
    bool worst = true;
    bool heatmap = false;
};

struct RunConfig {
    std::string model_path;
    std::string circuit_path;
    std::string task;
    long long n_clean = 100;
    long long n_corrupt = 100;
    PairingMode pairing = PairingMode::Cross;
    uint64_t master_seed = 0;
    int workers = 1;
    std::string output_dir = ".";
    bool swap_intro = false;
    ReportToggles reports;
    int worst_k = 10;
    int histogram_bins = 100;
    std::array<std::string, 2> heatmap_fields = {"clean.object", "corrupt.object"};
    std::vector<std::string> heatmap_levels = {"max", "99.9", "99.99"};
};

inline void validate_run_config(const RunConfig& c) {
    if (c.model_path.empty()) throw UsageError("run config: model path is required");
    if (c.circuit_path.empty()) throw UsageError("run config: circuit path is required");
    if (c.task.empty()) throw UsageError("run config: task name is required");
    if (c.n_clean < 1) throw UsageError("run config: n_clean must be >= 1");
    if (c.n_corrupt < 1) throw UsageError("run config: n_corrupt must be >= 1");
    if (c.workers < 1) throw UsageError("run config: workers must be >= 1");
    if (c.worst_k < 1) throw UsageError("run config: worst_k must be >= 1");
    if (c.histogram_bins < 1) throw UsageError("run config: histogram_bins must be >= 1");
}

// Config file: a JSON object mirroring the field names above; any field may
// be omitted (CLI flags can fill it in afterwards); unknown keys are an
// error.
inline RunConfig run_config_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw UsageError("run config: top level must be an object");
    RunConfig c;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const std::string& k = it.key();
        const auto& v = it.value();
        try {
            if (k == "model") c.model_path = v.get<std::string>();
            else if (k == "circuit") c.circuit_path = v.get<std::string>();
            else if (k == "task") c.task = v.get<std::string>();
            else if (k == "n_clean") c.n_clean = v.get<long long>();
            else if (k == "n_corrupt") c.n_corrupt = v.get<long long>();
            else if (k == "pairing") c.pairing = parse_pairing_mode(v.get<std::string>());
            else if (k == "master_seed") c.master_seed = v.get<uint64_t>();
            else if (k == "workers") c.workers = v.get<int>();
            else if (k == "output_dir") c.output_dir = v.get<std::string>();
            else if (k == "swap_intro") c.swap_intro = v.get<bool>();
            else if (k == "worst_k") c.worst_k = v.get<int>();
            else if (k == "histogram_bins") c.histogram_bins = v.get<int>();
            else if (k == "heatmap_fields") {
                if (!v.is_array() || v.size() != 2)
                    throw UsageError("run config: heatmap_fields must be a 2-element array");
                c.heatmap_fields = {v[0].get<std::string>(), v[1].get<std::string>()};
            } else if (k == "heatmap_levels") {
                c.heatmap_levels.clear();
                for (const auto& lv : v) c.heatmap_levels.push_back(lv.get<std::string>());
            } else if (k == "reports") {
                if (!v.is_object()) throw UsageError("run config: reports must be an object");
                for (auto rt = v.begin(); rt != v.end(); ++rt) {
                    if (rt.key() == "summary") c.reports.summary = rt.value().get<bool>();
                    else if (rt.key() == "histogram") c.reports.histogram = rt.value().get<bool>();
                    else if (rt.key() == "worst") c.reports.worst = rt.value().get<bool>();
                    else if (rt.key() == "heatmap") c.reports.heatmap = rt.value().get<bool>();
                    else throw UsageError("run config: unknown report toggle '" + rt.key() + "'");
                }
            } else {
                throw UsageError("run config: unknown key '" + k + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw UsageError("run config: bad value for '" + k + "': " + e.what());
        }
    }
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open run config '" + path + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("run config '" + path + "': " + e.what());
    }
    return run_config_from_json(doc);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct KlSample {
    int clean_index = 0;
    int corrupt_index = 0;
    double kl_nats = 0.0;
    std::map<std::string, std::string> clean_fields;
    std::map<std::string, std::string> corrupt_fields;
};

struct EvaluationResult {
    std::vector<KlSample> samples;
    std::vector<PromptInstance> clean_prompts;
    std::vector<PromptInstance> corrupt_prompts;
    std::string samples_path; // empty when no file was written
};

namespace detail {

inline nlohmann::ordered_json samples_meta_json(const RunConfig& cfg, const Model& model,
                                                const Circuit& circ) {
    nlohmann::ordered_json run;
    run["task"] = cfg.task;
    run["n_clean"] = cfg.n_clean;
    run["n_corrupt"] = cfg.n_corrupt;
    run["pairing"] = cfg.pairing == PairingMode::Cross ? "cross" : "matched";
    run["master_seed"] = cfg.master_seed;
    run["swap_intro"] = cfg.swap_intro;
    run["model_config_hash"] = config_hash(model.config);
    run["circuit_edges"] = circ.edges.size();
    nlohmann::ordered_json meta;
    meta["format_version"] = 1;
    meta["run"] = std::move(run);
    return meta;
}

} // namespace detail

// Writes the samples file: one meta line, then one JSON record per pair in
// pair order. The content is a pure function of the run configuration and
// input files — worker count never appears in it, so re-running with a
// different worker count produces a byte-identical file.
inline void write_samples_file(const std::string& path, const RunConfig& cfg, const Model& model,
                               const Circuit& circ, const std::vector<KlSample>& samples) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << detail::samples_meta_json(cfg, model, circ).dump() << "\n";
    for (const KlSample& s : samples) {
        nlohmann::ordered_json rec;
        rec["clean_index"] = s.clean_index;
        rec["corrupt_index"] = s.corrupt_index;
        rec["kl_nats"] = s.kl_nats;
        rec["clean_fields"] = s.clean_fields;
        rec["corrupt_fields"] = s.corrupt_fields;
        out << rec.dump() << "\n";
    }
    if (!out) throw DataError("write failed for '" + path + "'");
}

struct LoadedSamples {
    std::string task;
    long long n_clean = 0;
    long long n_corrupt = 0;
    std::string pairing;
    uint64_t master_seed = 0;
    bool swap_intro = false;
    std::string model_config_hash;
    size_t circuit_edges = 0;
    std::vector<KlSample> samples;
};

inline LoadedSamples load_samples(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open samples file '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("samples file '" + path + "' is empty");
    LoadedSamples out;
    try {
        nlohmann::json meta = nlohmann::json::parse(line);
        if (!meta.contains("format_version") || meta["format_version"].get<int>() != 1)
            throw DataError("samples file: missing or unsupported format_version");
        const auto& run = meta.at("run");
        out.task = run.at("task").get<std::string>();
        out.n_clean = run.at("n_clean").get<long long>();
        out.n_corrupt = run.at("n_corrupt").get<long long>();
        out.pairing = run.at("pairing").get<std::string>();
        out.master_seed = run.at("master_seed").get<uint64_t>();
        out.swap_intro = run.at("swap_intro").get<bool>();
        out.model_config_hash = run.at("model_config_hash").get<std::string>();
        out.circuit_edges = run.at("circuit_edges").get<size_t>();
        long long lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            nlohmann::json rec = nlohmann::json::parse(line);
            KlSample s;
            s.clean_index = rec.at("clean_index").get<int>();
            s.corrupt_index = rec.at("corrupt_index").get<int>();
            s.kl_nats = rec.at("kl_nats").get<double>();
            for (auto it = rec.at("clean_fields").begin(); it != rec.at("clean_fields").end(); ++it)
                s.clean_fields[it.key()] = it.value().get<std::string>();
            for (auto it = rec.at("corrupt_fields").begin(); it != rec.at("corrupt_fields").end();
                 ++it)
                s.corrupt_fields[it.key()] = it.value().get<std::string>();
            out.samples.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("samples file '" + path + "': " + e.what());
    }
    return out;
}

// Full evaluation: load inputs, generate prompts, pair them, run the patched
// forward for every pair, and (when an output directory is set) write the
// samples file.
inline EvaluationResult run_evaluation(const RunConfig& cfg) {
    validate_run_config(cfg);
    Model model = load_model(cfg.model_path);
    Circuit circ = load_circuit(cfg.circuit_path, model.config);
    TaskTemplate tmpl = builtin_template(cfg.task, cfg.swap_intro);
    Tokenizer tok = build_tokenizer(tmpl);
    if (static_cast<int>(tok.words.size()) > model.config.vocab_size)
        throw DataError("model vocabulary (" + std::to_string(model.config.vocab_size) +
                        ") is smaller than task '" + cfg.task + "' vocabulary (" +
                        std::to_string(tok.words.size()) + ")");

    EvaluationResult res;
    res.clean_prompts = generate_prompts(tmpl, cfg.n_clean, cfg.master_seed, Role::Clean);
    res.corrupt_prompts = generate_prompts(tmpl, cfg.n_corrupt, cfg.master_seed, Role::Corrupt);
    if (static_cast<int>(res.clean_prompts[0].tokens.size()) > model.config.max_seq_len)
        throw DataError("task '" + cfg.task + "' prompts have " +
                        std::to_string(res.clean_prompts[0].tokens.size()) +
                        " tokens but the model's max_seq_len is " +
                        std::to_string(model.config.max_seq_len));

    std::vector<std::pair<int, int>> index_pairs =
        generate_pairs(res.clean_prompts, res.corrupt_prompts, cfg.pairing, tmpl);
    std::vector<TokenPair> token_pairs;
    token_pairs.reserve(index_pairs.size());
    for (auto [i, j] : index_pairs)
        token_pairs.push_back(TokenPair{res.clean_prompts[static_cast<size_t>(i)].tokens,
                                        res.corrupt_prompts[static_cast<size_t>(j)].tokens});

    BatchOptions opts;
    opts.workers = cfg.workers;
    opts.memoize = true;
    std::vector<double> kls = batch_patched_kl(model, circ, token_pairs, opts);

    res.samples.reserve(index_pairs.size());
    for (size_t p = 0; p < index_pairs.size(); ++p) {
        KlSample s;
        s.clean_index = index_pairs[p].first;
        s.corrupt_index = index_pairs[p].second;
        s.kl_nats = kls[p];
        s.clean_fields = res.clean_prompts[static_cast<size_t>(s.clean_index)].fields;
        s.corrupt_fields = res.corrupt_prompts[static_cast<size_t>(s.corrupt_index)].fields;
        res.samples.push_back(std::move(s));
    }

    if (!cfg.output_dir.empty()) {
        std::filesystem::create_directories(cfg.output_dir);
        res.samples_path = (std::filesystem::path(cfg.output_dir) / "samples.jsonl").string();
        write_samples_file(res.samples_path, cfg, model, circ, res.samples);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Histogram
// ---------------------------------------------------------------------------

struct HistogramData {
    int bins = 0;          // number of bins actually used
    double max_value = 0.0;
    double bin_width = 0.0; // 0 when all values are 0 (single degenerate bin)
    std::vector<long long> counts;
};

// Equal-width bins spanning [0, max]; the last bin includes its upper edge.
// When every value is 0 the histogram collapses to a single [0, 0] bin.
inline HistogramData histogram(std::span<const double> values, int bins) {
    if (values.empty()) throw DataError("histogram: no values");
    if (bins < 1) throw UsageError("histogram: bin count must be >= 1");
    double mx = 0.0;
    for (double v : values) {
        if (v < 0.0) throw DataError("histogram: negative value");
        if (v > mx) mx = v;
    }
    HistogramData h;
    h.max_value = mx;
    if (mx == 0.0) {
        h.bins = 1;
        h.bin_width = 0.0;
        h.counts.assign(1, static_cast<long long>(values.size()));
        return h;
    }
    h.bins = bins;
    h.bin_width = mx / bins;
    h.counts.assign(static_cast<size_t>(bins), 0);
    for (double v : values) {
        int idx = static_cast<int>(v / h.bin_width);
        if (idx >= bins) idx = bins - 1; // v == max (or fp edge) goes to the last bin
        ++h.counts[static_cast<size_t>(idx)];
    }
    return h;
}

// ---------------------------------------------------------------------------
// Worst pairs
// ---------------------------------------------------------------------------

struct TokenLogit {
    std::string token;
    double logit = 0.0;
};

struct WorstRow {
    int clean_index = 0;
    int corrupt_index = 0;
    std::string clean_text;
    std::string corrupt_text;
    double kl_nats = 0.0;
    std::vector<TokenLogit> model_top;   // up to 3, by final-position logit
    std::vector<TokenLogit> circuit_top; // up to 3
};

namespace detail {

inline std::vector<TokenLogit> top_logits(const Matrix& logits, int position, const Tokenizer& tok,
                                          int n) {
    const double* row = logits.row(position);
    std::vector<int> idx(static_cast<size_t>(logits.cols));
    std::iota(idx.begin(), idx.end(), 0);
    int take = std::min(n, logits.cols);
    std::partial_sort(idx.begin(), idx.begin() + take, idx.end(), [&](int a, int b) {
        if (row[a] != row[b]) return row[a] > row[b];
        return a < b;
    });
    std::vector<TokenLogit> out;
    for (int i = 0; i < take; ++i) {
        std::string word = idx[static_cast<size_t>(i)] < static_cast<int>(tok.words.size())
                               ? tok.words[static_cast<size_t>(idx[static_cast<size_t>(i)])]
                               : "<unused:" + std::to_string(idx[static_cast<size_t>(i)]) + ">";
        out.push_back(TokenLogit{word, row[idx[static_cast<size_t>(i)]]});
    }
    return out;
}

} // namespace detail

// The k pairs with the largest divergence (ties broken by ascending pair
// index), each re-evaluated directly so the reported logits come from a
// fresh patched forward rather than anything cached during the batch run.
inline std::vector<WorstRow> worst_rows(const Model& model, const Circuit& circ,
                                        const std::vector<KlSample>& samples,
                                        const std::vector<PromptInstance>& clean_prompts,
                                        const std::vector<PromptInstance>& corrupt_prompts,
                                        const Tokenizer& tok, int k) {
    if (k < 1) throw UsageError("worst_rows: k must be >= 1");
    if (samples.empty()) throw DataError("worst_rows: no samples");
    std::vector<size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    size_t take = std::min(static_cast<size_t>(k), samples.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(take), order.end(),
                      [&](size_t a, size_t b) {
                          if (samples[a].kl_nats != samples[b].kl_nats)
                              return samples[a].kl_nats > samples[b].kl_nats;
                          if (samples[a].clean_index != samples[b].clean_index)
                              return samples[a].clean_index < samples[b].clean_index;
                          return samples[a].corrupt_index < samples[b].corrupt_index;
                      });

    std::vector<WorstRow> rows;
    for (size_t r = 0; r < take; ++r) {
        const KlSample& s = samples[order[r]];
        const PromptInstance& cp = clean_prompts.at(static_cast<size_t>(s.clean_index));
        const PromptInstance& kp = corrupt_prompts.at(static_cast<size_t>(s.corrupt_index));
        PatchedRunResult rr = patched_forward(model, circ, cp.tokens, kp.tokens);
        ActivationCache clean_cache = forward(model, cp.tokens);
        int last = static_cast<int>(cp.tokens.size()) - 1;
        WorstRow w;
        w.clean_index = s.clean_index;
        w.corrupt_index = s.corrupt_index;
        w.clean_text = cp.text;
        w.corrupt_text = kp.text;
        w.kl_nats = s.kl_nats;
        w.model_top = detail::top_logits(clean_cache.logits, last, tok, 3);
        w.circuit_top = detail::top_logits(rr.patched_logits, last, tok, 3);
        rows.push_back(std::move(w));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Grouped percentiles
// ---------------------------------------------------------------------------

struct FieldSpec {
    Role side = Role::Clean;
    std::string name;
};

// "clean.<field>" or "corrupt.<field>".
inline FieldSpec parse_field_spec(const std::string& s) {
    auto dot = s.find('.');
    if (dot == std::string::npos)
        throw UsageError("field spec '" + s + "': expected 'clean.<field>' or 'corrupt.<field>'");
    std::string side = s.substr(0, dot);
    FieldSpec f;
    f.name = s.substr(dot + 1);
    if (side == "clean") f.side = Role::Clean;
    else if (side == "corrupt") f.side = Role::Corrupt;
    else throw UsageError("field spec '" + s + "': side must be 'clean' or 'corrupt'");
    if (f.name.empty()) throw UsageError("field spec '" + s + "': empty field name");
    return f;
}

enum class PercentileLevel { Max, P999, P9999 };

inline PercentileLevel parse_percentile_level(const std::string& s) {
    if (s == "max") return PercentileLevel::Max;
    if (s == "99.9") return PercentileLevel::P999;
    if (s == "99.99") return PercentileLevel::P9999;
    throw UsageError("unknown percentile level '" + s + "' (expected max, 99.9 or 99.99)");
}

inline std::string percentile_level_name(PercentileLevel l) {
    switch (l) {
    case PercentileLevel::Max: return "max";
    case PercentileLevel::P999: return "99.9";
    case PercentileLevel::P9999: return "99.99";
    }
    throw UsageError("invalid percentile level");
}

struct HeatmapCell {
    std::string value_a;
    std::string value_b;
    PercentileLevel level = PercentileLevel::Max;
    double kl_nats = 0.0;
    long long count = 0;
};

// Group samples by a pair of prompt fields and report per-group tail levels.
// Cells are ordered by (value_a, value_b) lexicographically, levels in the
// order given.
inline std::vector<HeatmapCell> group_percentiles(const std::vector<KlSample>& samples,
                                                  const FieldSpec& a, const FieldSpec& b,
                                                  const std::vector<PercentileLevel>& levels) {
    if (samples.empty()) throw DataError("group_percentiles: no samples");
    if (levels.empty()) throw UsageError("group_percentiles: no levels requested");
    auto field_of = [](const KlSample& s, const FieldSpec& f) -> const std::string& {
        const auto& m = f.side == Role::Clean ? s.clean_fields : s.corrupt_fields;
        auto it = m.find(f.name);
        if (it == m.end())
            throw DataError("group_percentiles: samples have no " +
                            std::string(f.side == Role::Clean ? "clean" : "corrupt") + " field '" +
                            f.name + "'");
        return it->second;
    };
    std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
    for (const KlSample& s : samples)
        groups[{field_of(s, a), field_of(s, b)}].push_back(s.kl_nats);

    std::vector<HeatmapCell> cells;
    for (auto& [key, vals] : groups) {
        std::sort(vals.begin(), vals.end());
        for (PercentileLevel level : levels) {
            HeatmapCell c;
            c.value_a = key.first;
            c.value_b = key.second;
            c.level = level;
            c.count = static_cast<long long>(vals.size());
            switch (level) {
            case PercentileLevel::Max: c.kl_nats = vals.back(); break;
            case PercentileLevel::P999: c.kl_nats = quantile_sorted(vals, 0.999); break;
            case PercentileLevel::P9999: c.kl_nats = quantile_sorted(vals, 0.9999); break;
            }
            cells.push_back(std::move(c));
        }
    }
    return cells;
}

// ---------------------------------------------------------------------------
// CSV reports
// ---------------------------------------------------------------------------

namespace detail {

// Shortest round-trip formatting (what the JSON library emits for doubles),
// so a parsed-back CSV value is bit-identical to the one computed.
inline std::string fmt_double(double v) { return nlohmann::json(v).dump(); }

inline std::string csv_quote(const std::string& s) {
    bool need = s.find_first_of(",\"\n") != std::string::npos;
    if (!need) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

} // namespace detail

inline void write_summary_csv(const SummaryTable& t, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << "stat,value,z_score\n";
    out << "count," << t.count << ",\n";
    out << "mean," << detail::fmt_double(t.mean) << ",\n";
    out << "std," << detail::fmt_double(t.stddev) << ",\n";
    for (size_t i = 0; i < SummaryTable::kNumLevels; ++i)
        out << SummaryTable::level_names[i] << "," << detail::fmt_double(t.quantiles[i]) << ","
            << detail::fmt_double(t.z_scores[i]) << "\n";
    if (!out) throw DataError("write failed for '" + path + "'");
}

inline void write_histogram_csv(const HistogramData& h, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << "bin_start,bin_end,count\n";
    for (int i = 0; i < h.bins; ++i) {
        double lo = h.bin_width * i;
        double hi = i == h.bins - 1 ? h.max_value : h.bin_width * (i + 1);
        out << detail::fmt_double(lo) << "," << detail::fmt_double(hi) << ","
            << h.counts[static_cast<size_t>(i)] << "\n";
    }
    if (!out) throw DataError("write failed for '" + path + "'");
}

inline void write_worst_csv(const std::vector<WorstRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << "rank,clean_index,corrupt_index,clean_text,corrupt_text,kl_nats";
    for (const char* side : {"model", "circuit"})
        for (int i = 1; i <= 3; ++i)
            out << "," << side << "_token_" << i << "," << side << "_logit_" << i;
    out << "\n";
    for (size_t r = 0; r < rows.size(); ++r) {
        const WorstRow& w = rows[r];
        out << (r + 1) << "," << w.clean_index << "," << w.corrupt_index << ","
            << detail::csv_quote(w.clean_text) << "," << detail::csv_quote(w.corrupt_text) << ","
            << detail::fmt_double(w.kl_nats);
        for (const auto* top : {&w.model_top, &w.circuit_top}) {
            for (int i = 0; i < 3; ++i) {
                if (i < static_cast<int>(top->size()))
                    out << "," << detail::csv_quote((*top)[static_cast<size_t>(i)].token) << ","
                        << detail::fmt_double((*top)[static_cast<size_t>(i)].logit);
                else
                    out << ",,";
            }
        }
        out << "\n";
    }
    if (!out) throw DataError("write failed for '" + path + "'");
}

inline void write_heatmap_csv(const std::vector<HeatmapCell>& cells, const FieldSpec& a,
                              const FieldSpec& b, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    std::string ha = (a.side == Role::Clean ? "clean." : "corrupt.") + a.name;
    std::string hb = (b.side == Role::Clean ? "clean." : "corrupt.") + b.name;
    out << detail::csv_quote(ha) << "," << detail::csv_quote(hb) << ",level,kl_nats,count\n";
    for (const HeatmapCell& c : cells)
        out << detail::csv_quote(c.value_a) << "," << detail::csv_quote(c.value_b) << ","
            << percentile_level_name(c.level) << "," << detail::fmt_double(c.kl_nats) << ","
            << c.count << "\n";
    if (!out) throw DataError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Bound tables
// ---------------------------------------------------------------------------

struct BoundQuery {
    double target = 0.0;     // percentile being bounded
    double confidence = 0.0; // required success probability
    double margin = 0.0;     // percentile overshoot
};

struct BoundsRow {
    BoundQuery query;
    long long exact_n = 0;
    long long chernoff_n = 0;
    long long hoeffding_n = 0;
};

// The six reference queries of the pinned sample-size table.
inline std::vector<BoundQuery> default_bound_queries() {
    return {{0.95, 0.95, 0.01},  {0.95, 0.99, 0.01},  {0.95, 0.95, 0.04},
            {0.99, 0.95, 0.005}, {0.99, 0.99, 0.005}, {0.999, 0.999, 0.0005}};
}

inline std::vector<BoundsRow> bounds_table(const std::vector<BoundQuery>& queries) {
    std::vector<BoundsRow> rows;
    rows.reserve(queries.size());
    for (const BoundQuery& q : queries) {
        BoundsRow r;
        r.query = q;
        r.exact_n = min_samples(q.target, q.confidence, q.margin, BoundMethod::Exact);
        r.chernoff_n = min_samples(q.target, q.confidence, q.margin, BoundMethod::Chernoff);
        r.hoeffding_n = min_samples(q.target, q.confidence, q.margin, BoundMethod::Hoeffding);
        rows.push_back(r);
    }
    return rows;
}

inline void write_bounds_csv(const std::vector<BoundsRow>& rows, std::ostream& out) {
    out << "target,confidence,margin,exact,chernoff,hoeffding\n";
    for (const BoundsRow& r : rows)
        out << detail::fmt_double(r.query.target) << "," << detail::fmt_double(r.query.confidence)
            << "," << detail::fmt_double(r.query.margin) << "," << r.exact_n << "," << r.chernoff_n
            << "," << r.hoeffding_n << "\n";
}

} // namespace circuitkl
