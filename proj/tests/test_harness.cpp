#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "circuitkl/circuitkl.hpp"
#include "temp_dir.hpp"

using namespace circuitkl;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) out.push_back(line);
    return out;
}

// A small name-task setup on disk: model sized for the task's vocabulary,
// plus a full and a half circuit.
struct Fixture {
    TempDir tmp;
    ModelConfig config;
    std::string model_path, full_path, half_path;

    Fixture() {
        TaskTemplate t = builtin_template("ioi");
        Tokenizer tok = build_tokenizer(t);
        config.n_layers = 1;
        config.n_heads = 2;
        config.d_model = 16;
        config.d_head = 4;
        config.use_mlp = false;
        config.d_mlp = 0;
        config.vocab_size = static_cast<int>(tok.words.size());
        config.max_seq_len = 16;
        config.use_layernorm = true;
        Model model = random_model(config, 2024);
        model_path = tmp.file("model.json");
        save_model(model, model_path);

        full_path = tmp.file("full.json");
        save_circuit(full_circuit(config), full_path);

        Circuit half = empty_circuit(config);
        std::vector<EdgeId> all = enumerate_edges(config);
        for (size_t i = 0; i < all.size(); i += 2) half.edges.insert(all[i]);
        half_path = tmp.file("half.json");
        save_circuit(half, half_path);
    }

    RunConfig base_config(const std::string& circuit, const std::string& out_dir) const {
        RunConfig cfg;
        cfg.model_path = model_path;
        cfg.circuit_path = circuit;
        cfg.task = "ioi";
        cfg.n_clean = 6;
        cfg.n_corrupt = 4;
        cfg.master_seed = 5;
        cfg.output_dir = out_dir;
        return cfg;
    }
};

} // namespace

TEST_CASE("run config parsing") {
    RunConfig c = run_config_from_json(nlohmann::json::parse(R"({
        "model": "m.json", "circuit": "c.json", "task": "ioi",
        "n_clean": 7, "n_corrupt": 3, "pairing": "matched",
        "master_seed": 42, "workers": 2, "output_dir": "out",
        "swap_intro": true, "worst_k": 5, "histogram_bins": 20,
        "heatmap_fields": ["clean.place", "corrupt.object"],
        "heatmap_levels": ["max"],
        "reports": {"summary": true, "heatmap": true, "worst": false}
    })"));
    CHECK(c.model_path == "m.json");
    CHECK(c.n_clean == 7);
    CHECK(c.pairing == PairingMode::Matched);
    CHECK(c.master_seed == 42);
    CHECK(c.swap_intro);
    CHECK(c.reports.heatmap);
    CHECK_FALSE(c.reports.worst);
    CHECK(c.heatmap_fields[0] == "clean.place");

    CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"modle": "x"})")), UsageError);
    CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"pairing": "zip"})")), UsageError);
    CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"n_clean": "many"})")),
                    UsageError);
    CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"([1,2])")), UsageError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), UsageError);

    RunConfig bad;
    bad.model_path = "m";
    bad.circuit_path = "c";
    bad.task = "ioi";
    bad.workers = 0;
    CHECK_THROWS_AS(validate_run_config(bad), UsageError);
    bad.workers = 1;
    bad.n_clean = 0;
    CHECK_THROWS_AS(validate_run_config(bad), UsageError);
}

TEST_CASE("field specs and percentile levels") {
    FieldSpec f = parse_field_spec("clean.object");
    CHECK(f.side == Role::Clean);
    CHECK(f.name == "object");
    CHECK(parse_field_spec("corrupt.century").side == Role::Corrupt);
    CHECK_THROWS_AS(parse_field_spec("object"), UsageError);
    CHECK_THROWS_AS(parse_field_spec("model.object"), UsageError);
    CHECK_THROWS_AS(parse_field_spec("clean."), UsageError);
    CHECK(parse_percentile_level("max") == PercentileLevel::Max);
    CHECK(parse_percentile_level("99.9") == PercentileLevel::P999);
    CHECK(parse_percentile_level("99.99") == PercentileLevel::P9999);
    CHECK_THROWS_AS(parse_percentile_level("95"), UsageError);
}

TEST_CASE("evaluation produces one sample per pair in order") {
    Fixture fx;
    RunConfig cfg = fx.base_config(fx.half_path, fx.tmp.file("out"));
    EvaluationResult res = run_evaluation(cfg);
    REQUIRE(res.samples.size() == 24); // 6 x 4 cross
    for (size_t p = 0; p < res.samples.size(); ++p) {
        CHECK(res.samples[p].clean_index == static_cast<int>(p / 4));
        CHECK(res.samples[p].corrupt_index == static_cast<int>(p % 4));
        CHECK(res.samples[p].kl_nats >= 0.0);
        CHECK(res.samples[p].clean_fields.count("name1") == 1);
        CHECK(res.samples[p].corrupt_fields.count("name3") == 1);
    }
    // A genuinely partial circuit diverges somewhere.
    double mx = 0.0;
    for (const auto& s : res.samples) mx = std::max(mx, s.kl_nats);
    CHECK(mx > 0.0);
    CHECK_FALSE(res.samples_path.empty());
}

TEST_CASE("the full circuit shows zero divergence everywhere") {
    Fixture fx;
    RunConfig cfg = fx.base_config(fx.full_path, fx.tmp.file("out"));
    EvaluationResult res = run_evaluation(cfg);
    double mx = 0.0;
    for (const auto& s : res.samples) mx = std::max(mx, s.kl_nats);
    CHECK(mx < 1e-9);
    // All-equal values cannot be standardized; the summary must refuse.
    std::vector<double> kls;
    for (const auto& s : res.samples) kls.push_back(s.kl_nats);
    CHECK_THROWS_AS(summarize(kls), DataError);
}

TEST_CASE("samples files are byte-identical across worker counts") {
    Fixture fx;
    std::string content1, content4;
    {
        RunConfig cfg = fx.base_config(fx.half_path, fx.tmp.file("w1"));
        cfg.workers = 1;
        content1 = slurp(run_evaluation(cfg).samples_path);
    }
    {
        RunConfig cfg = fx.base_config(fx.half_path, fx.tmp.file("w4"));
        cfg.workers = 4;
        content4 = slurp(run_evaluation(cfg).samples_path);
    }
    CHECK(content1 == content4);
    // The file never mentions the worker count, which is what makes the
    // byte-identity above possible.
    CHECK(content1.find("workers") == std::string::npos);
}

TEST_CASE("samples files round trip through load_samples") {
    Fixture fx;
    RunConfig cfg = fx.base_config(fx.half_path, fx.tmp.file("out"));
    EvaluationResult res = run_evaluation(cfg);
    LoadedSamples back = load_samples(res.samples_path);
    CHECK(back.task == "ioi");
    CHECK(back.n_clean == 6);
    CHECK(back.n_corrupt == 4);
    CHECK(back.pairing == "cross");
    CHECK(back.master_seed == 5);
    CHECK_FALSE(back.swap_intro);
    CHECK(back.model_config_hash == config_hash(fx.config));
    REQUIRE(back.samples.size() == res.samples.size());
    for (size_t i = 0; i < back.samples.size(); ++i) {
        CHECK(back.samples[i].clean_index == res.samples[i].clean_index);
        CHECK(back.samples[i].corrupt_index == res.samples[i].corrupt_index);
        CHECK(back.samples[i].kl_nats == res.samples[i].kl_nats); // lossless doubles
        CHECK(back.samples[i].clean_fields == res.samples[i].clean_fields);
    }
    CHECK_THROWS_AS(load_samples(fx.tmp.file("nope.jsonl")), DataError);
}

TEST_CASE("histogram") {
    std::vector<double> v = {0.0, 1.0, 2.0, 4.0};
    HistogramData h = histogram(v, 4);
    CHECK(h.bins == 4);
    CHECK(h.max_value == 4.0);
    CHECK(h.bin_width == 1.0);
    CHECK(h.counts == std::vector<long long>{1, 1, 1, 1});

    std::vector<double> zeros(5, 0.0);
    HistogramData hz = histogram(zeros, 10);
    CHECK(hz.bins == 1);
    CHECK(hz.counts == std::vector<long long>{5});

    std::vector<double> one = {3.0};
    HistogramData h1 = histogram(one, 2);
    CHECK(h1.counts == std::vector<long long>{0, 1}); // max lands in the last bin

    long long total = 0;
    for (long long c : h.counts) total += c;
    CHECK(total == 4);

    CHECK_THROWS_AS(histogram(std::vector<double>{}, 4), DataError);
    CHECK_THROWS_AS(histogram(v, 0), UsageError);
    std::vector<double> neg = {-1.0};
    CHECK_THROWS_AS(histogram(neg, 4), DataError);
}

TEST_CASE("worst rows rank by divergence with index tie-breaks") {
    Fixture fx;
    RunConfig cfg = fx.base_config(fx.half_path, fx.tmp.file("out"));
    EvaluationResult res = run_evaluation(cfg);
    Model model = load_model(fx.model_path);
    Circuit half = load_circuit(fx.half_path, model.config);
    Tokenizer tok = build_tokenizer(builtin_template("ioi"));

    auto rows = worst_rows(model, half, res.samples, res.clean_prompts, res.corrupt_prompts, tok, 5);
    REQUIRE(rows.size() == 5);
    for (size_t i = 1; i < rows.size(); ++i) CHECK(rows[i - 1].kl_nats >= rows[i].kl_nats);
    // The top row really is the max.
    double mx = 0.0;
    for (const auto& s : res.samples) mx = std::max(mx, s.kl_nats);
    CHECK(rows[0].kl_nats == mx);
    for (const auto& r : rows) {
        CHECK(r.clean_text == res.clean_prompts[static_cast<size_t>(r.clean_index)].text);
        CHECK(r.corrupt_text == res.corrupt_prompts[static_cast<size_t>(r.corrupt_index)].text);
        REQUIRE(r.model_top.size() == 3);
        REQUIRE(r.circuit_top.size() == 3);
        CHECK(r.model_top[0].logit >= r.model_top[1].logit);
        CHECK(r.model_top[1].logit >= r.model_top[2].logit);
        // Reported logits come from a fresh run of the same pair.
        PatchedRunResult rr = patched_forward(
            model, half, res.clean_prompts[static_cast<size_t>(r.clean_index)].tokens,
            res.corrupt_prompts[static_cast<size_t>(r.corrupt_index)].tokens);
        CHECK(rr.kl_nats == r.kl_nats);
        int last = static_cast<int>(res.clean_prompts[0].tokens.size()) - 1;
        double top = -1e300;
        for (int j = 0; j < rr.patched_logits.cols; ++j)
            top = std::max(top, rr.patched_logits(last, j));
        CHECK(r.circuit_top[0].logit == top);
    }

    // Asking for more rows than samples returns them all.
    auto all_rows =
        worst_rows(model, half, res.samples, res.clean_prompts, res.corrupt_prompts, tok, 999);
    CHECK(all_rows.size() == res.samples.size());

    // Ties break by ascending clean then corrupt index.
    std::vector<KlSample> tied(res.samples.begin(), res.samples.begin() + 4);
    for (auto& s : tied) s.kl_nats = 1.0;
    auto tied_rows =
        worst_rows(model, half, tied, res.clean_prompts, res.corrupt_prompts, tok, 4);
    for (size_t i = 1; i < tied_rows.size(); ++i) {
        bool ordered = std::make_pair(tied_rows[i - 1].clean_index, tied_rows[i - 1].corrupt_index) <
                       std::make_pair(tied_rows[i].clean_index, tied_rows[i].corrupt_index);
        CHECK(ordered);
    }

    CHECK_THROWS_AS(
        worst_rows(model, half, res.samples, res.clean_prompts, res.corrupt_prompts, tok, 0),
        UsageError);
    CHECK_THROWS_AS(worst_rows(model, half, {}, res.clean_prompts, res.corrupt_prompts, tok, 3),
                    DataError);
}

TEST_CASE("grouped percentiles match a direct scan") {
    std::vector<KlSample> samples;
    const char* objects[] = {"ring", "kiss", "bone"};
    for (int i = 0; i < 60; ++i) {
        KlSample s;
        s.clean_index = i;
        s.corrupt_index = 0;
        s.kl_nats = (i * 37 % 101) / 10.0;
        s.clean_fields["object"] = objects[i % 3];
        s.corrupt_fields["object"] = objects[(i / 3) % 2];
        samples.push_back(s);
    }
    FieldSpec a = parse_field_spec("clean.object");
    FieldSpec b = parse_field_spec("corrupt.object");
    auto cells = group_percentiles(samples, a, b, {PercentileLevel::Max, PercentileLevel::P999});

    // Oracle: direct max per group via linear scan.
    std::map<std::pair<std::string, std::string>, double> want_max;
    std::map<std::pair<std::string, std::string>, long long> want_count;
    for (const auto& s : samples) {
        auto key = std::make_pair(s.clean_fields.at("object"), s.corrupt_fields.at("object"));
        auto [it, fresh] = want_max.try_emplace(key, s.kl_nats);
        if (!fresh) it->second = std::max(it->second, s.kl_nats);
        ++want_count[key];
    }
    REQUIRE(cells.size() == want_max.size() * 2);
    for (size_t i = 0; i < cells.size(); i += 2) {
        const HeatmapCell& mx = cells[i];
        const HeatmapCell& p999 = cells[i + 1];
        auto key = std::make_pair(mx.value_a, mx.value_b);
        CHECK(mx.level == PercentileLevel::Max);
        CHECK(mx.kl_nats == want_max.at(key));
        CHECK(mx.count == want_count.at(key));
        CHECK(p999.level == PercentileLevel::P999);
        CHECK(p999.kl_nats <= mx.kl_nats); // a percentile never exceeds the max
        CHECK(p999.value_a == mx.value_a);
    }
    // Lexicographic cell order.
    for (size_t i = 2; i < cells.size(); i += 2) {
        auto prev = std::make_pair(cells[i - 2].value_a, cells[i - 2].value_b);
        auto cur = std::make_pair(cells[i].value_a, cells[i].value_b);
        CHECK(prev < cur);
    }

    CHECK_THROWS_AS(group_percentiles(samples, parse_field_spec("clean.nope"), b,
                                      {PercentileLevel::Max}),
                    DataError);
    CHECK_THROWS_AS(group_percentiles({}, a, b, {PercentileLevel::Max}), DataError);
    CHECK_THROWS_AS(group_percentiles(samples, a, b, {}), UsageError);
}

TEST_CASE("summary CSV layout") {
    TempDir tmp;
    std::vector<double> v(100);
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
    SummaryTable t = summarize(v);
    std::string path = tmp.file("summary.csv");
    write_summary_csv(t, path);
    auto lines = lines_of(slurp(path));
    REQUIRE(lines.size() == 13); // header + count/mean/std + 9 quantile rows
    CHECK(lines[0] == "stat,value,z_score");
    CHECK(lines[1] == "count,100,");
    CHECK(lines[2].rfind("mean,", 0) == 0);
    CHECK(lines[3].rfind("std,", 0) == 0);
    CHECK(lines[4].rfind("min,", 0) == 0);
    CHECK(lines[12].rfind("max,", 0) == 0);
    // Values round trip through the text exactly.
    auto mean_field = lines[2].substr(5, lines[2].size() - 6);
    CHECK(std::stod(mean_field) == t.mean);
}

TEST_CASE("histogram CSV layout") {
    TempDir tmp;
    std::vector<double> v = {0.0, 0.5, 1.0, 2.0};
    HistogramData h = histogram(v, 4);
    std::string path = tmp.file("hist.csv");
    write_histogram_csv(h, path);
    auto lines = lines_of(slurp(path));
    REQUIRE(lines.size() == 5);
    CHECK(lines[0] == "bin_start,bin_end,count");
    CHECK(lines[1] == "0.0,0.5,1");
    CHECK(lines[2] == "0.5,1.0,1");
    CHECK(lines[4] == "1.5,2.0,1"); // last bin ends at the true max
}

TEST_CASE("worst CSV quotes free text") {
    TempDir tmp;
    WorstRow w;
    w.clean_index = 1;
    w.corrupt_index = 2;
    w.clean_text = "has, a comma";
    w.corrupt_text = "has \"quotes\"";
    w.kl_nats = 0.5;
    w.model_top = {{"to", 1.5}, {"a", 0.5}};
    w.circuit_top = {{"and", 2.0}};
    std::string path = tmp.file("worst.csv");
    write_worst_csv({w}, path);
    auto lines = lines_of(slurp(path));
    REQUIRE(lines.size() == 2);
    CHECK(lines[0].rfind("rank,clean_index,corrupt_index,clean_text,corrupt_text,kl_nats", 0) == 0);
    CHECK_THAT(lines[1], Catch::Matchers::ContainsSubstring("\"has, a comma\""));
    CHECK_THAT(lines[1], Catch::Matchers::ContainsSubstring("\"has \"\"quotes\"\"\""));
    // Short top lists pad with empty cells: 6 fixed + 2x3 token/logit pairs.
    CHECK(std::count(lines[1].begin(), lines[1].end(), ',') >= 17);
}

TEST_CASE("heatmap CSV layout") {
    TempDir tmp;
    std::vector<KlSample> samples;
    KlSample s;
    s.kl_nats = 1.0;
    s.clean_fields["object"] = "ring";
    s.corrupt_fields["object"] = "bone";
    samples.push_back(s);
    auto cells = group_percentiles(samples, parse_field_spec("clean.object"),
                                   parse_field_spec("corrupt.object"), {PercentileLevel::Max});
    std::string path = tmp.file("heat.csv");
    write_heatmap_csv(cells, parse_field_spec("clean.object"), parse_field_spec("corrupt.object"),
                      path);
    auto lines = lines_of(slurp(path));
    REQUIRE(lines.size() == 2);
    CHECK(lines[0] == "clean.object,corrupt.object,level,kl_nats,count");
    CHECK(lines[1] == "ring,bone,max,1.0,1");
}

TEST_CASE("bounds table reproduces the pinned values") {
    auto rows = bounds_table(default_bound_queries());
    REQUIRE(rows.size() == 6);
    CHECK(rows[0].exact_n == 1282);
    CHECK(rows[0].chernoff_n == 2659);
    CHECK(rows[0].hoeffding_n == 14979);
    CHECK(rows[2].exact_n == 59);
    CHECK(rows[2].chernoff_n == 122);
    CHECK(rows[2].hoeffding_n == 937);
    CHECK(rows[5].exact_n == 31236);

    auto single = bounds_table({{0.95, 0.95, 0.04}});
    REQUIRE(single.size() == 1);
    CHECK(single[0].exact_n == 59);

    std::ostringstream out;
    write_bounds_csv(rows, out);
    auto lines = lines_of(out.str());
    REQUIRE(lines.size() == 7);
    CHECK(lines[0] == "target,confidence,margin,exact,chernoff,hoeffding");
    CHECK(lines[1] == "0.95,0.95,0.01,1282,2659,14979");
    CHECK(lines[6] == "0.999,0.999,0.0005,31236,44987,13815511");
}
