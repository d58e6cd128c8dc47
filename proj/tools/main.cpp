// circuitkl command-line interface.
//
// Subcommands:
//   make-model  write a seeded random toy model file
//   gen-data    write a task's prompt dataset and vocabulary
//   eval        run a circuit evaluation, writing a samples file
//   report      turn a samples file into CSV reports
//   bounds      print the sample-size bound table
//
// Exit codes: 0 success, 1 usage/config error, 2 data error.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "circuitkl/circuitkl.hpp"

namespace ckl = circuitkl;

namespace {

struct MakeModelArgs {
    int layers = 2;
    int heads = 4;
    int d_model = 32;
    int d_head = 8;
    bool mlp = false;
    int d_mlp = 0;
    bool no_layernorm = false;
    int vocab = 0;
    std::string task;
    int max_seq = 32;
    uint64_t seed = 0;
    std::string out;
};

int cmd_make_model(const MakeModelArgs& a) {
    ckl::ModelConfig cfg;
    cfg.n_layers = a.layers;
    cfg.n_heads = a.heads;
    cfg.d_model = a.d_model;
    cfg.d_head = a.d_head;
    cfg.use_mlp = a.mlp;
    cfg.d_mlp = a.mlp ? (a.d_mlp > 0 ? a.d_mlp : 4 * a.d_model) : 0;
    cfg.max_seq_len = a.max_seq;
    cfg.use_layernorm = !a.no_layernorm;
    if (!a.task.empty() && a.vocab > 0)
        throw ckl::UsageError("make-model: give either --task or --vocab, not both");
    if (!a.task.empty()) {
        ckl::Tokenizer tok = ckl::build_tokenizer(ckl::builtin_template(a.task));
        cfg.vocab_size = static_cast<int>(tok.words.size());
    } else if (a.vocab > 0) {
        cfg.vocab_size = a.vocab;
    } else {
        throw ckl::UsageError("make-model: one of --task or --vocab is required");
    }
    ckl::Model model = ckl::random_model(cfg, a.seed);
    ckl::save_model(model, a.out);
    std::cout << "wrote " << a.out << " (config hash " << ckl::config_hash(cfg) << ", vocab "
              << cfg.vocab_size << ")\n";
    return 0;
}

struct GenDataArgs {
    std::string task;
    long long n_clean = 100;
    long long n_corrupt = 100;
    uint64_t seed = 0;
    bool swap_intro = false;
    std::string out;
};

int cmd_gen_data(const GenDataArgs& a) {
    ckl::TaskTemplate tmpl = ckl::builtin_template(a.task, a.swap_intro);
    auto clean = ckl::generate_prompts(tmpl, a.n_clean, a.seed, ckl::Role::Clean);
    auto corrupt = ckl::generate_prompts(tmpl, a.n_corrupt, a.seed, ckl::Role::Corrupt);
    std::filesystem::create_directories(a.out);
    std::string data_path = (std::filesystem::path(a.out) / "data.jsonl").string();
    std::string vocab_path = (std::filesystem::path(a.out) / "vocab.txt").string();
    ckl::dump_dataset(tmpl, clean, corrupt, a.seed, data_path);
    ckl::dump_vocab(tmpl, vocab_path);
    std::cout << "wrote " << data_path << " and " << vocab_path << "\n";
    return 0;
}

// Flags that override the run-config file when given on the command line.
struct EvalArgs {
    std::string config_path;
    std::optional<std::string> model, circuit, task, pairing, out;
    std::optional<long long> n_clean, n_corrupt;
    std::optional<uint64_t> seed;
    std::optional<int> workers;
    bool swap_intro = false;
};

ckl::RunConfig merge_eval_args(const EvalArgs& a) {
    ckl::RunConfig cfg;
    if (!a.config_path.empty()) cfg = ckl::load_run_config(a.config_path);
    if (a.model) cfg.model_path = *a.model;
    if (a.circuit) cfg.circuit_path = *a.circuit;
    if (a.task) cfg.task = *a.task;
    if (a.pairing) cfg.pairing = ckl::parse_pairing_mode(*a.pairing);
    if (a.out) cfg.output_dir = *a.out;
    if (a.n_clean) cfg.n_clean = *a.n_clean;
    if (a.n_corrupt) cfg.n_corrupt = *a.n_corrupt;
    if (a.seed) cfg.master_seed = *a.seed;
    if (a.workers) cfg.workers = *a.workers;
    if (a.swap_intro) cfg.swap_intro = true;
    return cfg;
}

int cmd_eval(const EvalArgs& a) {
    ckl::RunConfig cfg = merge_eval_args(a);
    ckl::EvaluationResult res = ckl::run_evaluation(cfg);
    std::cout << "evaluated " << res.samples.size() << " pairs";
    if (!res.samples_path.empty()) std::cout << ", wrote " << res.samples_path;
    std::cout << "\n";
    return 0;
}

struct ReportArgs {
    std::string config_path;
    std::optional<std::string> samples, model, circuit, out;
    std::optional<int> worst_k, bins;
    std::optional<std::string> heatmap_a, heatmap_b;
    bool no_summary = false, no_histogram = false, no_worst = false, heatmap = false;
};

int cmd_report(const ReportArgs& a) {
    ckl::RunConfig cfg;
    if (!a.config_path.empty()) cfg = ckl::load_run_config(a.config_path);
    if (a.model) cfg.model_path = *a.model;
    if (a.circuit) cfg.circuit_path = *a.circuit;
    if (a.out) cfg.output_dir = *a.out;
    if (a.worst_k) cfg.worst_k = *a.worst_k;
    if (a.bins) cfg.histogram_bins = *a.bins;
    if (a.heatmap_a) cfg.heatmap_fields[0] = *a.heatmap_a;
    if (a.heatmap_b) cfg.heatmap_fields[1] = *a.heatmap_b;
    if (a.no_summary) cfg.reports.summary = false;
    if (a.no_histogram) cfg.reports.histogram = false;
    if (a.no_worst) cfg.reports.worst = false;
    if (a.heatmap) cfg.reports.heatmap = true;

    std::string samples_path =
        a.samples ? *a.samples
                  : (std::filesystem::path(cfg.output_dir) / "samples.jsonl").string();
    ckl::LoadedSamples loaded = ckl::load_samples(samples_path);
    if (loaded.samples.empty()) throw ckl::DataError("samples file has no sample records");

    std::vector<double> kls;
    kls.reserve(loaded.samples.size());
    for (const auto& s : loaded.samples) kls.push_back(s.kl_nats);

    std::filesystem::path out_dir(cfg.output_dir);
    std::filesystem::create_directories(out_dir);
    std::vector<std::string> written;

    if (cfg.reports.summary) {
        ckl::SummaryTable t = ckl::summarize(kls);
        ckl::write_summary_csv(t, (out_dir / "summary.csv").string());
        written.push_back("summary.csv");
    }
    if (cfg.reports.histogram) {
        ckl::HistogramData h = ckl::histogram(kls, cfg.histogram_bins);
        ckl::write_histogram_csv(h, (out_dir / "histogram.csv").string());
        written.push_back("histogram.csv");
    }
    if (cfg.reports.worst) {
        if (cfg.model_path.empty() || cfg.circuit_path.empty())
            throw ckl::UsageError("report: the worst-pairs report needs --model and --circuit "
                                  "(or disable it with --no-worst)");
        ckl::Model model = ckl::load_model(cfg.model_path);
        if (ckl::config_hash(model.config) != loaded.model_config_hash)
            throw ckl::DataError("report: model does not match the samples file (hash " +
                                 ckl::config_hash(model.config) + " vs " +
                                 loaded.model_config_hash + ")");
        ckl::Circuit circ = ckl::load_circuit(cfg.circuit_path, model.config);
        ckl::TaskTemplate tmpl = ckl::builtin_template(loaded.task, loaded.swap_intro);
        ckl::Tokenizer tok = ckl::build_tokenizer(tmpl);
        auto clean = ckl::generate_prompts(tmpl, loaded.n_clean, loaded.master_seed,
                                           ckl::Role::Clean);
        auto corrupt = ckl::generate_prompts(tmpl, loaded.n_corrupt, loaded.master_seed,
                                             ckl::Role::Corrupt);
        auto rows = ckl::worst_rows(model, circ, loaded.samples, clean, corrupt, tok, cfg.worst_k);
        ckl::write_worst_csv(rows, (out_dir / "worst.csv").string());
        written.push_back("worst.csv");
    }
    if (cfg.reports.heatmap) {
        ckl::FieldSpec fa = ckl::parse_field_spec(cfg.heatmap_fields[0]);
        ckl::FieldSpec fb = ckl::parse_field_spec(cfg.heatmap_fields[1]);
        std::vector<ckl::PercentileLevel> levels;
        for (const auto& s : cfg.heatmap_levels) levels.push_back(ckl::parse_percentile_level(s));
        auto cells = ckl::group_percentiles(loaded.samples, fa, fb, levels);
        ckl::write_heatmap_csv(cells, fa, fb, (out_dir / "heatmap.csv").string());
        written.push_back("heatmap.csv");
    }

    std::cout << "wrote";
    for (const auto& w : written) std::cout << " " << w;
    if (written.empty()) std::cout << " nothing (all reports disabled)";
    std::cout << "\n";
    return 0;
}

struct BoundsArgs {
    std::optional<double> target, confidence, margin;
};

int cmd_bounds(const BoundsArgs& a) {
    std::vector<ckl::BoundQuery> queries;
    int given = (a.target ? 1 : 0) + (a.confidence ? 1 : 0) + (a.margin ? 1 : 0);
    if (given == 3) {
        queries.push_back(ckl::BoundQuery{*a.target, *a.confidence, *a.margin});
    } else if (given == 0) {
        queries = ckl::default_bound_queries();
    } else {
        throw ckl::UsageError("bounds: give --target, --confidence and --margin together, "
                              "or none of them for the reference table");
    }
    ckl::write_bounds_csv(ckl::bounds_table(queries), std::cout);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Edge-ablation circuit evaluation toolkit"};
    app.require_subcommand(1);

    MakeModelArgs mm;
    CLI::App* make_model = app.add_subcommand("make-model", "Write a seeded random toy model");
    make_model->add_option("--layers", mm.layers, "Transformer layers");
    make_model->add_option("--heads", mm.heads, "Attention heads per layer");
    make_model->add_option("--d-model", mm.d_model, "Residual stream width");
    make_model->add_option("--d-head", mm.d_head, "Per-head projection width");
    make_model->add_flag("--mlp", mm.mlp, "Include an MLP in every layer");
    make_model->add_option("--d-mlp", mm.d_mlp, "MLP hidden width (default 4*d_model)");
    make_model->add_flag("--no-layernorm", mm.no_layernorm, "Disable layer normalization");
    make_model->add_option("--vocab", mm.vocab, "Vocabulary size");
    make_model->add_option("--task", mm.task, "Size the vocabulary for this task's tokenizer");
    make_model->add_option("--max-seq", mm.max_seq, "Maximum sequence length");
    make_model->add_option("--seed", mm.seed, "Random seed");
    make_model->add_option("--out", mm.out, "Output model file")->required();

    GenDataArgs gd;
    CLI::App* gen_data = app.add_subcommand("gen-data", "Write a task's prompt dataset");
    gen_data->add_option("--task", gd.task, "Task name (ioi, greaterthan, docstring)")->required();
    gen_data->add_option("--n-clean", gd.n_clean, "Clean prompt count");
    gen_data->add_option("--n-corrupt", gd.n_corrupt, "Corrupt prompt count");
    gen_data->add_option("--seed", gd.seed, "Random seed");
    gen_data->add_flag("--swap-intro", gd.swap_intro, "Name task: reverse the introduction order");
    gen_data->add_option("--out", gd.out, "Output directory")->required();

    EvalArgs ev;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Run a circuit evaluation");
    eval_cmd->add_option("--config", ev.config_path, "Run config JSON file");
    eval_cmd->add_option("--model", ev.model, "Model file (overrides config)");
    eval_cmd->add_option("--circuit", ev.circuit, "Circuit file (overrides config)");
    eval_cmd->add_option("--task", ev.task, "Task name (overrides config)");
    eval_cmd->add_option("--n-clean", ev.n_clean, "Clean prompt count (overrides config)");
    eval_cmd->add_option("--n-corrupt", ev.n_corrupt, "Corrupt prompt count (overrides config)");
    eval_cmd->add_option("--pairing", ev.pairing, "cross or matched (overrides config)");
    eval_cmd->add_option("--seed", ev.seed, "Master seed (overrides config)");
    eval_cmd->add_option("--workers", ev.workers, "Worker thread count (overrides config)");
    eval_cmd->add_option("--out", ev.out, "Output directory (overrides config)");
    eval_cmd->add_flag("--swap-intro", ev.swap_intro, "Name task: reverse the introduction order");

    ReportArgs rp;
    CLI::App* report = app.add_subcommand("report", "Write CSV reports from a samples file");
    report->add_option("--config", rp.config_path, "Run config JSON file");
    report->add_option("--samples", rp.samples, "Samples file (default <out>/samples.jsonl)");
    report->add_option("--model", rp.model, "Model file (for the worst-pairs report)");
    report->add_option("--circuit", rp.circuit, "Circuit file (for the worst-pairs report)");
    report->add_option("--out", rp.out, "Output directory");
    report->add_option("--worst-k", rp.worst_k, "Worst pairs to report");
    report->add_option("--bins", rp.bins, "Histogram bin count");
    report->add_option("--heatmap-field-a", rp.heatmap_a, "Heatmap row field, e.g. clean.object");
    report->add_option("--heatmap-field-b", rp.heatmap_b, "Heatmap column field");
    report->add_flag("--no-summary", rp.no_summary, "Skip the summary report");
    report->add_flag("--no-histogram", rp.no_histogram, "Skip the histogram report");
    report->add_flag("--no-worst", rp.no_worst, "Skip the worst-pairs report");
    report->add_flag("--heatmap", rp.heatmap, "Write the grouped-percentile heatmap");

    BoundsArgs bd;
    CLI::App* bounds = app.add_subcommand("bounds", "Print the sample-size bound table");
    bounds->add_option("--target", bd.target, "Percentile to bound, in (0,1)");
    bounds->add_option("--confidence", bd.confidence, "Required success probability, in (0,1)");
    bounds->add_option("--margin", bd.margin, "Percentile overshoot, > 0");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return 1;
    }

    try {
        if (make_model->parsed()) return cmd_make_model(mm);
        if (gen_data->parsed()) return cmd_gen_data(gd);
        if (eval_cmd->parsed()) return cmd_eval(ev);
        if (report->parsed()) return cmd_report(rp);
        if (bounds->parsed()) return cmd_bounds(bd);
    } catch (const circuitkl::UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const circuitkl::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
