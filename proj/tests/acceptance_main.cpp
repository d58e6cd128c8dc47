// Acceptance gate: one pass/fail line per criterion, nonzero exit on any
// failure. Each check states its tolerance inline; timings are wall clock.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "circuitkl/circuitkl.hpp"
#include "reference_forward.hpp"

using namespace circuitkl;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, bool ok, const std::string& what) {
    std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", criterion, what.c_str());
    if (!ok) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// --- criterion 1: the pinned sample-size table, exact integers, < 10 s ----

void criterion_1() {
    auto t0 = std::chrono::steady_clock::now();
    const long long want_exact[] = {1282, 2437, 59, 1049, 1736, 31236};
    const long long want_chernoff[] = {2659, 4088, 122, 1937, 2978, 44987};
    const long long want_hoeffding[] = {14979, 23026, 937, 59915, 92104, 13815511};
    std::vector<BoundsRow> rows = bounds_table(default_bound_queries());
    bool ok = rows.size() == 6;
    std::string detail;
    for (size_t i = 0; ok && i < rows.size(); ++i) {
        if (rows[i].exact_n != want_exact[i] || rows[i].chernoff_n != want_chernoff[i] ||
            rows[i].hoeffding_n != want_hoeffding[i]) {
            ok = false;
            detail = " (row " + std::to_string(i + 1) + " got " + std::to_string(rows[i].exact_n) +
                     "/" + std::to_string(rows[i].chernoff_n) + "/" +
                     std::to_string(rows[i].hoeffding_n) + ")";
        }
    }
    double dt = seconds_since(t0);
    if (dt >= 10.0) {
        ok = false;
        detail += " (too slow)";
    }
    report(1, ok,
           "sample-size table: all 18 integers exact" + detail + " [" + fmt(dt) + " s, limit 10]");
}

// --- criterion 2: probability spot checks, +/- 5e-4 ----------------------

void criterion_2() {
    struct Spot {
        long long n;
        double p, e, want;
    };
    const Spot spots[] = {
        {1000000, 0.95, 5e-4, 0.9891},
        {1000, 0.95, 0.01, 0.9194},
        {1000, 0.99, 5e-3, 0.9339},
    };
    bool ok = true;
    std::string detail;
    for (const Spot& s : spots) {
        double got = exact_bound_probability(s.n, s.p, s.e);
        if (std::fabs(got - s.want) > 5e-4) {
            ok = false;
            detail += " (n=" + std::to_string(s.n) + " got " + fmt(got) + ", want " + fmt(s.want) +
                      ")";
        }
    }
    report(2, ok, "success-probability spot checks within 5e-4" + detail);
}

// --- criterion 3: Monte Carlo check of the order-statistic guarantee ------

void criterion_3() {
    auto t0 = std::chrono::steady_clock::now();
    struct Setting {
        long long n;
        double p, e;
    };
    const Setting settings[] = {{200, 0.9, 0.02}, {1000, 0.95, 0.01}};
    const long long trials = 20000;
    bool ok = true;
    std::string detail;
    for (size_t si = 0; si < 2; ++si) {
        const Setting& s = settings[si];
        double delta = exact_bound_probability(s.n, s.p, s.e);
        long long k = ceil_with_tolerance(static_cast<double>(s.n) * (s.p + s.e));
        Rng rng(derive_seed(424242, "order-statistic-mc", si));
        std::vector<double> draws(static_cast<size_t>(s.n));
        long long hits = 0;
        for (long long t = 0; t < trials; ++t) {
            for (double& x : draws) x = rng.uniform();
            std::nth_element(draws.begin(), draws.begin() + (k - 1), draws.end());
            if (draws[static_cast<size_t>(k - 1)] >= s.p) ++hits;
        }
        double freq = static_cast<double>(hits) / static_cast<double>(trials);
        double se = std::sqrt(delta * (1.0 - delta) / static_cast<double>(trials));
        detail += " [n=" + std::to_string(s.n) + ": freq " + fmt(freq) + ", bound " + fmt(delta) +
                  ", 3se " + fmt(3 * se) + "]";
        if (std::fabs(freq - delta) > 3.0 * se) ok = false;
    }
    double dt = seconds_since(t0);
    if (dt >= 120.0) {
        ok = false;
        detail += " (too slow)";
    }
    report(3, ok,
           "order-statistic coverage matches the exact bound within 3 SE over " +
               std::to_string(trials) + " trials" + detail + " [" + fmt(dt) + " s, limit 120]");
}

// --- criterion 4: ablation identities over 100 seeded cases ---------------

ModelConfig case_config(uint64_t i) {
    ModelConfig c;
    c.n_layers = 1 + static_cast<int>(i % 3);
    c.n_heads = 1 + static_cast<int>((i / 3) % 4);
    c.d_model = 16;
    c.d_head = 4;
    c.use_mlp = (i / 12) % 2 == 1;
    c.d_mlp = c.use_mlp ? 24 : 0;
    c.vocab_size = 13;
    c.max_seq_len = 9;
    c.use_layernorm = (i / 24) % 2 == 0;
    return c;
}

void criterion_4() {
    bool ok = true;
    std::string detail;
    for (uint64_t i = 0; i < 100 && ok; ++i) {
        ModelConfig c = case_config(i);
        Model m = random_model(c, 9000 + i);
        Rng rng(derive_seed(77, "identity-case", i));
        int T = 3 + static_cast<int>(rng.below(6));
        std::vector<int> clean(static_cast<size_t>(T)), corrupt(static_cast<size_t>(T));
        for (int& t : clean) t = static_cast<int>(rng.below(static_cast<uint64_t>(c.vocab_size)));
        for (int& t : corrupt) t = static_cast<int>(rng.below(static_cast<uint64_t>(c.vocab_size)));

        Circuit arbitrary = empty_circuit(c);
        for (const EdgeId& e : enumerate_edges(c))
            if (rng.below(2) == 0) arbitrary.edges.insert(e);

        double full_kl = patched_forward(m, full_circuit(c), clean, corrupt).kl_nats;
        if (!(full_kl < 1e-9)) {
            ok = false;
            detail = " (case " + std::to_string(i) + ": full-circuit KL " + fmt(full_kl) + ")";
            break;
        }
        PatchedRunResult empty_run = patched_forward(m, empty_circuit(c), clean, corrupt);
        double diff = max_abs_diff(empty_run.patched_logits, forward(m, corrupt).logits);
        if (!(diff < 1e-9)) {
            ok = false;
            detail = " (case " + std::to_string(i) + ": empty-circuit logit gap " + fmt(diff) + ")";
            break;
        }
        double same_kl = patched_forward(m, arbitrary, clean, clean).kl_nats;
        if (!(same_kl < 1e-9)) {
            ok = false;
            detail = " (case " + std::to_string(i) + ": clean==corrupt KL " + fmt(same_kl) + ")";
            break;
        }
    }
    report(4, ok,
           "ablation identities (full->KL<1e-9, empty->corrupt logits within 1e-9, "
           "clean==corrupt->KL<1e-9) over 100 seeded cases" +
               detail);
}

// --- criterion 5: equivalence with the dense reference forward ------------

void criterion_5() {
    struct Shape {
        int L, H;
        bool mlp, ln;
    };
    const Shape shapes[] = {
        {1, 1, false, false}, {2, 2, false, true}, {2, 4, true, true},
        {3, 3, true, false},  {4, 4, true, true},  {4, 4, false, true},
    };
    bool ok = true;
    std::string detail;
    double worst = 0.0;
    for (size_t si = 0; si < sizeof(shapes) / sizeof(shapes[0]); ++si) {
        const Shape& s = shapes[si];
        ModelConfig c;
        c.n_layers = s.L;
        c.n_heads = s.H;
        c.d_model = 24;
        c.d_head = 6;
        c.use_mlp = s.mlp;
        c.d_mlp = s.mlp ? 48 : 0;
        c.vocab_size = 17;
        c.max_seq_len = 11;
        c.use_layernorm = s.ln;
        Model m = random_model(c, 5000 + si);
        Rng rng(derive_seed(88, "reference-case", si));
        std::vector<int> tokens(static_cast<size_t>(c.max_seq_len));
        for (int& t : tokens) t = static_cast<int>(rng.below(static_cast<uint64_t>(c.vocab_size)));
        ActivationCache cache = forward(m, tokens);
        refmodel::Grid ref = refmodel::forward_logits(m, tokens);
        if (ref.size() != tokens.size() || ref.empty() ||
            ref[0].size() != static_cast<size_t>(c.vocab_size)) {
            ok = false;
            detail = " (reference grid has the wrong shape)";
        }
        for (size_t t = 0; t < ref.size(); ++t) {
            for (size_t j = 0; j < ref[t].size(); ++j) {
                double a = ref[t][j];
                double b = cache.logits(static_cast<int>(t), static_cast<int>(j));
                double rel = std::fabs(a - b) / std::max(1.0, std::fabs(a));
                worst = std::max(worst, rel);
            }
        }
    }
    if (worst > 1e-5) {
        ok = false;
        detail = " (worst relative gap " + fmt(worst) + ")";
    }
    report(5, ok,
           "decomposed forward matches the dense reference within 1e-5 relative up to 4 layers / "
           "4 heads (worst " +
               fmt(worst) + ")" + detail);
}

// --- criteria 6 + 7: desk-scale pipeline and byte determinism -------------

struct DeskSetup {
    fs::path dir;
    std::string model_path, half_path;
    ModelConfig config;

    explicit DeskSetup(const fs::path& base) {
        dir = base;
        fs::create_directories(dir);
        TaskTemplate t = builtin_template("ioi");
        Tokenizer tok = build_tokenizer(t);
        config.n_layers = 2;
        config.n_heads = 4;
        config.d_model = 32;
        config.d_head = 8;
        config.use_mlp = false;
        config.d_mlp = 0;
        config.vocab_size = static_cast<int>(tok.words.size());
        config.max_seq_len = 16;
        config.use_layernorm = true;
        Model model = random_model(config, 616);
        model_path = (dir / "model.json").string();
        save_model(model, model_path);
        Circuit half = empty_circuit(config);
        std::vector<EdgeId> all = enumerate_edges(config);
        for (size_t i = 0; i < all.size(); i += 2) half.edges.insert(all[i]);
        half_path = (dir / "half.json").string();
        save_circuit(half, half_path);
    }

    RunConfig run_config(const std::string& out, int workers) const {
        RunConfig cfg;
        cfg.model_path = model_path;
        cfg.circuit_path = half_path;
        cfg.task = "ioi";
        cfg.n_clean = 100;
        cfg.n_corrupt = 100;
        cfg.pairing = PairingMode::Cross;
        cfg.master_seed = 20;
        cfg.workers = workers;
        cfg.output_dir = (dir / out).string();
        return cfg;
    }
};

void criteria_6_and_7(const fs::path& base) {
    DeskSetup setup(base / "desk");

    auto t0 = std::chrono::steady_clock::now();
    EvaluationResult res = run_evaluation(setup.run_config("w1", 1));
    double dt = seconds_since(t0);

    bool ok = res.samples.size() == 10000;
    std::string detail = ok ? "" : " (expected 10000 samples, got " +
                                       std::to_string(res.samples.size()) + ")";
    std::vector<double> kls;
    kls.reserve(res.samples.size());
    for (const KlSample& s : res.samples) kls.push_back(s.kl_nats);

    if (ok) {
        SummaryTable table = summarize(kls);
        for (size_t i = 1; i < SummaryTable::kNumLevels && ok; ++i) {
            if (table.quantiles[i] < table.quantiles[i - 1]) {
                ok = false;
                detail = " (quantiles not monotone)";
            }
        }
        for (size_t i = 0; i < SummaryTable::kNumLevels && ok; ++i) {
            double want = (table.quantiles[i] - table.mean) / table.stddev;
            if (std::fabs(table.z_scores[i] - want) > 1e-9) {
                ok = false;
                detail = " (z-score mismatch at " + std::string(SummaryTable::level_names[i]) + ")";
            }
        }
    }
    if (ok) {
        HistogramData h = histogram(kls, 100);
        long long total = 0;
        for (long long c : h.counts) total += c;
        if (total != 10000) {
            ok = false;
            detail = " (histogram counts sum to " + std::to_string(total) + ")";
        }
    }
    if (ok) {
        Model model = load_model(setup.model_path);
        Circuit half = load_circuit(setup.half_path, model.config);
        Tokenizer tok = build_tokenizer(builtin_template("ioi"));
        std::vector<WorstRow> rows = worst_rows(model, half, res.samples, res.clean_prompts,
                                                res.corrupt_prompts, tok, 10);
        if (rows.size() != 10) {
            ok = false;
            detail = " (expected 10 worst rows)";
        }
        for (size_t r = 0; r < rows.size() && ok; ++r) {
            const WorstRow& w = rows[r];
            const PromptInstance& cp = res.clean_prompts[static_cast<size_t>(w.clean_index)];
            const PromptInstance& kp = res.corrupt_prompts[static_cast<size_t>(w.corrupt_index)];
            PatchedRunResult rr = patched_forward(model, half, cp.tokens, kp.tokens);
            ActivationCache clean_cache = forward(model, cp.tokens);
            int last = static_cast<int>(cp.tokens.size()) - 1;
            auto model_top = detail::top_logits(clean_cache.logits, last, tok, 3);
            auto circuit_top = detail::top_logits(rr.patched_logits, last, tok, 3);
            for (int i = 0; i < 3 && ok; ++i) {
                if (w.model_top[static_cast<size_t>(i)].logit !=
                        model_top[static_cast<size_t>(i)].logit ||
                    w.circuit_top[static_cast<size_t>(i)].logit !=
                        circuit_top[static_cast<size_t>(i)].logit ||
                    w.model_top[static_cast<size_t>(i)].token !=
                        model_top[static_cast<size_t>(i)].token) {
                    ok = false;
                    detail = " (worst-row logits differ from direct recomputation at rank " +
                             std::to_string(r + 1) + ")";
                }
            }
            if (ok && rr.kl_nats != w.kl_nats) {
                ok = false;
                detail = " (worst-row KL differs from direct recomputation)";
            }
        }
    }
    if (dt >= 300.0) {
        ok = false;
        detail += " (too slow)";
    }
    report(6, ok,
           "desk-scale 2x4 run: 100x100 pairs, monotone quantiles, exact z-scores, histogram "
           "total, worst-10 recomputation" +
               detail + " [" + fmt(dt) + " s single-threaded, limit 300]");

    // Criterion 7: the identity-suite style run and the desk-scale run must
    // produce byte-identical samples files for any worker count.
    bool det_ok = true;
    std::string det_detail;

    std::string w1 = slurp(res.samples_path);
    for (int workers : {4, 8}) {
        EvaluationResult rerun =
            run_evaluation(setup.run_config("w" + std::to_string(workers), workers));
        if (slurp(rerun.samples_path) != w1) {
            det_ok = false;
            det_detail += " (desk run differs at " + std::to_string(workers) + " workers)";
        }
    }

    // Identity-style run: the full circuit on a separate small model/task.
    {
        fs::path idir = base / "ident";
        fs::create_directories(idir);
        TaskTemplate t = builtin_template("greaterthan");
        Tokenizer tok = build_tokenizer(t);
        ModelConfig c;
        c.n_layers = 1;
        c.n_heads = 2;
        c.d_model = 16;
        c.d_head = 4;
        c.use_mlp = true;
        c.d_mlp = 32;
        c.vocab_size = static_cast<int>(tok.words.size());
        c.max_seq_len = 12;
        c.use_layernorm = true;
        Model model = random_model(c, 717);
        std::string mpath = (idir / "model.json").string();
        save_model(model, mpath);
        std::string cpath = (idir / "full.json").string();
        save_circuit(full_circuit(c), cpath);

        std::string first;
        for (int workers : {1, 4, 8}) {
            RunConfig cfg;
            cfg.model_path = mpath;
            cfg.circuit_path = cpath;
            cfg.task = "greaterthan";
            cfg.n_clean = 40;
            cfg.n_corrupt = 40;
            cfg.master_seed = 21;
            cfg.workers = workers;
            cfg.output_dir = (idir / ("w" + std::to_string(workers))).string();
            EvaluationResult r = run_evaluation(cfg);
            if (workers == 1) {
                first = slurp(r.samples_path);
                // Sanity: the full circuit shows no divergence anywhere.
                for (const KlSample& s : r.samples)
                    if (!(s.kl_nats < 1e-9)) {
                        det_ok = false;
                        det_detail += " (identity run diverges)";
                        break;
                    }
            } else if (slurp(r.samples_path) != first) {
                det_ok = false;
                det_detail += " (identity run differs at " + std::to_string(workers) + " workers)";
            }
        }
    }
    report(7, det_ok,
           "byte-identical samples files for worker counts 1/4/8 on both runs" + det_detail);
}

// --- criterion 8: bound ordering over the parameter grid ------------------

void criterion_8() {
    const double ps[] = {0.9, 0.95, 0.99, 0.995, 0.999};
    const double ds[] = {0.9, 0.95, 0.99, 0.995, 0.999};
    const double es[] = {0.0005, 0.001, 0.005, 0.01, 0.04};
    bool ok = true;
    std::string detail;
    int cells = 0;
    for (double p : ps) {
        for (double e : es) {
            if (p + e >= 1.0) continue; // outside the bounds' domain
            for (double d : ds) {
                long long ne = min_samples(p, d, e, BoundMethod::Exact);
                long long nc = min_samples(p, d, e, BoundMethod::Chernoff);
                long long nh = min_samples(p, d, e, BoundMethod::Hoeffding);
                ++cells;
                if (!(ne <= nc && nc <= nh)) {
                    ok = false;
                    detail = " (p=" + fmt(p) + " d=" + fmt(d) + " e=" + fmt(e) + ": " +
                             std::to_string(ne) + "/" + std::to_string(nc) + "/" +
                             std::to_string(nh) + ")";
                }
            }
        }
    }
    report(8, ok,
           "exact <= chernoff <= hoeffding sample sizes over " + std::to_string(cells) +
               " valid grid cells" + detail);
}

} // namespace

int main() {
    fs::path base =
        fs::temp_directory_path() / ("circuitkl-acceptance-" + std::to_string(::getpid()));
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criteria_6_and_7(base);
    criterion_8();
    std::error_code ec;
    fs::remove_all(base, ec);
    if (g_failures == 0) {
        std::printf("all acceptance criteria passed\n");
        return 0;
    }
    std::printf("%d acceptance criteria failed\n", g_failures);
    return 1;
}
