#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "circuitkl/circuit.hpp"
#include "circuitkl/errors.hpp"
#include "circuitkl/forward.hpp"
#include "circuitkl/model.hpp"
#include "circuitkl/stats.hpp"
#include "circuitkl/workpool.hpp"

namespace circuitkl {

// Result of evaluating one (clean, corrupt) pair under a circuit: the model
// run normally on the clean prompt versus the model run on the clean prompt
// with every out-of-circuit edge carrying the corrupt run's activations.
struct PatchedRunResult {
    Matrix patched_logits;             // [seq, vocab]
    Distribution model_distribution;   // plain forward, final position
    Distribution circuit_distribution; // patched forward, final position
    double kl_nats = 0.0;              // KL(model || circuit)
};

namespace detail {

inline PatchPlan build_patch_plan(const ModelConfig& c, const Circuit& circ,
                                  const ActivationCache& external) {
    std::vector<NodeId> nodes = node_order(c);
    const int N = static_cast<int>(nodes.size());
    PatchPlan plan;
    plan.node_count = N;
    plan.use_current.assign(static_cast<size_t>(N) * 3 * static_cast<size_t>(N), 1);
    plan.external = &external;
    for (int dst = 0; dst < N; ++dst) {
        const auto& chans = channels_for(nodes[static_cast<size_t>(dst)].kind);
        for (size_t slot = 0; slot < chans.size(); ++slot) {
            for (int src = 0; src < dst; ++src) {
                if (!reads_from(nodes[static_cast<size_t>(src)], nodes[static_cast<size_t>(dst)]))
                    continue;
                EdgeId e{nodes[static_cast<size_t>(src)], nodes[static_cast<size_t>(dst)],
                         chans[slot]};
                plan.use_current[(static_cast<size_t>(dst) * 3 + slot) * static_cast<size_t>(N) +
                                 static_cast<size_t>(src)] = circ.contains(e) ? 1 : 0;
            }
        }
    }
    return plan;
}

inline void check_circuit_model(const Model& m, const Circuit& circ) {
    std::string h = config_hash(m.config);
    if (circ.model_config_hash != h)
        throw DataError("circuit was built for a different architecture (hash " +
                        circ.model_config_hash + ", model has " + h + ")");
}

// Patched evaluation against an already computed corrupt-side cache.
inline PatchedRunResult patched_forward_cached(const Model& m, const Circuit& circ,
                                               std::span<const int> clean,
                                               const ActivationCache& corrupt_cache) {
    if (static_cast<int>(clean.size()) != corrupt_cache.seq_len)
        throw DataError("patched_forward: clean length " + std::to_string(clean.size()) +
                        " differs from corrupt length " + std::to_string(corrupt_cache.seq_len));
    ActivationCache clean_cache = run_decomposed(m, clean, nullptr);
    Distribution model_dist = output_distribution(clean_cache.logits, clean_cache.seq_len - 1);

    PatchPlan plan = build_patch_plan(m.config, circ, corrupt_cache);
    ActivationCache patched = run_decomposed(m, clean, &plan);
    Distribution circuit_dist = output_distribution(patched.logits, patched.seq_len - 1);

    PatchedRunResult r;
    r.patched_logits = std::move(patched.logits);
    r.model_distribution = std::move(model_dist);
    r.circuit_distribution = std::move(circuit_dist);
    r.kl_nats = kl_divergence(r.model_distribution.probs, r.circuit_distribution.probs);
    return r;
}

} // namespace detail

// Evaluate one pair. Phases: (1) plain forward on the corrupt prompt to
// record its per-node contributions, (2) plain forward on the clean prompt
// for the reference distribution, (3) forward on the clean prompt where each
// out-of-circuit edge's term is replaced by the corrupt contribution. The
// divergence is measured at the last position.
inline PatchedRunResult patched_forward(const Model& m, const Circuit& circ,
                                        std::span<const int> clean, std::span<const int> corrupt) {
    detail::check_circuit_model(m, circ);
    if (clean.size() != corrupt.size())
        throw DataError("patched_forward: clean length " + std::to_string(clean.size()) +
                        " differs from corrupt length " + std::to_string(corrupt.size()));
    ActivationCache corrupt_cache = detail::run_decomposed(m, corrupt, nullptr);
    return detail::patched_forward_cached(m, circ, clean, corrupt_cache);
}

struct TokenPair {
    std::vector<int> clean;
    std::vector<int> corrupt;
};

struct BatchOptions {
    int workers = 1;
    // Reuse the corrupt-side cache (and the clean-side reference
    // distribution) across pairs sharing the same token sequence. Purely an
    // optimization: results are bitwise identical either way.
    bool memoize = true;
};

// KL for every pair, in input order. Results and error reports are
// deterministic for any worker count; a failing pair is reported with its
// index, the smallest failing index of the phase that hit it.
inline std::vector<double> batch_patched_kl(const Model& m, const Circuit& circ,
                                            const std::vector<TokenPair>& pairs,
                                            const BatchOptions& opts = {}) {
    detail::check_circuit_model(m, circ);
    if (opts.workers < 1) throw UsageError("batch_patched_kl: worker count must be >= 1");
    std::vector<double> out(pairs.size(), 0.0);
    if (pairs.empty()) return out;

    auto wrap = [&](long long i, auto&& body) {
        try {
            body();
        } catch (const UsageError& e) {
            throw UsageError("pair " + std::to_string(i) + ": " + e.what());
        } catch (const Error& e) {
            throw DataError("pair " + std::to_string(i) + ": " + e.what());
        }
    };

    if (!opts.memoize) {
        parallel_for(static_cast<long long>(pairs.size()), opts.workers, [&](long long i) {
            wrap(i, [&] {
                out[static_cast<size_t>(i)] =
                    patched_forward(m, circ, pairs[static_cast<size_t>(i)].clean,
                                    pairs[static_cast<size_t>(i)].corrupt)
                        .kl_nats;
            });
        });
        return out;
    }

    // Memoized path: one corrupt cache per distinct corrupt sequence, one
    // reference distribution per distinct clean sequence, both computed in a
    // deterministic precompute phase.
    std::map<std::vector<int>, size_t> corrupt_slot, clean_slot;
    std::vector<const std::vector<int>*> distinct_corrupt, distinct_clean;
    std::vector<size_t> pair_corrupt(pairs.size()), pair_clean(pairs.size());
    std::vector<long long> corrupt_owner, clean_owner; // first pair using each distinct sequence
    for (size_t i = 0; i < pairs.size(); ++i) {
        auto [cit, cnew] = corrupt_slot.try_emplace(pairs[i].corrupt, distinct_corrupt.size());
        if (cnew) {
            distinct_corrupt.push_back(&pairs[i].corrupt);
            corrupt_owner.push_back(static_cast<long long>(i));
        }
        pair_corrupt[i] = cit->second;
        auto [kit, knew] = clean_slot.try_emplace(pairs[i].clean, distinct_clean.size());
        if (knew) {
            distinct_clean.push_back(&pairs[i].clean);
            clean_owner.push_back(static_cast<long long>(i));
        }
        pair_clean[i] = kit->second;
    }

    std::vector<ActivationCache> corrupt_caches(distinct_corrupt.size());
    parallel_for(static_cast<long long>(distinct_corrupt.size()), opts.workers, [&](long long i) {
        wrap(corrupt_owner[static_cast<size_t>(i)], [&] {
            corrupt_caches[static_cast<size_t>(i)] =
                detail::run_decomposed(m, *distinct_corrupt[static_cast<size_t>(i)], nullptr);
            corrupt_caches[static_cast<size_t>(i)].drop_inputs();
        });
    });
    std::vector<Distribution> clean_dists(distinct_clean.size());
    parallel_for(static_cast<long long>(distinct_clean.size()), opts.workers, [&](long long i) {
        wrap(clean_owner[static_cast<size_t>(i)], [&] {
            ActivationCache cache =
                detail::run_decomposed(m, *distinct_clean[static_cast<size_t>(i)], nullptr);
            clean_dists[static_cast<size_t>(i)] =
                output_distribution(cache.logits, cache.seq_len - 1);
        });
    });

    parallel_for(static_cast<long long>(pairs.size()), opts.workers, [&](long long i) {
        wrap(i, [&] {
            const TokenPair& pr = pairs[static_cast<size_t>(i)];
            const ActivationCache& ccache = corrupt_caches[pair_corrupt[static_cast<size_t>(i)]];
            if (static_cast<int>(pr.clean.size()) != ccache.seq_len)
                throw DataError("clean length " + std::to_string(pr.clean.size()) +
                                " differs from corrupt length " + std::to_string(ccache.seq_len));
            PatchPlan plan = detail::build_patch_plan(m.config, circ, ccache);
            ActivationCache patched = detail::run_decomposed(m, pr.clean, &plan);
            Distribution circuit_dist = output_distribution(patched.logits, patched.seq_len - 1);
            out[static_cast<size_t>(i)] = kl_divergence(
                clean_dists[pair_clean[static_cast<size_t>(i)]].probs, circuit_dist.probs);
        });
    });
    return out;
}

} // namespace circuitkl
