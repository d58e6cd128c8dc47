#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "circuitkl/errors.hpp"
#include "circuitkl/graph.hpp"
#include "circuitkl/matrix.hpp"
#include "circuitkl/model.hpp"

namespace circuitkl {

// ---------------------------------------------------------------------------
// Activation cache
//
// One entry per node in topological order. `contributions[i]` is what node i
// adds to the residual stream ([seq, d_model]); for the final readout it
// holds the normalized readout instead. `inputs[i][slot]` records the summed
// residual input each channel saw (slot order matches channels_for), which
// lets tests check additivity: every recorded input equals the sum of the
// contributions of the node's upstream sources.
// ---------------------------------------------------------------------------

struct ActivationCache {
    std::vector<NodeId> nodes; // topological order
    std::vector<Matrix> contributions;
    std::vector<std::vector<Matrix>> inputs;
    Matrix logits; // [seq, vocab]
    int seq_len = 0;

    const Matrix& contribution(const ModelConfig& c, const NodeId& n) const {
        return contributions[static_cast<size_t>(topo_index(c, n))];
    }
    const Matrix& input(const ModelConfig& c, const NodeId& n, Channel ch) const {
        const auto& chans = channels_for(n.kind);
        for (size_t s = 0; s < chans.size(); ++s)
            if (chans[s] == ch) return inputs[static_cast<size_t>(topo_index(c, n))][s];
        throw UsageError("input: '" + channel_name(ch) + "' is not a channel of '" + node_name(n) + "'");
    }

    // Frees the recorded per-channel inputs (memoized caches only need the
    // contributions).
    void drop_inputs() {
        for (auto& v : inputs) v.clear();
    }
};

// A categorical distribution over the vocabulary.
struct Distribution {
    std::vector<double> probs;
};

// Numerically stable softmax of one logit row.
inline Distribution output_distribution(const Matrix& logits, int position) {
    if (position < 0 || position >= logits.rows)
        throw UsageError("output_distribution: position " + std::to_string(position) +
                         " out of range for " + std::to_string(logits.rows) + " positions");
    const double* row = logits.row(position);
    double m = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < logits.cols; ++i) {
        if (!std::isfinite(row[i])) throw DataError("output_distribution: non-finite logit");
        if (row[i] > m) m = row[i];
    }
    Distribution d;
    d.probs.resize(static_cast<size_t>(logits.cols));
    double sum = 0.0;
    for (int i = 0; i < logits.cols; ++i) {
        double e = std::exp(row[i] - m);
        d.probs[static_cast<size_t>(i)] = e;
        sum += e;
    }
    for (double& p : d.probs) p /= sum;
    return d;
}

// ---------------------------------------------------------------------------
// Patching plan
//
// For a patched pass, each (source, destination, channel) triple either takes
// the contribution computed in the current pass (edge inside the circuit) or
// the contribution recorded in an external cache (edge outside the circuit).
// The plan is a dense lookup so the hot loop does no set queries.
// ---------------------------------------------------------------------------

struct PatchPlan {
    int node_count = 0;
    // use_current[(dst * 3 + slot) * node_count + src]; slot is the channel
    // slot of dst (q/k/v for heads, 0 for single-input nodes).
    std::vector<uint8_t> use_current;
    const ActivationCache* external = nullptr;

    bool current(int dst, int slot, int src) const {
        return use_current[(static_cast<size_t>(dst) * 3 + static_cast<size_t>(slot)) *
                               static_cast<size_t>(node_count) +
                           static_cast<size_t>(src)] != 0;
    }
};

namespace detail {

inline void check_tokens(const ModelConfig& c, std::span<const int> tokens) {
    if (tokens.empty()) throw DataError("forward: empty token sequence");
    if (static_cast<int>(tokens.size()) > c.max_seq_len)
        throw DataError("forward: sequence length " + std::to_string(tokens.size()) +
                        " exceeds max_seq_len " + std::to_string(c.max_seq_len));
    for (size_t i = 0; i < tokens.size(); ++i)
        if (tokens[i] < 0 || tokens[i] >= c.vocab_size)
            throw DataError("forward: token id " + std::to_string(tokens[i]) + " at position " +
                            std::to_string(i) + " outside vocabulary of size " +
                            std::to_string(c.vocab_size));
}

// Per-position layernorm over the feature dimension.
inline Matrix layernorm(const Matrix& x, const Vector& w, const Vector& b) {
    constexpr double eps = 1e-5;
    Matrix out(x.rows, x.cols);
    for (int r = 0; r < x.rows; ++r) {
        const double* in = x.row(r);
        double* o = out.row(r);
        double mean = 0.0;
        for (int c = 0; c < x.cols; ++c) mean += in[c];
        mean /= x.cols;
        double var = 0.0;
        for (int c = 0; c < x.cols; ++c) {
            double d = in[c] - mean;
            var += d * d;
        }
        var /= x.cols;
        double inv = 1.0 / std::sqrt(var + eps);
        for (int c = 0; c < x.cols; ++c)
            o[c] = w[static_cast<size_t>(c)] * (in[c] - mean) * inv + b[static_cast<size_t>(c)];
    }
    return out;
}

inline Matrix maybe_layernorm(const ModelConfig& c, const Matrix& x, const Vector& w, const Vector& b) {
    return c.use_layernorm ? layernorm(x, w, b) : x;
}

// One attention head: normalize each channel's input, project, causal
// softmax, weighted value sum, output projection back to the residual width.
inline Matrix head_contribution(const Model& m, int layer, int head, const Matrix& in_q,
                                const Matrix& in_k, const Matrix& in_v) {
    const ModelConfig& c = m.config;
    const HeadWeights& hw = m.heads[static_cast<size_t>(layer)][static_cast<size_t>(head)];
    Matrix q = matmul(maybe_layernorm(c, in_q, hw.ln_w, hw.ln_b), hw.w_q);
    add_row_inplace(q, hw.b_q);
    Matrix k = matmul(maybe_layernorm(c, in_k, hw.ln_w, hw.ln_b), hw.w_k);
    add_row_inplace(k, hw.b_k);
    Matrix v = matmul(maybe_layernorm(c, in_v, hw.ln_w, hw.ln_b), hw.w_v);
    add_row_inplace(v, hw.b_v);

    const int T = in_q.rows;
    const double scale = 1.0 / std::sqrt(static_cast<double>(c.d_head));
    Matrix mixed(T, c.d_head);
    std::vector<double> scores(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) {
        // causal: position t attends to positions 0..t
        double mx = -std::numeric_limits<double>::infinity();
        for (int s = 0; s <= t; ++s) {
            double dot = 0.0;
            const double* qr = q.row(t);
            const double* kr = k.row(s);
            for (int d = 0; d < c.d_head; ++d) dot += qr[d] * kr[d];
            scores[static_cast<size_t>(s)] = dot * scale;
            if (scores[static_cast<size_t>(s)] > mx) mx = scores[static_cast<size_t>(s)];
        }
        double denom = 0.0;
        for (int s = 0; s <= t; ++s) {
            scores[static_cast<size_t>(s)] = std::exp(scores[static_cast<size_t>(s)] - mx);
            denom += scores[static_cast<size_t>(s)];
        }
        double* out = mixed.row(t);
        for (int s = 0; s <= t; ++s) {
            double w = scores[static_cast<size_t>(s)] / denom;
            const double* vr = v.row(s);
            for (int d = 0; d < c.d_head; ++d) out[d] += w * vr[d];
        }
    }
    Matrix contrib = matmul(mixed, hw.w_o);
    add_row_inplace(contrib, hw.b_o);
    return contrib;
}

inline Matrix mlp_contribution(const Model& m, int layer, const Matrix& in) {
    const ModelConfig& c = m.config;
    const MlpWeights& mw = m.mlps[static_cast<size_t>(layer)];
    Matrix h = matmul(maybe_layernorm(c, in, mw.ln_w, mw.ln_b), mw.w_in);
    add_row_inplace(h, mw.b_in);
    for (double& x : h.data) x = x / (1.0 + std::exp(-x)); // silu
    Matrix contrib = matmul(h, mw.w_out);
    add_row_inplace(contrib, mw.b_out);
    return contrib;
}

// The decomposed pass. With plan == nullptr this is a plain forward: every
// channel input is the sum of the contributions of the node's upstream
// sources, accumulated in topological order. With a plan, each (src, dst,
// channel) term is taken either from this pass or from the plan's external
// cache — same loop, same summation order, so a plan that keeps every edge
// reproduces the plain forward bit for bit.
inline ActivationCache run_decomposed(const Model& m, std::span<const int> tokens,
                                      const PatchPlan* plan) {
    const ModelConfig& c = m.config;
    check_tokens(c, tokens);
    const int T = static_cast<int>(tokens.size());

    ActivationCache cache;
    cache.nodes = node_order(c);
    cache.seq_len = T;
    const int N = static_cast<int>(cache.nodes.size());
    cache.contributions.resize(static_cast<size_t>(N));
    cache.inputs.resize(static_cast<size_t>(N));
    if (plan && plan->external->seq_len != T)
        throw DataError("patched pass: external cache has sequence length " +
                        std::to_string(plan->external->seq_len) + ", expected " + std::to_string(T));

    auto sum_inputs = [&](int dst_idx, int slot) {
        Matrix acc(T, c.d_model);
        const NodeId& dst = cache.nodes[static_cast<size_t>(dst_idx)];
        for (int src_idx = 0; src_idx < dst_idx; ++src_idx) {
            const NodeId& src = cache.nodes[static_cast<size_t>(src_idx)];
            if (!reads_from(src, dst)) continue;
            const bool take_current = !plan || plan->current(dst_idx, slot, src_idx);
            const Matrix& contrib = take_current
                                        ? cache.contributions[static_cast<size_t>(src_idx)]
                                        : plan->external->contributions[static_cast<size_t>(src_idx)];
            add_inplace(acc, contrib);
        }
        return acc;
    };

    for (int i = 0; i < N; ++i) {
        const NodeId& node = cache.nodes[static_cast<size_t>(i)];
        switch (node.kind) {
        case NodeKind::Embed: {
            Matrix e(T, c.d_model);
            for (int t = 0; t < T; ++t) {
                const double* tok = m.token_embedding.row(tokens[static_cast<size_t>(t)]);
                const double* pos = m.pos_embedding.row(t);
                double* out = e.row(t);
                for (int d = 0; d < c.d_model; ++d) out[d] = tok[d] + pos[d];
            }
            cache.contributions[static_cast<size_t>(i)] = std::move(e);
            break;
        }
        case NodeKind::Head: {
            auto& slots = cache.inputs[static_cast<size_t>(i)];
            slots.push_back(sum_inputs(i, 0)); // q
            slots.push_back(sum_inputs(i, 1)); // k
            slots.push_back(sum_inputs(i, 2)); // v
            cache.contributions[static_cast<size_t>(i)] =
                head_contribution(m, node.layer, node.head, slots[0], slots[1], slots[2]);
            break;
        }
        case NodeKind::Mlp: {
            auto& slots = cache.inputs[static_cast<size_t>(i)];
            slots.push_back(sum_inputs(i, 0));
            cache.contributions[static_cast<size_t>(i)] = mlp_contribution(m, node.layer, slots[0]);
            break;
        }
        case NodeKind::Final: {
            auto& slots = cache.inputs[static_cast<size_t>(i)];
            slots.push_back(sum_inputs(i, 0));
            cache.contributions[static_cast<size_t>(i)] =
                c.use_layernorm ? layernorm(slots[0], m.final_ln_w, m.final_ln_b) : slots[0];
            break;
        }
        }
    }
    cache.logits = matmul(cache.contributions[static_cast<size_t>(N - 1)], m.unembedding);
    return cache;
}

} // namespace detail

// Plain forward pass with full activation caching.
inline ActivationCache forward(const Model& m, std::span<const int> tokens) {
    return detail::run_decomposed(m, tokens, nullptr);
}

} // namespace circuitkl
