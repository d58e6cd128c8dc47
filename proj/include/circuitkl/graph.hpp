#pragma once

#include <compare>
#include <string>
#include <tuple>
#include <vector>

#include "circuitkl/errors.hpp"
#include "circuitkl/model.hpp"

namespace circuitkl {

// ---------------------------------------------------------------------------
// Nodes
//
// The model is viewed as a DAG over components that read from and write to
// the residual stream: the embedding, every attention head, every MLP, and
// the final readout. Names follow the weight naming scheme: "embed",
// "a{layer}.h{head}", "m{layer}", "final".
// ---------------------------------------------------------------------------

enum class NodeKind { Embed, Head, Mlp, Final };

struct NodeId {
    NodeKind kind = NodeKind::Embed;
    int layer = -1; // heads and mlps
    int head = -1;  // heads only

    static NodeId embed() { return {NodeKind::Embed, -1, -1}; }
    static NodeId attn(int layer, int head) { return {NodeKind::Head, layer, head}; }
    static NodeId mlp(int layer) { return {NodeKind::Mlp, layer, -1}; }
    static NodeId final_readout() { return {NodeKind::Final, -1, -1}; }

    // Ordering key consistent with topological order for any architecture:
    // embed first, then layer by layer (heads before the layer's MLP), final
    // last. Does not depend on head count, so it is usable in ordered
    // containers without a config in hand.
    std::tuple<int, int, int, int> order_key() const {
        switch (kind) {
        case NodeKind::Embed: return {0, 0, 0, 0};
        case NodeKind::Head: return {1, layer, 0, head};
        case NodeKind::Mlp: return {1, layer, 1, 0};
        case NodeKind::Final: return {2, 0, 0, 0};
        }
        return {3, 0, 0, 0};
    }

    friend bool operator==(const NodeId& a, const NodeId& b) {
        return a.kind == b.kind && a.layer == b.layer && a.head == b.head;
    }
    friend bool operator<(const NodeId& a, const NodeId& b) { return a.order_key() < b.order_key(); }
};

inline std::string node_name(const NodeId& n) {
    switch (n.kind) {
    case NodeKind::Embed: return "embed";
    case NodeKind::Head: return "a" + std::to_string(n.layer) + ".h" + std::to_string(n.head);
    case NodeKind::Mlp: return "m" + std::to_string(n.layer);
    case NodeKind::Final: return "final";
    }
    throw UsageError("node_name: invalid node kind");
}

namespace detail {

// Strict non-negative integer parse; returns -1 on anything else.
inline int parse_index(const std::string& s) {
    if (s.empty() || s.size() > 6) return -1;
    if (s.size() > 1 && s[0] == '0') return -1;
    int v = 0;
    for (char c : s) {
        if (c < '0' || c > '9') return -1;
        v = v * 10 + (c - '0');
    }
    return v;
}

} // namespace detail

inline NodeId parse_node(const std::string& s) {
    if (s == "embed") return NodeId::embed();
    if (s == "final") return NodeId::final_readout();
    if (s.size() >= 2 && s[0] == 'm') {
        int l = detail::parse_index(s.substr(1));
        if (l >= 0) return NodeId::mlp(l);
    }
    if (s.size() >= 4 && s[0] == 'a') {
        size_t dot = s.find(".h");
        if (dot != std::string::npos) {
            int l = detail::parse_index(s.substr(1, dot - 1));
            int h = detail::parse_index(s.substr(dot + 2));
            if (l >= 0 && h >= 0) return NodeId::attn(l, h);
        }
    }
    throw DataError("unknown node name '" + s + "'");
}

// ---------------------------------------------------------------------------
// Channels and edges
// ---------------------------------------------------------------------------

// Input channel of the destination node. Heads read the residual stream three
// times (query, key, value); MLPs and the final readout read it once.
enum class Channel { Q, K, V, In };

inline std::string channel_name(Channel c) {
    switch (c) {
    case Channel::Q: return "q";
    case Channel::K: return "k";
    case Channel::V: return "v";
    case Channel::In: return "in";
    }
    throw UsageError("channel_name: invalid channel");
}

inline const std::vector<Channel>& channels_for(NodeKind kind) {
    static const std::vector<Channel> head_channels = {Channel::Q, Channel::K, Channel::V};
    static const std::vector<Channel> input_channel = {Channel::In};
    static const std::vector<Channel> none = {};
    switch (kind) {
    case NodeKind::Head: return head_channels;
    case NodeKind::Mlp: return input_channel;
    case NodeKind::Final: return input_channel;
    case NodeKind::Embed: return none;
    }
    return none;
}

struct EdgeId {
    NodeId src;
    NodeId dst;
    Channel channel = Channel::In;

    friend bool operator==(const EdgeId& a, const EdgeId& b) {
        return a.src == b.src && a.dst == b.dst && a.channel == b.channel;
    }
    // Canonical order: destination (topological), then source, then channel
    // (q before k before v).
    friend bool operator<(const EdgeId& a, const EdgeId& b) {
        auto ka = std::make_tuple(a.dst.order_key(), a.src.order_key(), static_cast<int>(a.channel));
        auto kb = std::make_tuple(b.dst.order_key(), b.src.order_key(), static_cast<int>(b.channel));
        return ka < kb;
    }
};

// "src->dst.channel"; the channel suffix is dropped for single-input
// destinations, e.g. "embed->a0.h1.q", "a0.h1->m0", "m0->final".
inline std::string edge_name(const EdgeId& e) {
    std::string s = node_name(e.src) + "->" + node_name(e.dst);
    if (e.dst.kind == NodeKind::Head) s += "." + channel_name(e.channel);
    return s;
}

// ---------------------------------------------------------------------------
// DAG structure
// ---------------------------------------------------------------------------

inline void validate_node(const ModelConfig& c, const NodeId& n) {
    switch (n.kind) {
    case NodeKind::Embed:
    case NodeKind::Final:
        return;
    case NodeKind::Head:
        if (n.layer < 0 || n.layer >= c.n_layers || n.head < 0 || n.head >= c.n_heads)
            throw DataError("node '" + node_name(n) + "' out of range for this architecture");
        return;
    case NodeKind::Mlp:
        if (!c.use_mlp)
            throw DataError("node '" + node_name(n) + "' refers to an MLP but the model has none");
        if (n.layer < 0 || n.layer >= c.n_layers)
            throw DataError("node '" + node_name(n) + "' out of range for this architecture");
        return;
    }
    throw DataError("invalid node kind");
}

// True when dst reads src's residual contribution. Heads read strictly
// earlier layers; an MLP additionally reads its own layer's heads; the final
// readout reads everything.
inline bool reads_from(const NodeId& src, const NodeId& dst) {
    if (src.kind == NodeKind::Final || dst.kind == NodeKind::Embed) return false;
    if (src == dst) return false;
    switch (dst.kind) {
    case NodeKind::Final:
        return true;
    case NodeKind::Head:
        if (src.kind == NodeKind::Embed) return true;
        return src.layer < dst.layer;
    case NodeKind::Mlp:
        if (src.kind == NodeKind::Embed) return true;
        if (src.kind == NodeKind::Head) return src.layer <= dst.layer;
        return src.layer < dst.layer; // earlier MLPs
    default:
        return false;
    }
}

// All nodes in topological order.
inline std::vector<NodeId> node_order(const ModelConfig& c) {
    std::vector<NodeId> nodes;
    nodes.push_back(NodeId::embed());
    for (int l = 0; l < c.n_layers; ++l) {
        for (int h = 0; h < c.n_heads; ++h) nodes.push_back(NodeId::attn(l, h));
        if (c.use_mlp) nodes.push_back(NodeId::mlp(l));
    }
    nodes.push_back(NodeId::final_readout());
    return nodes;
}

// Topological index of a node, consistent with node_order.
inline int topo_index(const ModelConfig& c, const NodeId& n) {
    int stride = c.n_heads + (c.use_mlp ? 1 : 0);
    switch (n.kind) {
    case NodeKind::Embed: return 0;
    case NodeKind::Head: return 1 + n.layer * stride + n.head;
    case NodeKind::Mlp: return 1 + n.layer * stride + c.n_heads;
    case NodeKind::Final: return 1 + c.n_layers * stride;
    }
    throw UsageError("topo_index: invalid node kind");
}

inline void validate_edge(const ModelConfig& c, const EdgeId& e) {
    validate_node(c, e.src);
    validate_node(c, e.dst);
    const auto& chans = channels_for(e.dst.kind);
    bool ok = false;
    for (Channel ch : chans)
        if (ch == e.channel) { ok = true; break; }
    if (!ok)
        throw DataError("edge '" + edge_name(e) + "': channel '" + channel_name(e.channel) +
                        "' is not an input channel of '" + node_name(e.dst) + "'");
    if (!reads_from(e.src, e.dst))
        throw DataError("edge '" + edge_name(e) + "': '" + node_name(e.dst) + "' does not read from '" +
                        node_name(e.src) + "'");
}

// Every edge of the graph in canonical order (destination topological, then
// source topological, then channel).
inline std::vector<EdgeId> enumerate_edges(const ModelConfig& c) {
    validate_config(c);
    std::vector<NodeId> nodes = node_order(c);
    std::vector<EdgeId> edges;
    for (const NodeId& dst : nodes) {
        const auto& chans = channels_for(dst.kind);
        if (chans.empty()) continue;
        for (const NodeId& src : nodes) {
            if (!reads_from(src, dst)) continue;
            for (Channel ch : chans) edges.push_back(EdgeId{src, dst, ch});
        }
    }
    return edges;
}

} // namespace circuitkl
