#pragma once

#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "circuitkl/errors.hpp"
#include "circuitkl/graph.hpp"

namespace circuitkl {

// A circuit is a subset of the model's edges, pinned to a specific
// architecture by the config hash so it cannot be evaluated against a model
// of a different shape.
struct Circuit {
    std::string model_config_hash;
    std::set<EdgeId> edges;

    bool contains(const EdgeId& e) const { return edges.count(e) != 0; }
};

inline Circuit full_circuit(const ModelConfig& c) {
    Circuit circ;
    circ.model_config_hash = config_hash(c);
    for (const EdgeId& e : enumerate_edges(c)) circ.edges.insert(e);
    return circ;
}

inline Circuit empty_circuit(const ModelConfig& c) {
    Circuit circ;
    circ.model_config_hash = config_hash(c);
    return circ;
}

// Every edge of the architecture not present in the circuit. The complement
// of the full circuit is empty and vice versa.
inline Circuit complement(const Circuit& circ, const ModelConfig& c) {
    if (circ.model_config_hash != config_hash(c))
        throw DataError("complement: circuit was built for a different architecture (hash " +
                        circ.model_config_hash + " vs " + config_hash(c) + ")");
    Circuit out;
    out.model_config_hash = circ.model_config_hash;
    for (const EdgeId& e : enumerate_edges(c))
        if (!circ.contains(e)) out.edges.insert(e);
    return out;
}

// Edge grammar: "src->dst" or "src->dst.channel". The channel part is
// required for head destinations (q, k or v) and must be omitted or "in" for
// single-input destinations.
inline EdgeId parse_edge(const std::string& s, const ModelConfig& c) {
    size_t arrow = s.find("->");
    if (arrow == std::string::npos || arrow == 0 || arrow + 2 >= s.size())
        throw DataError("edge '" + s + "': expected 'src->dst.channel'");
    std::string src_s = s.substr(0, arrow);
    std::string rest = s.substr(arrow + 2);

    NodeId src = parse_node(src_s);

    // The destination may itself contain dots ("a0.h1"), so try the longest
    // prefix that parses as a node, then treat any remainder as the channel.
    NodeId dst;
    std::string chan_s;
    bool parsed = false;
    size_t pos = rest.size();
    while (true) {
        std::string cand = rest.substr(0, pos);
        try {
            dst = parse_node(cand);
            chan_s = pos < rest.size() ? rest.substr(pos + 1) : "";
            parsed = true;
            break;
        } catch (const DataError&) {
        }
        pos = cand.rfind('.');
        if (pos == std::string::npos) break;
    }
    if (!parsed) throw DataError("edge '" + s + "': unknown destination node");

    Channel ch;
    if (chan_s.empty()) {
        if (dst.kind == NodeKind::Head)
            throw DataError("edge '" + s + "': head destinations need an explicit channel (q, k or v)");
        ch = Channel::In;
    } else if (chan_s == "q") ch = Channel::Q;
    else if (chan_s == "k") ch = Channel::K;
    else if (chan_s == "v") ch = Channel::V;
    else if (chan_s == "in") ch = Channel::In;
    else throw DataError("edge '" + s + "': unknown channel '" + chan_s + "'");

    EdgeId e{src, dst, ch};
    validate_edge(c, e);
    return e;
}

inline nlohmann::json circuit_to_json(const Circuit& circ) {
    nlohmann::json edges = nlohmann::json::array();
    for (const EdgeId& e : circ.edges) edges.push_back(edge_name(e)); // set order == canonical order
    nlohmann::json doc;
    doc["format_version"] = 1;
    doc["model_config_hash"] = circ.model_config_hash;
    doc["edges"] = std::move(edges);
    return doc;
}

inline Circuit circuit_from_json(const nlohmann::json& doc, const ModelConfig& c) {
    if (!doc.is_object()) throw DataError("circuit file: top level must be an object");
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const std::string& k = it.key();
        if (k != "format_version" && k != "model_config_hash" && k != "edges")
            throw DataError("circuit file: unknown key '" + k + "'");
    }
    if (!doc.contains("format_version") || !doc["format_version"].is_number_integer() ||
        doc["format_version"].get<int>() != 1)
        throw DataError("circuit file: missing or unsupported format_version (expected 1)");
    if (!doc.contains("model_config_hash") || !doc["model_config_hash"].is_string())
        throw DataError("circuit file: missing model_config_hash");
    if (!doc.contains("edges") || !doc["edges"].is_array())
        throw DataError("circuit file: missing edges array");

    Circuit circ;
    circ.model_config_hash = doc["model_config_hash"].get<std::string>();
    if (circ.model_config_hash != config_hash(c))
        throw DataError("circuit file: built for a different architecture (hash " +
                        circ.model_config_hash + ", model has " + config_hash(c) + ")");
    for (const auto& item : doc["edges"]) {
        if (!item.is_string()) throw DataError("circuit file: edges must be strings");
        EdgeId e = parse_edge(item.get<std::string>(), c);
        if (circ.contains(e)) throw DataError("circuit file: duplicate edge '" + edge_name(e) + "'");
        circ.edges.insert(e);
    }
    return circ;
}

inline void save_circuit(const Circuit& circ, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << circuit_to_json(circ).dump(2) << "\n";
    if (!out) throw DataError("write failed for '" + path + "'");
}

inline Circuit load_circuit(const std::string& path, const ModelConfig& c) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open circuit file '" + path + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("circuit file '" + path + "': " + e.what());
    }
    return circuit_from_json(doc, c);
}

} // namespace circuitkl
