#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "circuitkl/errors.hpp"
#include "circuitkl/rng.hpp"

namespace circuitkl {

// ---------------------------------------------------------------------------
// Tokenizer
//
// Word-level with one twist: four-digit year strings are not vocabulary
// entries; they split into two adjacent two-digit tokens ("1694" -> "16",
// "94"), and detokenization rejoins adjacent two-digit tokens without a
// space so the round trip is exact.
// ---------------------------------------------------------------------------

struct Tokenizer {
    std::vector<std::string> words;
    std::unordered_map<std::string, int> ids;

    explicit Tokenizer(std::vector<std::string> vocab) : words(std::move(vocab)) {
        for (size_t i = 0; i < words.size(); ++i) {
            auto [_, fresh] = ids.emplace(words[i], static_cast<int>(i));
            if (!fresh) throw UsageError("tokenizer: duplicate vocabulary word '" + words[i] + "'");
        }
    }

    static bool is_digit_pair(const std::string& w) {
        return w.size() == 2 && w[0] >= '0' && w[0] <= '9' && w[1] >= '0' && w[1] <= '9';
    }

    int id_of(const std::string& w) const {
        auto it = ids.find(w);
        if (it == ids.end()) throw DataError("tokenizer: unknown word '" + w + "'");
        return it->second;
    }

    std::vector<int> tokenize(const std::string& text) const {
        std::vector<int> out;
        size_t i = 0;
        while (i < text.size()) {
            while (i < text.size() && text[i] == ' ') ++i;
            if (i >= text.size()) break;
            size_t j = i;
            while (j < text.size() && text[j] != ' ') ++j;
            std::string word = text.substr(i, j - i);
            auto it = ids.find(word);
            if (it != ids.end()) {
                out.push_back(it->second);
            } else if (word.size() == 4 && is_digit_pair(word.substr(0, 2)) &&
                       is_digit_pair(word.substr(2, 2))) {
                out.push_back(id_of(word.substr(0, 2)));
                out.push_back(id_of(word.substr(2, 2)));
            } else {
                throw DataError("tokenizer: unknown word '" + word + "'");
            }
            i = j;
        }
        return out;
    }

    std::string detokenize(std::span<const int> tokens) const {
        std::string out;
        bool prev_pair = false;
        for (size_t i = 0; i < tokens.size(); ++i) {
            if (tokens[i] < 0 || static_cast<size_t>(tokens[i]) >= words.size())
                throw DataError("tokenizer: token id " + std::to_string(tokens[i]) + " out of range");
            const std::string& w = words[static_cast<size_t>(tokens[i])];
            bool pair = is_digit_pair(w);
            if (i > 0 && !(prev_pair && pair)) out += ' ';
            out += w;
            prev_pair = pair;
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Task templates
// ---------------------------------------------------------------------------

enum class Role { Clean, Corrupt };

inline std::string role_name(Role r) { return r == Role::Clean ? "clean" : "corrupt"; }

struct PromptInstance {
    std::string text;
    std::vector<int> tokens;
    std::map<std::string, std::string> fields;
    std::set<int> expected_tokens; // acceptable next tokens; may be empty for corrupt prompts
};

// A built-in prompt family. Patterns contain {slot} markers; slots are drawn
// from candidate lists in a fixed order per role, so a (seed, role, index)
// triple always produces the same prompt.
struct TaskTemplate {
    std::string name;
    std::string clean_pattern;
    std::string corrupt_pattern;
    std::map<std::string, std::vector<std::string>> lists;
    // Fields that must agree between a clean and a corrupt prompt for the
    // pair to count as matched.
    std::vector<std::string> matched_fields;
};

namespace detail {

inline std::vector<std::string> name_list() {
    return {"Tiffany", "Sean", "Samuel", "Adam", "Daniel", "Crystal", "Tyler", "William",
            "Erica", "Justin", "Brittany", "Brian", "Allison", "Kevin", "Joseph", "Thomas"};
}

inline std::vector<std::string> place_list() {
    return {"house", "garden", "restaurant", "school", "store", "hospital"};
}

inline std::vector<std::string> object_list() {
    return {"ring", "kiss", "bone", "basketball", "computer", "necklace", "drink", "snack"};
}

inline std::vector<std::string> noun_list() {
    return {"dispute", "voyage", "expedition", "pilgrimage", "raids", "sanctions", "reforms",
            "accord", "flights", "campaign"};
}

inline std::vector<std::string> century_list() { return {"11", "12", "13", "14", "15", "16", "17"}; }

inline std::vector<std::string> two_digit_list(int lo, int hi) {
    std::vector<std::string> out;
    for (int v = lo; v <= hi; ++v) {
        char buf[3] = {static_cast<char>('0' + v / 10), static_cast<char>('0' + v % 10), 0};
        out.emplace_back(buf);
    }
    return out;
}

inline std::vector<std::string> fname_list() {
    return {"load", "save", "process", "update", "parse", "render", "fetch", "merge", "filter",
            "format", "extract", "convert"};
}

inline std::vector<std::string> param_list() {
    return {"size", "files", "last", "access", "file", "param", "text", "data", "user", "event",
            "index", "count", "path", "value", "name", "key", "result", "items", "mode", "level"};
}

inline std::vector<std::string> filler_list() {
    return {"the", "of", "to", "for", "from", "current", "given", "new", "a", "in", "with",
            "each", "this", "all", "first", "input"};
}

} // namespace detail

// swap_intro reverses the order in which the two names are introduced in the
// name task's first sentence ("B and A" instead of "A and B"); the giver and
// the expected answer are unchanged.
inline TaskTemplate builtin_template(const std::string& task, bool swap_intro = false) {
    TaskTemplate t;
    t.name = task;
    if (task == "ioi") {
        const char* intro = swap_intro ? "Then, {name2} and {name1}" : "Then, {name1} and {name2}";
        t.clean_pattern =
            std::string(intro) + " went to the {place}. {name2} gave a {object} to";
        t.corrupt_pattern =
            std::string(intro) + " went to the {place}. {name3} gave a {object} to";
        t.lists["names"] = detail::name_list();
        t.lists["places"] = detail::place_list();
        t.lists["objects"] = detail::object_list();
        t.matched_fields = {"place", "object"};
    } else if (task == "greaterthan") {
        if (swap_intro) throw UsageError("task 'greaterthan' has no introduction-order variation");
        t.clean_pattern = "The {noun} lasted from the year {century}{yy} to {century}";
        t.corrupt_pattern = t.clean_pattern;
        t.lists["nouns"] = detail::noun_list();
        t.lists["centuries"] = detail::century_list();
        t.lists["years"] = detail::two_digit_list(2, 98);
        t.matched_fields = {"noun", "century"};
    } else if (task == "docstring") {
        if (swap_intro) throw UsageError("task 'docstring' has no introduction-order variation");
        t.clean_pattern =
            "def {fname} ( self {a0} {a1} {a2} {a3} {a4} {a5} ) : {d0} {d1} {d2} "
            ":param {b0} : {p1a} {p1b} :param {b1} : {p2a} {p2b} :param";
        t.corrupt_pattern = t.clean_pattern;
        t.lists["fnames"] = detail::fname_list();
        t.lists["params"] = detail::param_list();
        t.lists["fillers"] = detail::filler_list();
        t.matched_fields = {"fname", "a0", "a1", "a2", "a3", "a4", "a5",
                            "d0", "d1", "d2", "p1a", "p1b", "p2a", "p2b"};
    } else {
        throw UsageError("unknown task '" + task + "' (expected ioi, greaterthan or docstring)");
    }
    return t;
}

// Vocabulary in a fixed documented order: the template's fixed words in
// order of first appearance, then each candidate list. For the name task the
// place names carry their sentence-final period as part of the word.
inline Tokenizer build_tokenizer(const TaskTemplate& t) {
    std::vector<std::string> words;
    if (t.name == "ioi") {
        words = {"Then,", "and", "went", "to", "the", "gave", "a"};
        for (const auto& w : t.lists.at("names")) words.push_back(w);
        for (const auto& w : t.lists.at("places")) words.push_back(w + ".");
        for (const auto& w : t.lists.at("objects")) words.push_back(w);
    } else if (t.name == "greaterthan") {
        words = {"The", "lasted", "from", "the", "year", "to"};
        for (const auto& w : t.lists.at("nouns")) words.push_back(w);
        for (const auto& w : detail::two_digit_list(0, 99)) words.push_back(w);
    } else if (t.name == "docstring") {
        words = {"def", "(", "self", ")", ":", ":param"};
        for (const auto& w : t.lists.at("fnames")) words.push_back(w);
        for (const auto& w : t.lists.at("params")) words.push_back(w);
        for (const auto& w : t.lists.at("fillers")) words.push_back(w);
    } else {
        throw UsageError("unknown task '" + t.name + "'");
    }
    return Tokenizer(std::move(words));
}

namespace detail {

inline std::string render_pattern(const std::string& pattern,
                                  const std::map<std::string, std::string>& fields) {
    std::string out;
    size_t i = 0;
    while (i < pattern.size()) {
        if (pattern[i] == '{') {
            size_t close = pattern.find('}', i);
            if (close == std::string::npos)
                throw UsageError("template pattern: unterminated '{'");
            std::string key = pattern.substr(i + 1, close - i - 1);
            auto it = fields.find(key);
            if (it == fields.end())
                throw UsageError("template pattern: no value for slot '" + key + "'");
            out += it->second;
            i = close + 1;
        } else {
            out += pattern[i++];
        }
    }
    return out;
}

inline const std::string& pick(Rng& rng, const std::vector<std::string>& list) {
    return list[rng.below(list.size())];
}

// Uniform draw from `list` excluding the listed values (sequential
// rejection; keeps each slot's marginal distribution uniform).
inline const std::string& pick_excluding(Rng& rng, const std::vector<std::string>& list,
                                         std::span<const std::string* const> taken) {
    while (true) {
        const std::string& cand = pick(rng, list);
        bool clash = false;
        for (const std::string* t : taken)
            if (*t == cand) { clash = true; break; }
        if (!clash) return cand;
    }
}

} // namespace detail

// Deterministic prompt generation: prompt i of a role draws its slots from a
// stream seeded by (seed, task, role, i), so regenerating any subset gives
// identical prompts. Expected tokens: the name task expects the name
// mentioned once (none for the three-name corruption); the year task expects
// every two-digit token strictly greater than the start year; the docstring
// task expects the parameter after the two described ones (none for the
// corruption, whose described parameters are absent from the signature).
inline std::vector<PromptInstance> generate_prompts(const TaskTemplate& t, long long n,
                                                    uint64_t seed, Role role) {
    if (n < 0) throw UsageError("generate_prompts: n must be >= 0");
    Tokenizer tok = build_tokenizer(t);
    std::vector<PromptInstance> out;
    out.reserve(static_cast<size_t>(n));
    const std::string stream_tag = t.name + ":" + role_name(role);
    const std::string& pattern = role == Role::Clean ? t.clean_pattern : t.corrupt_pattern;

    for (long long i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, stream_tag, static_cast<uint64_t>(i)));
        PromptInstance p;
        auto& f = p.fields;
        if (t.name == "ioi") {
            const auto& names = t.lists.at("names");
            f["name1"] = detail::pick(rng, names);
            {
                const std::string* taken[] = {&f["name1"]};
                f["name2"] = detail::pick_excluding(rng, names, taken);
            }
            if (role == Role::Corrupt) {
                const std::string* taken[] = {&f["name1"], &f["name2"]};
                f["name3"] = detail::pick_excluding(rng, names, taken);
            }
            f["place"] = detail::pick(rng, t.lists.at("places"));
            f["object"] = detail::pick(rng, t.lists.at("objects"));
            if (role == Role::Clean) p.expected_tokens.insert(tok.id_of(f["name1"]));
        } else if (t.name == "greaterthan") {
            f["noun"] = detail::pick(rng, t.lists.at("nouns"));
            f["century"] = detail::pick(rng, t.lists.at("centuries"));
            f["yy"] = role == Role::Clean ? detail::pick(rng, t.lists.at("years")) : "01";
            int yy = (f["yy"][0] - '0') * 10 + (f["yy"][1] - '0');
            for (int v = yy + 1; v <= 99; ++v) {
                char buf[3] = {static_cast<char>('0' + v / 10), static_cast<char>('0' + v % 10), 0};
                p.expected_tokens.insert(tok.id_of(buf));
            }
        } else if (t.name == "docstring") {
            const auto& params = t.lists.at("params");
            f["fname"] = detail::pick(rng, t.lists.at("fnames"));
            std::vector<const std::string*> sig;
            for (int a = 0; a < 6; ++a) {
                std::string key = "a" + std::to_string(a);
                f[key] = detail::pick_excluding(rng, params, sig);
                sig.push_back(&f[key]);
            }
            const auto& fillers = t.lists.at("fillers");
            for (const char* key : {"d0", "d1", "d2", "p1a", "p1b", "p2a", "p2b"})
                f[key] = detail::pick(rng, fillers);
            if (role == Role::Clean) {
                f["b0"] = f["a2"];
                f["b1"] = f["a3"];
                p.expected_tokens.insert(tok.id_of(f["a4"]));
            } else {
                f["b0"] = detail::pick_excluding(rng, params, sig);
                sig.push_back(&f["b0"]);
                f["b1"] = detail::pick_excluding(rng, params, sig);
            }
        } else {
            throw UsageError("unknown task '" + t.name + "'");
        }
        p.text = detail::render_pattern(pattern, f);
        p.tokens = tok.tokenize(p.text);
        out.push_back(std::move(p));
    }

    // All prompts of a template tokenize to the same length; catching a
    // violation here keeps pairing and batching honest.
    for (size_t i = 1; i < out.size(); ++i)
        if (out[i].tokens.size() != out[0].tokens.size())
            throw DataError("generate_prompts: prompt lengths diverge within task '" + t.name + "'");
    return out;
}

// ---------------------------------------------------------------------------
// Pairing
// ---------------------------------------------------------------------------

enum class PairingMode { Cross, Matched };

inline PairingMode parse_pairing_mode(const std::string& s) {
    if (s == "cross") return PairingMode::Cross;
    if (s == "matched") return PairingMode::Matched;
    throw UsageError("unknown pairing mode '" + s + "' (expected cross or matched)");
}

// Index pairs (clean, corrupt). Cross is the full product in row-major
// order; matched keeps exactly the pairs whose matched_fields agree, i.e.
// the inner join of the two prompt lists on those fields.
inline std::vector<std::pair<int, int>> generate_pairs(const std::vector<PromptInstance>& clean,
                                                       const std::vector<PromptInstance>& corrupt,
                                                       PairingMode mode, const TaskTemplate& t) {
    std::vector<std::pair<int, int>> pairs;
    if (mode == PairingMode::Cross) {
        pairs.reserve(clean.size() * corrupt.size());
        for (size_t i = 0; i < clean.size(); ++i)
            for (size_t j = 0; j < corrupt.size(); ++j)
                pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
        return pairs;
    }
    for (size_t i = 0; i < clean.size(); ++i) {
        for (size_t j = 0; j < corrupt.size(); ++j) {
            bool match = true;
            for (const std::string& field : t.matched_fields) {
                auto ci = clean[i].fields.find(field);
                auto ki = corrupt[j].fields.find(field);
                if (ci == clean[i].fields.end() || ki == corrupt[j].fields.end() ||
                    ci->second != ki->second) {
                    match = false;
                    break;
                }
            }
            if (match) pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
        }
    }
    if (pairs.empty())
        throw DataError("matched pairing for task '" + t.name +
                        "' produced no pairs (no clean/corrupt prompts share " +
                        "the matched fields)");
    return pairs;
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

// JSONL: one meta line, then one record per prompt (clean split first).
inline void dump_dataset(const TaskTemplate& t, const std::vector<PromptInstance>& clean,
                         const std::vector<PromptInstance>& corrupt, uint64_t seed,
                         const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    nlohmann::ordered_json meta;
    meta["format_version"] = 1;
    meta["task"] = t.name;
    meta["n_clean"] = clean.size();
    meta["n_corrupt"] = corrupt.size();
    meta["seed"] = seed;
    out << meta.dump() << "\n";
    auto write_rows = [&](const std::vector<PromptInstance>& rows, const char* role) {
        for (size_t i = 0; i < rows.size(); ++i) {
            nlohmann::ordered_json rec;
            rec["role"] = role;
            rec["index"] = i;
            rec["text"] = rows[i].text;
            rec["fields"] = rows[i].fields;
            rec["expected_tokens"] = rows[i].expected_tokens;
            out << rec.dump() << "\n";
        }
    };
    write_rows(clean, "clean");
    write_rows(corrupt, "corrupt");
    if (!out) throw DataError("write failed for '" + path + "'");
}

inline void dump_vocab(const TaskTemplate& t, const std::string& path) {
    Tokenizer tok = build_tokenizer(t);
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    for (const std::string& w : tok.words) out << w << "\n";
    if (!out) throw DataError("write failed for '" + path + "'");
}

} // namespace circuitkl
