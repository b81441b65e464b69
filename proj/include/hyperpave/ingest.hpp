// ingest.hpp - product/session record parsing, hypergraph construction, node features
#ifndef HYPERPAVE_INGEST_HPP
#define HYPERPAVE_INGEST_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "hyperpave/hypergraph.hpp"

namespace hyperpave::ingest {

struct AspectPair {
    std::string attribute;
    std::string value;
};

struct ProductRecord {
    std::string product_key;
    std::string category_key;
    std::string title;
    std::string description;
    std::vector<AspectPair> aspects;
};

enum class SessionKind : std::uint8_t { View, Buy };

struct SessionRecord {
    std::string user_key;
    SessionKind kind = SessionKind::View;
    std::vector<std::string> product_keys;  // deduplicated on read
};

// Line-delimited JSON, one record per line. Malformed lines raise InputError
// naming file and line number.
std::vector<ProductRecord> read_products(const std::string& path);
std::vector<SessionRecord> read_sessions(const std::string& path);

struct BuildStats {
    std::size_t categories = 0;
    std::size_t products = 0;
    std::size_t aspects = 0;
    std::size_t dropped_session_keys = 0;  // session keys not resolving to a product
    std::size_t dropped_sessions = 0;      // sessions left with < 2 products
};

// One Category node per distinct category key, one Product node per record,
// one globally deduplicated Aspect node per "attribute: value" pair.
// Hyperedges: one product_aspects edge per product with aspects, one
// category_bundle per category, one also_view/also_buy edge per session.
// Pairwise C-P and P-A edges are recorded for the final GNN layers.
Hypergraph build_graph(const std::vector<ProductRecord>& products,
                       const std::vector<SessionRecord>& sessions,
                       BuildStats* stats = nullptr);

// Global node key for an attribute-value pair: "attribute: value".
std::string make_aspect_key(const std::string& attribute, const std::string& value);

// Deterministic template standing in for the text generator: "{attribute} is {value}".
std::string expand_aspect_text(const std::string& attribute, const std::string& value);

// Node key -> text used when featurizing the node. Products concatenate
// title and description with encoder-style separator tokens; aspects use the
// expanded template; categories use their key.
using PayloadMap = std::unordered_map<std::string, std::string>;
PayloadMap text_payloads(const std::vector<ProductRecord>& products);

// Seeded token-hashing embedding, L2-normalized. Deterministic in
// (text, dim, seed). Empty text yields the zero vector and sets *empty_flag.
std::vector<double> fallback_featurize(const std::string& text, std::size_t dim,
                                       std::uint64_t seed, bool* empty_flag = nullptr);

struct FeatureStore {
    std::size_t dim = 0;
    std::unordered_map<std::string, std::vector<double>> entries;

    const std::vector<double>& at(const std::string& key) const;
    bool contains(const std::string& key) const { return entries.count(key) != 0; }
};

struct LoadStats {
    std::size_t file_records = 0;
    std::size_t matched = 0;    // file records covering a graph node
    std::size_t fallback = 0;   // nodes featurized by fallback hashing
    std::size_t empty_texts = 0;
};

// Resolve a feature vector for every node of the graph. When `path` is set,
// the file's declared dim governs and nodes missing from the file fall back
// to fallback_featurize over their text payload (the node key when no
// payload is known). Without a path everything is fallback-featurized at
// `fallback_dim`.
FeatureStore load_features(const std::optional<std::string>& path, const Hypergraph& g,
                           const PayloadMap& payloads, std::size_t fallback_dim,
                           std::uint64_t seed, LoadStats* stats = nullptr);

// Writes the features file format ("dim=<d>" header, then key<TAB>csv rows),
// keys sorted. Counterpart of load_features, used to materialize fixtures.
void write_features(const std::string& path, const FeatureStore& store);

}  // namespace hyperpave::ingest

#endif  // HYPERPAVE_INGEST_HPP
