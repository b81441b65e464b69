#include "hyperpave/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <unordered_map>
#include <unordered_set>

namespace hyperpave::model {

namespace ad = hyperpave::autodiff;
using ad::Param;
using ad::Tensor;
using ad::Var;
using ingest::FeatureStore;

void ModelConfig::validate() const {
    if (dim < 1 || heads < 1 || hyper_layers < 1 || gnn_layers < 1 || neighbor_cap < 1)
        throw InvariantError("ModelConfig: all counts must be >= 1");
    if (dim % heads != 0)
        throw InvariantError("ModelConfig: dim (" + std::to_string(dim) +
                             ") must be divisible by heads (" + std::to_string(heads) + ")");
    if (!(leaky_slope > 0.0)) throw InvariantError("ModelConfig: leaky_slope must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0))
        throw InvariantError("ModelConfig: dropout must be in [0, 1)");
}

void FusionWeights::validate() const {
    if (!(alpha >= 0.0 && beta >= 0.0 && alpha + beta <= 1.0 && gamma >= 0.0 && gamma <= 1.0 &&
          delta >= 0.0 && delta <= 1.0))
        throw InvariantError("FusionWeights outside the valid simplex");
}

// ---------------------------------------------------------------------------
// parameters

namespace {

const char* kind_tag(NodeKind k) { return to_string(k); }

Tensor xavier_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Tensor t = Tensor::matrix(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
    return t;
}

Tensor xavier_vector(std::size_t len, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(len + 1));
    Tensor t(std::vector<std::size_t>{len});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
    return t;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::size_t feature_dim,
                              std::uint64_t seed) {
    config.validate();
    if (feature_dim < 1) throw InvariantError("feature_dim must be >= 1");
    ModelParams p;
    p.config_ = config;
    p.feature_dim_ = feature_dim;
    Rng rng(derive_seed(seed, "params"));
    const std::size_t hd = config.head_dim();

    for (NodeKind k : {NodeKind::Category, NodeKind::Product, NodeKind::Aspect}) {
        const std::string base = std::string("proj.") + kind_tag(k);
        p.params_.emplace_back(base + ".w", xavier_matrix(config.dim, feature_dim, rng));
        p.params_.emplace_back(base + ".b", Tensor(std::vector<std::size_t>{config.dim}));
    }
    for (std::size_t ch = 0; ch < kHyperedgeKinds; ++ch) {
        const std::string cname = to_string(static_cast<HyperedgeKind>(ch));
        for (std::size_t layer = 0; layer < config.hyper_layers; ++layer)
            for (std::size_t head = 0; head < config.heads; ++head) {
                const std::string base = "mp." + cname + ".l" + std::to_string(layer) + ".h" +
                                         std::to_string(head);
                p.params_.emplace_back(base + ".node_w", xavier_matrix(hd, config.dim, rng));
                p.params_.emplace_back(base + ".node_attn", xavier_vector(hd, rng));
                p.params_.emplace_back(base + ".edge_w", xavier_matrix(hd, config.dim, rng));
                p.params_.emplace_back(base + ".pair_attn", xavier_vector(2 * hd, rng));
            }
    }
    for (std::size_t l = 0; l < config.gnn_layers; ++l)
        p.params_.emplace_back("gnn.l" + std::to_string(l) + ".w",
                               xavier_matrix(config.dim, config.dim, rng));
    return p;
}

std::size_t ModelParams::mp_index(std::size_t ch, std::size_t layer, std::size_t head,
                                  std::size_t which) const {
    if (ch >= kHyperedgeKinds || layer >= config_.hyper_layers || head >= config_.heads)
        throw InvariantError("message-passing parameter index out of range");
    return 6 + ((ch * config_.hyper_layers + layer) * config_.heads + head) * 4 + which;
}

std::size_t ModelParams::gnn_index(std::size_t layer) const {
    if (layer >= config_.gnn_layers) throw InvariantError("gnn layer index out of range");
    return 6 + kHyperedgeKinds * config_.hyper_layers * config_.heads * 4 + layer;
}

Param& ModelParams::msg_node_w(std::size_t ch, std::size_t layer, std::size_t head) {
    return params_[mp_index(ch, layer, head, 0)];
}
Param& ModelParams::attn_node(std::size_t ch, std::size_t layer, std::size_t head) {
    return params_[mp_index(ch, layer, head, 1)];
}
Param& ModelParams::msg_edge_w(std::size_t ch, std::size_t layer, std::size_t head) {
    return params_[mp_index(ch, layer, head, 2)];
}
Param& ModelParams::attn_pair(std::size_t ch, std::size_t layer, std::size_t head) {
    return params_[mp_index(ch, layer, head, 3)];
}
Param& ModelParams::gnn_w(std::size_t layer) { return params_[gnn_index(layer)]; }

const Param& ModelParams::msg_node_w(std::size_t ch, std::size_t layer, std::size_t head) const {
    return params_[mp_index(ch, layer, head, 0)];
}
const Param& ModelParams::attn_node(std::size_t ch, std::size_t layer, std::size_t head) const {
    return params_[mp_index(ch, layer, head, 1)];
}
const Param& ModelParams::msg_edge_w(std::size_t ch, std::size_t layer, std::size_t head) const {
    return params_[mp_index(ch, layer, head, 2)];
}
const Param& ModelParams::attn_pair(std::size_t ch, std::size_t layer, std::size_t head) const {
    return params_[mp_index(ch, layer, head, 3)];
}
const Param& ModelParams::gnn_w(std::size_t layer) const { return params_[gnn_index(layer)]; }

void ModelParams::zero_grads() {
    for (Param& p : params_) p.zero_grad();
}

double ModelParams::grad_norm() const {
    double acc = 0.0;
    for (const Param& p : params_)
        for (double g : p.grad.values()) acc += g * g;
    return std::sqrt(acc);
}

double ModelParams::value_norm() const {
    double acc = 0.0;
    for (const Param& p : params_)
        for (double v : p.value.values()) acc += v * v;
    return std::sqrt(acc);
}

std::uint64_t ModelParams::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Param& p : params_) {
        h = fnv1a64(p.name, h);
        h = fnv1a64_bytes(p.value.data(), p.value.size() * sizeof(double), h);
    }
    return h;
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

constexpr char kCkptMagic[] = "HPAVECKPT1\n";
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DependencyError("truncated checkpoint file: " + path);
    return v;
}

}  // namespace

void ModelParams::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write checkpoint: " + path);
    out.write(kCkptMagic, sizeof(kCkptMagic) - 1);
    write_pod(out, kCkptVersion);
    for (std::uint64_t v : {static_cast<std::uint64_t>(config_.dim),
                            static_cast<std::uint64_t>(config_.heads),
                            static_cast<std::uint64_t>(config_.hyper_layers),
                            static_cast<std::uint64_t>(config_.gnn_layers),
                            static_cast<std::uint64_t>(config_.neighbor_cap),
                            static_cast<std::uint64_t>(feature_dim_)})
        write_pod(out, v);
    write_pod(out, config_.leaky_slope);
    write_pod(out, config_.dropout);
    write_pod(out, static_cast<std::uint32_t>(params_.size()));
    for (const Param& p : params_) {
        write_pod(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_pod(out, static_cast<std::uint32_t>(p.value.rank()));
        for (std::size_t d : p.value.shape()) write_pod(out, static_cast<std::uint64_t>(d));
        out.write(reinterpret_cast<const char*>(p.value.data()),
                  static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    }
    if (!out) throw InputError("write failed for checkpoint: " + path);
}

ModelParams ModelParams::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DependencyError("checkpoint not found: " + path + " (run the train command first)");
    char magic[sizeof(kCkptMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw DependencyError("checkpoint " + path + " has the wrong magic header");
    if (read_pod<std::uint32_t>(in, path) != kCkptVersion)
        throw DependencyError("checkpoint " + path + " has an unsupported version");

    ModelConfig cfg;
    cfg.dim = read_pod<std::uint64_t>(in, path);
    cfg.heads = read_pod<std::uint64_t>(in, path);
    cfg.hyper_layers = read_pod<std::uint64_t>(in, path);
    cfg.gnn_layers = read_pod<std::uint64_t>(in, path);
    cfg.neighbor_cap = read_pod<std::uint64_t>(in, path);
    const std::size_t feature_dim = read_pod<std::uint64_t>(in, path);
    cfg.leaky_slope = read_pod<double>(in, path);
    cfg.dropout = read_pod<double>(in, path);

    ModelParams expect = ModelParams::init(cfg, feature_dim, 0);
    const std::uint32_t count = read_pod<std::uint32_t>(in, path);
    if (count != expect.params_.size())
        throw DependencyError("checkpoint " + path + " has the wrong parameter count");
    for (Param& p : expect.params_) {
        const std::uint32_t name_len = read_pod<std::uint32_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const std::uint32_t rank = read_pod<std::uint32_t>(in, path);
        std::vector<std::size_t> shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d)
            shape[d] = static_cast<std::size_t>(read_pod<std::uint64_t>(in, path));
        if (!in || name != p.name || shape != p.value.shape())
            throw DependencyError("checkpoint " + path + " has unexpected block '" + name + "'");
        in.read(reinterpret_cast<char*>(p.value.data()),
                static_cast<std::streamsize>(p.value.size() * sizeof(double)));
        if (!in) throw DependencyError("truncated checkpoint file: " + path);
        p.zero_grad();
    }
    return expect;
}

// ---------------------------------------------------------------------------
// graph index

namespace {

std::uint64_t pair_key(NodeId p, NodeId a) {
    return (static_cast<std::uint64_t>(p) << 32) | a;
}

}  // namespace

GraphIndex::GraphIndex(const Hypergraph& g, std::span<const CandidateLink> exclude_pairs)
    : g_(&g) {
    if (!g.finalized()) throw InvariantError("GraphIndex needs a finalized graph");
    const std::size_t v_count = g.node_count();
    auto by_key = [&](NodeId x, NodeId y) { return g.key_of(x) < g.key_of(y); };

    std::unordered_set<std::uint64_t> excluded;
    for (const CandidateLink& c : exclude_pairs) excluded.insert(pair_key(c.product, c.aspect));

    for (std::size_t k = 0; k < kHyperedgeKinds; ++k) {
        Channel& ch = channels_[k];
        ch.incident.assign(v_count, {});
        for (const Hyperedge& e : g.hyperedges()) {
            if (e.kind != static_cast<HyperedgeKind>(k)) continue;
            std::vector<NodeId> members = e.members;
            // A product_aspects edge encodes the product's links; memberships
            // of link pairs under evaluation are hidden from message passing.
            if (e.kind == HyperedgeKind::ProductAspects && !excluded.empty()) {
                NodeId product = members.front();
                for (NodeId v : members)
                    if (g.kind_of(v) == NodeKind::Product) product = v;
                std::erase_if(members, [&](NodeId v) {
                    return g.kind_of(v) == NodeKind::Aspect &&
                           excluded.count(pair_key(product, v));
                });
                if (members.size() < 2) continue;
            }
            const std::size_t col = ch.edges.size();
            ch.edges.push_back(e.id);
            std::sort(members.begin(), members.end(), by_key);
            for (NodeId v : members) ch.incident[v].push_back(col);
            ch.members.push_back(std::move(members));
        }
        // Canonical incident order: by the edge's member-key sequence, so it is
        // stable under node insertion permutations.
        auto edge_less = [&](std::size_t a, std::size_t b) {
            const auto& ma = ch.members[a];
            const auto& mb = ch.members[b];
            const std::size_t n = std::min(ma.size(), mb.size());
            for (std::size_t i = 0; i < n; ++i) {
                const std::string& ka = g.key_of(ma[i]);
                const std::string& kb = g.key_of(mb[i]);
                if (ka != kb) return ka < kb;
            }
            return ma.size() < mb.size();
        };
        for (auto& inc : ch.incident) std::stable_sort(inc.begin(), inc.end(), edge_less);
    }

    gnn_neighbors_.assign(v_count, {});
    for (const PairEdge& p : g.pair_edges()) {
        if (p.kind == PairKind::ProductAspect && excluded.count(pair_key(p.a, p.b))) continue;
        gnn_neighbors_[p.a].push_back(p.b);
        gnn_neighbors_[p.b].push_back(p.a);
    }
    for (auto& nbrs : gnn_neighbors_) {
        std::sort(nbrs.begin(), nbrs.end(), by_key);
        nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
    }
}

// ---------------------------------------------------------------------------
// forward pipeline, templated over the tape engine (training/grad-check) and
// the plain engine (no-grad inference). Both call the same kernels in the
// same order, so their outputs are bit-identical at dropout 0.

namespace {

struct TapeEngine {
    ad::Tape& tape;
    ModelParams& params;
    std::unordered_map<const Param*, Var> bound;

    using Vec = Var;
    using Logit = Var;

    ModelParams& params_ref() { return params; }

    Var bind(Param& p) {
        auto it = bound.find(&p);
        if (it != bound.end()) return it->second;
        Var v = tape.param(p);
        bound.emplace(&p, v);
        return v;
    }
    Vec feature(const std::vector<double>& f) { return tape.constant(Tensor::vector(f)); }
    Vec project(Param& w, Param& b, Vec x) {
        return ad::tanh(ad::add(ad::matvec(bind(w), x), bind(b)));
    }
    Vec transform(Param& w, Vec x) { return ad::matvec(bind(w), x); }
    Logit logit_node(Param& w1, Vec t, double slope) {
        return ad::leaky_relu(ad::dot(bind(w1), t), slope);
    }
    Logit logit_pair(Param& w2, Vec tn, Vec te, double slope) {
        return ad::leaky_relu(ad::dot(bind(w2), ad::concat({tn, te})), slope);
    }
    Vec attention(std::span<const Logit> logits) { return ad::softmax(ad::concat(logits), 0); }
    Vec aggregate(Vec attn, std::span<const Vec> rows) {
        return ad::elu(ad::vecmat(attn, ad::stack_rows(rows)));
    }
    Vec concat_heads(std::span<const Vec> heads) { return ad::concat(heads); }
    Vec mean_self_neighbors(std::span<const Vec> rows) {
        return ad::mean_rows(ad::stack_rows(rows));
    }
    Vec gnn_layer(Param& w, Vec m) { return ad::elu(ad::matvec(bind(w), m)); }
    Vec dropout(Vec x, double p, std::uint64_t seed) { return ad::dropout(x, p, seed); }
    Vec scaled(Vec x, double c) { return ad::scale(x, c); }
    Vec add(Vec x, Vec y) { return ad::add(x, y); }
    std::vector<double> read(Vec v) const { return tape.value(v).values(); }
};

struct PlainEngine {
    const ModelParams& params;

    using Vec = std::vector<double>;
    using Logit = double;

    const ModelParams& params_ref() const { return params; }

    static void check_finite(const Vec& v, const char* op) {
        for (double x : v)
            if (!std::isfinite(x))
                throw InvariantError(std::string("non-finite output of op '") + op + "'");
    }
    Vec feature(const std::vector<double>& f) { return f; }
    Vec project(const Param& w, const Param& b, const Vec& x) {
        Vec y(w.value.rows());
        ad::kernels::matvec(y.data(), w.value.data(), x.data(), w.value.rows(), w.value.cols());
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(y[i] + b.value[i]);
        check_finite(y, "project");
        return y;
    }
    Vec transform(const Param& w, const Vec& x) {
        Vec y(w.value.rows());
        ad::kernels::matvec(y.data(), w.value.data(), x.data(), w.value.rows(), w.value.cols());
        check_finite(y, "transform");
        return y;
    }
    Logit logit_node(const Param& w1, const Vec& t, double slope) {
        return ad::kernels::leaky_relu(ad::kernels::dot(w1.value.data(), t.data(), t.size()),
                                       slope);
    }
    Logit logit_pair(const Param& w2, const Vec& tn, const Vec& te, double slope) {
        Vec cat(tn.size() + te.size());
        std::copy(tn.begin(), tn.end(), cat.begin());
        std::copy(te.begin(), te.end(), cat.begin() + static_cast<std::ptrdiff_t>(tn.size()));
        return ad::kernels::leaky_relu(ad::kernels::dot(w2.value.data(), cat.data(), cat.size()),
                                       slope);
    }
    Vec attention(std::span<const Logit> logits) {
        Vec a(logits.begin(), logits.end());
        ad::kernels::softmax_inplace(a.data(), a.size());
        return a;
    }
    Vec aggregate(const Vec& attn, std::span<const Vec> rows) {
        const std::size_t k = rows.empty() ? 0 : rows[0].size();
        Vec stacked(rows.size() * k);
        for (std::size_t i = 0; i < rows.size(); ++i)
            std::copy(rows[i].begin(), rows[i].end(),
                      stacked.begin() + static_cast<std::ptrdiff_t>(i * k));
        Vec y(k);
        ad::kernels::vecmat(y.data(), attn.data(), stacked.data(), rows.size(), k);
        for (double& x : y) x = ad::kernels::elu(x);
        check_finite(y, "aggregate");
        return y;
    }
    Vec concat_heads(std::span<const Vec> heads) {
        Vec out;
        for (const Vec& h : heads) out.insert(out.end(), h.begin(), h.end());
        return out;
    }
    Vec mean_self_neighbors(std::span<const Vec> rows) {
        const std::size_t k = rows[0].size();
        Vec out(k, 0.0);
        for (const Vec& r : rows)
            for (std::size_t j = 0; j < k; ++j) out[j] += r[j];
        for (double& x : out) x /= static_cast<double>(rows.size());
        return out;
    }
    Vec gnn_layer(const Param& w, const Vec& m) {
        Vec y(w.value.rows());
        ad::kernels::matvec(y.data(), w.value.data(), m.data(), w.value.rows(), w.value.cols());
        for (double& x : y) x = ad::kernels::elu(x);
        check_finite(y, "gnn_layer");
        return y;
    }
    Vec dropout(const Vec&, double, std::uint64_t) {
        throw InvariantError("dropout has no inference path");
    }
    Vec scaled(const Vec& x, double c) {
        Vec y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = c * x[i];
        return y;
    }
    Vec add(const Vec& x, const Vec& y) {
        Vec z(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] + y[i];
        return z;
    }
    std::vector<double> read(const Vec& v) const { return v; }
};

template <class E>
using VecOf = typename E::Vec;

template <class E>
std::vector<VecOf<E>> pipe_init(E& e, const Hypergraph& g, const FeatureStore& features) {
    auto& p = e.params_ref();
    if (features.dim != p.feature_dim())
        throw InvariantError("feature store dim " + std::to_string(features.dim) +
                             " does not match model feature_dim " +
                             std::to_string(p.feature_dim()));
    std::vector<VecOf<E>> h;
    h.reserve(g.node_count());
    for (NodeId v = 0; v < g.node_count(); ++v) {
        const auto& f = features.at(g.key_of(v));
        if (f.size() != features.dim)
            throw InvariantError("feature vector for '" + g.key_of(v) + "' has wrong length");
        const NodeKind k = g.kind_of(v);
        h.push_back(e.project(p.proj_w(k), p.proj_b(k), e.feature(f)));
    }
    return h;
}

template <class E>
std::vector<VecOf<E>> pipe_node_to_edge(E& e, std::span<const VecOf<E>> h, const GraphIndex& gi,
                                        HyperedgeKind kind, std::size_t layer,
                                        const ForwardOptions& opt, AttentionTrace* trace) {
    auto& p = e.params_ref();
    const ModelConfig& cfg = p.config();
    const auto& ch = gi.channel(kind);
    const std::size_t chi = static_cast<std::size_t>(kind);

    std::vector<std::vector<std::optional<VecOf<E>>>> tcache(
        cfg.heads, std::vector<std::optional<VecOf<E>>>(h.size()));
    auto node_t = [&](std::size_t head, NodeId v) -> const VecOf<E>& {
        auto& slot = tcache[head][v];
        if (!slot) slot = e.transform(p.msg_node_w(chi, layer, head), h[v]);
        return *slot;
    };

    std::vector<VecOf<E>> out;
    out.reserve(ch.edges.size());
    for (std::size_t ei = 0; ei < ch.edges.size(); ++ei) {
        const std::vector<NodeId>* members = &ch.members[ei];
        std::vector<NodeId> capped;
        if (opt.training && members->size() > cfg.neighbor_cap) {
            Rng rng(derive_seed(opt.mask_seed, "member-cap",
                                (chi * 1000003ULL + layer) * 1000003ULL + ei));
            auto pick = rng.sample_indices(members->size(), cfg.neighbor_cap);
            std::sort(pick.begin(), pick.end());
            capped.reserve(pick.size());
            for (std::size_t i : pick) capped.push_back((*members)[i]);
            members = &capped;
        }
        std::vector<VecOf<E>> heads;
        heads.reserve(cfg.heads);
        for (std::size_t head = 0; head < cfg.heads; ++head) {
            std::vector<VecOf<E>> rows;
            std::vector<typename E::Logit> logits;
            rows.reserve(members->size());
            logits.reserve(members->size());
            for (NodeId v : *members) {
                const VecOf<E>& t = node_t(head, v);
                rows.push_back(t);
                logits.push_back(e.logit_node(p.attn_node(chi, layer, head), t, cfg.leaky_slope));
            }
            auto attn = e.attention(logits);
            if (trace) trace->rows.push_back(e.read(attn));
            heads.push_back(e.aggregate(attn, rows));
        }
        out.push_back(e.concat_heads(heads));
    }
    return out;
}

template <class E>
std::vector<VecOf<E>> pipe_edge_to_node(E& e, std::span<const VecOf<E>> h,
                                        std::span<const VecOf<E>> he, const GraphIndex& gi,
                                        HyperedgeKind kind, std::size_t layer,
                                        const ForwardOptions&, AttentionTrace* trace) {
    auto& p = e.params_ref();
    const ModelConfig& cfg = p.config();
    const auto& ch = gi.channel(kind);
    const std::size_t chi = static_cast<std::size_t>(kind);
    if (he.size() != ch.edges.size())
        throw InvariantError("edge_to_node: edge embedding count does not match the channel");

    std::vector<std::vector<std::optional<VecOf<E>>>> ncache(
        cfg.heads, std::vector<std::optional<VecOf<E>>>(h.size()));
    std::vector<std::vector<std::optional<VecOf<E>>>> ecache(
        cfg.heads, std::vector<std::optional<VecOf<E>>>(he.size()));
    auto node_t = [&](std::size_t head, NodeId v) -> const VecOf<E>& {
        auto& slot = ncache[head][v];
        if (!slot) slot = e.transform(p.msg_node_w(chi, layer, head), h[v]);
        return *slot;
    };
    auto edge_t = [&](std::size_t head, std::size_t ei) -> const VecOf<E>& {
        auto& slot = ecache[head][ei];
        if (!slot) slot = e.transform(p.msg_edge_w(chi, layer, head), he[ei]);
        return *slot;
    };

    std::vector<VecOf<E>> out;
    out.reserve(h.size());
    for (NodeId v = 0; v < h.size(); ++v) {
        const auto& incident = ch.incident[v];
        if (incident.empty()) {
            out.push_back(h[v]);  // isolated in this channel: unchanged
            continue;
        }
        std::vector<VecOf<E>> heads;
        heads.reserve(cfg.heads);
        for (std::size_t head = 0; head < cfg.heads; ++head) {
            const VecOf<E>& tn = node_t(head, v);
            std::vector<VecOf<E>> rows;
            std::vector<typename E::Logit> logits;
            rows.reserve(incident.size());
            logits.reserve(incident.size());
            for (std::size_t ei : incident) {
                const VecOf<E>& te = edge_t(head, ei);
                rows.push_back(te);
                logits.push_back(
                    e.logit_pair(p.attn_pair(chi, layer, head), tn, te, cfg.leaky_slope));
            }
            auto attn = e.attention(logits);
            if (trace) trace->rows.push_back(e.read(attn));
            heads.push_back(e.aggregate(attn, rows));
        }
        out.push_back(e.concat_heads(heads));
    }
    return out;
}

template <class E>
std::vector<VecOf<E>> pipe_fuse(E& e,
                                const std::array<std::vector<VecOf<E>>, kHyperedgeKinds>& hc,
                                const Hypergraph& g, const FusionWeights& fw) {
    fw.validate();
    const auto& hv = hc[static_cast<std::size_t>(HyperedgeKind::AlsoView)];
    const auto& hb = hc[static_cast<std::size_t>(HyperedgeKind::AlsoBuy)];
    const auto& hp = hc[static_cast<std::size_t>(HyperedgeKind::ProductAspects)];
    const auto& hcb = hc[static_cast<std::size_t>(HyperedgeKind::CategoryBundle)];
    for (const auto* c : {&hv, &hb, &hp, &hcb})
        if (c->size() != g.node_count())
            throw InvariantError("fuse: per-channel embeddings do not cover all nodes");

    std::vector<VecOf<E>> out;
    out.reserve(g.node_count());
    for (NodeId v = 0; v < g.node_count(); ++v) {
        switch (g.kind_of(v)) {
            case NodeKind::Product: {
                auto behavior = e.add(e.scaled(hv[v], fw.gamma), e.scaled(hb[v], 1.0 - fw.gamma));
                auto inventory = e.add(e.scaled(hp[v], fw.alpha), e.scaled(hcb[v], fw.beta));
                out.push_back(e.add(inventory, e.scaled(behavior, 1.0 - fw.alpha - fw.beta)));
                break;
            }
            case NodeKind::Aspect:
                out.push_back(
                    e.add(e.scaled(hp[v], fw.delta), e.scaled(hcb[v], 1.0 - fw.delta)));
                break;
            case NodeKind::Category:
                out.push_back(hcb[v]);
                break;
        }
    }
    return out;
}

template <class E>
std::vector<VecOf<E>> pipe_final_gnn(E& e, std::span<const VecOf<E>> fused, const GraphIndex& gi,
                                     const ForwardOptions& opt) {
    auto& p = e.params_ref();
    const ModelConfig& cfg = p.config();
    std::vector<VecOf<E>> h(fused.begin(), fused.end());
    for (std::size_t l = 0; l < cfg.gnn_layers; ++l) {
        std::vector<VecOf<E>> next;
        next.reserve(h.size());
        for (NodeId v = 0; v < h.size(); ++v) {
            std::vector<VecOf<E>> rows{h[v]};
            for (NodeId u : gi.gnn_neighbors()[v]) rows.push_back(h[u]);
            next.push_back(e.gnn_layer(p.gnn_w(l), e.mean_self_neighbors(rows)));
        }
        if (opt.training && cfg.dropout > 0.0)
            for (NodeId v = 0; v < next.size(); ++v)
                next[v] = e.dropout(next[v], cfg.dropout,
                                    derive_seed(opt.mask_seed, "drop.gnn", l * 1000003ULL + v));
        h = std::move(next);
    }
    return h;
}

template <class E>
std::vector<VecOf<E>> pipe_channels_and_fuse(E& e, const Hypergraph& g,
                                             const FeatureStore& features, const GraphIndex& gi,
                                             const FusionWeights& fw, const ForwardOptions& opt,
                                             AttentionTrace* trace) {
    auto& p = e.params_ref();
    const ModelConfig& cfg = p.config();
    auto h0 = pipe_init(e, g, features);
    if (opt.training && cfg.dropout > 0.0)
        for (NodeId v = 0; v < h0.size(); ++v)
            h0[v] = e.dropout(h0[v], cfg.dropout, derive_seed(opt.mask_seed, "drop.init", v));

    std::array<std::vector<VecOf<E>>, kHyperedgeKinds> per_channel;
    for (std::size_t c = 0; c < kHyperedgeKinds; ++c) {
        const auto kind = static_cast<HyperedgeKind>(c);
        std::vector<VecOf<E>> h = h0;
        for (std::size_t layer = 0; layer < cfg.hyper_layers; ++layer) {
            auto he = pipe_node_to_edge(e, std::span<const VecOf<E>>(h), gi, kind, layer, opt,
                                        trace);
            h = pipe_edge_to_node(e, std::span<const VecOf<E>>(h),
                                  std::span<const VecOf<E>>(he), gi, kind, layer, opt, trace);
            if (opt.training && cfg.dropout > 0.0)
                for (NodeId v = 0; v < h.size(); ++v)
                    h[v] = e.dropout(h[v], cfg.dropout,
                                     derive_seed(opt.mask_seed, "drop.mp",
                                                 (c * 1000003ULL + layer) * 1000003ULL + v));
        }
        per_channel[c] = std::move(h);
    }
    return pipe_fuse(e, per_channel, g, fw);
}

void check_candidate(const Hypergraph& g, const CandidateLink& c) {
    if (c.product >= g.node_count() || c.aspect >= g.node_count())
        throw InvariantError("candidate link references a node outside the graph");
    if (g.kind_of(c.product) != NodeKind::Product || g.kind_of(c.aspect) != NodeKind::Aspect)
        throw InvariantError("candidate link endpoints must be a product and an aspect");
}

}  // namespace

// ---------------------------------------------------------------------------
// public tape-level operations

std::vector<Var> init_embeddings(ad::Tape& tape, const Hypergraph& g,
                                 const FeatureStore& features, ModelParams& params) {
    TapeEngine e{tape, params, {}};
    return pipe_init(e, g, features);
}

std::vector<Var> node_to_edge(ad::Tape& tape, std::span<const Var> node_embs,
                              const GraphIndex& index, HyperedgeKind kind, std::size_t layer,
                              ModelParams& params, const ForwardOptions& options,
                              AttentionTrace* trace) {
    TapeEngine e{tape, params, {}};
    return pipe_node_to_edge(e, node_embs, index, kind, layer, options, trace);
}

std::vector<Var> edge_to_node(ad::Tape& tape, std::span<const Var> node_embs,
                              std::span<const Var> edge_embs, const GraphIndex& index,
                              HyperedgeKind kind, std::size_t layer, ModelParams& params,
                              const ForwardOptions& options, AttentionTrace* trace) {
    TapeEngine e{tape, params, {}};
    return pipe_edge_to_node(e, node_embs, edge_embs, index, kind, layer, options, trace);
}

std::vector<Var> fuse(ad::Tape& tape,
                      const std::array<std::vector<Var>, kHyperedgeKinds>& per_channel,
                      const Hypergraph& g, const FusionWeights& fw) {
    // The engine only routes scale/add here; params untouched.
    static ModelParams dummy;
    TapeEngine e{tape, dummy, {}};
    return pipe_fuse(e, per_channel, g, fw);
}

std::vector<Var> final_gnn(ad::Tape& tape, std::span<const Var> fused, const GraphIndex& index,
                           ModelParams& params, const ForwardOptions& options) {
    TapeEngine e{tape, params, {}};
    return pipe_final_gnn(e, fused, index, options);
}

Var score_link(ad::Tape&, Var product_emb, Var aspect_emb) {
    return ad::cosine(product_emb, aspect_emb);
}

Var candidate_loss(ad::Tape&, std::span<const Var> score_vars, std::span<const double> labels) {
    if (score_vars.empty()) throw InvariantError("candidate_loss needs at least one score");
    if (score_vars.size() != labels.size())
        throw InvariantError("candidate_loss: score/label count mismatch");
    Var scores = ad::concat(score_vars);
    Var probs = ad::affine(scores, 0.5, 0.5);  // cosine [-1,1] -> (0,1)
    return ad::bce(probs, labels);
}

ForwardResult forward(ad::Tape& tape, const Hypergraph& g, const FeatureStore& features,
                      ModelParams& params, const FusionWeights& fw,
                      std::span<const CandidateLink> candidates, const ForwardOptions& options,
                      std::span<const double> labels) {
    params.config().validate();
    std::optional<GraphIndex> local;
    if (!options.index) local.emplace(g, options.exclude_pairs);
    const GraphIndex& index = options.index ? *options.index : *local;
    if (&index.graph() != &g) throw InvariantError("forward: index built for a different graph");
    TapeEngine e{tape, params, {}};
    auto fused = pipe_channels_and_fuse(e, g, features, index, fw, options, nullptr);
    auto final_embs = pipe_final_gnn(e, std::span<const Var>(fused), index, options);

    ForwardResult result;
    result.scores.reserve(candidates.size());
    result.score_vars.reserve(candidates.size());
    for (const CandidateLink& c : candidates) {
        check_candidate(g, c);
        Var s = score_link(tape, final_embs[c.product], final_embs[c.aspect]);
        result.score_vars.push_back(s);
        result.scores.push_back(tape.value(s)[0]);
    }
    if (!labels.empty()) result.loss = candidate_loss(tape, result.score_vars, labels);
    return result;
}

// ---------------------------------------------------------------------------
// no-grad inference

EvalForward::EvalForward(const Hypergraph& g, const FeatureStore& features,
                         const ModelParams& params, std::span<const CandidateLink> exclude_pairs)
    : params_(&params), index_(g, exclude_pairs) {
    params.config().validate();
    PlainEngine e{params};
    const ForwardOptions opt{};  // inference: no dropout, no subsampling
    auto h0 = pipe_init(e, g, features);
    for (std::size_t c = 0; c < kHyperedgeKinds; ++c) {
        const auto kind = static_cast<HyperedgeKind>(c);
        std::vector<std::vector<double>> h = h0;
        for (std::size_t layer = 0; layer < params.config().hyper_layers; ++layer) {
            auto he = pipe_node_to_edge(e, std::span<const std::vector<double>>(h), index_, kind,
                                        layer, opt, nullptr);
            h = pipe_edge_to_node(e, std::span<const std::vector<double>>(h),
                                  std::span<const std::vector<double>>(he), index_, kind, layer,
                                  opt, nullptr);
        }
        channel_embs_[c] = std::move(h);
    }
}

std::vector<double> EvalForward::scores(const FusionWeights& fw,
                                        std::span<const CandidateLink> candidates) const {
    PlainEngine e{*params_};
    const ForwardOptions opt{};
    auto fused = pipe_fuse(e, channel_embs_, index_.graph(), fw);
    auto final_embs =
        pipe_final_gnn(e, std::span<const std::vector<double>>(fused), index_, opt);
    std::vector<double> out;
    out.reserve(candidates.size());
    for (const CandidateLink& c : candidates) {
        check_candidate(index_.graph(), c);
        out.push_back(ad::kernels::cosine(final_embs[c.product].data(),
                                          final_embs[c.aspect].data(),
                                          final_embs[c.product].size()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// inductive inference

Hypergraph apply_delta(const Hypergraph& base, const GraphDelta& delta) {
    Hypergraph g;
    for (NodeId v = 0; v < base.node_count(); ++v) g.add_node(base.kind_of(v), base.key_of(v));
    for (const GraphDelta::NewNode& n : delta.nodes) g.add_node(n.kind, n.key);

    auto resolve = [&](const std::string& key) {
        auto id = g.find(key);
        if (!id) throw InvariantError("graph delta references unknown key '" + key + "'");
        return *id;
    };

    std::vector<std::vector<NodeId>> joins(base.hyperedge_count());
    for (const auto& [eid, key] : delta.join_hyperedges) {
        if (eid >= base.hyperedge_count())
            throw InvariantError("graph delta joins a hyperedge outside the base graph");
        joins[eid].push_back(resolve(key));
    }
    for (const Hyperedge& e : base.hyperedges()) {
        std::vector<NodeId> members = e.members;
        members.insert(members.end(), joins[e.id].begin(), joins[e.id].end());
        g.add_hyperedge(e.kind, std::move(members), e.weight);
    }
    for (const GraphDelta::NewHyperedge& e : delta.hyperedges) {
        std::vector<NodeId> members;
        members.reserve(e.member_keys.size());
        for (const std::string& key : e.member_keys) members.push_back(resolve(key));
        g.add_hyperedge(e.kind, std::move(members), e.weight);
    }
    for (const PairEdge& p : base.pair_edges()) g.add_pair_edge(p.kind, p.a, p.b);
    for (const GraphDelta::NewPair& p : delta.pair_edges)
        g.add_pair_edge(p.kind, resolve(p.a), resolve(p.b));
    g.finalize();
    return g;
}

std::vector<double> inductive_update(const ModelParams& params, const FusionWeights& fw,
                                     const Hypergraph& merged, const FeatureStore& features,
                                     std::span<const CandidateLink> candidates) {
    EvalForward ef(merged, features, params, candidates);
    return ef.scores(fw, candidates);
}

}  // namespace hyperpave::model
