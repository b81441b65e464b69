#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "hyperpave/model.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace hyperpave;
using namespace hyperpave::model;
namespace ad = hyperpave::autodiff;

namespace {

struct NodeSpec {
    NodeKind kind;
    std::string key;
};
struct EdgeSpec {
    HyperedgeKind kind;
    std::vector<std::string> members;
};
struct PairSpec {
    PairKind kind;
    std::string a, b;
};

Hypergraph build_from_spec(const std::vector<NodeSpec>& nodes, const std::vector<EdgeSpec>& edges,
                           const std::vector<PairSpec>& pairs) {
    Hypergraph g;
    for (const auto& n : nodes) g.add_node(n.kind, n.key);
    for (const auto& e : edges) {
        std::vector<NodeId> members;
        for (const auto& key : e.members) members.push_back(*g.find(key));
        g.add_hyperedge(e.kind, std::move(members));
    }
    for (const auto& p : pairs) g.add_pair_edge(p.kind, *g.find(p.a), *g.find(p.b));
    g.finalize();
    return g;
}

ingest::FeatureStore random_features(const Hypergraph& g, std::size_t dim, std::uint64_t seed) {
    Rng rng(seed);
    ingest::FeatureStore store;
    store.dim = dim;
    for (NodeId v = 0; v < g.node_count(); ++v) {
        std::vector<double> f(dim);
        for (double& x : f) x = rng.uniform(-1.0, 1.0);
        store.entries[g.key_of(v)] = std::move(f);
    }
    return store;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.hyper_layers = 1;
    cfg.gnn_layers = 1;
    cfg.dropout = 0.0;
    return cfg;
}

std::vector<double> manual_matvec(const ad::Tensor& w, const std::vector<double>& x) {
    std::vector<double> y(w.rows(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) y[i] += w[i * w.cols() + j] * x[j];
    return y;
}

double manual_elu(double x) { return x > 0.0 ? x : std::exp(x) - 1.0; }

}  // namespace

TEST_CASE("init_embeddings: zero features and zero bias give zero embeddings") {
    auto g = build_from_spec({{NodeKind::Category, "c"},
                              {NodeKind::Product, "p"},
                              {NodeKind::Aspect, "a"}},
                             {{HyperedgeKind::ProductAspects, {"p", "a"}},
                              {HyperedgeKind::CategoryBundle, {"c", "p"}}},
                             {});
    ModelConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg, 4, 1);
    ingest::FeatureStore store;
    store.dim = 4;
    for (NodeId v = 0; v < g.node_count(); ++v)
        store.entries[g.key_of(v)] = {0.0, 0.0, 0.0, 0.0};
    ad::Tape tape;
    auto h = init_embeddings(tape, g, store, params);
    for (const auto& var : h)
        for (double x : tape.value(var).values()) CHECK(x == 0.0);  // tanh(W*0 + 0) = 0
}

TEST_CASE("init_embeddings: identity projection applies tanh elementwise") {
    auto g = build_from_spec({{NodeKind::Product, "p"}}, {}, {});
    ModelConfig cfg = tiny_config();
    cfg.dim = 4;
    ModelParams params = ModelParams::init(cfg, 4, 1);
    ad::Param& w = params.proj_w(NodeKind::Product);
    w.value.fill(0.0);
    for (std::size_t i = 0; i < 4; ++i) w.value[i * 4 + i] = 1.0;
    params.proj_b(NodeKind::Product).value.fill(0.0);
    ingest::FeatureStore store;
    store.dim = 4;
    store.entries["p"] = {0.3, -0.7, 1.2, 0.0};
    ad::Tape tape;
    auto h = init_embeddings(tape, g, store, params);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(tape.value(h[0])[i] ==
              doctest::Approx(std::tanh(store.entries["p"][i])).epsilon(1e-15));
}

TEST_CASE("init_embeddings: random projection matches the dense oracle") {
    auto g = fixtures::toy_graph();
    ModelConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg, 6, 3);
    auto store = random_features(g, 6, 4);
    ad::Tape tape;
    auto h = init_embeddings(tape, g, store, params);
    for (NodeId v = 0; v < g.node_count(); ++v) {
        const ad::Tensor& w = params.proj_w(g.kind_of(v)).value;
        const ad::Tensor& b = params.proj_b(g.kind_of(v)).value;
        auto z = manual_matvec(w, store.at(g.key_of(v)));
        for (std::size_t i = 0; i < z.size(); ++i)
            CHECK(tape.value(h[v])[i] == doctest::Approx(std::tanh(z[i] + b[i])).epsilon(1e-12));
    }
    // missing feature names the node key
    ingest::FeatureStore partial;
    partial.dim = 6;
    ad::Tape tape2;
    CHECK_THROWS_WITH_AS(init_embeddings(tape2, g, partial, params), doctest::Contains("cat_a"),
                         InvariantError);
}

TEST_CASE("node_to_edge: identical members give uniform attention") {
    auto g = build_from_spec({{NodeKind::Product, "p0"},
                              {NodeKind::Product, "p1"},
                              {NodeKind::Product, "p2"}},
                             {{HyperedgeKind::AlsoView, {"p0", "p1", "p2"}}}, {});
    ModelConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg, 4, 5);
    GraphIndex index(g);
    ad::Tape tape;
    std::vector<double> shared{0.4, -0.2, 0.9, 0.1, -0.5, 0.3, 0.0, 0.7};
    std::vector<ad::Var> h;
    for (int i = 0; i < 3; ++i) h.push_back(tape.constant(ad::Tensor::vector(shared)));
    AttentionTrace trace;
    auto he = node_to_edge(tape, h, index, HyperedgeKind::AlsoView, 0, params, {}, &trace);
    REQUIRE(he.size() == 1);
    REQUIRE(trace.rows.size() == cfg.heads);
    for (const auto& row : trace.rows)
        for (double a : row) CHECK(a == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    // h_e = per-head elu(W_head h) concatenated
    const std::size_t hd = cfg.head_dim();
    for (std::size_t head = 0; head < cfg.heads; ++head) {
        const auto t =
            manual_matvec(params.msg_node_w(static_cast<std::size_t>(HyperedgeKind::AlsoView), 0,
                                            head)
                              .value,
                          shared);
        for (std::size_t i = 0; i < hd; ++i)
            CHECK(tape.value(he[0])[head * hd + i] ==
                  doctest::Approx(manual_elu(t[i])).epsilon(1e-12));
    }
}

TEST_CASE("node_to_edge: singleton member has attention one") {
    auto g = build_from_spec({{NodeKind::Product, "p0"}, {NodeKind::Aspect, "a0"}},
                             {{HyperedgeKind::ProductAspects, {"p0", "a0"}},
                              {HyperedgeKind::AlsoView, {"p0"}}},
                             {});
    ModelConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg, 4, 6);
    GraphIndex index(g);
    ad::Tape tape;
    auto store = random_features(g, 4, 7);
    auto h = init_embeddings(tape, g, store, params);
    AttentionTrace trace;
    node_to_edge(tape, h, index, HyperedgeKind::ProductAspects, 0, params, {}, &trace);
    for (const auto& row : trace.rows) {
        double sum = 0.0;
        for (double a : row) sum += a;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }

    // true single-member hyperedge: attention exactly one, h_e = elu(W h) per head
    AttentionTrace solo;
    auto he = node_to_edge(tape, h, index, HyperedgeKind::AlsoView, 0, params, {}, &solo);
    REQUIRE(he.size() == 1);
    for (const auto& row : solo.rows) {
        REQUIRE(row.size() == 1);
        CHECK(row[0] == 1.0);
    }
    const std::size_t chi = static_cast<std::size_t>(HyperedgeKind::AlsoView);
    const std::size_t hd = cfg.head_dim();
    for (std::size_t head = 0; head < cfg.heads; ++head) {
        auto t = manual_matvec(params.msg_node_w(chi, 0, head).value,
                               tape.value(h[*g.find("p0")]).values());
        for (std::size_t i = 0; i < hd; ++i)
            CHECK(tape.value(he[0])[head * hd + i] ==
                  doctest::Approx(manual_elu(t[i])).epsilon(1e-12));
    }
}

TEST_CASE("node_to_edge: three-member edge matches the dense oracle") {
    auto g = build_from_spec({{NodeKind::Product, "x"},
                              {NodeKind::Product, "y"},
                              {NodeKind::Product, "z"}},
                             {{HyperedgeKind::AlsoBuy, {"x", "y", "z"}}}, {});
    ModelConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg, 4, 8);
    GraphIndex index(g);
    auto store = random_features(g, 4, 9);
    ad::Tape tape;
    auto h = init_embeddings(tape, g, store, params);
    auto he = node_to_edge(tape, h, index, HyperedgeKind::AlsoBuy, 0, params, {});
    REQUIRE(he.size() == 1);

    const std::size_t chi = static_cast<std::size_t>(HyperedgeKind::AlsoBuy);
    const std::size_t hd = cfg.head_dim();
    // canonical member order is key-sorted: x, y, z
    const std::vector<NodeId> members = index.channel(HyperedgeKind::AlsoBuy).members[0];
    for (std::size_t head = 0; head < cfg.heads; ++head) {
        std::vector<std::vector<double>> t;
        std::vector<double> logits;
        for (NodeId v : members) {
            auto tv = manual_matvec(params.msg_node_w(chi, 0, head).value,
                                    tape.value(h[v]).values());
            double logit = 0.0;
            const auto& w1 = params.attn_node(chi, 0, head).value;
            for (std::size_t i = 0; i < hd; ++i) logit += w1[i] * tv[i];
            logit = logit > 0.0 ? logit : cfg.leaky_slope * logit;
            logits.push_back(logit);
            t.push_back(std::move(tv));
        }
        double mx = *std::max_element(logits.begin(), logits.end());
        double zsum = 0.0;
        std::vector<double> alpha;
        for (double l : logits) {
            alpha.push_back(std::exp(l - mx));
            zsum += alpha.back();
        }
        for (double& a : alpha) a /= zsum;
        for (std::size_t i = 0; i < hd; ++i) {
            double agg = 0.0;
            for (std::size_t m = 0; m < members.size(); ++m) agg += alpha[m] * t[m][i];
            CHECK(tape.value(he[0])[head * hd + i] ==
                  doctest::Approx(manual_elu(agg)).epsilon(1e-12));
        }
    }
}

TEST_CASE("edge_to_node: single incident edge, isolated pass-through, dense oracle") {
    // p0 sits in two session edges, p1 in one, p2 in none
    auto g = build_from_spec({{NodeKind::Product, "p0"},
                              {NodeKind::Product, "p1"},
                              {NodeKind::Product, "p2"},
                              {NodeKind::Product, "p3"}},
                             {{HyperedgeKind::AlsoView, {"p0", "p1"}},
                              {HyperedgeKind::AlsoView, {"p0", "p3"}}},
                             {});
    ModelConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg, 4, 10);
    GraphIndex index(g);
    auto store = random_features(g, 4, 11);
    ad::Tape tape;
    auto h = init_embeddings(tape, g, store, params);
    AttentionTrace trace;
    auto he = node_to_edge(tape, h, index, HyperedgeKind::AlsoView, 0, params, {});
    auto out = edge_to_node(tape, h, he, index, HyperedgeKind::AlsoView, 0, params, {}, &trace);

    const NodeId isolated = *g.find("p2");
    CHECK(out[isolated].id == h[isolated].id);  // unchanged, same tape node

    // p1 has exactly one incident edge: attention 1, output elu(W_e h_e) per head
    const NodeId single = *g.find("p1");
    const std::size_t chi = static_cast<std::size_t>(HyperedgeKind::AlsoView);
    const std::size_t hd = cfg.head_dim();
    const auto& incident = index.channel(HyperedgeKind::AlsoView).incident[single];
    REQUIRE(incident.size() == 1);
    for (std::size_t head = 0; head < cfg.heads; ++head) {
        auto te = manual_matvec(params.msg_edge_w(chi, 0, head).value,
                                tape.value(he[incident[0]]).values());
        for (std::size_t i = 0; i < hd; ++i)
            CHECK(tape.value(out[single])[head * hd + i] ==
                  doctest::Approx(manual_elu(te[i])).epsilon(1e-12));
    }

    // p0 has two incident edges: dense two-edge oracle
    const NodeId both = *g.find("p0");
    const auto& inc0 = index.channel(HyperedgeKind::AlsoView).incident[both];
    REQUIRE(inc0.size() == 2);
    for (std::size_t head = 0; head < cfg.heads; ++head) {
        auto tn = manual_matvec(params.msg_node_w(chi, 0, head).value,
                                tape.value(h[both]).values());
        std::vector<std::vector<double>> te;
        std::vector<double> logits;
        const auto& w2 = params.attn_pair(chi, 0, head).value;
        for (std::size_t ei : inc0) {
            auto t = manual_matvec(params.msg_edge_w(chi, 0, head).value,
                                   tape.value(he[ei]).values());
            double logit = 0.0;
            for (std::size_t i = 0; i < hd; ++i) logit += w2[i] * tn[i];
            for (std::size_t i = 0; i < hd; ++i) logit += w2[hd + i] * t[i];
            logit = logit > 0.0 ? logit : cfg.leaky_slope * logit;
            logits.push_back(logit);
            te.push_back(std::move(t));
        }
        const double mx = std::max(logits[0], logits[1]);
        std::vector<double> alpha{std::exp(logits[0] - mx), std::exp(logits[1] - mx)};
        const double zsum = alpha[0] + alpha[1];
        alpha[0] /= zsum;
        alpha[1] /= zsum;
        for (std::size_t i = 0; i < hd; ++i) {
            const double agg = alpha[0] * te[0][i] + alpha[1] * te[1][i];
            CHECK(tape.value(out[both])[head * hd + i] ==
                  doctest::Approx(manual_elu(agg)).epsilon(1e-12));
        }
    }
    // attention rows sum to one
    for (const auto& row : trace.rows) {
        double sum = 0.0;
        for (double a : row) sum += a;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("fuse: simplex corners and the common-vector identity") {
    auto g = build_from_spec({{NodeKind::Category, "c"},
                              {NodeKind::Product, "p"},
                              {NodeKind::Aspect, "a"}},
                             {{HyperedgeKind::ProductAspects, {"p", "a"}},
                              {HyperedgeKind::CategoryBundle, {"c", "p"}}},
                             {});
    const std::size_t dim = 4;
    Rng rng(12);
    auto make_channels = [&](bool equal) {
        std::array<std::vector<std::vector<double>>, kHyperedgeKinds> raw;
        std::vector<double> u(dim);
        for (double& x : u) x = rng.uniform(-1.0, 1.0);
        for (auto& ch : raw)
            for (NodeId v = 0; v < g.node_count(); ++v) {
                if (equal) ch.push_back(u);
                else {
                    std::vector<double> w(dim);
                    for (double& x : w) x = rng.uniform(-1.0, 1.0);
                    ch.push_back(std::move(w));
                }
            }
        return raw;
    };

    // alpha=1: product fused embedding equals the product_aspects channel
    {
        auto raw = make_channels(false);
        ad::Tape tape;
        std::array<std::vector<ad::Var>, kHyperedgeKinds> channels;
        for (std::size_t c = 0; c < kHyperedgeKinds; ++c)
            for (NodeId v = 0; v < g.node_count(); ++v)
                channels[c].push_back(tape.constant(ad::Tensor::vector(raw[c][v])));
        FusionWeights fw;
        fw.alpha = 1.0;
        fw.beta = 0.0;
        auto fused = fuse(tape, channels, g, fw);
        const NodeId p = *g.find("p");
        for (std::size_t i = 0; i < dim; ++i)
            CHECK(tape.value(fused[p])[i] ==
                  raw[static_cast<std::size_t>(HyperedgeKind::ProductAspects)][p][i]);
        // delta=0: aspect takes the category_bundle channel
        FusionWeights fw2;
        fw2.delta = 0.0;
        auto fused2 = fuse(tape, channels, g, fw2);
        const NodeId a = *g.find("a");
        for (std::size_t i = 0; i < dim; ++i)
            CHECK(tape.value(fused2[a])[i] ==
                  raw[static_cast<std::size_t>(HyperedgeKind::CategoryBundle)][a][i]);
    }

    // all channels equal u: fused equals u for any valid weights
    {
        auto raw = make_channels(true);
        ad::Tape tape;
        std::array<std::vector<ad::Var>, kHyperedgeKinds> channels;
        for (std::size_t c = 0; c < kHyperedgeKinds; ++c)
            for (NodeId v = 0; v < g.node_count(); ++v)
                channels[c].push_back(tape.constant(ad::Tensor::vector(raw[c][v])));
        for (int trial = 0; trial < 100; ++trial) {
            FusionWeights fw;
            fw.alpha = rng.uniform();
            fw.beta = rng.uniform(0.0, 1.0 - fw.alpha);
            fw.gamma = rng.uniform();
            fw.delta = rng.uniform();
            auto fused = fuse(tape, channels, g, fw);
            for (NodeId v = 0; v < g.node_count(); ++v)
                for (std::size_t i = 0; i < dim; ++i)
                    CHECK(std::abs(tape.value(fused[v])[i] - raw[0][v][i]) <= 1e-12);
        }
    }

    // invalid weights are rejected
    {
        ad::Tape tape;
        std::array<std::vector<ad::Var>, kHyperedgeKinds> channels;
        for (std::size_t c = 0; c < kHyperedgeKinds; ++c)
            for (NodeId v = 0; v < g.node_count(); ++v)
                channels[c].push_back(tape.constant(ad::Tensor::vector({0, 0, 0, 0})));
        FusionWeights bad;
        bad.alpha = 0.8;
        bad.beta = 0.5;  // alpha + beta > 1
        CHECK_THROWS_AS(fuse(tape, channels, g, bad), InvariantError);
    }
}

TEST_CASE("final_gnn: self-only and identity-weight symmetry") {
    auto g = build_from_spec({{NodeKind::Category, "c"},
                              {NodeKind::Product, "p"},
                              {NodeKind::Aspect, "a"}},
                             {{HyperedgeKind::ProductAspects, {"p", "a"}},
                              {HyperedgeKind::CategoryBundle, {"c", "p"}}},
                             {{PairKind::CategoryProduct, "c", "p"},
                              {PairKind::ProductAspect, "p", "a"}});
    ModelConfig cfg = tiny_config();
    cfg.dim = 4;
    cfg.gnn_layers = 1;
    ModelParams params = ModelParams::init(cfg, 4, 13);
    // identity weight
    ad::Param& w = params.gnn_w(0);
    w.value.fill(0.0);
    for (std::size_t i = 0; i < 4; ++i) w.value[i * 4 + i] = 1.0;

    GraphIndex index(g);
    ad::Tape tape;
    std::vector<double> u{0.5, -0.3, 0.2, -0.8};
    std::vector<ad::Var> fused;
    for (NodeId v = 0; v < g.node_count(); ++v)
        fused.push_back(tape.constant(ad::Tensor::vector(u)));
    auto out = final_gnn(tape, fused, index, params, {});
    // every node's neighborhood mean equals u, so output is elu(u)
    for (NodeId v = 0; v < g.node_count(); ++v)
        for (std::size_t i = 0; i < 4; ++i)
            CHECK(tape.value(out[v])[i] == doctest::Approx(manual_elu(u[i])).epsilon(1e-12));

    // isolated node: output = elu(W h_self)
    auto g2 = build_from_spec({{NodeKind::Product, "solo"}, {NodeKind::Product, "other"}},
                              {{HyperedgeKind::AlsoView, {"solo", "other"}}}, {});
    GraphIndex index2(g2);
    ad::Tape tape2;
    ModelParams params2 = ModelParams::init(cfg, 4, 14);
    std::vector<ad::Var> fused2{tape2.constant(ad::Tensor::vector({1.0, -1.0, 0.5, 0.2})),
                                tape2.constant(ad::Tensor::vector({0.1, 0.2, 0.3, 0.4}))};
    auto out2 = final_gnn(tape2, fused2, index2, params2, {});
    auto z = manual_matvec(params2.gnn_w(0).value, {1.0, -1.0, 0.5, 0.2});
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(tape2.value(out2[0])[i] == doctest::Approx(manual_elu(z[i])).epsilon(1e-12));
}

TEST_CASE("final_gnn matches a dense per-layer oracle on a random graph") {
    auto g = fixtures::toy_graph();
    ModelConfig cfg = tiny_config();
    cfg.dim = 4;
    cfg.gnn_layers = 2;
    ModelParams params = ModelParams::init(cfg, 4, 15);
    GraphIndex index(g);
    Rng rng(16);
    std::vector<std::vector<double>> raw;
    ad::Tape tape;
    std::vector<ad::Var> fused;
    for (NodeId v = 0; v < g.node_count(); ++v) {
        std::vector<double> x(4);
        for (double& e : x) e = rng.uniform(-1.0, 1.0);
        raw.push_back(x);
        fused.push_back(tape.constant(ad::Tensor::vector(x)));
    }
    auto out = final_gnn(tape, fused, index, params, {});

    auto h = raw;
    for (std::size_t l = 0; l < cfg.gnn_layers; ++l) {
        std::vector<std::vector<double>> next(h.size());
        for (NodeId v = 0; v < g.node_count(); ++v) {
            std::vector<double> mean = h[v];
            const auto& nbrs = index.gnn_neighbors()[v];
            for (NodeId u : nbrs)
                for (std::size_t i = 0; i < 4; ++i) mean[i] += h[u][i];
            for (double& x : mean) x /= static_cast<double>(nbrs.size() + 1);
            auto z = manual_matvec(params.gnn_w(l).value, mean);
            for (double& x : z) x = manual_elu(x);
            next[v] = std::move(z);
        }
        h = std::move(next);
    }
    for (NodeId v = 0; v < g.node_count(); ++v)
        for (std::size_t i = 0; i < 4; ++i)
            CHECK(tape.value(out[v])[i] == doctest::Approx(h[v][i]).epsilon(1e-10));
}

TEST_CASE("score_link basics") {
    ad::Tape tape;
    auto v1 = tape.constant(ad::Tensor::vector({1.0, 2.0, 3.0}));
    auto v2 = tape.constant(ad::Tensor::vector({2.0, 4.0, 6.0}));
    CHECK(tape.value(score_link(tape, v1, v2))[0] == doctest::Approx(1.0).epsilon(1e-12));
    auto o1 = tape.constant(ad::Tensor::vector({1.0, 0.0}));
    auto o2 = tape.constant(ad::Tensor::vector({0.0, 1.0}));
    CHECK(tape.value(score_link(tape, o1, o2))[0] == doctest::Approx(0.0).epsilon(1e-12));
    auto n1 = tape.constant(ad::Tensor::vector({1.0, -2.0}));
    auto n2 = tape.constant(ad::Tensor::vector({-1.0, 2.0}));
    CHECK(tape.value(score_link(tape, n1, n2))[0] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("candidate_loss: ln 2 at score zero, near zero at perfect scores") {
    ad::Tape tape;
    std::vector<ad::Var> scores{tape.constant(ad::Tensor::scalar(0.0))};
    auto loss = candidate_loss(tape, scores, std::vector<double>{1.0});
    CHECK(tape.value(loss)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    ad::Tape tape2;
    std::vector<ad::Var> perfect{tape2.constant(ad::Tensor::scalar(1.0)),
                                 tape2.constant(ad::Tensor::scalar(-1.0))};
    auto loss2 = candidate_loss(tape2, perfect, std::vector<double>{1.0, 0.0});
    CHECK(tape2.value(loss2)[0] < 1e-6);

    // random batch equals the hand-computed mean BCE
    Rng rng(17);
    ad::Tape tape3;
    std::vector<ad::Var> vars;
    std::vector<double> labels, raw;
    for (int i = 0; i < 7; ++i) {
        const double s = rng.uniform(-0.95, 0.95);
        raw.push_back(s);
        vars.push_back(tape3.constant(ad::Tensor::scalar(s)));
        labels.push_back(static_cast<double>(rng.below(2)));
    }
    auto loss3 = candidate_loss(tape3, vars, labels);
    double want = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double p = 0.5 * (raw[i] + 1.0);
        want -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
    }
    want /= static_cast<double>(raw.size());
    CHECK(tape3.value(loss3)[0] == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("forward: structural twin outranks a feature-orthogonal distractor") {
    auto g = build_from_spec(
        {{NodeKind::Category, "c"},
         {NodeKind::Product, "p"},
         {NodeKind::Aspect, "linked"},
         {NodeKind::Aspect, "distractor"}},
        {{HyperedgeKind::ProductAspects, {"p", "linked"}},
         {HyperedgeKind::CategoryBundle, {"c", "p", "linked", "distractor"}}},
        {{PairKind::CategoryProduct, "c", "p"}, {PairKind::ProductAspect, "p", "linked"}});
    ModelConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg, 4, 18);
    ingest::FeatureStore store;
    store.dim = 4;
    store.entries["c"] = {0.1, 0.1, 0.1, 0.1};
    store.entries["p"] = {1.0, 0.0, 0.0, 0.0};
    store.entries["linked"] = {1.0, 0.0, 0.0, 0.0};     // same feature as p
    store.entries["distractor"] = {0.0, 0.0, 0.0, 1.0};  // orthogonal

    std::vector<CandidateLink> candidates{
        {*g.find("p"), *g.find("linked"), split::LinkLabel::Positive},
        {*g.find("p"), *g.find("distractor"), split::LinkLabel::Negative}};
    ad::Tape tape;
    auto result = forward(tape, g, store, params, FusionWeights{}, candidates, {});
    CHECK(result.scores[0] > result.scores[1]);
}

TEST_CASE("forward: node insertion order does not change scores") {
    const std::vector<NodeSpec> nodes{{NodeKind::Category, "c"},    {NodeKind::Product, "p1"},
                                      {NodeKind::Product, "p2"},    {NodeKind::Aspect, "a1"},
                                      {NodeKind::Aspect, "a2"},     {NodeKind::Product, "p3"}};
    const std::vector<EdgeSpec> edges{{HyperedgeKind::ProductAspects, {"p1", "a1", "a2"}},
                                      {HyperedgeKind::ProductAspects, {"p2", "a2"}},
                                      {HyperedgeKind::CategoryBundle, {"c", "p1", "p2", "p3",
                                                                       "a1", "a2"}},
                                      {HyperedgeKind::AlsoView, {"p1", "p2", "p3"}},
                                      {HyperedgeKind::AlsoBuy, {"p2", "p3"}}};
    const std::vector<PairSpec> pairs{{PairKind::CategoryProduct, "c", "p1"},
                                      {PairKind::CategoryProduct, "c", "p2"},
                                      {PairKind::CategoryProduct, "c", "p3"},
                                      {PairKind::ProductAspect, "p1", "a1"},
                                      {PairKind::ProductAspect, "p1", "a2"},
                                      {PairKind::ProductAspect, "p2", "a2"}};
    auto permuted_nodes = nodes;
    std::swap(permuted_nodes[0], permuted_nodes[5]);
    std::swap(permuted_nodes[1], permuted_nodes[4]);
    auto permuted_edges = edges;
    std::swap(permuted_edges[0], permuted_edges[4]);
    std::swap(permuted_edges[1], permuted_edges[3]);

    auto g1 = build_from_spec(nodes, edges, pairs);
    auto g2 = build_from_spec(permuted_nodes, permuted_edges, pairs);

    ModelConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg, 4, 19);
    Rng rng(20);
    ingest::FeatureStore store;
    store.dim = 4;
    for (const auto& n : nodes) {
        std::vector<double> f(4);
        for (double& x : f) x = rng.uniform(-1.0, 1.0);
        store.entries[n.key] = std::move(f);
    }

    auto score_pair = [&](const Hypergraph& g, const std::string& p, const std::string& a) {
        std::vector<CandidateLink> cands{{*g.find(p), *g.find(a), split::LinkLabel::Positive}};
        ad::Tape tape;
        ModelParams local = params;  // same values; binding mutates nothing
        return forward(tape, g, store, local, FusionWeights{}, cands, {}).scores[0];
    };
    for (const auto& [p, a] : std::vector<std::pair<std::string, std::string>>{
             {"p1", "a1"}, {"p1", "a2"}, {"p2", "a1"}, {"p3", "a2"}}) {
        const double s1 = score_pair(g1, p, a);
        const double s2 = score_pair(g2, p, a);
        CHECK(s1 == s2);  // canonical key-ordered aggregation: bit-identical
    }
}

TEST_CASE("forward: repeated no-dropout passes are bit-identical and match EvalForward") {
    auto g = fixtures::toy_graph();
    ModelConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg, 6, 21);
    auto store = random_features(g, 6, 22);
    std::vector<CandidateLink> candidates;
    for (const PairEdge& e : g.pair_edges())
        if (e.kind == PairKind::ProductAspect)
            candidates.push_back({e.a, e.b, split::LinkLabel::Positive});

    ad::Tape t1, t2;
    auto r1 = forward(t1, g, store, params, FusionWeights{}, candidates, {});
    auto r2 = forward(t2, g, store, params, FusionWeights{}, candidates, {});
    CHECK(r1.scores == r2.scores);

    EvalForward ef(g, store, params);
    auto r3 = ef.scores(FusionWeights{}, candidates);
    CHECK(r1.scores == r3);  // tape path and plain path agree exactly
}

TEST_CASE("forward: neighbor cap subsamples members during training") {
    // one big session edge; cap at 3 members
    std::vector<NodeSpec> nodes;
    std::vector<std::string> keys;
    for (int i = 0; i < 8; ++i) {
        keys.push_back("p" + std::to_string(i));
        nodes.push_back({NodeKind::Product, keys.back()});
    }
    auto g = build_from_spec(nodes, {{HyperedgeKind::AlsoView, keys}}, {});
    ModelConfig cfg = tiny_config();
    cfg.neighbor_cap = 3;
    ModelParams params = ModelParams::init(cfg, 4, 23);
    auto store = random_features(g, 4, 24);
    GraphIndex index(g);
    ad::Tape tape;
    auto h = init_embeddings(tape, g, store, params);
    ForwardOptions train_opts;
    train_opts.training = true;
    train_opts.mask_seed = 5;
    AttentionTrace trace;
    node_to_edge(tape, h, index, HyperedgeKind::AlsoView, 0, params, train_opts, &trace);
    for (const auto& row : trace.rows) CHECK(row.size() == 3);  // capped

    AttentionTrace eval_trace;
    ad::Tape tape2;
    auto h2 = init_embeddings(tape2, g, store, params);
    node_to_edge(tape2, h2, index, HyperedgeKind::AlsoView, 0, params, {}, &eval_trace);
    for (const auto& row : eval_trace.rows) CHECK(row.size() == 8);  // full at evaluation
}

TEST_CASE("inductive: twin node scores match the original within 1e-6") {
    // p_orig has no aspects (so its structure is replicable for a new node)
    auto g = build_from_spec(
        {{NodeKind::Category, "c"},
         {NodeKind::Product, "p_orig"},
         {NodeKind::Product, "p_other"},
         {NodeKind::Aspect, "a0"},
         {NodeKind::Aspect, "a1"}},
        {{HyperedgeKind::ProductAspects, {"p_other", "a0", "a1"}},
         {HyperedgeKind::CategoryBundle, {"c", "p_orig", "p_other", "a0", "a1"}},
         {HyperedgeKind::AlsoView, {"p_orig", "p_other"}}},
        {{PairKind::CategoryProduct, "c", "p_orig"},
         {PairKind::CategoryProduct, "c", "p_other"},
         {PairKind::ProductAspect, "p_other", "a0"},
         {PairKind::ProductAspect, "p_other", "a1"}});
    ModelConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg, 4, 25);
    auto store = random_features(g, 4, 26);

    GraphDelta delta;
    delta.nodes.push_back({NodeKind::Product, "p_twin"});
    // same structural memberships as p_orig: category bundle + session + C-P pair
    for (const auto& e : g.hyperedges()) {
        bool has_orig = false;
        for (NodeId v : e.members) has_orig |= g.key_of(v) == "p_orig";
        if (has_orig) delta.join_hyperedges.emplace_back(e.id, "p_twin");
    }
    delta.pair_edges.push_back({PairKind::CategoryProduct, "c", "p_twin"});
    auto merged = apply_delta(g, delta);

    auto twin_store = store;
    twin_store.entries["p_twin"] = store.entries["p_orig"];  // identical features

    const std::uint64_t before = params.checksum();
    std::vector<CandidateLink> cands{
        {*merged.find("p_orig"), *merged.find("a0"), split::LinkLabel::Positive},
        {*merged.find("p_twin"), *merged.find("a0"), split::LinkLabel::Positive},
        {*merged.find("p_orig"), *merged.find("a1"), split::LinkLabel::Positive},
        {*merged.find("p_twin"), *merged.find("a1"), split::LinkLabel::Positive}};
    auto scores = inductive_update(params, FusionWeights{}, merged, twin_store, cands);
    CHECK(std::abs(scores[0] - scores[1]) < 1e-6);
    CHECK(std::abs(scores[2] - scores[3]) < 1e-6);
    CHECK(params.checksum() == before);  // frozen-parameter contract
}

TEST_CASE("inductive: isolated unseen aspect is scored from features alone") {
    auto g = fixtures::toy_graph();
    ModelConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg, 6, 27);
    auto store = random_features(g, 6, 28);

    GraphDelta delta;
    delta.nodes.push_back({NodeKind::Aspect, "brand: acme"});
    auto merged = apply_delta(g, delta);
    auto store2 = store;
    store2.entries["brand: acme"] = {0.3, -0.2, 0.5, 0.1, 0.0, -0.4};
    std::vector<CandidateLink> cands{
        {*merged.find("p1"), *merged.find("brand: acme"), split::LinkLabel::Negative}};
    auto scores = inductive_update(params, FusionWeights{}, merged, store2, cands);
    CHECK(std::isfinite(scores[0]));
    CHECK(scores[0] >= -1.0);
    CHECK(scores[0] <= 1.0);

    // unseen node lacking features is an error
    CHECK_THROWS_AS(inductive_update(params, FusionWeights{}, merged, store, cands),
                    InvariantError);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
    namespace fs = std::filesystem;
    ModelConfig cfg = tiny_config();
    cfg.hyper_layers = 2;
    cfg.gnn_layers = 3;
    ModelParams params = ModelParams::init(cfg, 12, 29);
    const auto dir = fs::temp_directory_path() / "hpave_ckpt";
    fs::create_directories(dir);
    const auto p1 = (dir / "a.bin").string();
    const auto p2 = (dir / "b.bin").string();
    params.save(p1);
    ModelParams loaded = ModelParams::load(p1);
    CHECK(loaded.checksum() == params.checksum());
    CHECK(loaded.config().dim == cfg.dim);
    CHECK(loaded.feature_dim() == 12);
    loaded.save(p2);
    auto slurp = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(slurp(p1) == slurp(p2));

    // corrupt magic is a dependency error
    {
        std::ofstream bad(dir / "bad.bin", std::ios::binary);
        bad << "WRONG";
    }
    CHECK_THROWS_AS(ModelParams::load((dir / "bad.bin").string()), DependencyError);
    fs::remove_all(dir);
}

TEST_CASE("end-to-end gradients match finite differences on a toy graph") {
    // <= 12 nodes: 1 category, 3 products, 3 aspects
    auto g = build_from_spec(
        {{NodeKind::Category, "c"},
         {NodeKind::Product, "p0"},
         {NodeKind::Product, "p1"},
         {NodeKind::Product, "p2"},
         {NodeKind::Aspect, "a0"},
         {NodeKind::Aspect, "a1"},
         {NodeKind::Aspect, "a2"}},
        {{HyperedgeKind::ProductAspects, {"p0", "a0", "a1"}},
         {HyperedgeKind::ProductAspects, {"p1", "a1"}},
         {HyperedgeKind::ProductAspects, {"p2", "a2"}},
         {HyperedgeKind::CategoryBundle, {"c", "p0", "p1", "p2", "a0", "a1", "a2"}},
         {HyperedgeKind::AlsoView, {"p0", "p1"}},
         {HyperedgeKind::AlsoBuy, {"p1", "p2"}}},
        {{PairKind::CategoryProduct, "c", "p0"},
         {PairKind::CategoryProduct, "c", "p1"},
         {PairKind::CategoryProduct, "c", "p2"},
         {PairKind::ProductAspect, "p0", "a0"},
         {PairKind::ProductAspect, "p0", "a1"},
         {PairKind::ProductAspect, "p1", "a1"},
         {PairKind::ProductAspect, "p2", "a2"}});
    ModelConfig cfg;
    cfg.dim = 6;
    cfg.heads = 2;
    cfg.hyper_layers = 1;
    cfg.gnn_layers = 2;
    cfg.dropout = 0.0;
    ModelParams params = ModelParams::init(cfg, 4, 31);
    auto store = random_features(g, 4, 32);
    std::vector<CandidateLink> candidates{
        {*g.find("p0"), *g.find("a0"), split::LinkLabel::Positive},
        {*g.find("p1"), *g.find("a2"), split::LinkLabel::Negative},
        {*g.find("p2"), *g.find("a2"), split::LinkLabel::Positive}};
    const std::vector<double> labels{1.0, 0.0, 1.0};

    auto eval_loss = [&]() {
        ad::Tape tape;
        auto r = forward(tape, g, store, params, FusionWeights{}, candidates, {}, labels);
        return tape.value(r.loss)[0];
    };
    params.zero_grads();
    {
        ad::Tape tape;
        auto r = forward(tape, g, store, params, FusionWeights{}, candidates, {}, labels);
        tape.backward(r.loss);
    }
    Rng rng(33);
    for (ad::Param& p : params.all()) {
        // spot-check up to 6 random entries per parameter group
        const std::size_t checks = std::min<std::size_t>(6, p.value.size());
        for (std::size_t c = 0; c < checks; ++c) {
            const std::size_t i = static_cast<std::size_t>(rng.below(p.value.size()));
            const double fd = oracles::central_difference(eval_loss, &p.value[i]);
            INFO(p.name, "[", i, "]");
            CHECK(oracles::rel_error(p.grad[i], fd) < 1e-4);
        }
    }
}
