#include "hyperpave/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_set>

#include <CLI11.hpp>
#include <json.hpp>

#include "hyperpave/ingest.hpp"
#include "hyperpave/metrics.hpp"

namespace hyperpave::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(tok);
    return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    std::istringstream ss(value);
    T v{};
    ss >> v;
    if (ss.fail() || !ss.eof())
        throw InputError("config key '" + key + "': bad value '" + value + "'");
    return v;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    if (key == "products") products_path = value;
    else if (key == "sessions") sessions_path = value;
    else if (key == "features") features_path = value;
    else if (key == "run_dir") run_dir = value;
    else if (key == "feature_dim") feature_dim = parse_number<std::size_t>(key, value);
    else if (key == "feature_seed") feature_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "split.n_unseen") split.n_unseen = parse_number<std::size_t>(key, value);
    else if (key == "split.negative_rate") split.negative_rate = parse_number<double>(key, value);
    else if (key == "split.seed") split.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "model.dim") model.dim = parse_number<std::size_t>(key, value);
    else if (key == "model.heads") model.heads = parse_number<std::size_t>(key, value);
    else if (key == "model.hyper_layers") model.hyper_layers = parse_number<std::size_t>(key, value);
    else if (key == "model.gnn_layers") model.gnn_layers = parse_number<std::size_t>(key, value);
    else if (key == "model.leaky_slope") model.leaky_slope = parse_number<double>(key, value);
    else if (key == "model.dropout") model.dropout = parse_number<double>(key, value);
    else if (key == "model.neighbor_cap") model.neighbor_cap = parse_number<std::size_t>(key, value);
    else if (key == "train.learning_rate") train.learning_rate = parse_number<double>(key, value);
    else if (key == "train.weight_decay") train.weight_decay = parse_number<double>(key, value);
    else if (key == "train.batch_size") train.batch_size = parse_number<std::size_t>(key, value);
    else if (key == "train.max_epochs") train.max_epochs = parse_number<std::size_t>(key, value);
    else if (key == "train.patience") train.patience = parse_number<std::size_t>(key, value);
    else if (key == "train.seed") train.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "train.fusion_resolution")
        train.fusion_resolution = parse_number<double>(key, value);
    else if (key == "train.val_metric") train.val_metric = value;
    else if (key == "eval.ks") {
        eval_ks.clear();
        for (const std::string& k : split_csv(value))
            eval_ks.push_back(parse_number<std::size_t>(key, trim(k)));
    } else if (key == "eval.seeds") {
        eval_seeds.clear();
        for (const std::string& s : split_csv(value))
            eval_seeds.push_back(parse_number<std::uint64_t>(key, trim(s)));
    } else if (key == "predict.product") predict_product = value;
    else if (key == "predict.top_k") predict_top_k = parse_number<std::size_t>(key, value);
    else throw InputError("unknown config key '" + key + "'");
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file: " + path);
    RunConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw InputError(path + ":" + std::to_string(line_no) + ": expected key = value");
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

std::string RunConfig::resolved_run_dir() const {
    fs::path dir(run_dir);
    if (dir.is_relative())
        if (const char* root = std::getenv("HYPERPAVE_RUN_ROOT"); root && *root)
            dir = fs::path(root) / dir;
    return dir.string();
}

namespace {

struct RunPaths {
    fs::path root, graph_dir, split_dir, model_dir, reports_dir;
    fs::path graph_file, payloads_file, build_report;
    fs::path manifest;
    fs::path checkpoint, history, fusion, timing;

    explicit RunPaths(const RunConfig& cfg) : root(cfg.resolved_run_dir()) {
        graph_dir = root / "graph";
        split_dir = root / "split";
        model_dir = root / "model";
        reports_dir = root / "reports";
        graph_file = graph_dir / "graph.hg";
        payloads_file = graph_dir / "payloads.tsv";
        build_report = graph_dir / "build_report.json";
        manifest = split_dir / "manifest.json";
        checkpoint = model_dir / "checkpoint.bin";
        history = model_dir / "history.json";
        fusion = model_dir / "fusion.json";
        timing = model_dir / "timing.json";
    }
};

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << text;
    if (!out) throw InputError("write failed for " + path.string());
}

void save_payloads(const fs::path& path, const ingest::PayloadMap& payloads) {
    std::vector<std::pair<std::string, std::string>> rows(payloads.begin(), payloads.end());
    std::sort(rows.begin(), rows.end());
    std::ostringstream out;
    for (const auto& [key, text] : rows)
        out << escape_field(key) << '\t' << escape_field(text) << "\n";
    write_text(path, out.str());
}

ingest::PayloadMap load_payloads(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw DependencyError("payload table not found: " + path.string() +
                              " (run the build command first)");
    ingest::PayloadMap payloads;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw DependencyError("malformed payload table: " + path.string());
        payloads[unescape_field(line.substr(0, tab))] = unescape_field(line.substr(tab + 1));
    }
    return payloads;
}

Hypergraph load_graph_artifact(const RunPaths& paths) { return load_graph(paths.graph_file.string()); }

ingest::FeatureStore load_feature_store(const RunConfig& cfg, const RunPaths& paths,
                                        const Hypergraph& g, ingest::LoadStats* stats = nullptr) {
    const ingest::PayloadMap payloads = load_payloads(paths.payloads_file);
    return ingest::load_features(cfg.features_path, g, payloads, cfg.feature_dim,
                                 cfg.feature_seed, stats);
}

model::FusionWeights load_fusion(const RunPaths& paths) {
    std::ifstream in(paths.fusion);
    if (!in)
        throw DependencyError("fusion weights not found: " + paths.fusion.string() +
                              " (run the train command first)");
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded())
        throw DependencyError("fusion weights file is malformed: " + paths.fusion.string());
    model::FusionWeights fw;
    fw.alpha = j.at("alpha").get<double>();
    fw.beta = j.at("beta").get<double>();
    fw.gamma = j.at("gamma").get<double>();
    fw.delta = j.at("delta").get<double>();
    fw.validate();
    return fw;
}

json report_to_json_obj(const metrics::EvalReport& r) { return json::parse(r.to_json()); }

metrics::EvalReport eval_side(const split::SplitSide& side, const ingest::FeatureStore& features,
                              const model::ModelParams& params, const model::FusionWeights& fw,
                              std::span<const std::size_t> ks,
                              std::optional<double> threshold) {
    model::EvalForward ef(side.graph, features, params, side.candidates);
    const auto scores = ef.scores(fw, side.candidates);
    const auto scored = train::score_candidates(side.graph, side.candidates, scores);
    return metrics::evaluate(scored, ks, threshold);
}

double validation_threshold(const split::SplitBundle& bundle,
                            const ingest::FeatureStore& features,
                            const model::ModelParams& params, const model::FusionWeights& fw) {
    if (bundle.val.candidates.empty()) return 0.5;
    model::EvalForward ef(bundle.val.graph, features, params, bundle.val.candidates);
    const auto scores = ef.scores(fw, bundle.val.candidates);
    return metrics::best_threshold(
        train::score_candidates(bundle.val.graph, bundle.val.candidates, scores));
}

}  // namespace

void cmd_build(const RunConfig& cfg) {
    if (cfg.products_path.empty()) throw InputError("build: 'products' path is not configured");
    RunPaths paths(cfg);
    const auto products = ingest::read_products(cfg.products_path);
    const auto sessions =
        cfg.sessions_path.empty() ? std::vector<ingest::SessionRecord>{}
                                  : ingest::read_sessions(cfg.sessions_path);
    ingest::BuildStats stats;
    const Hypergraph g = ingest::build_graph(products, sessions, &stats);

    fs::create_directories(paths.graph_dir);
    save_graph(g, paths.graph_file.string());
    save_payloads(paths.payloads_file, ingest::text_payloads(products));

    json report;
    report["nodes"] = {{"category", stats.categories},
                       {"product", stats.products},
                       {"aspect", stats.aspects}};
    report["pairwise_edges"] = {
        {"category_product", g.count_pair_edges(PairKind::CategoryProduct)},
        {"product_aspect", g.count_pair_edges(PairKind::ProductAspect)}};
    json hyperedges;
    for (std::size_t k = 0; k < kHyperedgeKinds; ++k) {
        const auto kind = static_cast<HyperedgeKind>(k);
        std::size_t edges = 0, members = 0;
        std::vector<bool> covered(g.node_count(), false);
        for (const Hyperedge& e : g.hyperedges()) {
            if (e.kind != kind) continue;
            ++edges;
            members += e.members.size();
            for (NodeId v : e.members) covered[v] = true;
        }
        const std::size_t nodes_covered =
            static_cast<std::size_t>(std::count(covered.begin(), covered.end(), true));
        hyperedges[to_string(kind)] = {
            {"hyperedges", edges}, {"nodes_covered", nodes_covered}, {"members", members}};
    }
    report["hyperedges"] = std::move(hyperedges);
    report["warnings"] = {{"dropped_session_keys", stats.dropped_session_keys},
                          {"dropped_sessions", stats.dropped_sessions}};
    write_text(paths.build_report, report.dump(2) + "\n");

    std::cout << "build: " << g.node_count() << " nodes, " << g.hyperedge_count()
              << " hyperedges, " << g.pair_edges().size() << " pairwise edges -> "
              << paths.graph_file.string() << "\n";
}

void cmd_split(const RunConfig& cfg) {
    RunPaths paths(cfg);
    const Hypergraph g = load_graph_artifact(paths);
    const split::SplitBundle bundle = split::zero_shot_split(g, cfg.split);
    fs::create_directories(paths.split_dir);
    split::save_manifest(bundle, paths.manifest.string());
    std::cout << "split: train " << bundle.train_graph.node_count() << " nodes / "
              << bundle.train_candidates.size() << " candidates; val "
              << bundle.val.candidates.size() << " candidates; test "
              << bundle.test.candidates.size() << " candidates -> "
              << paths.manifest.string() << "\n";
}

void cmd_train(const RunConfig& cfg) {
    RunPaths paths(cfg);
    const Hypergraph g = load_graph_artifact(paths);
    const split::SplitBundle bundle = split::load_split(g, paths.manifest.string());
    const ingest::FeatureStore features = load_feature_store(cfg, paths, g);

    const auto t0 = std::chrono::steady_clock::now();
    train::TrainResult result = train::train(bundle, features, cfg.model, cfg.train);
    const double total_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    fs::create_directories(paths.model_dir);
    result.params.save(paths.checkpoint.string());

    json history;
    history["best_epoch"] = result.history.best_epoch;
    history["best_val"] = result.history.best_val;
    history["val_metric"] = cfg.train.val_metric;
    history["adamw_skipped"] = result.history.adamw_skipped;
    json epochs = json::array();
    for (const train::EpochStats& e : result.history.epochs)
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"val_metric", e.val_metric},
                          {"param_norm", e.param_norm}});
    history["epochs"] = std::move(epochs);
    write_text(paths.history, history.dump(2) + "\n");

    json fusion;
    fusion["alpha"] = result.fusion.alpha;
    fusion["beta"] = result.fusion.beta;
    fusion["gamma"] = result.fusion.gamma;
    fusion["delta"] = result.fusion.delta;
    fusion["resolution"] = cfg.train.fusion_resolution;
    write_text(paths.fusion, fusion.dump(2) + "\n");

    // Wall-clock data lives apart from the deterministic artifacts.
    json timing;
    timing["total_seconds"] = total_s;
    json secs = json::array();
    for (const train::EpochStats& e : result.history.epochs) secs.push_back(e.seconds);
    timing["epoch_seconds"] = std::move(secs);
    write_text(paths.timing, timing.dump(2) + "\n");

    std::cout << "train: " << result.history.epochs.size() << " epochs, best epoch "
              << result.history.best_epoch << " (" << cfg.train.val_metric << " "
              << result.history.best_val << "), " << total_s << " s -> "
              << paths.checkpoint.string() << "\n";
}

namespace {

void run_repeated_eval(const RunConfig& cfg, const RunPaths& paths, const Hypergraph& g,
                       const ingest::FeatureStore& features) {
    json reps = json::array();
    std::vector<metrics::EvalReport> reports;
    for (std::uint64_t seed : cfg.eval_seeds) {
        split::SplitConfig sc = cfg.split;
        sc.seed = seed;
        train::TrainConfig tc = cfg.train;
        tc.seed = seed;
        const split::SplitBundle bundle = split::zero_shot_split(g, sc);
        const train::TrainResult result = train::train(bundle, features, cfg.model, tc);
        const double threshold =
            validation_threshold(bundle, features, result.params, result.fusion);
        metrics::EvalReport report = eval_side(bundle.test, features, result.params,
                                               result.fusion, cfg.eval_ks, threshold);
        reports.push_back(report);
        json entry = report_to_json_obj(report);
        entry["seed"] = seed;
        reps.push_back(std::move(entry));
    }

    auto mean_std = [&](auto getter) {
        double mean = 0.0;
        for (const auto& r : reports) mean += getter(r);
        mean /= static_cast<double>(reports.size());
        double var = 0.0;
        for (const auto& r : reports) {
            const double d = getter(r) - mean;
            var += d * d;
        }
        var /= static_cast<double>(reports.size());
        return std::pair<double, double>(mean, std::sqrt(var));
    };

    json agg;
    std::ostringstream table;
    table << "test metrics, mean +/- std over " << reports.size() << " seeds (%):\n";
    auto emit = [&](const std::string& name, auto getter) {
        auto [m, s] = mean_std(getter);
        agg[name] = {{"mean", m}, {"std", s}};
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%-12s %.2f +/- %.2f\n", name.c_str(), m * 100.0,
                      s * 100.0);
        table << buf;
    };
    emit("macro_f1", [](const metrics::EvalReport& r) { return r.macro_f1; });
    emit("map", [](const metrics::EvalReport& r) { return r.map; });
    emit("auc", [](const metrics::EvalReport& r) { return r.auc; });
    emit("mrr", [](const metrics::EvalReport& r) { return r.mrr; });
    for (std::size_t k : cfg.eval_ks) {
        emit("ndcg@" + std::to_string(k),
             [k](const metrics::EvalReport& r) { return r.ndcg.at(k); });
        emit("hits@" + std::to_string(k),
             [k](const metrics::EvalReport& r) { return r.hits.at(k); });
    }

    json out;
    out["repetitions"] = std::move(reps);
    out["aggregate"] = std::move(agg);
    out["seeds"] = cfg.eval_seeds;
    write_text(paths.reports_dir / "eval_test.json", out.dump(2) + "\n");
    write_text(paths.reports_dir / "eval_test.txt", table.str());
    std::cout << table.str();
}

}  // namespace

void cmd_eval(const RunConfig& cfg) {
    RunPaths paths(cfg);
    const Hypergraph g = load_graph_artifact(paths);
    const ingest::FeatureStore features = load_feature_store(cfg, paths, g);

    if (cfg.eval_seeds.size() > 1) {
        run_repeated_eval(cfg, paths, g, features);
        return;
    }

    const split::SplitBundle bundle = split::load_split(g, paths.manifest.string());
    const model::ModelParams params = model::ModelParams::load(paths.checkpoint.string());
    const model::FusionWeights fw = load_fusion(paths);

    const double threshold = validation_threshold(bundle, features, params, fw);
    const metrics::EvalReport report =
        eval_side(bundle.test, features, params, fw, cfg.eval_ks, threshold);

    json out = report_to_json_obj(report);
    out["split_seed"] = bundle.config.seed;
    write_text(paths.reports_dir / "eval_test.json", out.dump(2) + "\n");
    write_text(paths.reports_dir / "eval_test.txt", report.render_table());
    std::cout << report.render_table();
}

void cmd_predict(const RunConfig& cfg) {
    if (cfg.predict_product.empty())
        throw InputError("predict: 'predict.product' is not configured");
    RunPaths paths(cfg);
    const Hypergraph g = load_graph_artifact(paths);
    const ingest::FeatureStore features = load_feature_store(cfg, paths, g);
    const model::ModelParams params = model::ModelParams::load(paths.checkpoint.string());
    const model::FusionWeights fw = load_fusion(paths);

    const auto pid = g.find(cfg.predict_product);
    if (!pid || g.kind_of(*pid) != NodeKind::Product)
        throw InputError("predict: unknown product key '" + cfg.predict_product + "'");

    std::unordered_set<NodeId> linked;
    for (const PairEdge& e : g.pair_edges())
        if (e.kind == PairKind::ProductAspect && e.a == *pid) linked.insert(e.b);
    std::vector<model::CandidateLink> candidates;
    for (NodeId v = 0; v < g.node_count(); ++v)
        if (g.kind_of(v) == NodeKind::Aspect && !linked.count(v))
            candidates.push_back(model::CandidateLink{*pid, v, split::LinkLabel::Negative});
    if (candidates.empty()) throw InputError("predict: no unseen aspects left to rank");

    model::EvalForward ef(g, features, params, candidates);
    const auto scores = ef.scores(fw, candidates);
    std::vector<std::size_t> order(candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return g.key_of(candidates[a].aspect) < g.key_of(candidates[b].aspect);
    });

    json predictions = json::array();
    const std::size_t k = std::min(cfg.predict_top_k, order.size());
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t at = order[i];
        predictions.push_back({{"aspect", g.key_of(candidates[at].aspect)},
                               {"score", 0.5 * (scores[at] + 1.0)}});
    }
    json out;
    out["product"] = cfg.predict_product;
    out["predictions"] = std::move(predictions);

    std::string safe = cfg.predict_product;
    for (char& c : safe)
        if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
    const fs::path path = paths.reports_dir / ("predict_" + safe + ".json");
    write_text(path, out.dump(2) + "\n");
    std::cout << "predict: top " << k << " aspects for '" << cfg.predict_product << "' -> "
              << path.string() << "\n";
}

void cmd_sweep(const RunConfig& cfg) {
    RunPaths paths(cfg);
    const Hypergraph g = load_graph_artifact(paths);
    const split::SplitBundle bundle = split::load_split(g, paths.manifest.string());
    const ingest::FeatureStore features = load_feature_store(cfg, paths, g);
    const model::ModelParams params = model::ModelParams::load(paths.checkpoint.string());

    const train::FusionSweep sweep = train::fusion_grid_search(
        params, bundle, features, cfg.train.fusion_resolution, cfg.train.val_metric);
    if (sweep.empty_validation) std::cout << "sweep: empty validation set, nothing to score\n";

    std::ostringstream csv;
    csv << "alpha,beta,gamma,delta," << cfg.train.val_metric << "\n";
    char buf[160];
    for (const train::SweepRow& row : sweep.table) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g\n", row.fw.alpha,
                      row.fw.beta, row.fw.gamma, row.fw.delta, row.metric);
        csv << buf;
    }
    write_text(paths.reports_dir / "sweep.csv", csv.str());

    json out;
    out["metric"] = cfg.train.val_metric;
    out["resolution"] = cfg.train.fusion_resolution;
    out["rows"] = sweep.table.size();
    out["best"] = {{"alpha", sweep.best.alpha},
                   {"beta", sweep.best.beta},
                   {"gamma", sweep.best.gamma},
                   {"delta", sweep.best.delta},
                   {"value", sweep.best_metric}};
    write_text(paths.reports_dir / "sweep.json", out.dump(2) + "\n");
    std::cout << "sweep: " << sweep.table.size() << " tuples, best alpha=" << sweep.best.alpha
              << " beta=" << sweep.best.beta << " gamma=" << sweep.best.gamma
              << " delta=" << sweep.best.delta << " (" << cfg.train.val_metric << " "
              << sweep.best_metric << ")\n";
}

int run_command(const std::vector<std::string>& args) {
    CLI::App app{"HyperPAVE-style hypergraph link-prediction harness", "hyperpave"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::string run_dir_flag, products_flag, sessions_flag, features_flag, product_flag;
    std::optional<std::uint64_t> seed_flag;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key = value config file");
        cmd->add_option("--set", overrides, "override a config key (key=value)");
        cmd->add_option("--run-dir", run_dir_flag, "run directory");
        cmd->add_option("--seed", seed_flag, "sets split.seed and train.seed");
        return cmd;
    };
    CLI::App* build = add_common(app.add_subcommand("build", "construct the hypergraph"));
    build->add_option("--products", products_flag, "products JSONL file");
    build->add_option("--sessions", sessions_flag, "sessions JSONL file");
    add_common(app.add_subcommand("split", "zero-shot train/val/test sampling"));
    CLI::App* train_cmd = add_common(app.add_subcommand("train", "optimize the model"));
    train_cmd->add_option("--features", features_flag, "features file (dim= header)");
    CLI::App* eval_cmd = add_common(app.add_subcommand("eval", "evaluate on test candidates"));
    eval_cmd->add_option("--features", features_flag, "features file (dim= header)");
    CLI::App* predict =
        add_common(app.add_subcommand("predict", "rank unseen aspects for one product"));
    predict->add_option("--product", product_flag, "product key");
    predict->add_option("--features", features_flag, "features file (dim= header)");
    add_common(app.add_subcommand("sweep", "fusion-weight grid sweep"));

    std::vector<const char*> argv;
    argv.push_back("hyperpave");
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::from_file(config_path);
        for (const std::string& kv : overrides) {
            const std::size_t eq = kv.find('=');
            if (eq == std::string::npos)
                throw InputError("--set expects key=value, got '" + kv + "'");
            cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
        }
        if (!run_dir_flag.empty()) cfg.run_dir = run_dir_flag;
        if (!products_flag.empty()) cfg.products_path = products_flag;
        if (!sessions_flag.empty()) cfg.sessions_path = sessions_flag;
        if (!features_flag.empty()) cfg.features_path = features_flag;
        if (!product_flag.empty()) cfg.predict_product = product_flag;
        if (seed_flag) {
            cfg.split.seed = *seed_flag;
            cfg.train.seed = *seed_flag;
        }

        if (app.got_subcommand("build")) cmd_build(cfg);
        else if (app.got_subcommand("split")) cmd_split(cfg);
        else if (app.got_subcommand("train")) cmd_train(cfg);
        else if (app.got_subcommand("eval")) cmd_eval(cfg);
        else if (app.got_subcommand("predict")) cmd_predict(cfg);
        else if (app.got_subcommand("sweep")) cmd_sweep(cfg);
        return 0;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DependencyError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace hyperpave::cli
