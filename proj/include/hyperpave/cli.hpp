// cli.hpp - experiment orchestration over a run directory
#ifndef HYPERPAVE_CLI_HPP
#define HYPERPAVE_CLI_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hyperpave/model.hpp"
#include "hyperpave/split.hpp"
#include "hyperpave/train.hpp"

namespace hyperpave::cli {

struct RunConfig {
    std::string products_path;
    std::string sessions_path;
    std::optional<std::string> features_path;
    std::string run_dir = "run";

    std::size_t feature_dim = 32;     // fallback featurizer width (no features file)
    std::uint64_t feature_seed = 17;  // fallback featurizer seed

    split::SplitConfig split;
    model::ModelConfig model;
    train::TrainConfig train;

    std::vector<std::size_t> eval_ks = {5, 10, 100};
    std::vector<std::uint64_t> eval_seeds;  // >1 entries: eval re-splits/retrains per seed
    std::string predict_product;
    std::size_t predict_top_k = 10;

    // key = value lines; '#' comments. Unknown keys are input errors.
    static RunConfig from_file(const std::string& path);
    void set(const std::string& key, const std::string& value);

    // run_dir resolved against $HYPERPAVE_RUN_ROOT when relative.
    std::string resolved_run_dir() const;
};

// Exit codes: 0 success, 1 input error, 2 missing/mismatched prior artifact,
// 3 internal invariant violation.
int run_command(const std::vector<std::string>& args);

// Individual commands, usable programmatically. They throw the common error
// types; run_command maps those to exit codes.
void cmd_build(const RunConfig& config);
void cmd_split(const RunConfig& config);
void cmd_train(const RunConfig& config);
void cmd_eval(const RunConfig& config);
void cmd_predict(const RunConfig& config);
void cmd_sweep(const RunConfig& config);

}  // namespace hyperpave::cli

#endif  // HYPERPAVE_CLI_HPP
