#pragma once

#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "mixedobj/analysis.hpp"

namespace mixedobj::cli {

// exit codes shared by all subcommands
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitCheckpoint = 4;

using json = nlohmann::json;

json default_config();
// Table of per-dataset presets (token budget, vocab size, epsilon, classes).
json preset_config(const std::string& name);
std::vector<std::string> preset_names();

// defaults < preset < config file < explicit overrides
json resolve_config(const std::string& preset, const std::string& config_file, const json& overrides);

// Applies `--objective {ml|at|em|vat|mixed}` to a config: loss weights,
// unlabeled usage and the default epoch count.
void apply_objective_mode(json& cfg, const std::string& mode);

struct RunSetup {
    Dataset train;
    std::optional<Dataset> dev;
    std::vector<Example> test;  // labeled
    Vocabulary vocab;
    ModelParams model;
    TrainConfig train_config;
};

// Materializes vocabulary, embeddings, model and TrainConfig from a resolved
// config and loaded dataset.
RunSetup make_setup(const json& cfg, Dataset train, std::optional<Dataset> dev,
                    std::vector<Example> test);

int cmd_train(const json& resolved, const std::string& out_dir);
int cmd_evaluate(const std::string& checkpoint_path, const std::string& vocab_path,
                 const std::string& labeled_path, const std::string& out_path);
int cmd_synth(const json& params);
int cmd_ablate(const json& resolved, const std::string& grid, bool plan_only,
               const std::string& out_csv, int parallelism);
int cmd_analyze(const std::string& checkpoint_path, const std::string& vocab_path,
                const std::string& query, int top_k, const std::string& labeled_path);

// grid construction, exposed for structural tests
std::vector<SweepSpec> build_grid(const std::string& grid, const json& resolved);

int sweep_parallelism();  // MIXEDOBJ_THREADS, default 1

}  // namespace mixedobj::cli
