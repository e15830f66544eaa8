#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mixedobj/objectives.hpp"

namespace mixedobj {

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    int token_budget = 3000;
    double learning_rate = 1e-3;
    double beta1 = 0.0;
    double beta2 = 0.98;
    double eps_adam = 1e-8;
    double decay_rate = 0.95;  // per-epoch exponential decay
    int max_epochs = 20;
    double clip_norm = 1.0;
    double p_drop = 0.5;
    double p_w = 0.1;
    std::uint64_t seed = 0;
    ObjectiveConfig objective;
    int eval_every = 0;  // extra dev evaluations every N steps; 0 = per epoch only
    // when true, unlabeled batches match the labeled batch's example count
    // instead of its token budget
    bool unlabeled_by_count = false;
    std::string checkpoint_dir;  // empty = no checkpointing
    bool resume = false;         // continue from checkpoint_dir/last.ckpt

    void validate() const;
};

struct OptimizerState {
    std::vector<Eigen::MatrixXd> first_moment;
    std::vector<Eigen::MatrixXd> second_moment;
    std::int64_t step = 0;

    static OptimizerState init(const std::vector<ad::Parameter*>& params);
};

// Seeded shuffle, then greedy packing: a batch closes when the next document
// would push it past the token budget. Documents are never split.
std::vector<Batch> plan_batches(const std::vector<EncodedExample>& examples, int token_budget, Rng rng);

// Bias-corrected Adam update in place; gradients are read from each
// parameter's grad buffer.
void adam_step(const std::vector<ad::Parameter*>& params, OptimizerState& state, double lr, double beta1,
               double beta2, double eps_adam);

// Global-norm clipping across all parameter gradients; returns the pre-clip
// global norm.
double clip_gradients(const std::vector<ad::Parameter*>& params, double clip_norm);

double lr_schedule(int epoch, double base_lr, double decay_rate);

using MetricsSink = std::function<void(const std::string& json_line)>;

struct TrainResult {
    double best_dev_error = 1.0;
    int best_epoch = -1;
    std::int64_t steps = 0;
    int skipped_steps = 0;
    std::string best_checkpoint;
};

// Full optimization loop: token-budget batches, word dropout, mixed loss,
// clip, Adam, per-epoch lr decay, dev evaluation, best-dev checkpointing.
// When no dev set is given, 10% of the labeled training data is held out.
TrainResult train(const Dataset& data, const std::optional<Dataset>& dev, ModelParams& model,
                  const Vocabulary& vocab, const TrainConfig& cfg, const MetricsSink& metrics = {});

// argmax-class error rate on encoded labeled examples, eval mode
double error_rate(ModelParams& model, const std::vector<EncodedExample>& examples);

std::vector<EncodedExample> encode_examples(const std::vector<Example>& examples, const Vocabulary& vocab);

}  // namespace mixedobj
