#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mixedobj/autodiff.hpp"
#include "mixedobj/rng.hpp"
#include "mixedobj/vocab.hpp"

namespace mixedobj {

struct checkpoint_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One direction of one BiLSTM layer. Weight matrices are H x (in + H) over
// the concatenated [x_t ; h_prev] input.
struct LstmParams {
    ad::Parameter w_input, w_forget, w_output, w_cell;  // gate weights
    ad::Parameter b_input, b_forget, b_output, b_cell;  // gate biases, 1 x H

    std::vector<ad::Parameter*> all();
};

struct ClassifierHead {
    ad::Parameter weight;  // K x n
    ad::Parameter bias;    // 1 x K
};

struct ModelConfig {
    int embed_dim = 300;
    int hidden_size = 512;  // per direction
    int num_layers = 1;
    int num_classes = 2;
};

struct ModelParams {
    ModelConfig config;
    EmbeddingMatrix embedding;
    std::vector<LstmParams> forward_lstm;   // one per layer
    std::vector<LstmParams> backward_lstm;  // one per layer
    ClassifierHead head;

    // LSTM weights uniform +-1/sqrt(fan-in), forget bias 1, other biases 0;
    // head uniform +-1/sqrt(n). The embedding matrix is set separately.
    static ModelParams init(const ModelConfig& cfg, EmbeddingMatrix embedding, Rng rng);

    // every parameter, embedding included
    std::vector<ad::Parameter*> all_params();
    // parameters updated by the optimizer (embedding only when finetuning)
    std::vector<ad::Parameter*> trainable_params();
    std::int64_t param_count();
    void zero_grad();
};

// Per-position inverted dropout; null rng means eval mode (identity).
struct DropoutSpec {
    double p = 0.0;
    Rng* rng = nullptr;
};

// Standard LSTM cell; h_prev/c_prev/x_t are 1 x H / 1 x H / 1 x in rows.
std::pair<ad::Var, ad::Var> lstm_step(ad::Tape& tape, ad::Var h_prev, ad::Var c_prev, ad::Var x_t,
                                      LstmParams& params);

// BiLSTM encoding of a T x d embedding tensor into T x 2H concatenated
// states; dropout with the same rate is inserted between stacked layers.
ad::Var encode(ad::Tape& tape, ad::Var embedded, ModelParams& model, const DropoutSpec& dropout);

struct Prediction {
    ad::Var feature;  // 1 x n max-pooled document vector
    ad::Var logits;   // 1 x K
    ad::Var probs;    // 1 x K
};

Prediction pool_classify(ad::Tape& tape, ad::Var states, ClassifierHead& head);

// Full pass for one document given token indices: embed -> dropout ->
// encode -> dropout -> pool -> softmax. extra_embedding, when present, is
// added to the embedded input (perturbations enter here).
Prediction forward_document(ad::Tape& tape, ModelParams& model, const std::vector<int>& indices,
                            const DropoutSpec& dropout,
                            const Eigen::MatrixXd* extra_embedding = nullptr);

// Same pass but from a precomputed embedding Var (used by perturbation code).
Prediction forward_embedded(ad::Tape& tape, ModelParams& model, ad::Var embedded,
                            const DropoutSpec& dropout);

// eval-mode helpers: no dropout, trailing PAD stripped
Eigen::RowVectorXd predict_probs(ModelParams& model, const std::vector<int>& indices);
int predict_class(ModelParams& model, const std::vector<int>& indices);

// Checkpoint container: JSON header with named tensor shapes, vocab hash and
// a config snapshot, followed by raw little-endian doubles.
struct CheckpointExtras {
    std::uint64_t vocab_hash = 0;
    std::string config_json = "{}";
    int epoch = 0;
    std::int64_t step = 0;
    // optimizer accumulators, stored alongside parameters when present
    std::vector<std::pair<std::string, Eigen::MatrixXd>> extra_tensors;
};

void save_checkpoint(const std::string& path, ModelParams& model, const CheckpointExtras& extras);

// Loads into an already-shaped model; throws checkpoint_error on any shape or
// vocab-hash mismatch.
CheckpointExtras load_checkpoint(const std::string& path, ModelParams& model,
                                 std::optional<std::uint64_t> expected_vocab_hash);

// Reads just the header metadata without a target model.
CheckpointExtras peek_checkpoint(const std::string& path);

Eigen::MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng);

}  // namespace mixedobj
