#pragma once

#include <optional>
#include <vector>

#include "mixedobj/model.hpp"

namespace mixedobj {

// A document encoded to vocabulary indices; no label means unlabeled.
struct EncodedExample {
    std::vector<int> ids;
    std::optional<int> label;
};

struct Batch {
    std::vector<EncodedExample> examples;
    int token_count = 0;
};

struct ObjectiveConfig {
    double lambda_ml = 1.0;
    double lambda_at = 0.0;
    double lambda_em = 0.0;
    double lambda_vat = 0.0;
    double epsilon = 1.0;  // perturbation magnitude, embedding-space L2
    double xi = 0.1;       // VAT probe scale
    bool use_labeled = true;
    bool use_unlabeled = false;

    void validate() const;
};

struct LossBreakdown {
    double total = 0.0;
    double ml = 0.0;
    double at = 0.0;
    double em = 0.0;
    double vat = 0.0;
    int labeled_count = 0;
    int unlabeled_count = 0;
};

// --- scalar helpers (no graph) ---------------------------------------------

double loss_ml_value(const std::vector<Eigen::RowVectorXd>& probs, const std::vector<int>& labels);
double loss_em_value(const std::vector<Eigen::RowVectorXd>& probs);
double kl_value(const Eigen::RowVectorXd& p, const Eigen::RowVectorXd& q);

// --- graph builders ---------------------------------------------------------

// -log probs[label], with the log clamped at -745
ad::Var cross_entropy(ad::Tape& tape, ad::Var probs, int label);
// -sum p log p of one prediction row
ad::Var entropy_term(ad::Tape& tape, ad::Var probs);
// KL(p0 || q) with p0 a constant; gradient flows through q only
ad::Var kl_term(ad::Tape& tape, const Eigen::RowVectorXd& p0, ad::Var q_probs);

// embedding rows for a document, as plain values (no graph)
Eigen::MatrixXd embed_rows(const EmbeddingMatrix& emb, const std::vector<int>& ids);

// r_at = epsilon * g / |g|_2 with g the gradient of the per-example
// cross-entropy w.r.t. the T x d embedding tensor; zero when |g| = 0.
// The norm is taken over the whole tensor.
Eigen::MatrixXd adversarial_perturbation(ModelParams& model, const std::vector<int>& ids, int label,
                                         double epsilon, double p_drop, Rng rng);

// One power iteration: Gaussian probe direction normalized to unit L2,
// gradient of KL(clean || probe) at v + xi*d, rescaled to length epsilon.
Eigen::MatrixXd vat_perturbation(ModelParams& model, const std::vector<int>& ids, double epsilon,
                                 double xi, double p_drop, Rng rng);

struct MixedLossResult {
    LossBreakdown breakdown;
    ad::Var total;  // scalar node on the caller's tape
};

// Builds the weighted objective on `tape`. Terms with zero weight are
// skipped entirely. EM and VAT run over the union of the enabled batches;
// dropout masks are resampled independently for the clean, adversarial and
// virtual-adversarial passes.
MixedLossResult loss_mixed(ad::Tape& tape, ModelParams& model, const Batch& labeled,
                           const Batch& unlabeled, const ObjectiveConfig& cfg, double p_drop, Rng rng);

}  // namespace mixedobj
