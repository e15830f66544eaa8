#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mixedobj/trainer.hpp"

namespace mixedobj {

struct EvalReport {
    double error_rate = 0.0;
    Eigen::MatrixXi confusion;  // rows = true class, cols = predicted
    int example_count = 0;
    // histogram of max-class probability over [1/K, 1], split by correctness
    std::vector<double> bin_edges;
    std::vector<int> correct_hist;
    std::vector<int> incorrect_hist;

    std::string to_json() const;
};

// argmax predictions over a labeled split; deterministic, eval mode
EvalReport evaluate(ModelParams& model, const std::vector<EncodedExample>& split, int num_bins = 20);

struct Neighbor {
    std::string word;
    double cosine = 0.0;
};

// top-k by cosine similarity, brute-force scan; excludes the query, UNK and
// PAD; ties broken by vocabulary index
std::vector<Neighbor> nearest_neighbors(const std::string& word, const EmbeddingMatrix& emb,
                                        const Vocabulary& vocab, int k);

struct EnsembleWeights {
    double ml = 1.0, at = 0.0, vat = 0.0, em = 0.0;
};

using ProbSet = std::vector<Eigen::RowVectorXd>;  // one row per example

// convex combination p_I = a_ml p_ml + a_at p_at + a_vat p_vat + a_em p_em
ProbSet ensemble_interpolate(const ProbSet& ml, const ProbSet& at, const ProbSet& vat, const ProbSet& em,
                             const EnsembleWeights& w);

// exhaustive search over the 4-simplex lattice at the given resolution;
// ties go to the lexicographically smallest (ml, at, vat, em)
std::pair<EnsembleWeights, double> grid_search_weights(const ProbSet& ml, const ProbSet& at,
                                                       const ProbSet& vat, const ProbSet& em,
                                                       const std::vector<int>& labels,
                                                       double grid_step = 0.05);

// --- sweep machinery --------------------------------------------------------

struct SweepSpec {
    std::string name;
    std::vector<std::pair<std::string, std::string>> fields;
    std::function<double()> job;  // returns test error; empty when planning only
};

struct SweepRow {
    std::string name;
    std::vector<std::pair<std::string, std::string>> fields;
    double error = -1.0;  // -1 when the job was not run
};

// Runs each setting independently; max_parallel <= 1 means sequential.
std::vector<SweepRow> run_sweep(const std::vector<SweepSpec>& specs, int max_parallel = 1,
                                bool plan_only = false);

std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace mixedobj
