#include "mixedobj/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace mixedobj {

using Eigen::RowVectorXd;
using json = nlohmann::json;

std::string EvalReport::to_json() const {
    json j;
    j["error_rate"] = error_rate;
    j["example_count"] = example_count;
    std::vector<std::vector<int>> conf(confusion.rows());
    for (Eigen::Index i = 0; i < confusion.rows(); ++i)
        for (Eigen::Index k = 0; k < confusion.cols(); ++k) conf[i].push_back(confusion(i, k));
    j["confusion"] = conf;
    j["bin_edges"] = bin_edges;
    j["correct_hist"] = correct_hist;
    j["incorrect_hist"] = incorrect_hist;
    return j.dump();
}

EvalReport evaluate(ModelParams& model, const std::vector<EncodedExample>& split, int num_bins) {
    if (split.empty()) throw argument_error("evaluate: empty split");
    int K = model.config.num_classes;
    EvalReport rep;
    rep.confusion = Eigen::MatrixXi::Zero(K, K);
    rep.example_count = static_cast<int>(split.size());

    double lo = 1.0 / static_cast<double>(K);
    double width = (1.0 - lo) / static_cast<double>(num_bins);
    rep.bin_edges.resize(num_bins + 1);
    for (int b = 0; b <= num_bins; ++b) rep.bin_edges[b] = lo + width * b;
    rep.correct_hist.assign(num_bins, 0);
    rep.incorrect_hist.assign(num_bins, 0);

    int wrong = 0;
    for (const EncodedExample& ex : split) {
        if (!ex.label) throw argument_error("evaluate: unlabeled example in evaluation split");
        RowVectorXd p = predict_probs(model, ex.ids);
        Eigen::Index pred = 0;
        for (Eigen::Index k = 1; k < p.size(); ++k)
            if (p(k) > p(pred)) pred = k;
        bool correct = (static_cast<int>(pred) == *ex.label);
        if (!correct) ++wrong;
        rep.confusion(*ex.label, pred) += 1;
        int bin = std::min(num_bins - 1, static_cast<int>((p(pred) - lo) / width));
        bin = std::max(0, bin);
        (correct ? rep.correct_hist : rep.incorrect_hist)[bin] += 1;
    }
    rep.error_rate = static_cast<double>(wrong) / static_cast<double>(split.size());
    return rep;
}

std::vector<Neighbor> nearest_neighbors(const std::string& word, const EmbeddingMatrix& emb,
                                        const Vocabulary& vocab, int k) {
    int qi = vocab.index(word);
    if (qi == Vocabulary::kUnk && word != Vocabulary::kUnkToken)
        throw argument_error("nearest_neighbors: '" + word + "' not in vocabulary");
    if (k >= vocab.size()) throw argument_error("nearest_neighbors: k must be < vocabulary size");

    Eigen::RowVectorXd q = emb.weights.value.row(qi);
    double qn = q.norm();
    std::vector<Neighbor> all;
    for (int i = 0; i < vocab.size(); ++i) {
        if (i == qi || i == Vocabulary::kUnk || i == Vocabulary::kPad) continue;
        Eigen::RowVectorXd r = emb.weights.value.row(i);
        double rn = r.norm();
        double cos = (qn > 0 && rn > 0) ? q.dot(r) / (qn * rn) : 0.0;
        all.push_back({vocab.word(i), cos});
    }
    // stable sort keeps vocabulary order among ties
    std::stable_sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
        return a.cosine > b.cosine;
    });
    if (static_cast<int>(all.size()) > k) all.resize(k);
    return all;
}

ProbSet ensemble_interpolate(const ProbSet& ml, const ProbSet& at, const ProbSet& vat, const ProbSet& em,
                             const EnsembleWeights& w) {
    std::size_t n = ml.size();
    if (at.size() != n || vat.size() != n || em.size() != n)
        throw argument_error("ensemble_interpolate: prob sets cover different example counts");
    double s = w.ml + w.at + w.vat + w.em;
    if (w.ml < 0 || w.at < 0 || w.vat < 0 || w.em < 0 || std::abs(s - 1.0) > 1e-9)
        throw argument_error("ensemble_interpolate: weights must be a convex combination");
    ProbSet out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = w.ml * ml[i] + w.at * at[i] + w.vat * vat[i] + w.em * em[i];
    return out;
}

namespace {

double prob_set_error(const ProbSet& probs, const std::vector<int>& labels) {
    int wrong = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        Eigen::Index pred = 0;
        for (Eigen::Index k = 1; k < probs[i].size(); ++k)
            if (probs[i](k) > probs[i](pred)) pred = k;
        if (static_cast<int>(pred) != labels[i]) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(probs.size());
}

}  // namespace

std::pair<EnsembleWeights, double> grid_search_weights(const ProbSet& ml, const ProbSet& at,
                                                       const ProbSet& vat, const ProbSet& em,
                                                       const std::vector<int>& labels, double grid_step) {
    int r = static_cast<int>(std::llround(1.0 / grid_step));
    if (r < 1 || std::abs(r * grid_step - 1.0) > 1e-9)
        throw argument_error("grid_search_weights: grid_step must divide 1 evenly");
    EnsembleWeights best;
    double best_err = 2.0;
    bool found = false;
    for (int a = 0; a <= r; ++a) {
        for (int b = 0; a + b <= r; ++b) {
            for (int c = 0; a + b + c <= r; ++c) {
                int d = r - a - b - c;
                EnsembleWeights w{static_cast<double>(a) / r, static_cast<double>(b) / r,
                                  static_cast<double>(c) / r, static_cast<double>(d) / r};
                double err = prob_set_error(ensemble_interpolate(ml, at, vat, em, w), labels);
                if (!found || err < best_err) {
                    best = w;
                    best_err = err;
                    found = true;
                }
            }
        }
    }
    return {best, best_err};
}

std::vector<SweepRow> run_sweep(const std::vector<SweepSpec>& specs, int max_parallel, bool plan_only) {
    std::vector<SweepRow> rows(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        rows[i].name = specs[i].name;
        rows[i].fields = specs[i].fields;
    }
    if (plan_only) return rows;

    if (max_parallel <= 1) {
        for (std::size_t i = 0; i < specs.size(); ++i)
            if (specs[i].job) rows[i].error = specs[i].job();
        return rows;
    }

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= specs.size()) break;
            if (specs[i].job) rows[i].error = specs[i].job();
        }
    };
    std::vector<std::thread> threads;
    int n = std::min<int>(max_parallel, static_cast<int>(specs.size()));
    for (int t = 0; t < n; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream out;
    if (rows.empty()) return "setting,error\n";
    // union of field keys, in first-seen order
    std::vector<std::string> keys;
    for (const SweepRow& r : rows)
        for (const auto& [k, v] : r.fields)
            if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    out << "setting";
    for (const std::string& k : keys) out << ',' << k;
    out << ",error\n";
    for (const SweepRow& r : rows) {
        out << r.name;
        for (const std::string& k : keys) {
            out << ',';
            for (const auto& [fk, fv] : r.fields)
                if (fk == k) {
                    out << fv;
                    break;
                }
        }
        if (r.error >= 0)
            out << ',' << r.error;
        else
            out << ',';
        out << '\n';
    }
    return out.str();
}

}  // namespace mixedobj
