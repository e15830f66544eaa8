#include "mixedobj/objectives.hpp"

#include <cmath>

namespace mixedobj {

using ad::Tape;
using ad::Var;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;

void ObjectiveConfig::validate() const {
    if (lambda_ml < 0 || lambda_at < 0 || lambda_em < 0 || lambda_vat < 0)
        throw argument_error("ObjectiveConfig: loss weights must be non-negative");
    if ((lambda_at > 0 || lambda_vat > 0) && epsilon <= 0)
        throw argument_error("ObjectiveConfig: epsilon must be > 0 when AT or VAT is enabled");
    if (lambda_vat > 0 && xi <= 0) throw argument_error("ObjectiveConfig: xi must be > 0 when VAT is enabled");
}

namespace {

constexpr double kLogFloor = -745.0;

double safe_log(double x) {
    return (x < std::exp(kLogFloor)) ? kLogFloor : std::log(x);
}

}  // namespace

double loss_ml_value(const std::vector<RowVectorXd>& probs, const std::vector<int>& labels) {
    if (probs.empty() || probs.size() != labels.size())
        throw argument_error("loss_ml: batch empty or sizes mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= probs[i].size())
            throw argument_error("loss_ml: label out of range");
        acc -= safe_log(probs[i](labels[i]));
    }
    return acc / static_cast<double>(probs.size());
}

double loss_em_value(const std::vector<RowVectorXd>& probs) {
    if (probs.empty()) throw argument_error("loss_em: empty batch");
    double acc = 0.0;
    for (const RowVectorXd& p : probs)
        for (Eigen::Index k = 0; k < p.size(); ++k)
            if (p(k) > 0.0) acc -= p(k) * std::log(p(k));
    return acc / static_cast<double>(probs.size());
}

double kl_value(const RowVectorXd& p, const RowVectorXd& q) {
    double acc = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k)
        if (p(k) > 0.0) acc += p(k) * (std::log(p(k)) - safe_log(q(k)));
    return acc;
}

Var cross_entropy(Tape& tape, Var probs, int label) {
    return ad::scale(ad::log_clamped(ad::pick(probs, label)), -1.0);
}

Var entropy_term(Tape& tape, Var probs) {
    // 0 * log 0 contributes 0 through the clamped log times the zero factor
    return ad::scale(ad::sum(ad::cmul(probs, ad::log_clamped(probs))), -1.0);
}

Var kl_term(Tape& tape, const RowVectorXd& p0, Var q_probs) {
    double self_term = 0.0;
    for (Eigen::Index k = 0; k < p0.size(); ++k)
        if (p0(k) > 0.0) self_term += p0(k) * std::log(p0(k));
    Var cross = ad::sum(ad::cmul(tape.constant(p0), ad::log_clamped(q_probs)));
    return ad::add(tape.constant(MatrixXd::Constant(1, 1, self_term)), ad::scale(cross, -1.0));
}

MatrixXd embed_rows(const EmbeddingMatrix& emb, const std::vector<int>& ids) {
    MatrixXd v(static_cast<Eigen::Index>(ids.size()), emb.dim);
    for (std::size_t i = 0; i < ids.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = emb.weights.value.row(ids[i]);
    return v;
}

namespace {

std::vector<int> trim_pad(const std::vector<int>& ids) {
    std::vector<int> out = ids;
    while (out.size() > 1 && out.back() == Vocabulary::kPad) out.pop_back();
    return out;
}

MatrixXd rescale_to(const MatrixXd& g, double epsilon) {
    double norm = g.norm();
    if (norm == 0.0 || epsilon == 0.0) return MatrixXd::Zero(g.rows(), g.cols());
    return (epsilon / norm) * g;
}

DropoutSpec pass_dropout(double p_drop, Rng& rng) { return DropoutSpec{p_drop, p_drop > 0 ? &rng : nullptr}; }

}  // namespace

MatrixXd adversarial_perturbation(ModelParams& model, const std::vector<int>& raw_ids, int label,
                                  double epsilon, double p_drop, Rng rng) {
    std::vector<int> ids = trim_pad(raw_ids);
    if (epsilon == 0.0) return MatrixXd::Zero(static_cast<Eigen::Index>(ids.size()), model.embedding.dim);
    Tape tape;
    Var v = tape.leaf(embed_rows(model.embedding, ids), true);
    Rng drop = rng.stream("dropout");
    Prediction pred = forward_embedded(tape, model, v, pass_dropout(p_drop, drop));
    Var ce = cross_entropy(tape, pred.probs, label);
    tape.backward(ce);
    // grad of CE equals -grad log p, the paper's g
    return rescale_to(v.grad(), epsilon);
}

MatrixXd vat_perturbation(ModelParams& model, const std::vector<int>& raw_ids, double epsilon, double xi,
                          double p_drop, Rng rng) {
    std::vector<int> ids = trim_pad(raw_ids);
    MatrixXd v0 = embed_rows(model.embedding, ids);

    // clean prediction, detached
    RowVectorXd p0;
    {
        Tape tape;
        Rng drop = rng.stream("clean-dropout");
        Prediction pred = forward_embedded(tape, model, tape.constant(v0), pass_dropout(p_drop, drop));
        p0 = pred.probs.value().row(0);
    }

    Rng noise = rng.stream("noise");
    MatrixXd d = gaussian_matrix(v0.rows(), v0.cols(), noise);
    double dn = d.norm();
    if (dn == 0.0) return MatrixXd::Zero(v0.rows(), v0.cols());
    d /= dn;

    Tape tape;
    Var v_probe = tape.leaf(v0 + xi * d, true);
    Rng drop = rng.stream("probe-dropout");
    Prediction pred = forward_embedded(tape, model, v_probe, pass_dropout(p_drop, drop));
    Var kl = kl_term(tape, p0, pred.probs);
    tape.backward(kl);
    return rescale_to(v_probe.grad(), epsilon);
}

MixedLossResult loss_mixed(Tape& tape, ModelParams& model, const Batch& labeled, const Batch& unlabeled,
                           const ObjectiveConfig& cfg, double p_drop, Rng rng) {
    cfg.validate();
    bool need_labeled = cfg.lambda_ml > 0 || cfg.lambda_at > 0;
    if (need_labeled && labeled.examples.empty())
        throw argument_error("loss_mixed: labeled batch required when ML or AT is weighted");

    // union batch for the unsupervised terms
    std::vector<const EncodedExample*> pool;
    if (cfg.use_labeled)
        for (const auto& ex : labeled.examples) pool.push_back(&ex);
    if (cfg.use_unlabeled)
        for (const auto& ex : unlabeled.examples) pool.push_back(&ex);

    bool need_union_clean = cfg.lambda_em > 0;
    bool need_labeled_clean = cfg.lambda_ml > 0 || (need_union_clean && cfg.use_labeled);

    MixedLossResult res;
    res.breakdown.labeled_count = static_cast<int>(labeled.examples.size());
    res.breakdown.unlabeled_count = static_cast<int>(unlabeled.examples.size());

    Rng clean_rng = rng.stream("clean");
    Rng at_rng = rng.stream("at");
    Rng vat_rng = rng.stream("vat");

    // clean forward passes, shared by ML and EM
    std::vector<Var> labeled_probs;
    if (need_labeled_clean) {
        labeled_probs.reserve(labeled.examples.size());
        std::uint64_t i = 0;
        for (const auto& ex : labeled.examples) {
            Rng drop = clean_rng.stream("l", i++);
            labeled_probs.push_back(
                forward_document(tape, model, ex.ids, pass_dropout(p_drop, drop)).probs);
        }
    }
    std::vector<Var> unlabeled_probs;
    if (need_union_clean && cfg.use_unlabeled) {
        unlabeled_probs.reserve(unlabeled.examples.size());
        std::uint64_t i = 0;
        for (const auto& ex : unlabeled.examples) {
            Rng drop = clean_rng.stream("u", i++);
            unlabeled_probs.push_back(
                forward_document(tape, model, ex.ids, pass_dropout(p_drop, drop)).probs);
        }
    }

    std::vector<std::pair<double, Var>> terms;

    if (cfg.lambda_ml > 0) {
        Var acc = cross_entropy(tape, labeled_probs[0], *labeled.examples[0].label);
        for (std::size_t i = 1; i < labeled.examples.size(); ++i)
            acc = ad::add(acc, cross_entropy(tape, labeled_probs[i], *labeled.examples[i].label));
        Var ml = ad::scale(acc, 1.0 / static_cast<double>(labeled.examples.size()));
        res.breakdown.ml = ml.scalar();
        terms.emplace_back(cfg.lambda_ml, ml);
    }

    if (cfg.lambda_at > 0) {
        Var acc;
        std::uint64_t i = 0;
        for (const auto& ex : labeled.examples) {
            Rng ex_rng = at_rng.stream("ex", i);
            MatrixXd r_at = adversarial_perturbation(model, ex.ids, *ex.label, cfg.epsilon, p_drop,
                                                     ex_rng.stream("perturb"));
            Rng drop = ex_rng.stream("dropout");
            Prediction pred =
                forward_document(tape, model, ex.ids, pass_dropout(p_drop, drop), &r_at);
            Var ce = cross_entropy(tape, pred.probs, *ex.label);
            acc = (i == 0) ? ce : ad::add(acc, ce);
            ++i;
        }
        Var at = ad::scale(acc, 1.0 / static_cast<double>(labeled.examples.size()));
        res.breakdown.at = at.scalar();
        terms.emplace_back(cfg.lambda_at, at);
    }

    if (cfg.lambda_em > 0 && !pool.empty()) {
        Var acc;
        std::size_t nl = labeled_probs.size();
        for (std::size_t i = 0; i < pool.size(); ++i) {
            Var probs = (cfg.use_labeled && i < nl) ? labeled_probs[i] : unlabeled_probs[i - (cfg.use_labeled ? nl : 0)];
            Var h = entropy_term(tape, probs);
            acc = (i == 0) ? h : ad::add(acc, h);
        }
        Var em = ad::scale(acc, 1.0 / static_cast<double>(pool.size()));
        res.breakdown.em = em.scalar();
        terms.emplace_back(cfg.lambda_em, em);
    }

    if (cfg.lambda_vat > 0 && !pool.empty()) {
        Var acc;
        std::uint64_t i = 0;
        for (const EncodedExample* ex : pool) {
            Rng ex_rng = vat_rng.stream("ex", i);
            MatrixXd r_vat =
                vat_perturbation(model, ex->ids, cfg.epsilon, cfg.xi, p_drop, ex_rng.stream("perturb"));
            // clean reference distribution, detached, fresh mask
            RowVectorXd p0;
            {
                Tape side;
                Rng drop = ex_rng.stream("ref-dropout");
                p0 = forward_embedded(side, model, side.constant(embed_rows(model.embedding, ex->ids)),
                                      pass_dropout(p_drop, drop))
                         .probs.value()
                         .row(0);
            }
            Rng drop = ex_rng.stream("dropout");
            Prediction pred = forward_document(tape, model, ex->ids, pass_dropout(p_drop, drop), &r_vat);
            Var kl = kl_term(tape, p0, pred.probs);
            acc = (i == 0) ? kl : ad::add(acc, kl);
            ++i;
        }
        Var vat = ad::scale(acc, 1.0 / static_cast<double>(pool.size()));
        res.breakdown.vat = vat.scalar();
        terms.emplace_back(cfg.lambda_vat, vat);
    }

    if (terms.empty()) {
        res.total = tape.constant(MatrixXd::Zero(1, 1));
    } else {
        Var acc = ad::scale(terms[0].second, terms[0].first);
        for (std::size_t i = 1; i < terms.size(); ++i)
            acc = ad::add(acc, ad::scale(terms[i].second, terms[i].first));
        res.total = acc;
    }
    res.breakdown.total = res.total.scalar();
    return res;
}

}  // namespace mixedobj
