#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "mixedobj/objectives.hpp"

using namespace mixedobj;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;

namespace {

Vocabulary tiny_vocab() {
    std::vector<Example> corpus = {{{"a", "b", "c", "d", "e", "f"}, std::nullopt}};
    return Vocabulary::build(corpus, 10);
}

ModelParams tiny_model(std::uint64_t seed = 1, int classes = 3) {
    ModelConfig cfg;
    cfg.embed_dim = 4;
    cfg.hidden_size = 5;
    cfg.num_layers = 1;
    cfg.num_classes = classes;
    Vocabulary v = tiny_vocab();
    return ModelParams::init(cfg, random_embeddings(v, cfg.embed_dim, Rng(seed)), Rng(seed + 1));
}

RowVectorXd rv(std::initializer_list<double> xs) {
    RowVectorXd v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v(i++) = x;
    return v;
}

Batch make_batch(std::vector<std::pair<std::vector<int>, std::optional<int>>> items) {
    Batch b;
    for (auto& [ids, label] : items) {
        b.token_count += static_cast<int>(ids.size());
        b.examples.push_back({std::move(ids), label});
    }
    return b;
}

}  // namespace

TEST_CASE("scalar loss values against hand computations") {
    // [DERIVED] -ln 0.5 = ln 2
    CHECK(loss_ml_value({rv({0.5, 0.5})}, {0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    // [DERIVED] mean of -ln 0.9 and -ln 0.2
    CHECK(loss_ml_value({rv({0.9, 0.1}), rv({0.8, 0.2})}, {0, 1}) ==
          doctest::Approx((-std::log(0.9) - std::log(0.2)) / 2).epsilon(1e-12));
    // [DERIVED] H([0.9, 0.1]) = 0.3250829733914482
    CHECK(loss_em_value({rv({0.9, 0.1})}) == doctest::Approx(0.3250829733914482).epsilon(1e-12));
    CHECK(loss_em_value({rv({1.0, 0.0})}) == doctest::Approx(0.0));
    // [DERIVED] KL([1,0] || [0.6,0.4]) = ln(1/0.6) = 0.5108256237659907
    CHECK(kl_value(rv({1.0, 0.0}), rv({0.6, 0.4})) ==
          doctest::Approx(0.5108256237659907).epsilon(1e-12));
    CHECK(kl_value(rv({0.3, 0.7}), rv({0.3, 0.7})) == doctest::Approx(0.0));

    CHECK_THROWS_AS(loss_ml_value({}, {}), argument_error);
    CHECK_THROWS_AS(loss_ml_value({rv({0.5, 0.5})}, {2}), argument_error);
    CHECK_THROWS_AS(loss_em_value({}), argument_error);
}

TEST_CASE("graph builders agree with the scalar helpers") {
    RowVectorXd p = rv({0.2, 0.5, 0.3});
    ad::Tape t;
    CHECK(cross_entropy(t, t.constant(p), 1).scalar() == doctest::Approx(-std::log(0.5)).epsilon(1e-12));
    CHECK(entropy_term(t, t.constant(p)).scalar() == doctest::Approx(loss_em_value({p})).epsilon(1e-12));
    RowVectorXd q = rv({0.6, 0.3, 0.1});
    CHECK(kl_term(t, p, t.constant(q)).scalar() == doctest::Approx(kl_value(p, q)).epsilon(1e-12));
    CHECK(kl_term(t, p, t.constant(p)).scalar() == doctest::Approx(0.0));
}

TEST_CASE("KL is non-negative and its gradient ignores the frozen side") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        RowVectorXd a = rv({rng.uniform(), rng.uniform(), rng.uniform()});
        RowVectorXd b = rv({rng.uniform(), rng.uniform(), rng.uniform()});
        a /= a.sum();
        b /= b.sum();
        CHECK(kl_value(a, b) >= -1e-12);
    }
    // gradient flows only through q
    ad::Parameter z("z", MatrixXd::Zero(1, 3));
    z.value << 0.1, -0.2, 0.3;
    ad::Tape t;
    ad::Var q = ad::softmax_rows(t.param(z));
    t.backward(kl_term(t, rv({0.5, 0.25, 0.25}), q));
    CHECK(z.grad.norm() > 0.0);
}

TEST_CASE("entropy of K classes is bounded by ln K") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        RowVectorXd p = rv({rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()});
        p /= p.sum();
        double h = loss_em_value({p});
        CHECK(h >= 0.0);
        CHECK(h <= std::log(4.0) + 1e-12);
    }
}

TEST_CASE("adversarial perturbation: zero at eps 0, norm eps otherwise, loss increases") {
    ModelParams m = tiny_model(5);
    std::vector<int> ids = {2, 4, 3, 5};

    MatrixXd zero = adversarial_perturbation(m, ids, 1, 0.0, 0.0, Rng(1));
    CHECK(zero.norm() == 0.0);

    double eps = 0.01;
    MatrixXd r = adversarial_perturbation(m, ids, 1, eps, 0.0, Rng(1));
    CHECK(r.rows() == 4);
    CHECK(r.cols() == 4);
    CHECK(r.norm() == doctest::Approx(eps).epsilon(1e-9));

    // the perturbation locally increases the cross-entropy
    auto ce_at = [&](const MatrixXd* extra) {
        ad::Tape t;
        Prediction pred = forward_document(t, m, ids, DropoutSpec{}, extra);
        return cross_entropy(t, pred.probs, 1).scalar();
    };
    CHECK(ce_at(&r) > ce_at(nullptr));

    // trailing PAD does not change the perturbation of the real tokens
    std::vector<int> padded = ids;
    padded.push_back(Vocabulary::kPad);
    MatrixXd rp = adversarial_perturbation(m, padded, 1, eps, 0.0, Rng(1));
    CHECK(rp == r);
}

TEST_CASE("vat perturbation: zero at eps 0, norm eps, deterministic in the rng") {
    ModelParams m = tiny_model(6);
    std::vector<int> ids = {3, 2, 5};
    CHECK(vat_perturbation(m, ids, 0.0, 0.1, 0.0, Rng(2)).norm() == 0.0);
    MatrixXd r1 = vat_perturbation(m, ids, 0.5, 0.1, 0.0, Rng(2));
    MatrixXd r2 = vat_perturbation(m, ids, 0.5, 0.1, 0.0, Rng(2));
    MatrixXd r3 = vat_perturbation(m, ids, 0.5, 0.1, 0.0, Rng(3));
    CHECK(r1.norm() == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(r1 == r2);
    CHECK(r1 != r3);
}

TEST_CASE("objective config validation") {
    ObjectiveConfig c;
    c.lambda_at = 1.0;
    c.epsilon = 0.0;
    CHECK_THROWS_AS(c.validate(), argument_error);
    c.epsilon = 1.0;
    c.validate();
    c.lambda_vat = 1.0;
    c.xi = 0.0;
    CHECK_THROWS_AS(c.validate(), argument_error);
    c.xi = 0.1;
    c.lambda_ml = -1.0;
    CHECK_THROWS_AS(c.validate(), argument_error);
}

TEST_CASE("mixed loss reduces to ML when only lambda_ml is set") {
    ModelParams m = tiny_model(7);
    Batch labeled = make_batch({{{2, 3, 4}, 0}, {{5, 2}, 2}});
    ObjectiveConfig cfg;  // lambda = (1, 0, 0, 0)
    ad::Tape t;
    MixedLossResult res = loss_mixed(t, m, labeled, {}, cfg, 0.0, Rng(1));

    std::vector<RowVectorXd> probs;
    std::vector<int> labels;
    for (const auto& ex : labeled.examples) {
        probs.push_back(predict_probs(m, ex.ids));
        labels.push_back(*ex.label);
    }
    CHECK(res.total.scalar() == doctest::Approx(loss_ml_value(probs, labels)).epsilon(1e-12));
    CHECK(res.breakdown.ml == res.breakdown.total);
    CHECK(res.breakdown.at == 0.0);
    CHECK(res.breakdown.em == 0.0);
    CHECK(res.breakdown.vat == 0.0);
    CHECK(res.breakdown.labeled_count == 2);
}

TEST_CASE("mixed loss total is the weighted sum of its terms") {
    ModelParams m = tiny_model(8);
    Batch labeled = make_batch({{{2, 3}, 0}, {{4, 5, 2}, 1}});
    Batch unlabeled = make_batch({{{3, 4}, std::nullopt}, {{5, 5, 3}, std::nullopt}});
    ObjectiveConfig cfg;
    cfg.lambda_ml = 1.0;
    cfg.lambda_at = 0.5;
    cfg.lambda_em = 0.25;
    cfg.lambda_vat = 2.0;
    cfg.epsilon = 0.05;
    cfg.use_unlabeled = true;
    ad::Tape t;
    MixedLossResult res = loss_mixed(t, m, labeled, unlabeled, cfg, 0.0, Rng(4));
    double expect = 1.0 * res.breakdown.ml + 0.5 * res.breakdown.at + 0.25 * res.breakdown.em +
                    2.0 * res.breakdown.vat;
    CHECK(res.breakdown.total == doctest::Approx(expect).epsilon(1e-12));
    CHECK(res.breakdown.em >= 0.0);
    CHECK(res.breakdown.em <= std::log(3.0) + 1e-12);
    CHECK(res.breakdown.vat >= -1e-12);
    CHECK(res.breakdown.unlabeled_count == 2);
}

TEST_CASE("mixed loss is deterministic in the rng and resamples dropout per pass") {
    ModelParams m = tiny_model(9);
    Batch labeled = make_batch({{{2, 3, 4}, 0}});
    ObjectiveConfig cfg;
    cfg.lambda_at = 1.0;
    cfg.epsilon = 0.1;
    auto run = [&](std::uint64_t seed) {
        ad::Tape t;
        return loss_mixed(t, m, labeled, {}, cfg, 0.5, Rng(seed)).breakdown;
    };
    LossBreakdown a = run(1), b = run(1), c = run(2);
    CHECK(a.total == b.total);
    CHECK(a.total != c.total);
    // independent masks: the clean and adversarial passes differ even though
    // the perturbation is tiny
    cfg.epsilon = 1e-12;
    ad::Tape t;
    MixedLossResult res = loss_mixed(t, m, labeled, {}, cfg, 0.5, Rng(1));
    CHECK(res.breakdown.ml != res.breakdown.at);
}

TEST_CASE("mixed loss requires a labeled batch for supervised terms") {
    ModelParams m = tiny_model(10);
    ObjectiveConfig cfg;
    ad::Tape t;
    CHECK_THROWS_AS(loss_mixed(t, m, {}, {}, cfg, 0.0, Rng(1)), argument_error);
}

TEST_CASE("mixed loss gradients match finite differences with frozen perturbations") {
    ModelParams m = tiny_model(12);
    Batch labeled = make_batch({{{2, 3, 4}, 0}, {{5, 2}, 2}});
    Batch unlabeled = make_batch({{{3, 5}, std::nullopt}});
    ObjectiveConfig cfg;
    cfg.lambda_ml = 1.0;
    cfg.lambda_em = 0.5;
    cfg.use_unlabeled = true;

    auto scalar = [&] {
        ad::Tape t;
        return loss_mixed(t, m, labeled, unlabeled, cfg, 0.0, Rng(1)).total.scalar();
    };
    m.zero_grad();
    {
        ad::Tape t;
        t.backward(loss_mixed(t, m, labeled, unlabeled, cfg, 0.0, Rng(1)).total);
    }
    for (ad::Parameter* p : m.all_params()) {
        MatrixXd fd = test::finite_difference_gradient(*p, scalar);
        CHECK_MESSAGE(test::max_rel_error(p->grad, fd) < 1e-4, p->name);
    }
}
