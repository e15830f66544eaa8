#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include <nlohmann/json.hpp>

#include "mixedobj/analysis.hpp"

using namespace mixedobj;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;

namespace {

Vocabulary tiny_vocab() {
    std::vector<Example> corpus = {{{"a", "b", "c", "d", "e", "f"}, std::nullopt}};
    return Vocabulary::build(corpus, 10);
}

ModelParams tiny_model(std::uint64_t seed = 1, int classes = 2) {
    ModelConfig cfg;
    cfg.embed_dim = 4;
    cfg.hidden_size = 4;
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

}  // namespace

TEST_CASE("evaluate: error rate, confusion and histogram bookkeeping") {
    ModelParams m = tiny_model(3);
    std::vector<EncodedExample> split;
    for (int i = 0; i < 12; ++i) split.push_back({{2, 3 + (i % 3), 4}, i % 2});
    EvalReport rep = evaluate(m, split);
    CHECK(rep.example_count == 12);
    CHECK(rep.confusion.sum() == 12);
    // error rate equals the off-diagonal mass
    int off = rep.confusion.sum() - rep.confusion.diagonal().sum();
    CHECK(rep.error_rate == doctest::Approx(off / 12.0));
    CHECK(rep.error_rate == error_rate(m, split));
    // histogram over [1/K, 1] with 20 bins; totals match the split
    REQUIRE(rep.bin_edges.size() == 21);
    CHECK(rep.bin_edges.front() == doctest::Approx(0.5));
    CHECK(rep.bin_edges.back() == doctest::Approx(1.0));
    int hist_total = 0;
    for (std::size_t b = 0; b < 20; ++b) hist_total += rep.correct_hist[b] + rep.incorrect_hist[b];
    CHECK(hist_total == 12);
    // json output parses and carries the same error rate
    auto j = nlohmann::json::parse(rep.to_json());
    CHECK(j["error_rate"].get<double>() == rep.error_rate);

    CHECK_THROWS_AS(evaluate(m, {}), argument_error);
    std::vector<EncodedExample> unlabeled = {{{2, 3}, std::nullopt}};
    CHECK_THROWS_AS(evaluate(m, unlabeled), argument_error);
}

TEST_CASE("nearest neighbors match a brute-force cosine scan") {
    Vocabulary v = tiny_vocab();
    EmbeddingMatrix emb = random_embeddings(v, 8, Rng(4));
    for (int q = 2; q < v.size(); ++q) {
        std::vector<Neighbor> got = nearest_neighbors(v.word(q), emb, v, 3);
        REQUIRE(got.size() == 3);
        // reference scan
        RowVectorXd query = emb.weights.value.row(q);
        std::vector<std::pair<double, int>> ref;
        for (int i = 2; i < v.size(); ++i) {
            if (i == q) continue;
            RowVectorXd r = emb.weights.value.row(i);
            ref.push_back({query.dot(r) / (query.norm() * r.norm()), i});
        }
        std::stable_sort(ref.begin(), ref.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        for (int k = 0; k < 3; ++k) {
            CHECK(got[k].word == v.word(ref[k].second));
            CHECK(got[k].cosine == doctest::Approx(ref[k].first).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(nearest_neighbors("not-a-word", emb, v, 3), argument_error);
    CHECK_THROWS_AS(nearest_neighbors("a", emb, v, 100), argument_error);
}

TEST_CASE("ensemble interpolation is convex and one-hot reproduces a constituent") {
    ProbSet ml = {rv({0.9, 0.1}), rv({0.2, 0.8})};
    ProbSet at = {rv({0.6, 0.4}), rv({0.5, 0.5})};
    ProbSet vat = {rv({0.3, 0.7}), rv({0.4, 0.6})};
    ProbSet em = {rv({0.8, 0.2}), rv({0.1, 0.9})};

    ProbSet one_hot = ensemble_interpolate(ml, at, vat, em, {0.0, 0.0, 1.0, 0.0});
    CHECK(one_hot[0] == vat[0]);  // bit-exact
    CHECK(one_hot[1] == vat[1]);

    ProbSet mix = ensemble_interpolate(ml, at, vat, em, {0.25, 0.25, 0.25, 0.25});
    CHECK(mix[0].sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(mix[0](0) == doctest::Approx((0.9 + 0.6 + 0.3 + 0.8) / 4).epsilon(1e-12));

    CHECK_THROWS_AS(ensemble_interpolate(ml, at, vat, em, {0.5, 0.5, 0.5, -0.5}), argument_error);
    CHECK_THROWS_AS(ensemble_interpolate(ml, at, vat, em, {0.5, 0.1, 0.1, 0.1}), argument_error);
    ProbSet short_set = {rv({1.0, 0.0})};
    CHECK_THROWS_AS(ensemble_interpolate(ml, at, vat, short_set, {0.25, 0.25, 0.25, 0.25}),
                    argument_error);
}

TEST_CASE("grid search covers the simplex lattice and breaks ties lexicographically") {
    // [DERIVED] lattice points with a+b+c+d = 4 at step 0.25: C(7,3) = 35
    ProbSet flat = {rv({0.5, 0.5})};
    std::vector<int> labels = {0};
    auto [w, err] = grid_search_weights(flat, flat, flat, flat, labels, 0.25);
    // all weightings are equivalent; the scan returns the lexicographically
    // smallest (ml, at, vat, em), which starts at ml = 0, at = 0, vat = 0
    CHECK(w.ml == 0.0);
    CHECK(w.at == 0.0);
    CHECK(w.vat == 0.0);
    CHECK(w.em == 1.0);

    // a set where only the VAT probabilities classify correctly
    ProbSet bad = {rv({0.9, 0.1}), rv({0.9, 0.1})};
    ProbSet good = {rv({0.1, 0.9}), rv({0.2, 0.8})};
    std::vector<int> labels2 = {1, 1};
    auto [w2, err2] = grid_search_weights(bad, bad, good, bad, labels2, 0.25);
    CHECK(err2 == 0.0);
    CHECK(w2.vat > 0.5);

    CHECK_THROWS_AS(grid_search_weights(flat, flat, flat, flat, labels, 0.3), argument_error);
}

TEST_CASE("run_sweep: plan mode, execution and parallel equivalence") {
    std::vector<SweepSpec> specs;
    for (int i = 0; i < 5; ++i) {
        SweepSpec s;
        s.name = "job" + std::to_string(i);
        s.fields = {{"i", std::to_string(i)}};
        s.job = [i] { return 0.1 * i; };
        specs.push_back(std::move(s));
    }
    std::vector<SweepRow> planned = run_sweep(specs, 1, true);
    REQUIRE(planned.size() == 5);
    for (const SweepRow& r : planned) CHECK(r.error == -1.0);

    std::vector<SweepRow> seq = run_sweep(specs, 1, false);
    std::vector<SweepRow> par = run_sweep(specs, 3, false);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(seq[i].error == doctest::Approx(0.1 * i));
        CHECK(par[i].error == seq[i].error);
        CHECK(par[i].name == seq[i].name);
    }
}

TEST_CASE("sweep_csv lays out fields and errors") {
    std::vector<SweepRow> rows(2);
    rows[0] = {"r1", {{"a", "1"}, {"b", "x"}}, 0.25};
    rows[1] = {"r2", {{"a", "2"}, {"b", "y"}}, -1.0};
    std::string csv = sweep_csv(rows);
    CHECK(csv == "setting,a,b,error\nr1,1,x,0.25\nr2,2,y,\n");
}
