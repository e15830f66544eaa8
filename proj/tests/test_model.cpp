#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "gradcheck.hpp"
#include "mixedobj/model.hpp"

using namespace mixedobj;
using Eigen::MatrixXd;

namespace {

Vocabulary tiny_vocab() {
    std::vector<Example> corpus = {{{"a", "b", "c", "d", "e", "f"}, std::nullopt}};
    return Vocabulary::build(corpus, 10);
}

ModelParams tiny_model(int layers = 1, int classes = 3, std::uint64_t seed = 1) {
    ModelConfig cfg;
    cfg.embed_dim = 4;
    cfg.hidden_size = 5;
    cfg.num_layers = layers;
    cfg.num_classes = classes;
    Vocabulary v = tiny_vocab();
    return ModelParams::init(cfg, random_embeddings(v, cfg.embed_dim, Rng(seed)), Rng(seed + 1));
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("init shapes, names and forget-gate bias") {
    ModelParams m = tiny_model(2);
    CHECK(m.forward_lstm.size() == 2);
    CHECK(m.backward_lstm.size() == 2);
    // layer 0 consumes embeddings, layer 1 consumes 2H concatenations
    CHECK(m.forward_lstm[0].w_input.value.rows() == 5);
    CHECK(m.forward_lstm[0].w_input.value.cols() == 4 + 5);
    CHECK(m.forward_lstm[1].w_input.value.cols() == 10 + 5);
    CHECK(m.head.weight.value.rows() == 3);
    CHECK(m.head.weight.value.cols() == 10);
    CHECK((m.forward_lstm[0].b_forget.value.array() == 1.0).all());
    CHECK((m.forward_lstm[0].b_input.value.array() == 0.0).all());
    CHECK(m.forward_lstm[0].w_input.name == "layer0.fwd.w_input");
    bool found_head = false;
    for (ad::Parameter* p : m.all_params())
        if (p->name == "head.weight") found_head = true;
    CHECK(found_head);
    CHECK(m.param_count() > 0);
}

TEST_CASE("trainable_params excludes a frozen embedding") {
    ModelParams m = tiny_model();
    std::size_t with = m.trainable_params().size();
    m.embedding.finetune = false;
    std::size_t without = m.trainable_params().size();
    CHECK(with == without + 1);
    CHECK(m.all_params().size() == with);
}

TEST_CASE("forward_document produces a probability row") {
    ModelParams m = tiny_model();
    ad::Tape t;
    Prediction pred = forward_document(t, m, {2, 3, 4}, DropoutSpec{});
    CHECK(pred.probs.rows() == 1);
    CHECK(pred.probs.cols() == 3);
    CHECK(pred.probs.value().row(0).sum() == doctest::Approx(1.0));
    CHECK(pred.probs.value().minCoeff() > 0.0);
    CHECK(pred.feature.cols() == 10);
}

TEST_CASE("trailing PAD leaves logits bit-identical") {
    ModelParams m = tiny_model(2);
    std::vector<int> ids = {2, 5, 3, 4};
    std::vector<int> padded = ids;
    for (int i = 0; i < 7; ++i) padded.push_back(Vocabulary::kPad);
    ad::Tape t1, t2;
    MatrixXd a = forward_document(t1, m, ids, DropoutSpec{}).logits.value();
    MatrixXd b = forward_document(t2, m, padded, DropoutSpec{}).logits.value();
    CHECK(a == b);
    CHECK(predict_class(m, ids) == predict_class(m, padded));
}

TEST_CASE("eval mode is deterministic; dropout changes the pass") {
    ModelParams m = tiny_model();
    std::vector<int> ids = {4, 2, 3};
    CHECK(predict_probs(m, ids) == predict_probs(m, ids));
    Rng r1(7), r2(8);
    ad::Tape t1, t2;
    MatrixXd a = forward_document(t1, m, ids, DropoutSpec{0.5, &r1}).probs.value();
    MatrixXd b = forward_document(t2, m, ids, DropoutSpec{0.5, &r2}).probs.value();
    CHECK(a != b);
}

TEST_CASE("full-model gradients match finite differences") {
    ModelParams m = tiny_model(1, 3, 11);
    std::vector<int> ids = {2, 4, 3, 5};
    auto scalar = [&] {
        ad::Tape t;
        Prediction pred = forward_document(t, m, ids, DropoutSpec{});
        return ad::scale(ad::log(ad::pick(pred.probs, 1)), -1.0).scalar();
    };
    m.zero_grad();
    {
        ad::Tape t;
        Prediction pred = forward_document(t, m, ids, DropoutSpec{});
        t.backward(ad::scale(ad::log(ad::pick(pred.probs, 1)), -1.0));
    }
    for (ad::Parameter* p : m.all_params()) {
        MatrixXd fd = test::finite_difference_gradient(*p, scalar);
        CHECK_MESSAGE(test::max_rel_error(p->grad, fd) < 1e-4, p->name);
    }
}

TEST_CASE("checkpoint round trip restores every parameter bit-exactly") {
    ModelParams m = tiny_model();
    Vocabulary v = tiny_vocab();
    std::string path = temp_path("mixedobj_model.ckpt");

    CheckpointExtras ex;
    ex.vocab_hash = v.hash();
    ex.config_json = "{\"k\":1}";
    ex.epoch = 3;
    ex.step = 17;
    ex.extra_tensors.emplace_back("adam.m.head.weight", MatrixXd::Ones(3, 10));
    save_checkpoint(path, m, ex);

    std::vector<MatrixXd> saved;
    for (ad::Parameter* p : m.all_params()) saved.push_back(p->value);
    for (ad::Parameter* p : m.all_params()) p->value.array() += 0.5;

    ModelParams other = tiny_model(1, 3, 99);  // different init, same shapes
    CheckpointExtras back = load_checkpoint(path, other, v.hash());
    std::size_t i = 0;
    for (ad::Parameter* p : other.all_params()) CHECK(p->value == saved[i++]);
    CHECK(back.epoch == 3);
    CHECK(back.step == 17);
    CHECK(back.vocab_hash == v.hash());
    CHECK(back.config_json == "{\"k\":1}");
    REQUIRE(back.extra_tensors.size() == 1);
    CHECK(back.extra_tensors[0].first == "adam.m.head.weight");
    CHECK(back.extra_tensors[0].second == MatrixXd::Ones(3, 10));

    CheckpointExtras peek = peek_checkpoint(path);
    CHECK(peek.epoch == 3);
    CHECK(peek.vocab_hash == v.hash());
    std::remove(path.c_str());
}

TEST_CASE("checkpoint load rejects mismatches") {
    ModelParams m = tiny_model();
    Vocabulary v = tiny_vocab();
    std::string path = temp_path("mixedobj_model_mm.ckpt");
    CheckpointExtras ex;
    ex.vocab_hash = v.hash();
    save_checkpoint(path, m, ex);

    ModelParams same = tiny_model();
    CHECK_THROWS_AS(load_checkpoint(path, same, v.hash() + 1), checkpoint_error);

    ModelConfig big;
    big.embed_dim = 4;
    big.hidden_size = 6;  // shape mismatch
    big.num_layers = 1;
    big.num_classes = 3;
    ModelParams wrong = ModelParams::init(big, random_embeddings(v, 4, Rng(1)), Rng(2));
    CHECK_THROWS_AS(load_checkpoint(path, wrong, v.hash()), checkpoint_error);

    CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt", same, std::nullopt), checkpoint_error);
    std::remove(path.c_str());
}

TEST_CASE("dropout_mask is an inverted mask with the right statistics") {
    Rng rng(5);
    MatrixXd mask = dropout_mask(200, 100, 0.5, rng);
    int kept = 0;
    for (Eigen::Index i = 0; i < mask.rows(); ++i)
        for (Eigen::Index j = 0; j < mask.cols(); ++j) {
            CHECK((mask(i, j) == 0.0 || mask(i, j) == 2.0));
            if (mask(i, j) != 0.0) ++kept;
        }
    CHECK(std::abs(kept / 20000.0 - 0.5) < 0.02);
}
