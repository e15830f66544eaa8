#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mixedobj/cli.hpp"

namespace {

using mixedobj::cli::json;

// Collects config flags shared by train/ablate and records which were set so
// only explicit flags override preset/file values.
struct ConfigFlags {
    std::string preset, config_file, objective;
    std::string labeled, unlabeled, dev, test, embed, embed_mode;
    int epochs = 0, token_budget = 0, vocab_size = 0, hidden = 0, layers = 0, embed_dim = 0,
        classes = 0;
    double epsilon = 0, xi = 0, lambda_ml = 0, lambda_at = 0, lambda_em = 0, lambda_vat = 0,
           learning_rate = 0, p_drop = 0, p_w = 0;
    std::uint64_t seed = 0;

    std::vector<std::pair<std::string, CLI::Option*>> tracked;

    void attach(CLI::App& app) {
        auto track = [&](const std::string& key, CLI::Option* opt) { tracked.emplace_back(key, opt); };
        app.add_option("--preset", preset, "dataset preset");
        app.add_option("--config", config_file, "JSON config file");
        track("objective", app.add_option("--objective", objective, "ml|at|em|vat|mixed"));
        track("labeled", app.add_option("--labeled", labeled, "labeled training TSV"));
        track("unlabeled", app.add_option("--unlabeled", unlabeled, "unlabeled training text"));
        track("dev", app.add_option("--dev", dev, "dev split TSV"));
        track("test", app.add_option("--test", test, "test split TSV"));
        track("epochs", app.add_option("--epochs", epochs, "training epochs"));
        track("token_budget", app.add_option("--token-budget", token_budget, "batch token budget"));
        track("vocab_size", app.add_option("--vocab-size", vocab_size, "max vocabulary size"));
        track("classes", app.add_option("--classes", classes, "number of classes"));
        track("epsilon", app.add_option("--epsilon", epsilon, "perturbation radius"));
        track("xi", app.add_option("--xi", xi, "VAT probe scale"));
        track("lambda_ml", app.add_option("--lambda-ml", lambda_ml, "ML loss weight"));
        track("lambda_at", app.add_option("--lambda-at", lambda_at, "AT loss weight"));
        track("lambda_em", app.add_option("--lambda-em", lambda_em, "EM loss weight"));
        track("lambda_vat", app.add_option("--lambda-vat", lambda_vat, "VAT loss weight"));
        track("hidden", app.add_option("--hidden", hidden, "LSTM hidden units per direction"));
        track("layers", app.add_option("--layers", layers, "BiLSTM layers"));
        track("embed_dim", app.add_option("--embed", embed_dim, "embedding dimension"));
        track("embed", app.add_option("--embed-file", embed, "pretrained embedding file"));
        track("embed_mode",
              app.add_option("--embed-mode", embed_mode, "finetune|static|random")
                  ->check(CLI::IsMember({"finetune", "static", "random"})));
        track("learning_rate", app.add_option("--learning-rate", learning_rate, "Adam step size"));
        track("p_drop", app.add_option("--p-drop", p_drop, "dropout rate"));
        track("p_w", app.add_option("--p-w", p_w, "word dropout rate"));
        track("seed", app.add_option("--seed", seed, "root RNG seed"));
    }

    json overrides() const {
        json o = json::object();
        auto put = [&](const std::string& key, auto value) { o[key] = value; };
        for (const auto& [key, opt] : tracked) {
            if (!opt->count()) continue;
            if (key == "objective") put(key, objective);
            else if (key == "labeled") put(key, labeled);
            else if (key == "unlabeled") put(key, unlabeled);
            else if (key == "dev") put(key, dev);
            else if (key == "test") put(key, test);
            else if (key == "embed") put(key, embed);
            else if (key == "embed_mode") put(key, embed_mode);
            else if (key == "epochs") put(key, epochs);
            else if (key == "token_budget") put(key, token_budget);
            else if (key == "vocab_size") put(key, vocab_size);
            else if (key == "classes") put(key, classes);
            else if (key == "hidden") put(key, hidden);
            else if (key == "layers") put(key, layers);
            else if (key == "embed_dim") put(key, embed_dim);
            else if (key == "epsilon") put(key, epsilon);
            else if (key == "xi") put(key, xi);
            else if (key == "lambda_ml") put(key, lambda_ml);
            else if (key == "lambda_at") put(key, lambda_at);
            else if (key == "lambda_em") put(key, lambda_em);
            else if (key == "lambda_vat") put(key, lambda_vat);
            else if (key == "learning_rate") put(key, learning_rate);
            else if (key == "p_drop") put(key, p_drop);
            else if (key == "p_w") put(key, p_w);
            else if (key == "seed") put(key, seed);
        }
        return o;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mixed-objective semi-supervised text classifier"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "train a model");
    ConfigFlags train_flags;
    train_flags.attach(*train);
    std::string train_out = "run";
    train->add_option("--out", train_out, "output run directory");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint");
    std::string eval_ckpt, eval_vocab, eval_data, eval_out;
    evaluate->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
    evaluate->add_option("--vocab", eval_vocab, "vocab.tsv path (default: next to checkpoint)");
    evaluate->add_option("--labeled", eval_data, "labeled TSV to score")->required();
    evaluate->add_option("--out", eval_out, "write report JSON here");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "run a sweep grid");
    ConfigFlags ablate_flags;
    ablate_flags.attach(*ablate);
    std::string grid = "table5", ablate_out;
    bool plan_only = false;
    ablate->add_option("--grid", grid, "table5 | table7 | axis=v1,v2,...");
    ablate->add_option("--out", ablate_out, "write CSV here");
    ablate->add_flag("--plan-only", plan_only, "print the grid without training");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    int m_labeled = 0, m_unlabeled = 0, m_test = 0, s_classes = 2, s_vocab = 100, len_min = 5,
        len_max = 20;
    double signal = 0.9;
    std::uint64_t s_seed = 0;
    std::string s_labeled_out, s_unlabeled_out, s_test_out;
    synth->add_option("--labeled-count", m_labeled, "labeled examples")->required();
    synth->add_option("--unlabeled-count", m_unlabeled, "unlabeled examples");
    synth->add_option("--test-count", m_test, "test examples");
    synth->add_option("--classes", s_classes, "number of classes");
    synth->add_option("--vocab-size", s_vocab, "synthetic vocabulary size");
    synth->add_option("--len-min", len_min, "min document length");
    synth->add_option("--len-max", len_max, "max document length");
    synth->add_option("--signal", signal, "indicator-word probability");
    synth->add_option("--seed", s_seed, "generator seed");
    synth->add_option("--labeled-out", s_labeled_out, "labeled TSV path")->required();
    synth->add_option("--unlabeled-out", s_unlabeled_out, "unlabeled text path");
    synth->add_option("--test-out", s_test_out, "test TSV path");

    // analyze
    auto* analyze = app.add_subcommand("analyze", "inspect a trained model");
    std::string an_ckpt, an_vocab, an_query, an_data;
    int top_k = 10;
    analyze->add_option("--checkpoint", an_ckpt, "checkpoint path")->required();
    analyze->add_option("--vocab", an_vocab, "vocab.tsv path (default: next to checkpoint)");
    analyze->add_option("--neighbors", an_query, "word to list nearest neighbors for");
    analyze->add_option("--top-k", top_k, "neighbor count");
    analyze->add_option("--labeled", an_data, "labeled TSV for confidence histogram");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : mixedobj::cli::kExitConfig;
    }

    try {
        if (train->parsed()) {
            json cfg = mixedobj::cli::resolve_config(train_flags.preset, train_flags.config_file,
                                                     train_flags.overrides());
            return mixedobj::cli::cmd_train(cfg, train_out);
        }
        if (evaluate->parsed())
            return mixedobj::cli::cmd_evaluate(eval_ckpt, eval_vocab, eval_data, eval_out);
        if (ablate->parsed()) {
            json cfg = mixedobj::cli::resolve_config(ablate_flags.preset, ablate_flags.config_file,
                                                     ablate_flags.overrides());
            return mixedobj::cli::cmd_ablate(cfg, grid, plan_only, ablate_out,
                                             mixedobj::cli::sweep_parallelism());
        }
        if (synth->parsed()) {
            json params = {{"m_labeled", m_labeled}, {"m_unlabeled", m_unlabeled},
                           {"m_test", m_test},       {"classes", s_classes},
                           {"vocab_size", s_vocab},  {"len_min", len_min},
                           {"len_max", len_max},     {"signal", signal},
                           {"seed", s_seed},         {"labeled_out", s_labeled_out}};
            if (!s_unlabeled_out.empty()) params["unlabeled_out"] = s_unlabeled_out;
            if (!s_test_out.empty()) params["test_out"] = s_test_out;
            return mixedobj::cli::cmd_synth(params);
        }
        if (analyze->parsed())
            return mixedobj::cli::cmd_analyze(an_ckpt, an_vocab, an_query, top_k, an_data);
    } catch (const mixedobj::cli::json::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return mixedobj::cli::kExitConfig;
    }
    return mixedobj::cli::kExitConfig;
}
