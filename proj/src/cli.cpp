#include "mixedobj/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace mixedobj::cli {

namespace fs = std::filesystem;

json default_config() {
    return {
        {"embed_dim", 300},
        {"hidden", 512},
        {"layers", 1},
        {"classes", 2},
        {"token_budget", 3000},
        {"vocab_size", 80000},
        {"learning_rate", 1e-3},
        {"beta1", 0.0},
        {"beta2", 0.98},
        {"eps_adam", 1e-8},
        {"decay_rate", 0.95},
        {"epochs", 20},
        {"clip_norm", 1.0},
        {"p_drop", 0.5},
        {"p_w", 0.1},
        {"seed", 0},
        {"lambda_ml", 1.0},
        {"lambda_at", 0.0},
        {"lambda_em", 0.0},
        {"lambda_vat", 0.0},
        {"epsilon", 1.0},
        {"xi", 0.1},
        {"use_labeled", true},
        {"use_unlabeled", false},
        {"objective", "ml"},
        {"embed_mode", "finetune"},
        {"labeled", ""},
        {"unlabeled", ""},
        {"dev", ""},
        {"test", ""},
        {"embed", ""},
        {"eval_every", 0},
        {"unlabeled_by_count", false},
    };
}

json preset_config(const std::string& name) {
    static const std::map<std::string, json> presets = {
        {"acl-imdb", {{"token_budget", 3000}, {"vocab_size", 80000}, {"epsilon", 5.0}, {"classes", 2}}},
        {"elec", {{"token_budget", 2000}, {"vocab_size", 40000}, {"epsilon", 2.0}, {"classes", 2}}},
        {"ag-news", {{"token_budget", 2000}, {"vocab_size", 75000}, {"epsilon", 1.0}, {"classes", 4}}},
        {"dbpedia", {{"token_budget", 7500}, {"vocab_size", 50000}, {"epsilon", 1.0}, {"classes", 14}}},
        {"rcv1", {{"token_budget", 2000}, {"vocab_size", 100000}, {"epsilon", 2.0}, {"classes", 51}}},
        {"imdb", {{"token_budget", 15000}, {"vocab_size", 150000}, {"epsilon", 5.0}, {"classes", 5}}},
        {"arxiv", {{"token_budget", 8000}, {"vocab_size", 100000}, {"epsilon", 1.0}, {"classes", 127}}},
    };
    auto it = presets.find(name);
    if (it == presets.end()) throw config_error("unknown preset '" + name + "'");
    return it->second;
}

std::vector<std::string> preset_names() {
    return {"acl-imdb", "elec", "ag-news", "dbpedia", "rcv1", "imdb", "arxiv"};
}

void apply_objective_mode(json& cfg, const std::string& mode) {
    auto set = [&](double ml, double at, double em, double vat, bool unlabeled, int epochs) {
        cfg["lambda_ml"] = ml;
        cfg["lambda_at"] = at;
        cfg["lambda_em"] = em;
        cfg["lambda_vat"] = vat;
        cfg["use_unlabeled"] = unlabeled;
        cfg["epochs"] = epochs;
    };
    if (mode == "ml")
        set(1, 0, 0, 0, false, 20);
    else if (mode == "at")
        set(1, 1, 0, 0, false, 20);
    else if (mode == "em")
        set(1, 0, 1, 0, true, 50);
    else if (mode == "vat")
        set(1, 0, 0, 1, true, 50);
    else if (mode == "mixed")
        set(1, 1, 1, 1, true, 50);
    else
        throw config_error("objective: expected one of ml|at|em|vat|mixed, got '" + mode + "'");
    cfg["objective"] = mode;
}

namespace {

void merge_checked(json& base, const json& layer, const std::string& source) {
    for (auto it = layer.begin(); it != layer.end(); ++it) {
        if (!base.contains(it.key()))
            throw config_error(source + ": unknown config field '" + it.key() + "'");
        base[it.key()] = it.value();
    }
}

}  // namespace

json resolve_config(const std::string& preset, const std::string& config_file, const json& overrides) {
    json cfg = default_config();
    if (!preset.empty()) merge_checked(cfg, preset_config(preset), "preset " + preset);
    if (!config_file.empty()) {
        std::ifstream in(config_file);
        if (!in) throw config_error("cannot open config file: " + config_file);
        json file_cfg;
        try {
            in >> file_cfg;
        } catch (const json::exception& e) {
            throw config_error(config_file + ": " + e.what());
        }
        merge_checked(cfg, file_cfg, config_file);
    }
    // objective mode sets loss weights and default epochs; explicit overrides win
    std::string mode = overrides.contains("objective") ? overrides["objective"].get<std::string>()
                                                       : cfg["objective"].get<std::string>();
    apply_objective_mode(cfg, mode);
    merge_checked(cfg, overrides, "command line");
    return cfg;
}

namespace {

TrainConfig train_config_from(const json& cfg) {
    TrainConfig tc;
    tc.token_budget = cfg.at("token_budget").get<int>();
    tc.learning_rate = cfg.at("learning_rate").get<double>();
    tc.beta1 = cfg.at("beta1").get<double>();
    tc.beta2 = cfg.at("beta2").get<double>();
    tc.eps_adam = cfg.at("eps_adam").get<double>();
    tc.decay_rate = cfg.at("decay_rate").get<double>();
    tc.max_epochs = cfg.at("epochs").get<int>();
    tc.clip_norm = cfg.at("clip_norm").get<double>();
    tc.p_drop = cfg.at("p_drop").get<double>();
    tc.p_w = cfg.at("p_w").get<double>();
    tc.seed = cfg.at("seed").get<std::uint64_t>();
    tc.eval_every = cfg.at("eval_every").get<int>();
    tc.unlabeled_by_count = cfg.at("unlabeled_by_count").get<bool>();
    tc.objective.lambda_ml = cfg.at("lambda_ml").get<double>();
    tc.objective.lambda_at = cfg.at("lambda_at").get<double>();
    tc.objective.lambda_em = cfg.at("lambda_em").get<double>();
    tc.objective.lambda_vat = cfg.at("lambda_vat").get<double>();
    tc.objective.epsilon = cfg.at("epsilon").get<double>();
    tc.objective.xi = cfg.at("xi").get<double>();
    tc.objective.use_labeled = cfg.at("use_labeled").get<bool>();
    tc.objective.use_unlabeled = cfg.at("use_unlabeled").get<bool>();
    return tc;
}

Dataset load_train_data(const json& cfg) {
    std::string labeled = cfg.at("labeled").get<std::string>();
    if (labeled.empty()) throw config_error("labeled: training data path is required");
    std::string unlabeled = cfg.at("unlabeled").get<std::string>();
    return load_dataset(labeled, unlabeled.empty() ? std::nullopt : std::make_optional(unlabeled),
                        cfg.at("classes").get<int>());
}

}  // namespace

RunSetup make_setup(const json& cfg, Dataset train, std::optional<Dataset> dev,
                    std::vector<Example> test) {
    RunSetup s{.train = std::move(train), .dev = std::move(dev), .test = std::move(test),
               .vocab = {}, .model = {}, .train_config = train_config_from(cfg)};

    std::vector<Example> vocab_source = s.train.labeled;
    vocab_source.insert(vocab_source.end(), s.train.unlabeled.begin(), s.train.unlabeled.end());
    s.vocab = Vocabulary::build(vocab_source, cfg.at("vocab_size").get<int>());

    Rng root(s.train_config.seed);
    int embed_dim = cfg.at("embed_dim").get<int>();
    std::string embed_mode = cfg.at("embed_mode").get<std::string>();
    std::string embed_path = cfg.at("embed").get<std::string>();
    if (embed_mode != "finetune" && embed_mode != "static" && embed_mode != "random")
        throw config_error("embed_mode: expected finetune|static|random, got '" + embed_mode + "'");

    EmbeddingMatrix emb;
    if (embed_mode == "random" || embed_path.empty())
        emb = random_embeddings(s.vocab, embed_dim, root.stream("embed-init"));
    else
        emb = load_pretrained(embed_path, s.vocab, embed_dim, root.stream("embed-init"));
    emb.finetune = (embed_mode != "static");

    ModelConfig mc;
    mc.embed_dim = embed_dim;
    mc.hidden_size = cfg.at("hidden").get<int>();
    mc.num_layers = cfg.at("layers").get<int>();
    mc.num_classes = cfg.at("classes").get<int>();
    s.model = ModelParams::init(mc, std::move(emb), root.stream("model-init"));
    return s;
}

namespace {

int classify_exit(const std::exception& e) {
    if (dynamic_cast<const config_error*>(&e) || dynamic_cast<const argument_error*>(&e))
        return kExitConfig;
    if (dynamic_cast<const checkpoint_error*>(&e)) return kExitCheckpoint;
    if (dynamic_cast<const parse_error*>(&e)) return kExitData;
    return 1;
}

int report_error(const std::exception& e) {
    int code = classify_exit(e);
    std::cerr << "error: " << e.what() << " (exit " << code << ")" << std::endl;
    return code;
}

// Rebuilds a model shell matching a checkpoint header and loads it.
struct LoadedModel {
    Vocabulary vocab;
    ModelParams model;
    json config;
};

LoadedModel load_model(const std::string& checkpoint_path, const std::string& vocab_path) {
    if (!fs::exists(checkpoint_path))
        throw checkpoint_error("checkpoint not found: " + checkpoint_path);
    std::string vp = vocab_path;
    if (vp.empty()) vp = (fs::path(checkpoint_path).parent_path().parent_path() / "vocab.tsv").string();
    if (!fs::exists(vp)) vp = (fs::path(checkpoint_path).parent_path() / "vocab.tsv").string();

    LoadedModel lm{Vocabulary::load(vp), {}, {}};
    CheckpointExtras header = peek_checkpoint(checkpoint_path);
    lm.config = json::parse(header.config_json);
    ModelConfig mc;
    mc.embed_dim = lm.config.at("embed_dim").get<int>();
    mc.hidden_size = lm.config.at("hidden_size").get<int>();
    mc.num_layers = lm.config.at("num_layers").get<int>();
    mc.num_classes = lm.config.at("num_classes").get<int>();
    EmbeddingMatrix emb;
    emb.dim = mc.embed_dim;
    emb.weights = ad::Parameter("embedding", Eigen::MatrixXd::Zero(lm.vocab.size(), mc.embed_dim));
    lm.model = ModelParams::init(mc, std::move(emb), Rng(0));
    load_checkpoint(checkpoint_path, lm.model, lm.vocab.hash());
    return lm;
}

double run_training_job(const json& cfg) {
    Dataset train_data = load_train_data(cfg);
    std::string dev_path = cfg.at("dev").get<std::string>();
    std::optional<Dataset> dev;
    if (!dev_path.empty()) dev = load_dataset(dev_path, std::nullopt, cfg.at("classes").get<int>());
    std::string test_path = cfg.at("test").get<std::string>();
    std::vector<Example> test;
    if (!test_path.empty())
        test = load_dataset(test_path, std::nullopt, cfg.at("classes").get<int>()).labeled;

    RunSetup setup = make_setup(cfg, std::move(train_data), std::move(dev), std::move(test));
    TrainResult tr = train(setup.train, setup.dev, setup.model, setup.vocab, setup.train_config);
    if (!setup.test.empty())
        return error_rate(setup.model, encode_examples(setup.test, setup.vocab));
    return tr.best_dev_error;
}

}  // namespace

int cmd_train(const json& resolved, const std::string& out_dir) {
    try {
        fs::create_directories(out_dir);
        {
            std::ofstream cfg_out(fs::path(out_dir) / "config.json");
            cfg_out << resolved.dump(2) << "\n";
        }

        Dataset train_data = load_train_data(resolved);
        std::string dev_path = resolved.at("dev").get<std::string>();
        std::optional<Dataset> dev;
        if (!dev_path.empty())
            dev = load_dataset(dev_path, std::nullopt, resolved.at("classes").get<int>());
        std::string test_path = resolved.at("test").get<std::string>();
        std::vector<Example> test;
        if (!test_path.empty())
            test = load_dataset(test_path, std::nullopt, resolved.at("classes").get<int>()).labeled;

        RunSetup setup = make_setup(resolved, std::move(train_data), std::move(dev), std::move(test));
        setup.vocab.dump((fs::path(out_dir) / "vocab.tsv").string());
        setup.train_config.checkpoint_dir = (fs::path(out_dir) / "checkpoints").string();

        std::ofstream metrics_out(fs::path(out_dir) / "metrics.jsonl");
        TrainResult tr = train(setup.train, setup.dev, setup.model, setup.vocab, setup.train_config,
                               [&](const std::string& line) { metrics_out << line << "\n"; });

        json summary = {{"steps", tr.steps},
                        {"best_dev_error", tr.best_dev_error},
                        {"best_epoch", tr.best_epoch},
                        {"skipped_steps", tr.skipped_steps}};

        if (!setup.test.empty()) {
            // final report comes from the best-dev checkpoint when available
            if (!tr.best_checkpoint.empty()) load_checkpoint(tr.best_checkpoint, setup.model, std::nullopt);
            EvalReport rep = evaluate(setup.model, encode_examples(setup.test, setup.vocab));
            std::ofstream(fs::path(out_dir) / "eval_test.json") << rep.to_json() << "\n";
            summary["test_error"] = rep.error_rate;
        }
        std::cout << summary.dump() << std::endl;
        return kExitOk;
    } catch (const std::exception& e) {
        return report_error(e);
    }
}

int cmd_evaluate(const std::string& checkpoint_path, const std::string& vocab_path,
                 const std::string& labeled_path, const std::string& out_path) {
    try {
        LoadedModel lm = load_model(checkpoint_path, vocab_path);
        Dataset split = load_dataset(labeled_path, std::nullopt, lm.model.config.num_classes);
        EvalReport rep = evaluate(lm.model, encode_examples(split.labeled, lm.vocab));
        std::cout << rep.to_json() << std::endl;
        if (!out_path.empty()) std::ofstream(out_path) << rep.to_json() << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        return report_error(e);
    }
}

int cmd_synth(const json& params) {
    try {
        SynthParams p;
        p.labeled_count = params.at("m_labeled").get<int>();
        p.unlabeled_count = params.value("m_unlabeled", 0);
        p.num_classes = params.value("classes", 2);
        p.vocab_size = params.value("vocab_size", 100);
        p.len_min = params.value("len_min", 5);
        p.len_max = params.value("len_max", 20);
        p.signal_strength = params.value("signal", 0.9);
        std::uint64_t seed = params.value("seed", 0);

        Dataset ds = generate_synthetic(Rng(seed), p);
        std::string labeled_out = params.at("labeled_out").get<std::string>();
        std::string unlabeled_out = params.value("unlabeled_out", std::string{});
        write_dataset(ds, labeled_out,
                      unlabeled_out.empty() ? std::nullopt : std::make_optional(unlabeled_out));

        int m_test = params.value("m_test", 0);
        if (m_test > 0) {
            SynthParams tp = p;
            tp.labeled_count = m_test;
            tp.unlabeled_count = 0;
            Dataset test = generate_synthetic(Rng(seed).stream("test"), tp);
            write_dataset(test, params.at("test_out").get<std::string>(), std::nullopt);
        }
        std::cout << json{{"labeled", ds.labeled.size()}, {"unlabeled", ds.unlabeled.size()}}.dump()
                  << std::endl;
        return kExitOk;
    } catch (const std::exception& e) {
        return report_error(e);
    }
}

std::vector<SweepSpec> build_grid(const std::string& grid, const json& resolved) {
    std::vector<SweepSpec> specs;
    std::uint64_t base_seed = resolved.at("seed").get<std::uint64_t>();

    auto job_for = [resolved, base_seed](json patch, std::size_t index) {
        return [resolved, base_seed, patch = std::move(patch), index]() {
            json cfg = resolved;
            for (auto it = patch.begin(); it != patch.end(); ++it) cfg[it.key()] = it.value();
            cfg["seed"] = Rng(base_seed).stream("sweep", index).next_u64();
            return run_training_job(cfg);
        };
    };

    if (grid == "table5") {
        struct Row {
            int l, u;
            double ml, at, em, vat;
        };
        const Row rows[] = {
            {1, 0, 1, 0, 0, 0}, {1, 0, 1, 1, 0, 0}, {1, 0, 1, 0, 1, 0},
            {1, 0, 1, 0, 0, 1}, {1, 0, 1, 1, 1, 1}, {1, 1, 1, 0, 1, 0},
            {1, 1, 1, 0, 0, 1}, {1, 1, 1, 0, 1, 1}, {1, 1, 1, 1, 1, 1},
        };
        std::size_t i = 0;
        for (const Row& r : rows) {
            SweepSpec s;
            s.name = "table5-" + std::to_string(i + 1);
            s.fields = {{"L", std::to_string(r.l)},
                        {"U", std::to_string(r.u)},
                        {"lambda_ml", std::to_string(static_cast<int>(r.ml))},
                        {"lambda_at", std::to_string(static_cast<int>(r.at))},
                        {"lambda_em", std::to_string(static_cast<int>(r.em))},
                        {"lambda_vat", std::to_string(static_cast<int>(r.vat))}};
            json patch = {{"lambda_ml", r.ml}, {"lambda_at", r.at},   {"lambda_em", r.em},
                          {"lambda_vat", r.vat}, {"use_labeled", r.l == 1}, {"use_unlabeled", r.u == 1}};
            s.job = job_for(patch, i);
            specs.push_back(std::move(s));
            ++i;
        }
        return specs;
    }

    if (grid == "table7") {
        struct Variant {
            std::string name;
            json patch;
        };
        const std::vector<Variant> variants = {
            {"baseline", json::object()},
            {"layers-2", {{"layers", 2}}},
            {"embed-random", {{"embed_mode", "random"}}},
            {"embed-static", {{"embed_mode", "static"}}},
            {"word-dropout-0", {{"p_w", 0.0}}},
            {"bsize-1000", {{"token_budget", 1000}}},
            {"hidden-256", {{"hidden", 256}}},
            {"hidden-1024", {{"hidden", 1024}}},
            {"vocab-30000", {{"vocab_size", 30000}}},
        };
        std::size_t i = 0;
        for (const Variant& v : variants) {
            SweepSpec s;
            s.name = "table7-" + v.name;
            json eff = resolved;
            for (auto it = v.patch.begin(); it != v.patch.end(); ++it) eff[it.key()] = it.value();
            s.fields = {{"N", std::to_string(eff["layers"].get<int>())},
                        {"embedding", eff["embed_mode"].get<std::string>()},
                        {"p_w", std::to_string(eff["p_w"].get<double>())},
                        {"bsize", std::to_string(eff["token_budget"].get<int>())},
                        {"hidden", std::to_string(eff["hidden"].get<int>())},
                        {"vocab", std::to_string(eff["vocab_size"].get<int>())}};
            s.job = job_for(v.patch, i);
            specs.push_back(std::move(s));
            ++i;
        }
        return specs;
    }

    if (grid.empty()) return specs;

    // axis grids: `axis=v1,v2,...` with axis in
    // {labeled-count, unlabeled-count, hidden, layers}
    auto eq = grid.find('=');
    if (eq == std::string::npos)
        throw config_error("grid: expected table5, table7 or axis=v1,v2,...; got '" + grid + "'");
    std::string axis = grid.substr(0, eq);
    std::vector<std::string> values;
    {
        std::string rest = grid.substr(eq + 1);
        std::size_t pos = 0;
        while (pos <= rest.size()) {
            std::size_t comma = rest.find(',', pos);
            if (comma == std::string::npos) comma = rest.size();
            if (comma > pos) values.push_back(rest.substr(pos, comma - pos));
            pos = comma + 1;
        }
    }
    static const std::map<std::string, std::string> axis_key = {
        {"labeled-count", "max_labeled"},
        {"unlabeled-count", "max_unlabeled"},
        {"hidden", "hidden"},
        {"layers", "layers"},
    };
    auto it = axis_key.find(axis);
    if (it == axis_key.end()) throw config_error("grid: unknown axis '" + axis + "'");
    std::size_t i = 0;
    for (const std::string& v : values) {
        SweepSpec s;
        s.name = axis + "-" + v;
        s.fields = {{axis, v}};
        if (it->second == "hidden" || it->second == "layers") {
            s.job = job_for(json{{it->second, std::stoi(v)}}, i);
        } else {
            // data-size axes are realized by subsetting at load time
            json patch = {{it->second, std::stoi(v)}};
            s.job = [resolved, base_seed, patch, i]() {
                json cfg = resolved;
                cfg["seed"] = Rng(base_seed).stream("sweep", i).next_u64();
                Dataset train_data = load_train_data(cfg);
                if (patch.contains("max_labeled")) {
                    int n = patch["max_labeled"].get<int>();
                    if (static_cast<int>(train_data.labeled.size()) > n) train_data.labeled.resize(n);
                }
                if (patch.contains("max_unlabeled")) {
                    int n = patch["max_unlabeled"].get<int>();
                    if (static_cast<int>(train_data.unlabeled.size()) > n)
                        train_data.unlabeled.resize(n);
                }
                std::string test_path = cfg.at("test").get<std::string>();
                std::vector<Example> test;
                if (!test_path.empty())
                    test = load_dataset(test_path, std::nullopt, cfg.at("classes").get<int>()).labeled;
                RunSetup setup = make_setup(cfg, std::move(train_data), std::nullopt, std::move(test));
                TrainResult tr =
                    train(setup.train, setup.dev, setup.model, setup.vocab, setup.train_config);
                if (!setup.test.empty())
                    return error_rate(setup.model, encode_examples(setup.test, setup.vocab));
                return tr.best_dev_error;
            };
        }
        specs.push_back(std::move(s));
        ++i;
    }
    return specs;
}

int sweep_parallelism() {
    const char* env = std::getenv("MIXEDOBJ_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    return n >= 1 ? n : 1;
}

int cmd_ablate(const json& resolved, const std::string& grid, bool plan_only,
               const std::string& out_csv, int parallelism) {
    try {
        std::vector<SweepSpec> specs = build_grid(grid, resolved);
        std::vector<SweepRow> rows = run_sweep(specs, parallelism, plan_only);
        std::string csv = sweep_csv(rows);
        std::cout << csv;
        if (!out_csv.empty()) std::ofstream(out_csv) << csv;
        return kExitOk;
    } catch (const std::exception& e) {
        return report_error(e);
    }
}

int cmd_analyze(const std::string& checkpoint_path, const std::string& vocab_path,
                const std::string& query, int top_k, const std::string& labeled_path) {
    try {
        LoadedModel lm = load_model(checkpoint_path, vocab_path);
        json out;
        if (!query.empty()) {
            json neigh = json::array();
            for (const Neighbor& n : nearest_neighbors(query, lm.model.embedding, lm.vocab, top_k))
                neigh.push_back({{"word", n.word}, {"cosine", n.cosine}});
            out["query"] = query;
            out["neighbors"] = neigh;
        }
        if (!labeled_path.empty()) {
            Dataset split = load_dataset(labeled_path, std::nullopt, lm.model.config.num_classes);
            EvalReport rep = evaluate(lm.model, encode_examples(split.labeled, lm.vocab));
            out["eval"] = json::parse(rep.to_json());
        }
        std::cout << out.dump() << std::endl;
        return kExitOk;
    } catch (const std::exception& e) {
        return report_error(e);
    }
}

}  // namespace mixedobj::cli
