#include "mixedobj/trainer.hpp"

#include <cmath>
#include <filesystem>

#include <nlohmann/json.hpp>

namespace mixedobj {

using ad::Parameter;
using Eigen::MatrixXd;
using json = nlohmann::json;

void TrainConfig::validate() const {
    if (token_budget < 1) throw config_error("token_budget must be >= 1");
    if (clip_norm <= 0) throw config_error("clip_norm must be > 0");
    if (p_drop < 0 || p_drop >= 1) throw config_error("p_drop must be in [0, 1)");
    if (p_w < 0 || p_w >= 1) throw config_error("p_w must be in [0, 1)");
    if (max_epochs < 1) throw config_error("max_epochs must be >= 1");
    if (!(decay_rate > 0 && decay_rate <= 1)) throw config_error("decay_rate must be in (0, 1]");
    if (learning_rate <= 0) throw config_error("learning_rate must be > 0");
    objective.validate();
}

OptimizerState OptimizerState::init(const std::vector<Parameter*>& params) {
    OptimizerState s;
    for (Parameter* p : params) {
        s.first_moment.push_back(MatrixXd::Zero(p->value.rows(), p->value.cols()));
        s.second_moment.push_back(MatrixXd::Zero(p->value.rows(), p->value.cols()));
    }
    return s;
}

std::vector<Batch> plan_batches(const std::vector<EncodedExample>& examples, int token_budget, Rng rng) {
    for (std::size_t i = 0; i < examples.size(); ++i)
        if (static_cast<int>(examples[i].ids.size()) > token_budget)
            throw config_error("plan_batches: document " + std::to_string(i) + " has " +
                               std::to_string(examples[i].ids.size()) + " tokens, exceeding the budget of " +
                               std::to_string(token_budget));

    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    std::vector<Batch> batches;
    Batch current;
    for (std::size_t i : order) {
        int len = static_cast<int>(examples[i].ids.size());
        if (!current.examples.empty() && current.token_count + len > token_budget) {
            batches.push_back(std::move(current));
            current = Batch{};
        }
        current.examples.push_back(examples[i]);
        current.token_count += len;
    }
    if (!current.examples.empty()) batches.push_back(std::move(current));
    return batches;
}

void adam_step(const std::vector<Parameter*>& params, OptimizerState& state, double lr, double beta1,
               double beta2, double eps_adam) {
    ++state.step;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const MatrixXd& g = params[i]->grad;
        MatrixXd& m = state.first_moment[i];
        MatrixXd& v = state.second_moment[i];
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v.array().matrix() + (1.0 - beta2) * g.array().square().matrix();
        params[i]->value.array() -=
            lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps_adam);
    }
}

double clip_gradients(const std::vector<Parameter*>& params, double clip_norm) {
    double sq = 0.0;
    for (Parameter* p : params) sq += p->grad.squaredNorm();
    double norm = std::sqrt(sq);
    if (norm > clip_norm) {
        double s = clip_norm / norm;
        for (Parameter* p : params) p->grad *= s;
    }
    return norm;
}

double lr_schedule(int epoch, double base_lr, double decay_rate) {
    return base_lr * std::pow(decay_rate, static_cast<double>(epoch));
}

std::vector<EncodedExample> encode_examples(const std::vector<Example>& examples, const Vocabulary& vocab) {
    std::vector<EncodedExample> out;
    out.reserve(examples.size());
    for (const Example& ex : examples) out.push_back({vocab.encode(ex.tokens), ex.label});
    return out;
}

double error_rate(ModelParams& model, const std::vector<EncodedExample>& examples) {
    if (examples.empty()) throw argument_error("error_rate: empty split");
    int wrong = 0;
    for (const EncodedExample& ex : examples) {
        if (!ex.label) throw argument_error("error_rate: unlabeled example in evaluation split");
        if (predict_class(model, ex.ids) != *ex.label) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(examples.size());
}

namespace {

// cycling source of unlabeled batches, reshuffled each wraparound
class UnlabeledFeed {
public:
    UnlabeledFeed(std::vector<EncodedExample> examples, Rng rng)
        : examples_(std::move(examples)), rng_(rng) {
        reshuffle();
    }

    bool empty() const { return examples_.empty(); }

    // Fills by token budget, or by example count when by_count > 0.
    Batch next(int token_budget, int by_count) {
        Batch b;
        if (examples_.empty()) return b;
        while (true) {
            if (pos_ >= order_.size()) reshuffle();
            const EncodedExample& ex = examples_[order_[pos_]];
            int len = static_cast<int>(ex.ids.size());
            if (by_count > 0) {
                if (static_cast<int>(b.examples.size()) >= by_count) break;
            } else {
                if (!b.examples.empty() && b.token_count + len > token_budget) break;
                if (b.examples.empty() && len > token_budget) {
                    ++pos_;  // cannot place an over-budget document
                    continue;
                }
            }
            b.examples.push_back(ex);
            b.token_count += len;
            ++pos_;
        }
        return b;
    }

private:
    void reshuffle() {
        order_.resize(examples_.size());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
        Rng r = rng_.stream("cycle", cycle_++);
        r.shuffle(order_);
        pos_ = 0;
    }

    std::vector<EncodedExample> examples_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
    std::uint64_t cycle_ = 0;
};

bool grads_finite(const std::vector<Parameter*>& params) {
    for (Parameter* p : params)
        if (!p->grad.allFinite()) return false;
    return true;
}

json loss_json(const LossBreakdown& b) {
    return {{"total", b.total}, {"ml", b.ml},
            {"at", b.at},       {"em", b.em},
            {"vat", b.vat},     {"labeled", b.labeled_count},
            {"unlabeled", b.unlabeled_count}};
}

}  // namespace

TrainResult train(const Dataset& data, const std::optional<Dataset>& dev, ModelParams& model,
                  const Vocabulary& vocab, const TrainConfig& cfg, const MetricsSink& metrics) {
    cfg.validate();
    if (data.labeled.empty()) throw config_error("train: no labeled training data");

    Rng root(cfg.seed);
    auto emit = [&](const json& j) {
        if (metrics) metrics(j.dump());
    };

    std::vector<EncodedExample> train_enc = encode_examples(data.labeled, vocab);
    std::vector<EncodedExample> dev_enc;
    if (dev) {
        dev_enc = encode_examples(dev->labeled, vocab);
    } else if (train_enc.size() >= 2) {
        // hold out 10% (at least one example) as a dev split
        std::vector<std::size_t> order(train_enc.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng split_rng = root.stream("dev-split");
        split_rng.shuffle(order);
        std::size_t n_dev = std::max<std::size_t>(1, train_enc.size() / 10);
        std::vector<EncodedExample> tr, dv;
        for (std::size_t i = 0; i < order.size(); ++i)
            (i < n_dev ? dv : tr).push_back(train_enc[order[i]]);
        train_enc = std::move(tr);
        dev_enc = std::move(dv);
    }

    bool wants_unlabeled =
        cfg.objective.use_unlabeled && (cfg.objective.lambda_em > 0 || cfg.objective.lambda_vat > 0);
    UnlabeledFeed unlabeled_feed(wants_unlabeled ? encode_examples(data.unlabeled, vocab)
                                                 : std::vector<EncodedExample>{},
                                 root.stream("unlabeled-batches"));

    std::vector<Parameter*> trainable = model.trainable_params();
    OptimizerState opt = OptimizerState::init(trainable);

    json config_snapshot = {{"embed_dim", model.config.embed_dim},
                            {"hidden_size", model.config.hidden_size},
                            {"num_layers", model.config.num_layers},
                            {"num_classes", model.config.num_classes},
                            {"seed", cfg.seed}};

    int start_epoch = 0;
    std::int64_t global_step = 0;
    TrainResult result;

    namespace fs = std::filesystem;
    std::string last_path, best_path;
    if (!cfg.checkpoint_dir.empty()) {
        fs::create_directories(cfg.checkpoint_dir);
        last_path = (fs::path(cfg.checkpoint_dir) / "last.ckpt").string();
        best_path = (fs::path(cfg.checkpoint_dir) / "best.ckpt").string();
    }

    if (cfg.resume) {
        if (last_path.empty() || !fs::exists(last_path))
            throw checkpoint_error("resume requested but no checkpoint at " + last_path);
        CheckpointExtras ex = load_checkpoint(last_path, model, vocab.hash());
        start_epoch = ex.epoch + 1;
        global_step = ex.step;
        opt.step = ex.step;
        for (std::size_t i = 0; i < trainable.size(); ++i) {
            for (auto& [name, m] : ex.extra_tensors) {
                if (name == "adam.m." + trainable[i]->name) opt.first_moment[i] = m;
                if (name == "adam.v." + trainable[i]->name) opt.second_moment[i] = m;
            }
        }
        json resumed = json::parse(ex.config_json);
        if (resumed.contains("best_dev_error")) {
            result.best_dev_error = resumed["best_dev_error"].get<double>();
            result.best_epoch = resumed["best_epoch"].get<int>();
        }
    }

    auto save = [&](const std::string& path, int epoch) {
        CheckpointExtras ex;
        ex.vocab_hash = vocab.hash();
        json snap = config_snapshot;
        snap["best_dev_error"] = result.best_dev_error;
        snap["best_epoch"] = result.best_epoch;
        ex.config_json = snap.dump();
        ex.epoch = epoch;
        ex.step = global_step;
        for (std::size_t i = 0; i < trainable.size(); ++i) {
            ex.extra_tensors.emplace_back("adam.m." + trainable[i]->name, opt.first_moment[i]);
            ex.extra_tensors.emplace_back("adam.v." + trainable[i]->name, opt.second_moment[i]);
        }
        save_checkpoint(path, model, ex);
    };

    int consecutive_skips = 0;
    for (int epoch = start_epoch; epoch < cfg.max_epochs; ++epoch) {
        double lr = lr_schedule(epoch, cfg.learning_rate, cfg.decay_rate);
        std::vector<Batch> batches =
            plan_batches(train_enc, cfg.token_budget, root.stream("batches", static_cast<std::uint64_t>(epoch)));

        for (Batch& batch : batches) {
            Rng step_rng = root.stream("step", static_cast<std::uint64_t>(global_step));

            Batch labeled = batch;
            if (cfg.p_w > 0) {
                Rng wd = step_rng.stream("word-dropout-l");
                for (auto& ex : labeled.examples) apply_word_dropout(ex.ids, cfg.p_w, wd);
            }
            Batch unlabeled;
            if (wants_unlabeled && !unlabeled_feed.empty()) {
                unlabeled = unlabeled_feed.next(
                    cfg.token_budget, cfg.unlabeled_by_count ? static_cast<int>(batch.examples.size()) : 0);
                if (cfg.p_w > 0) {
                    Rng wd = step_rng.stream("word-dropout-u");
                    for (auto& ex : unlabeled.examples) apply_word_dropout(ex.ids, cfg.p_w, wd);
                }
            }

            model.zero_grad();
            ad::Tape tape;
            MixedLossResult loss = loss_mixed(tape, model, labeled, unlabeled, cfg.objective, cfg.p_drop,
                                              step_rng.stream("loss"));
            tape.backward(loss.total);

            bool ok = std::isfinite(loss.breakdown.total) && grads_finite(trainable);
            double grad_norm = 0.0;
            if (ok) {
                grad_norm = clip_gradients(trainable, cfg.clip_norm);
                adam_step(trainable, opt, lr, cfg.beta1, cfg.beta2, cfg.eps_adam);
                consecutive_skips = 0;
            } else {
                ++result.skipped_steps;
                if (++consecutive_skips >= 10)
                    throw std::runtime_error("train: aborting after 10 consecutive non-finite steps");
            }

            emit({{"type", "step"},
                  {"step", global_step},
                  {"epoch", epoch},
                  {"lr", lr},
                  {"loss", loss_json(loss.breakdown)},
                  {"grad_norm", grad_norm},
                  {"clipped", ok && grad_norm > cfg.clip_norm},
                  {"clamp_events", tape.clamp_events()},
                  {"skipped", !ok}});
            ++global_step;
            ++result.steps;

            if (cfg.eval_every > 0 && global_step % cfg.eval_every == 0 && !dev_enc.empty()) {
                double err = error_rate(model, dev_enc);
                emit({{"type", "eval"}, {"step", global_step}, {"epoch", epoch}, {"dev_error", err}});
            }
        }

        double dev_err = dev_enc.empty() ? 0.0 : error_rate(model, dev_enc);
        bool improved = !dev_enc.empty() && dev_err < result.best_dev_error;
        if (improved) {
            result.best_dev_error = dev_err;
            result.best_epoch = epoch;
        }
        emit({{"type", "epoch"},
              {"epoch", epoch},
              {"lr", lr},
              {"dev_error", dev_err},
              {"best_dev_error", result.best_dev_error}});

        if (!last_path.empty()) {
            save(last_path, epoch);
            if (improved || (epoch == start_epoch && !fs::exists(best_path))) {
                save(best_path, epoch);
                result.best_checkpoint = best_path;
            }
        }
    }
    return result;
}

}  // namespace mixedobj
