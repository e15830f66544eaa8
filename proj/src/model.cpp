#include "mixedobj/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace mixedobj {

using ad::Parameter;
using ad::Tape;
using ad::Var;
using Eigen::MatrixXd;
using json = nlohmann::json;

std::vector<Parameter*> LstmParams::all() {
    return {&w_input, &w_forget, &w_output, &w_cell, &b_input, &b_forget, &b_output, &b_cell};
}

namespace {

MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols, double range, Rng& rng) {
    MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-range, range);
    return m;
}

LstmParams init_lstm(const std::string& prefix, int input_size, int hidden, Rng& rng) {
    double range = 1.0 / std::sqrt(static_cast<double>(input_size + hidden));
    auto w = [&](const std::string& name) {
        return Parameter(prefix + "." + name, uniform_matrix(hidden, input_size + hidden, range, rng));
    };
    LstmParams p;
    p.w_input = w("w_input");
    p.w_forget = w("w_forget");
    p.w_output = w("w_output");
    p.w_cell = w("w_cell");
    p.b_input = Parameter(prefix + ".b_input", MatrixXd::Zero(1, hidden));
    p.b_forget = Parameter(prefix + ".b_forget", MatrixXd::Ones(1, hidden));  // forget bias 1
    p.b_output = Parameter(prefix + ".b_output", MatrixXd::Zero(1, hidden));
    p.b_cell = Parameter(prefix + ".b_cell", MatrixXd::Zero(1, hidden));
    return p;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, EmbeddingMatrix embedding, Rng rng) {
    if (cfg.num_layers < 1) throw argument_error("ModelParams: num_layers must be >= 1");
    if (embedding.dim != cfg.embed_dim)
        throw argument_error("ModelParams: embedding dim " + std::to_string(embedding.dim) +
                             " does not match config embed_dim " + std::to_string(cfg.embed_dim));
    ModelParams m;
    m.config = cfg;
    m.embedding = std::move(embedding);
    Rng wrng = rng.stream("lstm");
    for (int l = 0; l < cfg.num_layers; ++l) {
        int in = (l == 0) ? cfg.embed_dim : 2 * cfg.hidden_size;
        m.forward_lstm.push_back(init_lstm("layer" + std::to_string(l) + ".fwd", in, cfg.hidden_size, wrng));
        m.backward_lstm.push_back(init_lstm("layer" + std::to_string(l) + ".bwd", in, cfg.hidden_size, wrng));
    }
    int n = 2 * cfg.hidden_size;
    Rng hrng = rng.stream("head");
    m.head.weight = Parameter("head.weight",
                              uniform_matrix(cfg.num_classes, n, 1.0 / std::sqrt(static_cast<double>(n)), hrng));
    m.head.bias = Parameter("head.bias", MatrixXd::Zero(1, cfg.num_classes));
    return m;
}

std::vector<Parameter*> ModelParams::all_params() {
    std::vector<Parameter*> out{&embedding.weights};
    for (auto& l : forward_lstm)
        for (Parameter* p : l.all()) out.push_back(p);
    for (auto& l : backward_lstm)
        for (Parameter* p : l.all()) out.push_back(p);
    out.push_back(&head.weight);
    out.push_back(&head.bias);
    return out;
}

std::vector<Parameter*> ModelParams::trainable_params() {
    std::vector<Parameter*> out = all_params();
    if (!embedding.finetune) out.erase(out.begin());
    return out;
}

std::int64_t ModelParams::param_count() {
    std::int64_t n = 0;
    for (Parameter* p : all_params()) n += p->value.size();
    return n;
}

void ModelParams::zero_grad() {
    for (Parameter* p : all_params()) p->zero_grad();
}

MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
    MatrixXd m(rows, cols);
    double keep_scale = 1.0 / (1.0 - p);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.bernoulli(p) ? 0.0 : keep_scale;
    return m;
}

namespace {

Var maybe_dropout(Tape& tape, Var x, const DropoutSpec& spec) {
    if (!spec.rng || spec.p <= 0.0) return x;
    return ad::dropout_apply(x, dropout_mask(x.rows(), x.cols(), spec.p, *spec.rng));
}

}  // namespace

std::pair<Var, Var> lstm_step(Tape& tape, Var h_prev, Var c_prev, Var x_t, LstmParams& params) {
    Var xh = ad::concat_cols(x_t, h_prev);
    Var i = ad::sigmoid(ad::add(ad::matmul_t(xh, tape.param(params.w_input)), tape.param(params.b_input)));
    Var f = ad::sigmoid(ad::add(ad::matmul_t(xh, tape.param(params.w_forget)), tape.param(params.b_forget)));
    Var o = ad::sigmoid(ad::add(ad::matmul_t(xh, tape.param(params.w_output)), tape.param(params.b_output)));
    Var g = ad::tanh(ad::add(ad::matmul_t(xh, tape.param(params.w_cell)), tape.param(params.b_cell)));
    Var c = ad::add(ad::cmul(f, c_prev), ad::cmul(i, g));
    Var h = ad::cmul(o, ad::tanh(c));
    return {h, c};
}

Var encode(Tape& tape, Var embedded, ModelParams& model, const DropoutSpec& dropout) {
    const int T = static_cast<int>(embedded.rows());
    const int H = model.config.hidden_size;
    Var input = embedded;
    Var states;
    for (int l = 0; l < model.config.num_layers; ++l) {
        if (l > 0) input = maybe_dropout(tape, input, dropout);
        std::vector<Var> fwd(T), bwd(T);
        Var h = tape.constant(MatrixXd::Zero(1, H));
        Var c = tape.constant(MatrixXd::Zero(1, H));
        for (int t = 0; t < T; ++t) {
            std::tie(h, c) = lstm_step(tape, h, c, ad::row(input, t), model.forward_lstm[l]);
            fwd[t] = h;
        }
        h = tape.constant(MatrixXd::Zero(1, H));
        c = tape.constant(MatrixXd::Zero(1, H));
        for (int t = T - 1; t >= 0; --t) {
            std::tie(h, c) = lstm_step(tape, h, c, ad::row(input, t), model.backward_lstm[l]);
            bwd[t] = h;
        }
        std::vector<Var> rows(T);
        for (int t = 0; t < T; ++t) rows[t] = ad::concat_cols(fwd[t], bwd[t]);
        states = ad::stack_rows(rows);
        input = states;
    }
    return states;
}

Prediction pool_classify(Tape& tape, Var states, ClassifierHead& head) {
    Prediction pred;
    pred.feature = ad::max_over_rows(states);
    pred.logits = ad::add(ad::matmul_t(pred.feature, tape.param(head.weight)), tape.param(head.bias));
    pred.probs = ad::softmax_rows(pred.logits);
    return pred;
}

Prediction forward_embedded(Tape& tape, ModelParams& model, Var embedded, const DropoutSpec& dropout) {
    Var dropped = maybe_dropout(tape, embedded, dropout);
    Var states = encode(tape, dropped, model, dropout);
    Var pooled_in = maybe_dropout(tape, states, dropout);
    return pool_classify(tape, pooled_in, model.head);
}

Prediction forward_document(Tape& tape, ModelParams& model, const std::vector<int>& indices,
                            const DropoutSpec& dropout, const MatrixXd* extra_embedding) {
    // trailing PAD never enters the recurrence or the pooling window
    std::vector<int> trimmed = indices;
    while (trimmed.size() > 1 && trimmed.back() == Vocabulary::kPad) trimmed.pop_back();
    Var embedded = lookup(tape, trimmed, model.embedding);
    if (extra_embedding) {
        if (extra_embedding->rows() == static_cast<Eigen::Index>(trimmed.size()))
            embedded = ad::add(embedded, tape.constant(*extra_embedding));
        else
            embedded = ad::add(embedded,
                               tape.constant(extra_embedding->topRows(static_cast<Eigen::Index>(trimmed.size()))));
    }
    return forward_embedded(tape, model, embedded, dropout);
}

Eigen::RowVectorXd predict_probs(ModelParams& model, const std::vector<int>& indices) {
    Tape tape;
    return forward_document(tape, model, indices, DropoutSpec{}).probs.value().row(0);
}

int predict_class(ModelParams& model, const std::vector<int>& indices) {
    Eigen::RowVectorXd p = predict_probs(model, indices);
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < p.size(); ++k)
        if (p(k) > p(best)) best = k;
    return static_cast<int>(best);
}

// --- checkpoint -------------------------------------------------------------

namespace {

constexpr char kMagic[] = "MXOBJCKPT1\n";

void write_u64(std::ostream& out, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(buf, 8);
}

std::uint64_t read_u64(std::istream& in) {
    char buf[8];
    in.read(buf, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
    return v;
}

json open_header(std::ifstream& in, const std::string& path) {
    if (!in) throw checkpoint_error("cannot open checkpoint: " + path);
    char magic[sizeof(kMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        throw checkpoint_error(path + ": not a checkpoint file");
    std::uint64_t len = read_u64(in);
    std::string header(len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(len));
    if (!in) throw checkpoint_error(path + ": truncated header");
    return json::parse(header);
}

CheckpointExtras extras_from_header(const json& h) {
    CheckpointExtras ex;
    ex.vocab_hash = h.at("vocab_hash").get<std::uint64_t>();
    ex.config_json = h.at("config").dump();
    ex.epoch = h.at("epoch").get<int>();
    ex.step = h.at("step").get<std::int64_t>();
    return ex;
}

}  // namespace

void save_checkpoint(const std::string& path, ModelParams& model, const CheckpointExtras& extras) {
    std::vector<std::pair<std::string, const MatrixXd*>> tensors;
    for (Parameter* p : model.all_params()) tensors.emplace_back(p->name, &p->value);
    for (const auto& [name, m] : extras.extra_tensors) tensors.emplace_back(name, &m);

    json header;
    header["vocab_hash"] = extras.vocab_hash;
    header["config"] = json::parse(extras.config_json);
    header["epoch"] = extras.epoch;
    header["step"] = extras.step;
    json tj = json::array();
    for (const auto& [name, m] : tensors)
        tj.push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}});
    header["tensors"] = tj;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw checkpoint_error("cannot open for writing: " + path);
    out.write(kMagic, sizeof(kMagic) - 1);
    std::string hs = header.dump();
    write_u64(out, hs.size());
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, m] : tensors)
        out.write(reinterpret_cast<const char*>(m->data()), static_cast<std::streamsize>(m->size() * 8));
    if (!out) throw checkpoint_error("write failed: " + path);
}

CheckpointExtras load_checkpoint(const std::string& path, ModelParams& model,
                                 std::optional<std::uint64_t> expected_vocab_hash) {
    std::ifstream in(path, std::ios::binary);
    json header = open_header(in, path);
    CheckpointExtras ex = extras_from_header(header);
    if (expected_vocab_hash && ex.vocab_hash != *expected_vocab_hash)
        throw checkpoint_error(path + ": vocabulary hash mismatch");

    std::vector<Parameter*> params = model.all_params();
    auto find_param = [&](const std::string& name) -> Parameter* {
        for (Parameter* p : params)
            if (p->name == name) return p;
        return nullptr;
    };

    std::size_t params_loaded = 0;
    for (const json& t : header.at("tensors")) {
        std::string name = t.at("name").get<std::string>();
        Eigen::Index rows = t.at("rows").get<Eigen::Index>();
        Eigen::Index cols = t.at("cols").get<Eigen::Index>();
        MatrixXd m(rows, cols);
        in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * 8));
        if (!in) throw checkpoint_error(path + ": truncated tensor " + name);
        if (Parameter* p = find_param(name)) {
            if (p->value.rows() != rows || p->value.cols() != cols)
                throw checkpoint_error(path + ": shape mismatch for " + name + ": checkpoint " +
                                       std::to_string(rows) + "x" + std::to_string(cols) + " vs model " +
                                       std::to_string(p->value.rows()) + "x" +
                                       std::to_string(p->value.cols()));
            p->value = std::move(m);
            ++params_loaded;
        } else {
            ex.extra_tensors.emplace_back(name, std::move(m));
        }
    }
    if (params_loaded != params.size())
        throw checkpoint_error(path + ": checkpoint covers " + std::to_string(params_loaded) + " of " +
                               std::to_string(params.size()) + " model parameters");
    model.zero_grad();
    return ex;
}

CheckpointExtras peek_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    json header = open_header(in, path);
    return extras_from_header(header);
}

}  // namespace mixedobj
