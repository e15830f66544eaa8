#include "mixedobj/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace mixedobj {

Vocabulary Vocabulary::build(const std::vector<Example>& examples, int max_size) {
    if (examples.empty()) throw argument_error("build_vocabulary: no examples");
    if (max_size < 1) throw argument_error("build_vocabulary: max_size must be >= 1");

    std::unordered_map<std::string, std::int64_t> counts;
    for (const Example& ex : examples)
        for (const std::string& tok : ex.tokens) ++counts[tok];

    std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (static_cast<int>(ranked.size()) > max_size) ranked.resize(max_size);

    Vocabulary v;
    v.words_ = {kUnkToken, kPadToken};
    v.freqs_ = {0, 0};
    for (auto& [w, c] : ranked) {
        v.index_[w] = static_cast<int>(v.words_.size());
        v.words_.push_back(w);
        v.freqs_.push_back(c);
    }
    v.index_[kUnkToken] = kUnk;
    v.index_[kPadToken] = kPad;
    return v;
}

int Vocabulary::index(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
}

std::uint64_t Vocabulary::hash() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const std::string& w : words_) {
        for (char c : w) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001B3ULL;
        }
        h ^= 0xFF;
        h *= 0x100000001B3ULL;
    }
    return h;
}

void Vocabulary::dump(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw parse_error("cannot open for writing: " + path);
    for (int i = 0; i < size(); ++i) out << i << '\t' << words_[i] << '\t' << freqs_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw parse_error("cannot open vocabulary file: " + path);
    Vocabulary v;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        int idx;
        std::string word;
        std::int64_t freq;
        if (!(ss >> idx >> word >> freq) || idx != static_cast<int>(v.words_.size()))
            throw parse_error(path + ":" + std::to_string(line_no) + ": malformed vocabulary row");
        v.index_[word] = idx;
        v.words_.push_back(word);
        v.freqs_.push_back(freq);
    }
    if (v.size() < 2 || v.words_[0] != kUnkToken || v.words_[1] != kPadToken)
        throw parse_error(path + ": missing reserved UNK/PAD rows");
    return v;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const std::string& t : tokens) out.push_back(index(t));
    return out;
}

namespace {

void random_row(Eigen::MatrixXd& m, Eigen::Index row, double range, Rng& rng) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(row, j) = rng.uniform(-range, range);
}

}  // namespace

EmbeddingMatrix load_pretrained(const std::string& path, const Vocabulary& vocab, int expected_dim,
                                Rng rng) {
    std::ifstream in(path);
    if (!in) throw parse_error("cannot open embedding file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw parse_error(path + ": missing header line");
    std::istringstream header(line);
    std::int64_t count;
    int dim;
    if (!(header >> count >> dim)) throw parse_error(path + ":1: malformed header, expected `count dim`");
    if (dim != expected_dim)
        throw parse_error(path + ": dimension " + std::to_string(dim) + " does not match expected " +
                          std::to_string(expected_dim));

    EmbeddingMatrix emb;
    emb.dim = dim;
    emb.weights = ad::Parameter("embedding", Eigen::MatrixXd::Zero(vocab.size(), dim));

    std::vector<bool> filled(vocab.size(), false);
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string word;
        ss >> word;
        int idx = vocab.index(word);
        bool wanted = (idx != Vocabulary::kUnk || word == Vocabulary::kUnkToken);
        double v;
        for (int j = 0; j < dim; ++j) {
            if (!(ss >> v))
                throw parse_error(path + ":" + std::to_string(line_no) + ": malformed or missing float " +
                                  std::to_string(j + 1) + " for word '" + word + "'");
            if (wanted) emb.weights.value(idx, j) = v;
        }
        std::string extra;
        if (ss >> extra)
            throw parse_error(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                              " values, found extra data");
        if (wanted) filled[idx] = true;
    }

    double range = 0.1 / std::sqrt(static_cast<double>(dim));
    for (int i = 0; i < vocab.size(); ++i) {
        if (i == Vocabulary::kPad) {
            emb.weights.value.row(i).setZero();
        } else if (!filled[i]) {
            random_row(emb.weights.value, i, range, rng);
        }
    }
    emb.weights.zero_grad();
    return emb;
}

EmbeddingMatrix random_embeddings(const Vocabulary& vocab, int dim, Rng rng) {
    EmbeddingMatrix emb;
    emb.dim = dim;
    emb.weights = ad::Parameter("embedding", Eigen::MatrixXd::Zero(vocab.size(), dim));
    double range = 0.1 / std::sqrt(static_cast<double>(dim));
    for (int i = 0; i < vocab.size(); ++i)
        if (i != Vocabulary::kPad) random_row(emb.weights.value, i, range, rng);
    emb.weights.zero_grad();
    return emb;
}

void write_embeddings(const std::string& path, const EmbeddingMatrix& emb, const Vocabulary& vocab) {
    std::ofstream out(path);
    if (!out) throw parse_error("cannot open for writing: " + path);
    out.precision(17);
    out << vocab.size() << ' ' << emb.dim << '\n';
    for (int i = 0; i < vocab.size(); ++i) {
        out << vocab.word(i);
        for (int j = 0; j < emb.dim; ++j) out << ' ' << emb.weights.value(i, j);
        out << '\n';
    }
}

void apply_word_dropout(std::vector<int>& indices, double p_w, Rng& rng) {
    if (p_w < 0.0 || p_w >= 1.0) throw argument_error("apply_word_dropout: p_w must be in [0, 1)");
    if (p_w == 0.0) return;
    for (int& idx : indices)
        if (rng.bernoulli(p_w)) idx = Vocabulary::kUnk;
}

ad::Var lookup(ad::Tape& tape, const std::vector<int>& indices, EmbeddingMatrix& emb) {
    if (indices.empty()) throw argument_error("lookup: empty token list");
    ad::Var table = tape.param(emb.weights, emb.finetune);
    return ad::gather_rows(table, indices);
}

}  // namespace mixedobj
