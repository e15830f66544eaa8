#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "mixedobj/autodiff.hpp"
#include "mixedobj/corpus.hpp"
#include "mixedobj/rng.hpp"

namespace mixedobj {

// Frequency-ranked word->index map with reserved UNK and PAD slots.
class Vocabulary {
public:
    static constexpr int kUnk = 0;
    static constexpr int kPad = 1;
    static constexpr const char* kUnkToken = "<unk>";
    static constexpr const char* kPadToken = "<pad>";

    Vocabulary() = default;

    // Retains the max_size most frequent words; ties broken lexicographically.
    static Vocabulary build(const std::vector<Example>& examples, int max_size);

    int size() const { return static_cast<int>(words_.size()); }
    // UNK index for out-of-vocabulary words
    int index(const std::string& word) const;
    const std::string& word(int idx) const { return words_[idx]; }
    std::int64_t frequency(int idx) const { return freqs_[idx]; }

    // FNV-1a over the ordered word list; used to pin checkpoints to a vocab
    std::uint64_t hash() const;

    // `index<TAB>word<TAB>frequency` lines
    void dump(const std::string& path) const;
    static Vocabulary load(const std::string& path);

    std::vector<int> encode(const std::vector<std::string>& tokens) const;

private:
    std::vector<std::string> words_;
    std::vector<std::int64_t> freqs_;
    std::unordered_map<std::string, int> index_;
};

struct EmbeddingMatrix {
    ad::Parameter weights;  // vocab size x dim
    int dim = 0;
    bool finetune = true;
};

// word2vec text format: header `count dim`, then `word v1 ... v_dim` lines.
// Vocabulary words absent from the file are initialized uniform in
// +-0.1/sqrt(dim); the PAD row is zero.
EmbeddingMatrix load_pretrained(const std::string& path, const Vocabulary& vocab, int expected_dim,
                                Rng rng);

// Entire matrix random in +-0.1/sqrt(dim) except the zero PAD row.
EmbeddingMatrix random_embeddings(const Vocabulary& vocab, int dim, Rng rng);

void write_embeddings(const std::string& path, const EmbeddingMatrix& emb, const Vocabulary& vocab);

// Training-time word dropout: each index becomes UNK with probability p_w.
void apply_word_dropout(std::vector<int>& indices, double p_w, Rng& rng);

// T x dim tensor of embedding rows; gradient flows into the table iff the
// finetune flag is set.
ad::Var lookup(ad::Tape& tape, const std::vector<int>& indices, EmbeddingMatrix& emb);

}  // namespace mixedobj
