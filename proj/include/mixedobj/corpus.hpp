#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixedobj/rng.hpp"

namespace mixedobj {

struct parse_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct argument_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A tokenized document; no label means the example is unlabeled.
struct Example {
    std::vector<std::string> tokens;
    std::optional<int> label;
};

struct Dataset {
    std::vector<Example> labeled;
    std::vector<Example> unlabeled;
    int num_classes = 0;
    std::string split = "train";
};

// Lowercases and splits the text, emitting every punctuation character as its
// own token. Throws argument_error on empty or all-whitespace input.
std::vector<std::string> preprocess(std::string_view raw);

// Labeled file: one `label<TAB>text` per line, 0-based labels.
// Unlabeled file: one raw text per line.
Dataset load_dataset(const std::string& labeled_path, const std::optional<std::string>& unlabeled_path,
                     int num_classes);

void write_dataset(const Dataset& ds, const std::string& labeled_path,
                   const std::optional<std::string>& unlabeled_path);

struct SynthParams {
    int labeled_count = 0;
    int unlabeled_count = 0;
    int num_classes = 2;
    int vocab_size = 100;
    int len_min = 5;
    int len_max = 20;
    double signal_strength = 0.9;
};

// Class-conditional unigram generator. Each class owns a disjoint block of
// indicator words; a class-k token is an indicator with probability
// signal_strength and otherwise uniform over the shared remainder.
Dataset generate_synthetic(Rng rng, const SynthParams& p);

}  // namespace mixedobj
