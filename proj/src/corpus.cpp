#include "mixedobj/corpus.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace mixedobj {

namespace {

// Decodes one UTF-8 codepoint starting at s[i]; advances i past it.
// Malformed bytes are passed through as single-byte codepoints.
char32_t next_codepoint(std::string_view s, std::size_t& i, std::size_t& len) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t n = 1;
    char32_t cp = c;
    if (c >= 0xF0)
        n = 4;
    else if (c >= 0xE0)
        n = 3;
    else if (c >= 0xC0)
        n = 2;
    if (n > 1 && i + n <= s.size()) {
        cp = c & (0xFF >> (n + 1));
        for (std::size_t k = 1; k < n; ++k) {
            unsigned char cc = static_cast<unsigned char>(s[i + k]);
            if ((cc & 0xC0) != 0x80) {
                n = 1;
                cp = c;
                break;
            }
            cp = (cp << 6) | (cc & 0x3F);
        }
    } else {
        n = 1;
    }
    len = n;
    i += n;
    return cp;
}

// ASCII punctuation and symbols, plus the common Unicode punctuation blocks.
bool is_punct_cp(char32_t cp) {
    if (cp < 0x80) return std::ispunct(static_cast<int>(cp)) != 0;
    if (cp == 0x00A1 || cp == 0x00A7 || cp == 0x00AB || cp == 0x00B6 || cp == 0x00B7 ||
        cp == 0x00BB || cp == 0x00BF)
        return true;
    if (cp >= 0x2010 && cp <= 0x2027) return true;   // dashes, quotes, ellipsis
    if (cp >= 0x2030 && cp <= 0x205E) return true;   // general punctuation
    if (cp >= 0x2E00 && cp <= 0x2E7F) return true;   // supplemental punctuation
    if (cp >= 0x3001 && cp <= 0x3003) return true;   // CJK comma, stop
    if (cp >= 0x3008 && cp <= 0x3011) return true;   // CJK brackets
    if (cp >= 0x3014 && cp <= 0x301F) return true;
    if (cp >= 0xFF01 && cp <= 0xFF0F) return true;   // fullwidth forms
    if (cp >= 0xFF1A && cp <= 0xFF20) return true;
    if (cp >= 0xFF3B && cp <= 0xFF40) return true;
    if (cp >= 0xFF5B && cp <= 0xFF65) return true;
    return false;
}

bool is_space_cp(char32_t cp) {
    return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' || cp == '\v' ||
           cp == 0x00A0 || (cp >= 0x2000 && cp <= 0x200A) || cp == 0x3000;
}

}  // namespace

std::vector<std::string> preprocess(std::string_view raw) {
    std::vector<std::string> tokens;
    std::string current;
    std::size_t i = 0;
    while (i < raw.size()) {
        std::size_t start = i, len = 0;
        char32_t cp = next_codepoint(raw, i, len);
        if (is_space_cp(cp)) {
            if (!current.empty()) tokens.push_back(std::move(current)), current.clear();
        } else if (is_punct_cp(cp)) {
            if (!current.empty()) tokens.push_back(std::move(current)), current.clear();
            tokens.emplace_back(raw.substr(start, len));
        } else {
            for (std::size_t k = 0; k < len; ++k) {
                char c = raw[start + k];
                current.push_back(len == 1 ? static_cast<char>(std::tolower(static_cast<unsigned char>(c)))
                                           : c);
            }
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    if (tokens.empty()) throw argument_error("preprocess: empty document");
    return tokens;
}

Dataset load_dataset(const std::string& labeled_path, const std::optional<std::string>& unlabeled_path,
                     int num_classes) {
    Dataset ds;
    ds.num_classes = num_classes;

    std::ifstream in(labeled_path);
    if (!in) throw parse_error("cannot open labeled file: " + labeled_path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw parse_error(labeled_path + ":" + std::to_string(line_no) + ": expected label<TAB>text");
        int label;
        try {
            std::size_t used = 0;
            label = std::stoi(line.substr(0, tab), &used);
            if (used != tab) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw parse_error(labeled_path + ":" + std::to_string(line_no) + ": bad label '" +
                              line.substr(0, tab) + "'");
        }
        if (label < 0 || label >= num_classes)
            throw parse_error(labeled_path + ":" + std::to_string(line_no) + ": label " +
                              std::to_string(label) + " out of range [0," + std::to_string(num_classes) + ")");
        Example ex;
        ex.tokens = preprocess(std::string_view(line).substr(tab + 1));
        ex.label = label;
        ds.labeled.push_back(std::move(ex));
    }

    if (unlabeled_path) {
        std::ifstream uin(*unlabeled_path);
        if (!uin) throw parse_error("cannot open unlabeled file: " + *unlabeled_path);
        line_no = 0;
        while (std::getline(uin, line)) {
            ++line_no;
            if (line.empty()) continue;
            Example ex;
            ex.tokens = preprocess(line);
            ds.unlabeled.push_back(std::move(ex));
        }
    }
    return ds;
}

void write_dataset(const Dataset& ds, const std::string& labeled_path,
                   const std::optional<std::string>& unlabeled_path) {
    std::ofstream out(labeled_path);
    if (!out) throw parse_error("cannot open for writing: " + labeled_path);
    for (const Example& ex : ds.labeled) {
        out << *ex.label << '\t';
        for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
            if (i) out << ' ';
            out << ex.tokens[i];
        }
        out << '\n';
    }
    if (unlabeled_path && !ds.unlabeled.empty()) {
        std::ofstream uout(*unlabeled_path);
        if (!uout) throw parse_error("cannot open for writing: " + *unlabeled_path);
        for (const Example& ex : ds.unlabeled) {
            for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
                if (i) uout << ' ';
                uout << ex.tokens[i];
            }
            uout << '\n';
        }
    }
}

namespace {

std::string synth_word(int idx) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "w%04d", idx);
    return buf;
}

Example synth_example(Rng& rng, const SynthParams& p, int cls, int block, int shared_begin) {
    int len = static_cast<int>(rng.uniform_int(p.len_min, p.len_max));
    Example ex;
    ex.tokens.reserve(len);
    for (int t = 0; t < len; ++t) {
        int w;
        if (rng.bernoulli(p.signal_strength))
            w = cls * block + static_cast<int>(rng.uniform_int(0, block - 1));
        else
            w = shared_begin + static_cast<int>(rng.uniform_int(0, p.vocab_size - shared_begin - 1));
        ex.tokens.push_back(synth_word(w));
    }
    return ex;
}

}  // namespace

Dataset generate_synthetic(Rng rng, const SynthParams& p) {
    if (p.num_classes < 2) throw argument_error("generate_synthetic: num_classes must be >= 2");
    if (p.vocab_size < 2 * p.num_classes)
        throw argument_error("generate_synthetic: vocab_size must be >= 2*num_classes");
    if (!(p.signal_strength > 0.5 && p.signal_strength <= 1.0))
        throw argument_error("generate_synthetic: signal_strength must be in (0.5, 1]");
    if (p.len_min < 1 || p.len_max < p.len_min)
        throw argument_error("generate_synthetic: bad length range");

    int block = p.vocab_size / (2 * p.num_classes);  // indicator words per class
    int shared_begin = block * p.num_classes;

    Dataset ds;
    ds.num_classes = p.num_classes;
    Rng lab = rng.stream("labeled");
    for (int i = 0; i < p.labeled_count; ++i) {
        int cls = i % p.num_classes;
        Example ex = synth_example(lab, p, cls, block, shared_begin);
        ex.label = cls;
        ds.labeled.push_back(std::move(ex));
    }
    Rng unl = rng.stream("unlabeled");
    for (int i = 0; i < p.unlabeled_count; ++i) {
        int cls = i % p.num_classes;
        ds.unlabeled.push_back(synth_example(unl, p, cls, block, shared_begin));
    }
    return ds;
}

}  // namespace mixedobj
