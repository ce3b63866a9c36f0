#include "fprobe/dataset.hpp"

#include "fprobe/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fprobe {

namespace {

constexpr std::array<std::string_view, 5> kAdditionTemplates{
    "Total of {num1} and {num2}.",
    "Add together {num1} and {num2}.",
    "Calculate {num1} + {num2}.",
    "What is the sum of {num1} and {num2}?",
    "Put together {num1} and {num2}.",
};

constexpr std::array<std::string_view, 1> kRpnTemplates{"{num1},{num2}+"};

constexpr std::array<std::string_view, 5> kMultiplicationTemplates{
    "What is the product of {num1} and {num2}?",
    "Find the product of {num1} multiplied by {num2}.",
    "Calculate {num1} times {num2}.",
    "{num1} multiplied by {num2} equals what?",
    "Multiplication of {num1} with {num2}.",
};

bool is_punct_token(char c) { return c == '.' || c == ',' || c == '?' || c == '+'; }

// Splits on whitespace, then separates digit runs, letter runs and single punctuation.
std::vector<std::string> split_text(std::string_view text) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
        } else if (std::isdigit(static_cast<unsigned char>(c))) {
            size_t j = i;
            while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) {
                ++j;
            }
            out.emplace_back(text.substr(i, j - i));
            i = j;
        } else if (std::isalpha(static_cast<unsigned char>(c))) {
            size_t j = i;
            while (j < text.size() && std::isalpha(static_cast<unsigned char>(text[j]))) {
                ++j;
            }
            out.emplace_back(text.substr(i, j - i));
            i = j;
        } else if (is_punct_token(c)) {
            out.emplace_back(1, c);
            ++i;
        } else {
            throw std::invalid_argument(std::string("unsupported character '") + c + "' in question");
        }
    }
    return out;
}

std::vector<std::string> template_words() {
    std::set<std::string> words;
    for (auto f : {TaskFormat::natural_language, TaskFormat::rpn, TaskFormat::multiplication}) {
        for (auto t : templates(f)) {
            std::string filled(t);
            for (std::string_view slot : {"{num1}", "{num2}"}) {
                filled.replace(filled.find(slot), slot.size(), " ");
            }
            for (auto& w : split_text(filled)) {
                words.insert(w);
            }
        }
    }
    return {words.begin(), words.end()};
}

std::string fill(std::string_view tmpl, int a, int b) {
    std::string s(tmpl);
    s.replace(s.find("{num1}"), 6, std::to_string(a));
    s.replace(s.find("{num2}"), 6, std::to_string(b));
    return s;
}

struct Pair {
    int a;
    int b;
    int answer;
};

NumberDataset build(TaskFormat format, const std::vector<Pair>& pairs, const NumberVocab& vocab,
                    uint64_t seed) {
    NumberDataset ds;
    ds.format = format;
    ds.seed = seed;
    const auto tmpls = templates(format);
    Rng template_rng(derive_seed(seed, 0));
    ds.examples.reserve(pairs.size());
    for (const auto& pr : pairs) {
        Example ex;
        ex.op_a = pr.a;
        ex.op_b = pr.b;
        ex.answer = pr.answer;
        ex.template_id = static_cast<int>(template_rng.below(tmpls.size()));
        ex.question = fill(tmpls[static_cast<size_t>(ex.template_id)], pr.a, pr.b);
        ex.tokens = vocab.encode(ex.question);
        ds.examples.push_back(std::move(ex));
    }
    Rng shuffle_rng(derive_seed(seed, 1));
    shuffle_rng.shuffle(ds.examples.begin(), ds.examples.end());

    const size_t n = ds.examples.size();
    const size_t n_train = static_cast<size_t>(0.8 * static_cast<double>(n) + 0.5);
    const size_t n_val = std::min(n - n_train, static_cast<size_t>(0.1 * static_cast<double>(n) + 0.5));
    for (size_t i = 0; i < n; ++i) {
        ds.examples[i].split = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
    }
    return ds;
}

std::vector<Pair> addition_pairs(int max_operand, const NumberVocab& vocab) {
    if (max_operand < 0) {
        throw std::invalid_argument("max_operand must be non-negative");
    }
    if (2 * max_operand > vocab.max_number()) {
        throw std::invalid_argument("max_operand=" + std::to_string(max_operand) +
                                    " gives sums beyond the largest number token " +
                                    std::to_string(vocab.max_number()));
    }
    std::vector<Pair> pairs;
    for (int a = 0; a <= max_operand; ++a) {
        for (int b = a; b <= max_operand; ++b) {
            pairs.push_back({a, b, a + b});
        }
    }
    return pairs;
}

}  // namespace

std::string to_string(TaskFormat f) {
    switch (f) {
        case TaskFormat::natural_language:
            return "natural_language";
        case TaskFormat::rpn:
            return "rpn";
        case TaskFormat::multiplication:
            return "multiplication";
    }
    return "?";
}

std::string to_string(Split s) {
    switch (s) {
        case Split::train:
            return "train";
        case Split::val:
            return "val";
        case Split::test:
            return "test";
    }
    return "?";
}

Split split_from_string(std::string_view s) {
    if (s == "train") {
        return Split::train;
    }
    if (s == "val") {
        return Split::val;
    }
    if (s == "test") {
        return Split::test;
    }
    throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

std::span<const std::string_view> templates(TaskFormat f) {
    switch (f) {
        case TaskFormat::natural_language:
            return kAdditionTemplates;
        case TaskFormat::rpn:
            return kRpnTemplates;
        case TaskFormat::multiplication:
            return kMultiplicationTemplates;
    }
    return {};
}

NumberVocab::NumberVocab(int max_number) : NumberVocab(max_number, template_words()) {}

NumberVocab::NumberVocab(int max_number, std::vector<std::string> words)
    : max_number_(max_number), words_(std::move(words)) {
    if (max_number < 2 || max_number % 2 != 0) {
        throw std::invalid_argument("NumberVocab: max_number must be even and >= 2 (p = max_number + 1 odd)");
    }
    for (size_t i = 0; i < words_.size(); ++i) {
        if (words_[i].empty() || std::isdigit(static_cast<unsigned char>(words_[i][0]))) {
            throw std::invalid_argument("NumberVocab: invalid word token '" + words_[i] + "'");
        }
        if (!word_ids_.emplace(words_[i], p() + static_cast<int>(i)).second) {
            throw std::invalid_argument("NumberVocab: duplicate word '" + words_[i] + "'");
        }
    }
}

int NumberVocab::word_id(std::string_view word) const {
    auto it = word_ids_.find(std::string(word));
    if (it == word_ids_.end()) {
        throw std::invalid_argument("word '" + std::string(word) + "' is not in the vocabulary");
    }
    return it->second;
}

std::string NumberVocab::token_text(int id) const {
    if (is_number_token(id)) {
        return std::to_string(id);
    }
    if (id > max_number_ && id < size()) {
        return words_[static_cast<size_t>(id - p())];
    }
    throw std::out_of_range("token id " + std::to_string(id) + " out of vocabulary");
}

std::vector<int> NumberVocab::encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& piece : split_text(text)) {
        if (std::isdigit(static_cast<unsigned char>(piece[0]))) {
            if (piece.size() > 1 && piece[0] == '0') {
                throw std::invalid_argument("number '" + piece + "' has a leading zero");
            }
            if (piece.size() > 9 || std::stoi(piece) > max_number_) {
                throw std::invalid_argument("number " + piece + " exceeds max_number " +
                                            std::to_string(max_number_));
            }
            ids.push_back(std::stoi(piece));
        } else {
            ids.push_back(word_id(piece));
        }
    }
    return ids;
}

std::string NumberVocab::decode(std::span<const int> ids, TaskFormat format) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        const std::string text = token_text(ids[i]);
        const bool attach = format == TaskFormat::rpn || text == "." || text == "?";
        if (i > 0 && !attach) {
            out += ' ';
        }
        out += text;
    }
    return out;
}

void NumberVocab::write(std::ostream& os) const {
    for (int id = 0; id < size(); ++id) {
        os << id << ' ' << token_text(id) << '\n';
    }
}

NumberVocab NumberVocab::read(std::istream& is) {
    std::string line;
    int expected = 0;
    int max_number = -1;
    std::vector<std::string> words;
    while (std::getline(is, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream ls(line);
        int id = -1;
        std::string tok;
        if (!(ls >> id >> tok) || id != expected) {
            throw std::runtime_error("vocab file: malformed or non-contiguous line '" + line + "'");
        }
        ++expected;
        if (std::isdigit(static_cast<unsigned char>(tok[0]))) {
            if (!words.empty() || std::stoi(tok) != id) {
                throw std::runtime_error("vocab file: number tokens must come first, in order");
            }
            max_number = id;
        } else {
            words.push_back(tok);
        }
    }
    return NumberVocab(max_number, std::move(words));
}

std::vector<Example> NumberDataset::subset(Split s) const {
    std::vector<Example> out;
    for (const auto& ex : examples) {
        if (ex.split == s) {
            out.push_back(ex);
        }
    }
    return out;
}

size_t NumberDataset::count(Split s) const {
    return static_cast<size_t>(
        std::count_if(examples.begin(), examples.end(), [s](const Example& e) { return e.split == s; }));
}

NumberDataset gen_addition(int max_operand, const NumberVocab& vocab, uint64_t seed) {
    return build(TaskFormat::natural_language, addition_pairs(max_operand, vocab), vocab, seed);
}

NumberDataset gen_rpn(int max_operand, const NumberVocab& vocab, uint64_t seed) {
    return build(TaskFormat::rpn, addition_pairs(max_operand, vocab), vocab, seed);
}

NumberDataset gen_multiplication(int max_product, const NumberVocab& vocab, uint64_t seed) {
    if (max_product < 1) {
        throw std::invalid_argument("max_product must be >= 1");
    }
    if (max_product > vocab.max_number()) {
        throw std::invalid_argument("max_product=" + std::to_string(max_product) +
                                    " exceeds the largest single-token answer " +
                                    std::to_string(vocab.max_number()));
    }
    std::vector<Pair> pairs;
    for (int a = 1; a <= max_product; ++a) {
        for (int b = a; a * b <= max_product; ++b) {
            pairs.push_back({a, b, a * b});
        }
    }
    return build(TaskFormat::multiplication, pairs, vocab, seed);
}

void write_jsonl(std::ostream& os, const NumberDataset& ds) {
    for (const auto& ex : ds.examples) {
        nlohmann::ordered_json j;
        j["q"] = ex.question;
        j["a"] = ex.answer;
        j["op_a"] = ex.op_a;
        j["op_b"] = ex.op_b;
        j["template"] = ex.template_id;
        j["split"] = to_string(ex.split);
        os << j.dump() << '\n';
    }
}

TaskFormat detect_format(std::string_view question) {
    if (question.find(' ') == std::string_view::npos) {
        return TaskFormat::rpn;
    }
    for (std::string_view w : {"product", "times", "multiplied", "Multiplication"}) {
        if (question.find(w) != std::string_view::npos) {
            return TaskFormat::multiplication;
        }
    }
    return TaskFormat::natural_language;
}

NumberDataset read_jsonl(std::istream& is, const NumberVocab& vocab) {
    NumberDataset ds;
    std::string line;
    size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            Example ex;
            ex.question = j.at("q").get<std::string>();
            ex.answer = j.at("a").get<int>();
            ex.op_a = j.at("op_a").get<int>();
            ex.op_b = j.at("op_b").get<int>();
            ex.template_id = j.at("template").get<int>();
            ex.split = split_from_string(j.at("split").get<std::string>());
            ex.tokens = vocab.encode(ex.question);
            if (!vocab.is_number_token(ex.answer)) {
                throw std::invalid_argument("answer " + std::to_string(ex.answer) + " is out of vocabulary");
            }
            ds.examples.push_back(std::move(ex));
        } catch (const std::exception& e) {
            throw std::runtime_error("dataset line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!ds.examples.empty()) {
        ds.format = detect_format(ds.examples.front().question);
    }
    return ds;
}

}  // namespace fprobe
