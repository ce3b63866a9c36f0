#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fprobe {

enum class TaskFormat { natural_language, rpn, multiplication };
enum class Split { train, val, test };

std::string to_string(TaskFormat f);
std::string to_string(Split s);
Split split_from_string(std::string_view s);

/// Question templates, verbatim; {num1}/{num2} are substituted.
std::span<const std::string_view> templates(TaskFormat f);

/// Token vocabulary: number tokens 0..max_number take ids 0..max_number, followed
/// by the template words in sorted order.
class NumberVocab {
public:
    explicit NumberVocab(int max_number);
    NumberVocab(int max_number, std::vector<std::string> words);

    int max_number() const { return max_number_; }
    int p() const { return max_number_ + 1; }
    int size() const { return p() + static_cast<int>(words_.size()); }
    const std::vector<std::string>& words() const { return words_; }

    bool is_number_token(int id) const { return id >= 0 && id <= max_number_; }
    int word_id(std::string_view word) const;
    std::string token_text(int id) const;

    std::vector<int> encode(std::string_view text) const;
    std::string decode(std::span<const int> ids, TaskFormat format) const;

    /// One "id token" pair per line.
    void write(std::ostream& os) const;
    static NumberVocab read(std::istream& is);

    bool operator==(const NumberVocab& o) const {
        return max_number_ == o.max_number_ && words_ == o.words_;
    }

private:
    int max_number_;
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> word_ids_;
};

struct Example {
    std::string question;
    std::vector<int> tokens;
    int answer = 0;
    int op_a = 0;
    int op_b = 0;
    int template_id = 0;
    Split split = Split::train;
};

struct NumberDataset {
    TaskFormat format = TaskFormat::natural_language;
    uint64_t seed = 0;
    std::vector<Example> examples;

    std::vector<Example> subset(Split s) const;
    size_t count(Split s) const;
};

NumberDataset gen_addition(int max_operand, const NumberVocab& vocab, uint64_t seed);
NumberDataset gen_rpn(int max_operand, const NumberVocab& vocab, uint64_t seed);
NumberDataset gen_multiplication(int max_product, const NumberVocab& vocab, uint64_t seed);

/// JSONL: {"q", "a", "op_a", "op_b", "template", "split"} per line.
void write_jsonl(std::ostream& os, const NumberDataset& ds);
NumberDataset read_jsonl(std::istream& is, const NumberVocab& vocab);

TaskFormat detect_format(std::string_view question);

}  // namespace fprobe
