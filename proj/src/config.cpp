#include "fprobe/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fprobe {

namespace {

using Json = nlohmann::ordered_json;

class TomlReader {
public:
    TomlReader(std::string_view text, std::string source) : text_(text), source_(std::move(source)) {}

    Json parse() {
        Json root = Json::object();
        Json* table = &root;
        while (true) {
            skip_blank_lines();
            if (at_end()) {
                break;
            }
            if (peek() == '[') {
                table = header(root);
            } else {
                const std::string key = read_key();
                skip_space();
                expect('=');
                skip_space();
                if (table->contains(key)) {
                    fail("duplicate key '" + key + "'");
                }
                (*table)[key] = value();
            }
            end_of_line();
        }
        return root;
    }

private:
    [[noreturn]] void fail(const std::string& msg) const {
        throw std::invalid_argument(source_ + ":" + std::to_string(line_) + ": " + msg);
    }

    bool at_end() const { return pos_ >= text_.size(); }
    char peek() const { return at_end() ? '\0' : text_[pos_]; }
    char get() {
        const char c = peek();
        ++pos_;
        if (c == '\n') {
            ++line_;
        }
        return c;
    }
    void expect(char c) {
        if (peek() != c) {
            fail(std::string("expected '") + c + "'");
        }
        get();
    }

    void skip_space() {
        while (peek() == ' ' || peek() == '\t') {
            get();
        }
    }

    void skip_comment() {
        if (peek() == '#') {
            while (!at_end() && peek() != '\n') {
                get();
            }
        }
    }

    void skip_blank_lines() {
        while (!at_end()) {
            skip_space();
            skip_comment();
            if (peek() == '\n' || peek() == '\r') {
                get();
            } else {
                return;
            }
        }
    }

    // Inside arrays newlines and comments are whitespace.
    void skip_ws_multiline() {
        while (true) {
            skip_space();
            skip_comment();
            if (peek() == '\n' || peek() == '\r') {
                get();
            } else {
                return;
            }
        }
    }

    void end_of_line() {
        skip_space();
        skip_comment();
        if (peek() == '\r') {
            get();
        }
        if (!at_end() && peek() != '\n') {
            fail("unexpected trailing characters");
        }
    }

    std::string read_key() {
        if (peek() == '"') {
            return read_string();
        }
        std::string key;
        while (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-') {
            key += get();
        }
        if (key.empty()) {
            fail("expected a key");
        }
        return key;
    }

    Json* header(Json& root) {
        expect('[');
        const bool array = peek() == '[';
        if (array) {
            get();
        }
        skip_space();
        const std::string name = read_key();
        skip_space();
        expect(']');
        if (array) {
            expect(']');
            Json& arr = root[name];
            if (arr.is_null()) {
                arr = Json::array();
            } else if (!arr.is_array()) {
                fail("'" + name + "' is already a table");
            }
            arr.push_back(Json::object());
            return &arr.back();
        }
        if (root.contains(name)) {
            fail("table '" + name + "' defined twice");
        }
        root[name] = Json::object();
        return &root[name];
    }

    std::string read_string() {
        expect('"');
        std::string out;
        while (true) {
            if (at_end() || peek() == '\n') {
                fail("unterminated string");
            }
            char c = get();
            if (c == '"') {
                return out;
            }
            if (c == '\\') {
                const char e = get();
                switch (e) {
                    case 'n': out += '\n'; break;
                    case 't': out += '\t'; break;
                    case '"': out += '"'; break;
                    case '\\': out += '\\'; break;
                    default: fail(std::string("unsupported escape \\") + e);
                }
                continue;
            }
            out += c;
        }
    }

    Json number() {
        const size_t start = pos_;
        while (!at_end() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '+' || peek() == '-' ||
                             peek() == '.' || peek() == '_')) {
            get();
        }
        std::string tok(text_.substr(start, pos_ - start));
        std::erase(tok, '_');
        if (tok.empty()) {
            fail("expected a value");
        }
        const bool is_float = tok.find_first_of(".eE") != std::string::npos || tok == "inf" || tok == "nan";
        const char* first = tok.data() + (tok.front() == '+' ? 1 : 0);
        const char* last = tok.data() + tok.size();
        if (is_float) {
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(first, last, v);
            if (ec != std::errc() || ptr != last) {
                fail("bad number '" + tok + "'");
            }
            return v;
        }
        int64_t v = 0;
        auto [ptr, ec] = std::from_chars(first, last, v);
        if (ec != std::errc() || ptr != last) {
            fail("bad value '" + tok + "'");
        }
        return v;
    }

    Json value() {
        const char c = peek();
        if (c == '"') {
            return read_string();
        }
        if (c == '[') {
            get();
            Json arr = Json::array();
            skip_ws_multiline();
            while (peek() != ']') {
                arr.push_back(value());
                skip_ws_multiline();
                if (peek() == ',') {
                    get();
                    skip_ws_multiline();
                } else if (peek() != ']') {
                    fail("expected ',' or ']' in array");
                }
            }
            get();
            return arr;
        }
        if (c == '{') {
            get();
            Json obj = Json::object();
            skip_space();
            while (peek() != '}') {
                const std::string key = read_key();
                skip_space();
                expect('=');
                skip_space();
                obj[key] = value();
                skip_space();
                if (peek() == ',') {
                    get();
                    skip_space();
                } else if (peek() != '}') {
                    fail("expected ',' or '}' in inline table");
                }
            }
            get();
            return obj;
        }
        if (text_.substr(pos_, 4) == "true") {
            pos_ += 4;
            return true;
        }
        if (text_.substr(pos_, 5) == "false") {
            pos_ += 5;
            return false;
        }
        return number();
    }

    std::string_view text_;
    std::string source_;
    size_t pos_ = 0;
    int line_ = 1;
};

}  // namespace

nlohmann::ordered_json parse_toml(std::string_view text, const std::string& source) {
    return TomlReader(text, source).parse();
}

nlohmann::ordered_json read_toml_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config '" + path + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_toml(ss.str(), path);
}

}  // namespace fprobe
