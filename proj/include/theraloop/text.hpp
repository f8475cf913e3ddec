#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace theraloop::text {

std::string lower(std::string_view s);
std::string trim(std::string_view s);
std::string collapse_spaces(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
bool starts_with(std::string_view s, std::string_view prefix);
bool contains(std::string_view s, std::string_view needle);
std::string replace_all(std::string s, std::string_view from, std::string_view to);

struct Token {
  enum class Kind { Word, Number, Colon, Other };
  Kind kind;
  std::string text;       // lower-cased
  std::size_t begin = 0;  // byte offset within the clause
  std::size_t end = 0;
  double number = 0.0;
};

// A sentence-like unit: split at '.', ';', '!', '?' (not inside numbers) and
// at line breaks.
struct Clause {
  std::string raw;  // lower-cased clause text
  std::vector<Token> tokens;
};

std::vector<Token> tokenize(std::string_view lowered);
std::vector<Clause> clauses(std::string_view document);

// Unit string immediately following byte offset `pos` in `raw` (lower-cased,
// stripped of trailing punctuation). Empty when the next chunk is absent.
std::string unit_after(std::string_view raw, std::size_t pos);

// Parses "12", "12.5"; also the words zero..ten.
std::optional<double> parse_number_word(std::string_view word);

// Shortest decimal rendering that parses back to the same double.
std::string format_number(double v);

}  // namespace theraloop::text
