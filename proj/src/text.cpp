#include "theraloop/text.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstdlib>

namespace theraloop::text {

namespace {

bool is_word_byte(unsigned char c) { return std::isalpha(c) || c >= 0x80; }

}  // namespace

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string collapse_spaces(std::string_view s) {
  std::string out;
  bool space = false;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      space = !out.empty();
    } else {
      if (space) out.push_back(' ');
      space = false;
      out.push_back(c);
    }
  }
  return out;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }
bool contains(std::string_view s, std::string_view needle) { return s.find(needle) != std::string_view::npos; }

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  if (from.empty()) return s;
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (std::isdigit(c)) {
      std::size_t j = i;
      while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
      if (j + 1 < s.size() && s[j] == '.' && std::isdigit(static_cast<unsigned char>(s[j + 1]))) {
        ++j;
        while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
      }
      Token t{Token::Kind::Number, std::string(s.substr(i, j - i)), i, j, 0.0};
      t.number = std::strtod(t.text.c_str(), nullptr);
      out.push_back(std::move(t));
      i = j;
    } else if (is_word_byte(c)) {
      std::size_t j = i;
      while (j < s.size() && is_word_byte(static_cast<unsigned char>(s[j]))) ++j;
      out.push_back({Token::Kind::Word, std::string(s.substr(i, j - i)), i, j, 0.0});
      i = j;
    } else if (c == ':') {
      out.push_back({Token::Kind::Colon, ":", i, i + 1, 0.0});
      ++i;
    } else if (std::isspace(c)) {
      ++i;
    } else {
      out.push_back({Token::Kind::Other, std::string(1, static_cast<char>(c)), i, i + 1, 0.0});
      ++i;
    }
  }
  return out;
}

std::vector<Clause> clauses(std::string_view document) {
  const std::string low = lower(document);
  std::vector<Clause> out;
  std::size_t start = 0;
  auto flush = [&](std::size_t end) {
    std::string raw = trim(std::string_view(low).substr(start, end - start));
    if (!raw.empty()) {
      Clause c;
      c.tokens = tokenize(raw);
      c.raw = std::move(raw);
      out.push_back(std::move(c));
    }
    start = end + 1;
  };
  for (std::size_t i = 0; i < low.size(); ++i) {
    const char c = low[i];
    if (c == '\n' || c == ';' || c == '!' || c == '?') {
      flush(i);
    } else if (c == '.') {
      const bool digit_before = i > 0 && std::isdigit(static_cast<unsigned char>(low[i - 1]));
      const bool digit_after = i + 1 < low.size() && std::isdigit(static_cast<unsigned char>(low[i + 1]));
      if (!(digit_before && digit_after)) flush(i);
    }
  }
  if (start < low.size()) flush(low.size());
  return out;
}

std::string unit_after(std::string_view raw, std::size_t pos) {
  while (pos < raw.size() && raw[pos] == ' ') ++pos;
  std::size_t end = pos;
  while (end < raw.size() && raw[end] != ' ' && raw[end] != ',' && raw[end] != ';' && raw[end] != '(' &&
         raw[end] != ')') {
    ++end;
  }
  std::string unit(raw.substr(pos, end - pos));
  while (!unit.empty() && (unit.back() == '.' || unit.back() == ':')) unit.pop_back();
  return unit;
}

std::optional<double> parse_number_word(std::string_view word) {
  static constexpr std::array<std::string_view, 11> kWords{"zero", "one", "two",   "three", "four", "five",
                                                           "six",  "seven", "eight", "nine",  "ten"};
  for (std::size_t i = 0; i < kWords.size(); ++i) {
    if (kWords[i] == word) return static_cast<double>(i);
  }
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(word.data(), word.data() + word.size(), v);
  if (ec == std::errc{} && ptr == word.data() + word.size()) return v;
  return std::nullopt;
}

std::string format_number(double v) {
  char buf[64];
  for (int decimals = 0; decimals <= 10; ++decimals) {
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace theraloop::text
