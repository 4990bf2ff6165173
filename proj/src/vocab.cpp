#include "xlsum/vocab.hpp"

#include <algorithm>
#include <set>

#include "xlsum/errors.hpp"

namespace xlsum::data {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

}  // namespace

bool is_reserved_token(std::string_view token) {
  return std::find(kReservedTokens.begin(), kReservedTokens.end(), token) != kReservedTokens.end();
}

std::string to_string(TokenMode mode) { return mode == TokenMode::Word ? "word" : "character"; }

TokenMode parse_token_mode(std::string_view name) {
  if (name == "word") return TokenMode::Word;
  if (name == "character" || name == "char") return TokenMode::Character;
  throw ContractError("unknown token mode '" + std::string(name) + "'");
}

Tokenizer::Tokenizer(TokenMode mode) : mode_(mode) {
  for (auto t : kReservedTokens) {
    index_.emplace(std::string(t), static_cast<int>(tokens_.size()));
    tokens_.emplace_back(t);
  }
}

Tokenizer Tokenizer::build(const std::vector<std::string>& texts, TokenMode mode) {
  Tokenizer tok(mode);
  std::set<std::string> units;
  for (const auto& text : texts) {
    for (auto& u : tok.split(text)) {
      if (!is_reserved_token(u)) units.insert(std::move(u));
    }
  }
  for (const auto& u : units) {
    tok.index_.emplace(u, static_cast<int>(tok.tokens_.size()));
    tok.tokens_.push_back(u);
  }
  return tok;
}

std::vector<std::string> Tokenizer::split(std::string_view text) const {
  std::vector<std::string> out;
  std::size_t i = 0;
  if (mode_ == TokenMode::Word) {
    while (i < text.size()) {
      while (i < text.size() && is_space(text[i])) ++i;
      std::size_t j = i;
      while (j < text.size() && !is_space(text[j])) ++j;
      if (j > i) out.emplace_back(text.substr(i, j - i));
      i = j;
    }
    return out;
  }
  // Character mode: leading/trailing whitespace dropped, inner runs -> " ".
  while (i < text.size() && is_space(text[i])) ++i;
  while (i < text.size()) {
    if (is_space(text[i])) {
      while (i < text.size() && is_space(text[i])) ++i;
      if (i < text.size()) out.emplace_back(" ");
      continue;
    }
    const std::size_t len = std::min(utf8_length(static_cast<unsigned char>(text[i])), text.size() - i);
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

int Tokenizer::id(std::string_view unit) const {
  auto it = index_.find(std::string(unit));
  if (it == index_.end() || it->second < kNumReserved) return kUnk;
  return it->second;
}

const std::string& Tokenizer::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& u : split(text)) ids.push_back(id(u));
  return ids;
}

std::vector<int> Tokenizer::encode_units(const std::vector<std::string>& units) const {
  std::vector<int> ids;
  ids.reserve(units.size());
  for (const auto& u : units) ids.push_back(u == kSepToken ? kSep : id(u));
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    const auto& t = token(id);
    if (mode_ == TokenMode::Word && !out.empty()) out += ' ';
    out += t;
  }
  return out;
}

nlohmann::json Tokenizer::to_json() const {
  nlohmann::json j;
  j["mode"] = to_string(mode_);
  j["tokens"] = std::vector<std::string>(tokens_.begin() + kNumReserved, tokens_.end());
  return j;
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  Tokenizer tok(parse_token_mode(j.at("mode").get<std::string>()));
  for (const auto& t : j.at("tokens")) {
    auto s = t.get<std::string>();
    if (is_reserved_token(s) || tok.index_.count(s)) throw FormatError("vocabulary entry '" + s + "' is invalid");
    tok.index_.emplace(s, static_cast<int>(tok.tokens_.size()));
    tok.tokens_.push_back(std::move(s));
  }
  return tok;
}

}  // namespace xlsum::data
