#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace xlsum::data {

// Reserved ids, identical in every vocabulary.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kSep = 4;
inline constexpr int kSumTag = 5;
inline constexpr int kTransTag = 6;
inline constexpr int kNumReserved = 7;

inline constexpr std::array<std::string_view, kNumReserved> kReservedTokens{
    "<pad>", "<s>", "</s>", "<unk>", "<sep>", "<sum>", "<trans>"};
inline constexpr std::string_view kSepToken = "<sep>";

bool is_reserved_token(std::string_view token);

enum class TokenMode { Word, Character };

std::string to_string(TokenMode mode);
TokenMode parse_token_mode(std::string_view name);

// Maps text units to dense ids. Ids below kNumReserved are the reserved
// tokens above and are never assigned to corpus units.
class Tokenizer {
 public:
  explicit Tokenizer(TokenMode mode = TokenMode::Word);

  // Vocabulary = reserved tokens followed by the sorted distinct units of
  // `texts`.
  static Tokenizer build(const std::vector<std::string>& texts, TokenMode mode = TokenMode::Word);

  TokenMode mode() const { return mode_; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Word mode: whitespace split. Character mode: one unit per code point,
  // with a single " " unit for each whitespace run.
  std::vector<std::string> split(std::string_view text) const;

  // Unknown units and literal reserved strings map to kUnk.
  int id(std::string_view unit) const;
  const std::string& token(int id) const;

  std::vector<int> encode(std::string_view text) const;
  // Like encode() on already split units, except that kSepToken becomes kSep.
  std::vector<int> encode_units(const std::vector<std::string>& units) const;
  // Drops pad/bos/eos; other reserved ids render as their token string.
  std::string decode(std::span<const int> ids) const;

  nlohmann::json to_json() const;
  static Tokenizer from_json(const nlohmann::json& j);

 private:
  TokenMode mode_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace xlsum::data
