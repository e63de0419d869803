#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace editlab {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

inline constexpr std::string_view kBosToken = "<bos>";
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kEosToken = "<eos>";

// Ordered list of distinct, whitespace-free token strings. Must contain the
// <bos> and <unk> markers; <eos> is optional and, when present, acts as the
// stop token for greedy decoding.
class Vocab {
 public:
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;

  TokenId bos() const { return bos_; }
  TokenId unk() const { return unk_; }
  std::optional<TokenId> eos() const { return eos_; }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::size_t max_token_len_ = 0;
  TokenId bos_ = 0;
  TokenId unk_ = 0;
  std::optional<TokenId> eos_;

  friend TokenSeq encode(std::string_view, const Vocab&);
};

// Greedy longest-match tokenization. Whitespace separates words and is not
// itself tokenized; inside a word the longest vocab token matching at the
// cursor wins, and each maximal unmatched run of characters becomes a single
// <unk>. No BOS is added; throws EmptyInput for blank text.
TokenSeq encode(std::string_view text, const Vocab& vocab);

// encode() with <bos> prepended: the form every model query takes.
TokenSeq tokenize(std::string_view text, const Vocab& vocab);

// Space-joined token strings, skipping <bos> and <eos>.
std::string detokenize(std::span<const TokenId> ids, const Vocab& vocab);

}  // namespace editlab
