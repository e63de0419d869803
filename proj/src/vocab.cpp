#include "editlab/vocab.hpp"

#include <algorithm>
#include <cctype>

#include "editlab/error.hpp"

namespace editlab {
namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

}  // namespace

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 4) {
    throw Error(ErrorCode::kEmptyInput, "vocabulary needs at least 4 tokens");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const std::string& t = tokens_[i];
    if (t.empty() || std::any_of(t.begin(), t.end(), is_space)) {
      throw Error(ErrorCode::kBadToken, "token " + std::to_string(i) +
                                            " is empty or contains whitespace");
    }
    if (!index_.emplace(t, static_cast<TokenId>(i)).second) {
      throw Error(ErrorCode::kBadToken, "duplicate token '" + t + "'");
    }
    max_token_len_ = std::max(max_token_len_, t.size());
  }
  auto bos = find(kBosToken);
  auto unk = find(kUnkToken);
  if (!bos || !unk) {
    throw Error(ErrorCode::kBadToken, "vocabulary must contain <bos> and <unk>");
  }
  bos_ = *bos;
  unk_ = *unk;
  eos_ = find(kEosToken);
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error(ErrorCode::kBadToken, "token id " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenSeq encode(std::string_view text, const Vocab& vocab) {
  TokenSeq out;
  std::size_t pos = 0;
  bool in_unknown = false;
  while (pos < text.size()) {
    if (is_space(text[pos])) {
      in_unknown = false;
      ++pos;
      continue;
    }
    std::size_t word_end = pos;
    while (word_end < text.size() && !is_space(text[word_end])) ++word_end;

    std::size_t best = 0;
    const std::size_t max_len = std::min(vocab.max_token_len_, word_end - pos);
    for (std::size_t len = max_len; len > 0; --len) {
      if (vocab.index_.contains(std::string(text.substr(pos, len)))) {
        best = len;
        break;
      }
    }
    if (best == 0) {
      if (!in_unknown) out.push_back(vocab.unk());
      in_unknown = true;
      ++pos;
    } else {
      out.push_back(vocab.index_.at(std::string(text.substr(pos, best))));
      in_unknown = false;
      pos += best;
    }
  }
  if (out.empty()) throw Error(ErrorCode::kEmptyInput, "text has no tokens");
  return out;
}

TokenSeq tokenize(std::string_view text, const Vocab& vocab) {
  TokenSeq body = encode(text, vocab);
  TokenSeq out;
  out.reserve(body.size() + 1);
  out.push_back(vocab.bos());
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

std::string detokenize(std::span<const TokenId> ids, const Vocab& vocab) {
  std::string out;
  for (TokenId id : ids) {
    if (id == vocab.bos() || (vocab.eos() && id == *vocab.eos())) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

}  // namespace editlab
