#include "knowfuse/tokenizer.hpp"

#include "knowfuse/errors.hpp"

#include <algorithm>

namespace knowfuse {

namespace {

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;  // stray continuation byte
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

}  // namespace

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw InputError("vocab: empty token at line " + std::to_string(i + 1));
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw InputError("vocab: duplicate token '" + tokens_[i] + "'");
    }
    max_bytes_ = std::max(max_bytes_, tokens_[i].size());
  }
  auto special = [&](std::string_view s) {
    const auto it = index_.find(std::string(s));
    if (it == index_.end()) throw InputError("vocab: missing special token " + std::string(s));
    return it->second;
  };
  pad_ = special(kPad);
  cls_ = special(kCls);
  sep_ = special(kSep);
  mask_ = special(kMask);
  unk_ = special(kUnk);
}

Vocab Vocab::load(std::istream& in) {
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    tokens.push_back(line);
  }
  return Vocab(std::move(tokens));
}

void Vocab::save(std::ostream& out) const {
  for (const auto& t : tokens_) out << t << '\n';
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw InputError("vocab: token id out of range: " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocab::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? unk_ : it->second;
}

std::vector<int> encode_pieces(std::string_view text, const Vocab& vocab) {
  std::vector<int> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_space(text[i])) {
      ++i;
      continue;
    }
    std::size_t best_len = 0;
    int best_id = -1;
    const std::size_t limit = std::min(vocab.max_token_bytes(), text.size() - i);
    for (std::size_t len = limit; len >= 1; --len) {
      const auto piece = text.substr(i, len);
      if (vocab.contains(piece)) {
        const int id = vocab.id(piece);
        if (!vocab.is_special(id)) {
          best_len = len;
          best_id = id;
          break;
        }
      }
    }
    if (best_id >= 0) {
      out.push_back(best_id);
      i += best_len;
    } else {
      out.push_back(vocab.unk());
      i += std::min(utf8_length(static_cast<unsigned char>(text[i])), text.size() - i);
    }
  }
  return out;
}

std::vector<int> tokenize(std::string_view text, const Vocab& vocab, int max_len) {
  if (max_len < 2) throw InputError("tokenize: max_len must be >= 2");
  auto pieces = encode_pieces(text, vocab);
  const auto room = static_cast<std::size_t>(max_len - 2);
  if (pieces.size() > room) pieces.resize(room);
  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(max_len));
  ids.push_back(vocab.cls());
  ids.insert(ids.end(), pieces.begin(), pieces.end());
  ids.push_back(vocab.sep());
  ids.resize(static_cast<std::size_t>(max_len), vocab.pad());
  return ids;
}

std::string detokenize(std::span<const int> ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    if (!vocab.is_special(id)) out += vocab.token(id);
  }
  return out;
}

MentionMatcher make_mention_matcher(const KnowledgeGraph& kg, const Vocab& vocab) {
  return MentionMatcher(kg, [&vocab](std::string_view surface) {
    auto ids = encode_pieces(surface, vocab);
    if (std::find(ids.begin(), ids.end(), vocab.unk()) != ids.end()) ids.clear();
    return ids;
  });
}

std::vector<MentionSpan> link_mentions(std::span<const int> tokens, const MentionMatcher& matcher,
                                       const Vocab& vocab) {
  std::vector<MentionSpan> out;
  // Match within maximal runs of non-special tokens.
  std::size_t i = 0;
  while (i < tokens.size()) {
    if (vocab.is_special(tokens[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < tokens.size() && !vocab.is_special(tokens[j])) ++j;
    for (const auto& m : matcher.find(tokens.subspan(i, j - i))) {
      out.push_back({m.start + static_cast<int>(i), m.end + static_cast<int>(i), m.entity, {}});
    }
    i = j;
  }
  return out;
}

}  // namespace knowfuse
