#pragma once

#include "knowfuse/kg.hpp"

#include <istream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace knowfuse {

class Vocab {
 public:
  static constexpr std::string_view kPad = "[PAD]";
  static constexpr std::string_view kCls = "[CLS]";
  static constexpr std::string_view kSep = "[SEP]";
  static constexpr std::string_view kMask = "[MASK]";
  static constexpr std::string_view kUnk = "[UNK]";

  // Throws InputError if a special token is missing or a token repeats.
  explicit Vocab(std::vector<std::string> tokens);
  static Vocab load(std::istream& in);  // one token per line
  void save(std::ostream& out) const;

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const;
  int id(std::string_view token) const;  // kUnk id when absent
  bool contains(std::string_view token) const { return index_.contains(std::string(token)); }
  bool is_special(int id) const { return id == pad_ || id == cls_ || id == sep_ || id == mask_ || id == unk_; }

  int pad() const { return pad_; }
  int cls() const { return cls_; }
  int sep() const { return sep_; }
  int mask() const { return mask_; }
  int unk() const { return unk_; }
  std::size_t max_token_bytes() const { return max_bytes_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int pad_ = 0, cls_ = 0, sep_ = 0, mask_ = 0, unk_ = 0;
  std::size_t max_bytes_ = 0;
};

// Greedy longest-match segmentation of text (whitespace skipped, unknown code points
// become [UNK]); no special tokens are added.
std::vector<int> encode_pieces(std::string_view text, const Vocab& vocab);

// [CLS] pieces [SEP], truncated or [PAD]-padded to exactly max_len ids.
std::vector<int> tokenize(std::string_view text, const Vocab& vocab, int max_len);

// Concatenation of every non-special token.
std::string detokenize(std::span<const int> ids, const Vocab& vocab);

// Matcher keyed on vocab pieces; surfaces containing [UNK] are not linkable.
MentionMatcher make_mention_matcher(const KnowledgeGraph& kg, const Vocab& vocab);

struct MentionSpan {
  int start = 0;  // inclusive token positions
  int end = 0;
  EntityId entity = 0;
  std::vector<Adjacent> neighbors;  // recalled neighbor set, at most K entries

  friend bool operator==(const MentionSpan&, const MentionSpan&) = default;
};

// Non-overlapping longest matches; special tokens never take part in a match.
std::vector<MentionSpan> link_mentions(std::span<const int> tokens, const MentionMatcher& matcher,
                                       const Vocab& vocab);

}  // namespace knowfuse
