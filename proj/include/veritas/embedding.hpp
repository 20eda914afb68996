#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "veritas/tensor.hpp"

namespace veritas {

/// Lowercases ASCII, collapses URLs to "<url>" and @-mentions to "<user>", and
/// splits on whitespace and ASCII punctuation. Bytes >= 0x80 are kept inside
/// tokens. tokenize(join(tokenize(s), " ")) == tokenize(s).
std::vector<std::string> tokenize(std::string_view text);

/// Maps a tweet to the mean of its token vectors.
class Embedder {
 public:
  enum class Kind { hashing, table };

  /// Each token maps to a signed one-hot of the given magnitude (default 1/sqrt(dimension)):
  /// the slot is FNV-1a(seed, token) mod dimension, the sign comes from bit 32 of the same hash.
  static Embedder hashing(std::size_t dimension = 32, std::uint64_t seed = 0,
                          std::optional<double> magnitude = std::nullopt);
  /// Pretrained vectors; tokens missing from the table are skipped.
  static Embedder table(std::map<std::string, nn::Vector> vectors);

  Kind kind() const noexcept { return kind_; }
  std::size_t dimension() const noexcept { return dimension_; }
  std::uint64_t seed() const noexcept { return seed_; }
  double magnitude() const noexcept { return magnitude_; }

  /// Zero vector when no token is known (including empty text).
  nn::Vector embed(std::string_view text) const;
  nn::Vector embed_tokens(const std::vector<std::string>& tokens) const;

 private:
  Embedder() = default;
  bool token_vector(const std::string& token, nn::Vector& accumulate) const;

  Kind kind_ = Kind::hashing;
  std::size_t dimension_ = 0;
  std::uint64_t seed_ = 0;
  double magnitude_ = 0.0;
  std::map<std::string, nn::Vector> table_;
};

std::uint64_t fnv1a64(std::uint64_t seed, std::string_view token);

/// Reads whitespace-separated "token v1 ... vd" lines (word2vec text format, an
/// optional "count dim" header line is skipped).
Embedder load_embedding_table(const std::string& path);

}  // namespace veritas
