#include "veritas/embedding.hpp"

#include <cmath>
#include <sstream>

#include "veritas/errors.hpp"
#include "veritas/io.hpp"

namespace veritas {

namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_punct(unsigned char c) { return c < 0x80 && !std::isalnum(c) && !is_space(c); }

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[i])) != prefix[i]) return false;
  }
  return true;
}

// Multi-byte UTF-8 whitespace: U+0085, U+00A0, U+1680, U+2000-U+200A, U+2028,
// U+2029, U+202F, U+205F, U+3000. Returns its byte length, or 0.
std::size_t unicode_space_length(std::string_view s, std::size_t i) {
  const auto b = [&](std::size_t k) { return i + k < s.size() ? static_cast<unsigned char>(s[i + k]) : 0u; };
  if (b(0) == 0xC2 && (b(1) == 0x85 || b(1) == 0xA0)) return 2;
  if (b(0) == 0xE1 && b(1) == 0x9A && b(2) == 0x80) return 3;
  if (b(0) == 0xE2 && b(1) == 0x80 && ((b(2) >= 0x80 && b(2) <= 0x8A) || b(2) == 0xA8 || b(2) == 0xA9 || b(2) == 0xAF))
    return 3;
  if (b(0) == 0xE2 && b(1) == 0x81 && b(2) == 0x9F) return 3;
  if (b(0) == 0xE3 && b(1) == 0x80 && b(2) == 0x80) return 3;
  return 0;
}

void split_chunk(std::string_view chunk, std::vector<std::string>& out) {
  if (chunk == "<url>" || chunk == "<user>") {
    out.emplace_back(chunk);
    return;
  }
  if (starts_with_ci(chunk, "http://") || starts_with_ci(chunk, "https://") || starts_with_ci(chunk, "www.")) {
    out.emplace_back("<url>");
    return;
  }
  if (chunk.size() > 1 && chunk[0] == '@') {
    out.emplace_back("<user>");
    return;
  }
  std::string cur;
  for (unsigned char c : chunk) {
    if (is_punct(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  std::size_t chunk_start = 0;
  const auto flush = [&](std::size_t end) {
    if (end > chunk_start) split_chunk(text.substr(chunk_start, end - chunk_start), tokens);
  };
  while (i < text.size()) {
    if (is_space(static_cast<unsigned char>(text[i]))) {
      flush(i);
      chunk_start = ++i;
    } else if (auto n = unicode_space_length(text, i); n > 0) {
      flush(i);
      i += n;
      chunk_start = i;
    } else {
      ++i;
    }
  }
  flush(text.size());
  return tokens;
}

std::uint64_t fnv1a64(std::uint64_t seed, std::string_view token) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto eat = [&h](unsigned char byte) {
    h ^= byte;
    h *= 0x100000001b3ULL;
  };
  for (int b = 0; b < 8; ++b) eat(static_cast<unsigned char>(seed >> (8 * b)));
  for (unsigned char c : token) eat(c);
  return h;
}

Embedder Embedder::hashing(std::size_t dimension, std::uint64_t seed, std::optional<double> magnitude) {
  if (dimension == 0) throw ConfigError("embedding dimension must be positive");
  if (magnitude && !(*magnitude > 0.0 && std::isfinite(*magnitude))) throw ConfigError("embedding magnitude must be positive");
  Embedder e;
  e.kind_ = Kind::hashing;
  e.dimension_ = dimension;
  e.seed_ = seed;
  e.magnitude_ = magnitude.value_or(1.0 / std::sqrt(static_cast<double>(dimension)));
  return e;
}

Embedder Embedder::table(std::map<std::string, nn::Vector> vectors) {
  if (vectors.empty()) throw ConfigError("embedding table is empty");
  Embedder e;
  e.kind_ = Kind::table;
  e.dimension_ = vectors.begin()->second.size();
  if (e.dimension_ == 0) throw ConfigError("embedding dimension must be positive");
  for (const auto& [tok, v] : vectors) {
    if (v.size() != e.dimension_) throw ConfigError("embedding table: token '" + tok + "' has the wrong dimension");
  }
  e.table_ = std::move(vectors);
  return e;
}

bool Embedder::token_vector(const std::string& token, nn::Vector& accumulate) const {
  if (kind_ == Kind::table) {
    auto it = table_.find(token);
    if (it == table_.end()) return false;
    nn::add_inplace(accumulate, it->second);
    return true;
  }
  const std::uint64_t h = fnv1a64(seed_, token);
  accumulate[h % dimension_] += ((h >> 32) & 1U) ? -magnitude_ : magnitude_;
  return true;
}

nn::Vector Embedder::embed_tokens(const std::vector<std::string>& tokens) const {
  nn::Vector sum(dimension_, 0.0);
  std::size_t known = 0;
  for (const auto& t : tokens) {
    if (token_vector(t, sum)) ++known;
  }
  if (known > 0) {
    for (auto& v : sum) v /= static_cast<double>(known);
  }
  return sum;
}

nn::Vector Embedder::embed(std::string_view text) const { return embed_tokens(tokenize(text)); }

Embedder load_embedding_table(const std::string& path) {
  std::istringstream in(read_file(path));
  std::map<std::string, nn::Vector> table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    nn::Vector v;
    double x;
    while (fields >> x) v.push_back(x);
    if (first && v.size() == 1) {  // "count dim" header
      first = false;
      continue;
    }
    first = false;
    if (v.empty()) throw ParseError("embedding table: token '" + token + "' has no values");
    table.emplace(std::move(token), std::move(v));
  }
  return Embedder::table(std::move(table));
}

}  // namespace veritas
