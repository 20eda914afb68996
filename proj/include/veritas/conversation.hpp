#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace veritas {

/// Veracity label. The underlying value is the class index; a dataset with C
/// classes uses the first C labels (3 for PHEME-style, 4 for Twitter15/16-style).
enum class Label : int { true_rumour = 0, false_rumour = 1, unverified = 2, non_rumour = 3 };
inline constexpr int kMaxClasses = 4;

enum class Stance { support, deny, query, comment };

std::string_view to_string(Label label);
std::string_view to_string(Stance stance);
/// Accepts "true" | "false" | "unverified" | "nonrumour". Throws ParseError otherwise.
Label parse_label(std::string_view text);
Stance parse_stance(std::string_view text);
Label label_from_index(int index);
inline int class_index(Label label) { return static_cast<int>(label); }

struct Tweet {
  std::string id;
  std::optional<std::string> parent_id;
  std::int64_t timestamp = 0;  // ms since epoch
  std::string text;
  std::optional<Stance> stance;

  bool is_root() const noexcept { return !parent_id.has_value(); }
  friend bool operator==(const Tweet&, const Tweet&) = default;
};

/// A rumour conversation. Tweets keep the order they were given in.
struct ConversationTree {
  std::string tree_id;
  std::string event;
  Label label = Label::true_rumour;
  std::vector<Tweet> tweets;

  const Tweet& root() const;
  std::size_t size() const noexcept { return tweets.size(); }
  friend bool operator==(const ConversationTree&, const ConversationTree&) = default;
};

/// Throws ParseError (message names the tree) unless the tree has exactly one
/// root, unique ids, resolvable parents, and no cycles.
void validate_tree(const ConversationTree& tree);

/// A root-to-leaf path.
struct Branch {
  std::string tree_id;
  std::vector<Tweet> tweets;
};

/// One branch per leaf, ordered by (leaf timestamp, leaf id). With `max_length`,
/// over-long branches keep their earliest max_length-1 tweets plus the leaf.
std::vector<Branch> decompose_branches(const ConversationTree& tree,
                                       std::optional<std::size_t> max_length = std::nullopt);

std::size_t count_leaves(const ConversationTree& tree);

/// A tweet that arrived before its parent and was moved to directly follow it.
struct OrderingRepair {
  std::string tweet_id;
  std::string parent_id;
};

struct Timeline {
  std::vector<ConversationTree> prefixes;  // sizes 1..k
  std::vector<OrderingRepair> repairs;
};

/// Sub-conversations made of the j earliest tweets, j = 1..k, in (timestamp, id)
/// order. A tweet older than its parent is inserted right after the parent and
/// reported in `repairs`. Each prefix lists its tweets in the original tree order.
Timeline timeline_prefixes(const ConversationTree& tree);

// ---------------------------------------------------------------------------
// Dataset files (JSON Lines, one tree per line)

std::vector<ConversationTree> parse_dataset(std::string_view text);
std::vector<ConversationTree> load_dataset(const std::string& path);
std::string serialize_dataset(const std::vector<ConversationTree>& trees);
void save_dataset(const std::vector<ConversationTree>& trees, const std::string& path);

/// Number of classes implied by the labels present: max class index + 1, at least 2.
int infer_class_count(const std::vector<ConversationTree>& trees);

// ---------------------------------------------------------------------------
// Folds

enum class FoldScheme { leave_one_event_out, k_fold };

std::string_view to_string(FoldScheme scheme);
FoldScheme parse_fold_scheme(std::string_view text);

struct FoldSpec {
  FoldScheme scheme = FoldScheme::k_fold;
  std::map<std::string, int> assignments;  // tree_id -> fold index
  std::optional<int> dev_fold;

  int fold_count() const;
  int fold_of(const std::string& tree_id) const;
  friend bool operator==(const FoldSpec&, const FoldSpec&) = default;
};

/// leave_one_event_out: one fold per distinct event, events in lexicographic order.
/// k_fold: tree ids shuffled with `seed`, then dealt round-robin into k folds.
/// Throws ConfigError for k < 2 or fewer than two events.
FoldSpec make_folds(const std::vector<ConversationTree>& trees, FoldScheme scheme, std::optional<int> k,
                    std::uint64_t seed);

/// Fold index holding `event` under leave_one_event_out, or ConfigError.
int fold_of_event(const std::vector<ConversationTree>& trees, const FoldSpec& folds, const std::string& event);

std::string fold_spec_to_json(const FoldSpec& folds);
FoldSpec fold_spec_from_json(std::string_view text);

}  // namespace veritas
